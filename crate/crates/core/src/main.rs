fn main() {
    std::process::exit(crp_spectra::cli::run(std::env::args_os()));
}
