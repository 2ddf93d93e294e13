//! Command-line front end.
//!
//! Every subcommand resolves its settings from three layers: built-in
//! defaults, then `key=value` lines from `--config PATH`, then explicit flags.
//! The resolved settings are echoed into the output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;

use crate::crp::{block_count_mean, enumerate_crp, simulate_crp, Checkpoints, ModelParams};
use crate::error::Error;
use crate::experiments::{
    run_experiment, Centering, ExperimentConfig, ExperimentKind, Report, SourceSpec, WeightSpec,
};
use crate::io::{self, Format, Header};
use crate::limits::{cov_eta_quadrature, cov_zalpha_grid};
use crate::urn::{sample_urn, sample_urn_split, FrequencySource, DEFAULT_MAX_DEPTH};

#[derive(Debug, Parser)]
#[command(name = "crp-spectra", version, about = "Random permutation matrices from Chinese restaurant processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the seating process and write its cycle-count trajectory.
    Simulate(Flags),
    /// Throw balls into an infinite urn and write its occupancy trajectory.
    Urn(Flags),
    /// Tabulate limit covariances.
    Oracle(Flags),
    /// Run a Monte Carlo experiment and write its report.
    Experiment(Flags),
    /// Exact cycle-count law for small n.
    Enumerate(Flags),
    /// Re-render a saved report and exit with its verdict.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Flags {
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    replicas: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated fractions, must contain 1.
    #[arg(long)]
    checkpoints: Option<String>,
    /// `const[:c]`, `arc:c1:c2`, `logz:re:im` or `file:PATH`.
    #[arg(long)]
    weights: Option<String>,
    /// Point `re:im`, repeatable.
    #[arg(long)]
    z: Vec<String>,
    /// Zoom-in point `re:im`, repeatable.
    #[arg(long)]
    zoom: Vec<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `csv` or `json`.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    /// File of newline-separated `key=value` pairs.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment: `clt`, `kingman`, `feller` or `charpoly`.
    #[arg(long)]
    kind: Option<String>,
    /// Frequency source: `power-law` or `stick-breaking`.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    source_seed: Option<String>,
    /// Urn sampler: `split` or `ball`.
    #[arg(long)]
    sampler: Option<String>,
    /// `analytic` or `empirical`.
    #[arg(long)]
    centering: Option<String>,
    #[arg(long)]
    max_depth: Option<String>,
    #[arg(long)]
    p_min: Option<String>,
    #[arg(long)]
    cov_rel: Option<String>,
    #[arg(long)]
    var_rel: Option<String>,
    #[arg(long)]
    corr_abs: Option<String>,
    #[arg(long)]
    se_mult: Option<String>,
    #[arg(long)]
    mean_se: Option<String>,
    #[arg(long)]
    kingman_depth: Option<String>,
    /// Comma-separated sizes for the coupling-distance check.
    #[arg(long)]
    feller_sizes: Option<String>,
    #[arg(long)]
    series_n: Option<String>,
    #[arg(long)]
    series_replicas: Option<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report JSON written by `experiment`.
    input: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const REPEATABLE: [&str; 2] = ["z", "zoom"];

const KEYS: [&str; 29] = [
    "alpha", "theta", "n", "replicas", "seed", "checkpoints", "weights", "z", "zoom", "tol", "out",
    "format", "threads", "kind", "source", "source_seed", "sampler", "centering", "max_depth",
    "p_min", "cov_rel", "var_rel", "corr_abs", "se_mult", "mean_se", "kingman_depth",
    "feller_sizes", "series_n", "series_replicas",
];

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
    Failed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(Error::InvalidParams(_) | Error::InvalidArgument(_) | Error::ResourceGuard(_)) => 2,
            CliError::Run(_) => 3,
            CliError::Failed(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Resolved `key -> values` settings.
#[derive(Debug, Default, Clone)]
struct Settings(BTreeMap<String, Vec<String>>);

impl Settings {
    fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{}:{}: expected key=value", path.display(), lineno + 1))
            })?;
            let key = k.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) || key == "config" {
                return Err(CliError::Usage(format!(
                    "{}:{}: unknown key '{}'",
                    path.display(),
                    lineno + 1,
                    k.trim()
                )));
            }
            let entry = map.entry(key.clone()).or_default();
            if REPEATABLE.contains(&key.as_str()) {
                entry.push(v.trim().to_string());
            } else {
                *entry = vec![v.trim().to_string()];
            }
        }
        Ok(Self(map))
    }

    fn set(&mut self, key: &str, value: Option<String>) {
        if let Some(v) = value {
            self.0.insert(key.to_string(), vec![v]);
        }
    }

    fn set_many(&mut self, key: &str, values: Vec<String>) {
        if !values.is_empty() {
            self.0.insert(key.to_string(), values);
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).and_then(|v| v.last()).map(String::as_str)
    }

    fn many(&self, key: &str) -> &[String] {
        self.0.get(key).map_or(&[], Vec::as_slice)
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("malformed value for --{}: '{v}'", key.replace('_', "-")))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, key: &str) -> CliResult<T> {
        self.get(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required flag --{}", key.replace('_', "-"))))
    }

    fn format(&self, default: Format) -> CliResult<Format> {
        match self.raw("format") {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CliError::Usage(format!("malformed value for --format: '{v}'"))),
        }
    }
}

fn resolve(flags: Flags) -> CliResult<(Settings, Option<PathBuf>)> {
    let mut s = match &flags.config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    let singles = [
        ("alpha", flags.alpha),
        ("theta", flags.theta),
        ("n", flags.n),
        ("replicas", flags.replicas),
        ("seed", flags.seed),
        ("checkpoints", flags.checkpoints),
        ("weights", flags.weights),
        ("tol", flags.tol),
        ("format", flags.format),
        ("threads", flags.threads),
        ("kind", flags.kind),
        ("source", flags.source),
        ("source_seed", flags.source_seed),
        ("sampler", flags.sampler),
        ("centering", flags.centering),
        ("max_depth", flags.max_depth),
        ("p_min", flags.p_min),
        ("cov_rel", flags.cov_rel),
        ("var_rel", flags.var_rel),
        ("corr_abs", flags.corr_abs),
        ("se_mult", flags.se_mult),
        ("mean_se", flags.mean_se),
        ("kingman_depth", flags.kingman_depth),
        ("feller_sizes", flags.feller_sizes),
        ("series_n", flags.series_n),
        ("series_replicas", flags.series_replicas),
    ];
    for (k, v) in singles {
        s.set(k, v);
    }
    s.set_many("z", flags.z);
    s.set_many("zoom", flags.zoom);
    if let Some(o) = flags.out {
        s.set("out", Some(o.display().to_string()));
    }
    let out = s.raw("out").map(PathBuf::from);
    Ok((s, out))
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_list<T: FromStr>(key: &str, text: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|p| p.trim().parse().map_err(|_| usage(format!("malformed value for --{key}: '{text}'"))))
        .collect()
}

/// `re:im` or a bare real number.
pub fn parse_point(text: &str) -> Option<Complex64> {
    let mut parts = text.split(':');
    let re: f64 = parts.next()?.trim().parse().ok()?;
    let im: f64 = match parts.next() {
        Some(p) => p.trim().parse().ok()?,
        None => 0.0,
    };
    if parts.next().is_some() {
        return None;
    }
    Some(Complex64::new(re, im))
}

fn points(s: &Settings, key: &str) -> CliResult<Vec<[f64; 2]>> {
    s.many(key)
        .iter()
        .map(|t| {
            parse_point(t)
                .map(|z| [z.re, z.im])
                .ok_or_else(|| usage(format!("malformed value for --{key}: '{t}' (expected re:im)")))
        })
        .collect()
}

/// Parse a `--weights` spec; `file:PATH` holds whitespace-separated `a_1, a_2, ...`
/// with `#` comments, and `a_j = 0` beyond the table.
pub fn parse_weights(text: &str) -> std::result::Result<WeightSpec, String> {
    let bad = || format!("malformed weights '{text}'");
    let (head, rest) = text.split_once(':').unwrap_or((text, ""));
    let nums = |r: &str| -> std::result::Result<Vec<f64>, String> {
        r.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect()
    };
    match head {
        "const" => {
            if rest.is_empty() {
                Ok(WeightSpec::Const { value: 1.0 })
            } else {
                match nums(rest)?.as_slice() {
                    [v] => Ok(WeightSpec::Const { value: *v }),
                    _ => Err(bad()),
                }
            }
        }
        "arc" => match nums(rest)?.as_slice() {
            [c1, c2] => Ok(WeightSpec::Arc { c1: *c1, c2: *c2 }),
            _ => Err(bad()),
        },
        "logz" => match nums(rest)?.as_slice() {
            [re] => Ok(WeightSpec::LogZ { re: *re, im: 0.0 }),
            [re, im] => Ok(WeightSpec::LogZ { re: *re, im: *im }),
            _ => Err(bad()),
        },
        "file" => {
            let body = std::fs::read_to_string(rest).map_err(|e| format!("reading weights file {rest}: {e}"))?;
            let values = body
                .lines()
                .map(|l| l.split('#').next().unwrap_or(""))
                .flat_map(str::split_whitespace)
                .map(|t| t.parse::<f64>().map_err(|_| format!("weights file {rest}: bad number '{t}'")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(WeightSpec::Table { values, beyond: 0.0 })
        }
        _ => Err(bad()),
    }
}

fn weights(s: &Settings) -> CliResult<Option<WeightSpec>> {
    s.raw("weights").map(|t| parse_weights(t).map_err(CliError::Usage)).transpose()
}

fn checkpoints(s: &Settings) -> CliResult<Vec<f64>> {
    match s.raw("checkpoints") {
        Some(t) => parse_list("checkpoints", t),
        None => Ok(vec![1.0]),
    }
}

fn header(pairs: &[(&str, String)]) -> Header {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn simulate(s: &Settings, out: Option<&Path>) -> CliResult<()> {
    let alpha: f64 = s.required("alpha")?;
    let theta: f64 = s.or("theta", 0.0)?;
    let n: usize = s.required("n")?;
    let seed: u64 = s.or("seed", 0)?;
    let ts = checkpoints(s)?;
    let format = s.format(Format::Csv)?;
    let params = ModelParams::new(alpha, theta)?;
    let cks = Checkpoints::new(ts.clone())?;
    let traj = simulate_crp(&params, n, &cks, seed)?;
    let h = header(&[
        ("command", "simulate".into()),
        ("alpha", alpha.to_string()),
        ("theta", theta.to_string()),
        ("n", n.to_string()),
        ("seed", seed.to_string()),
        ("checkpoints", join(&ts)),
    ]);
    let text = match format {
        Format::Csv => io::trajectory_csv(&traj, &h),
        Format::Json => io::tagged_json(&traj, &h)?,
    };
    Ok(io::emit(&text, out)?)
}

fn urn(s: &Settings, out: Option<&Path>) -> CliResult<()> {
    let alpha: f64 = s.required("alpha")?;
    let theta: f64 = s.or("theta", 0.0)?;
    let n: usize = s.required("n")?;
    let seed: u64 = s.or("seed", 0)?;
    let source_name: String = s.or("source", "power-law".to_string())?;
    let source_seed: u64 = s.or("source_seed", seed)?;
    let sampler: String = s.or("sampler", "split".to_string())?;
    let max_depth: usize = s.or("max_depth", DEFAULT_MAX_DEPTH)?;
    let ts = checkpoints(s)?;
    let format = s.format(Format::Csv)?;
    let cks = Checkpoints::new(ts.clone())?;
    let mut source = match source_name.as_str() {
        "power-law" => FrequencySource::power_law(alpha)?,
        "stick-breaking" => {
            let params = ModelParams::new(alpha, theta)?;
            FrequencySource::stick_breaking(&params, source_seed).with_max_depth(max_depth)
        }
        other => return Err(usage(format!("unknown source '{other}' (power-law or stick-breaking)"))),
    };
    let traj = match sampler.as_str() {
        "split" => sample_urn_split(&mut source, n, &cks, seed)?,
        "ball" => sample_urn(&mut source, n, &cks, seed)?,
        other => return Err(usage(format!("unknown sampler '{other}' (split or ball)"))),
    };
    let h = header(&[
        ("command", "urn".into()),
        ("alpha", alpha.to_string()),
        ("theta", theta.to_string()),
        ("source", source_name.clone()),
        ("source_seed", source_seed.to_string()),
        ("max_depth", max_depth.to_string()),
        ("sampler", sampler.clone()),
        ("n", n.to_string()),
        ("seed", seed.to_string()),
        ("checkpoints", join(&ts)),
    ]);
    let text = match format {
        Format::Csv => io::trajectory_csv(&traj, &h),
        Format::Json => io::tagged_json(&traj, &h)?,
    };
    Ok(io::emit(&text, out)?)
}

#[derive(Serialize)]
struct EtaRow {
    z: [f64; 2],
    w: [f64; 2],
    s: f64,
    t: f64,
    cov: [f64; 2],
}

fn oracle(s: &Settings, out: Option<&Path>) -> CliResult<()> {
    let alpha: f64 = s.required("alpha")?;
    let tol: f64 = s.or("tol", 1e-8)?;
    let ts = checkpoints(s)?;
    let zs = points(s, "z")?;
    let format = s.format(Format::Csv)?;
    // validates the alpha range before any numerics
    ModelParams::new(alpha, 0.0)?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidParams("oracles need alpha in (0, 1)".into()).into());
    }
    let mut pairs = vec![
        ("command", "oracle".to_string()),
        ("alpha", alpha.to_string()),
        ("tol", tol.to_string()),
        ("checkpoints", join(&ts)),
    ];
    if zs.is_empty() {
        let spec = weights(s)?.unwrap_or(WeightSpec::Const { value: 1.0 });
        let w = spec.build()?;
        let cov = cov_zalpha_grid(alpha, &w, &ts, tol)?;
        pairs.push(("weights", s.raw("weights").unwrap_or("const").to_string()));
        pairs.push(("min_eigenvalue", cov.min_eigenvalue.to_string()));
        let h = header(&pairs);
        let text = match format {
            Format::Json => io::tagged_json(&cov, &h)?,
            Format::Csv => {
                let mut rows = Vec::new();
                for i in 0..ts.len() {
                    for j in 0..ts.len() {
                        rows.push(vec![
                            ts[i].to_string(),
                            ts[j].to_string(),
                            cov.values[i][j].to_string(),
                            cov.errors[i][j].to_string(),
                        ]);
                    }
                }
                io::table_csv(&["s", "t", "cov", "abs_error"], &rows, &h)
            }
        };
        return Ok(io::emit(&text, out)?);
    }
    pairs.push(("z", zs.iter().map(|p| format!("{}:{}", p[0], p[1])).collect::<Vec<_>>().join(";")));
    let mut rows = Vec::new();
    for z in &zs {
        for w in &zs {
            for &si in &ts {
                for &ti in &ts {
                    let c = cov_eta_quadrature(
                        alpha,
                        Complex64::new(z[0], z[1]),
                        Complex64::new(w[0], w[1]),
                        si,
                        ti,
                        tol,
                    )?;
                    rows.push(EtaRow { z: *z, w: *w, s: si, t: ti, cov: [c.re, c.im] });
                }
            }
        }
    }
    let h = header(&pairs);
    let text = match format {
        Format::Json => io::tagged_json(&rows, &h)?,
        Format::Csv => {
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    [r.z[0], r.z[1], r.w[0], r.w[1], r.s, r.t, r.cov[0], r.cov[1]]
                        .iter()
                        .map(f64::to_string)
                        .collect()
                })
                .collect();
            io::table_csv(&["z_re", "z_im", "w_re", "w_im", "s", "t", "cov_re", "cov_im"], &table, &h)
        }
    };
    Ok(io::emit(&text, out)?)
}

#[derive(Serialize)]
struct LawRow<'a> {
    counts: &'a [u64],
    probability: f64,
}

fn enumerate(s: &Settings, out: Option<&Path>) -> CliResult<()> {
    let alpha: f64 = s.required("alpha")?;
    let theta: f64 = s.or("theta", 0.0)?;
    let n: usize = s.required("n")?;
    let format = s.format(Format::Csv)?;
    let params = ModelParams::new(alpha, theta)?;
    let law = enumerate_crp(&params, n)?;
    let h = header(&[
        ("command", "enumerate".into()),
        ("alpha", alpha.to_string()),
        ("theta", theta.to_string()),
        ("n", n.to_string()),
        ("block_count_mean", block_count_mean(&params, n).to_string()),
    ]);
    let text = match format {
        Format::Csv => io::law_csv(&law, n, &h),
        Format::Json => {
            let rows: Vec<LawRow> = law.iter().map(|(c, &p)| LawRow { counts: c, probability: p }).collect();
            io::tagged_json(&rows, &h)?
        }
    };
    Ok(io::emit(&text, out)?)
}

/// Build an experiment configuration from resolved settings.
fn experiment_config(s: &Settings) -> CliResult<ExperimentConfig> {
    let kind: ExperimentKind = s
        .raw("kind")
        .ok_or_else(|| usage("missing required flag --kind"))?
        .parse()
        .map_err(|e: Error| usage(e.to_string()))?;
    let mut c = ExperimentConfig::defaults(kind);
    c.alpha = s.or("alpha", c.alpha)?;
    c.theta = s.or("theta", c.theta)?;
    c.n = s.or("n", c.n)?;
    c.replicas = s.or("replicas", c.replicas)?;
    c.seed = s.or("seed", c.seed)?;
    c.tol = s.or("tol", c.tol)?;
    if s.raw("checkpoints").is_some() {
        c.checkpoints = checkpoints(s)?;
    }
    if let Some(w) = weights(s)? {
        c.weights = w;
    }
    if !s.many("z").is_empty() {
        c.z_points = points(s, "z")?;
    }
    if !s.many("zoom").is_empty() {
        c.zoom_points = points(s, "zoom")?;
    }
    if let Some(m) = s.raw("centering") {
        c.centering = match m {
            "analytic" => Centering::Analytic,
            "empirical" => Centering::Empirical,
            _ => return Err(usage(format!("malformed value for --centering: '{m}'"))),
        };
    }
    let source_seed: u64 = s.or("source_seed", c.seed)?;
    let max_depth: usize = s.or("max_depth", DEFAULT_MAX_DEPTH)?;
    if let Some(src) = s.raw("source") {
        c.source = match src {
            "power-law" => SourceSpec::PowerLaw,
            "stick-breaking" => SourceSpec::StickBreaking { seed: source_seed, frozen: true, max_depth },
            "stick-breaking-fresh" => SourceSpec::StickBreaking { seed: source_seed, frozen: false, max_depth },
            _ => return Err(usage(format!("malformed value for --source: '{src}'"))),
        };
    }
    let t = &mut c.thresholds;
    t.p_min = s.or("p_min", t.p_min)?;
    t.cov_rel = s.or("cov_rel", t.cov_rel)?;
    t.var_rel = s.or("var_rel", t.var_rel)?;
    t.corr_abs = s.or("corr_abs", t.corr_abs)?;
    t.se_mult = s.or("se_mult", t.se_mult)?;
    t.mean_se = s.or("mean_se", t.mean_se)?;
    if let Some(d) = s.get::<usize>("kingman_depth")? {
        c.kingman_depth = Some(d);
    }
    if let Some(t) = s.raw("feller_sizes") {
        c.feller_sizes = parse_list("feller-sizes", t)?;
    }
    c.series_n = s.or("series_n", c.series_n)?;
    c.series_replicas = s.or("series_replicas", c.series_replicas)?;
    Ok(c)
}

fn experiment(s: &Settings, out: Option<&Path>) -> CliResult<()> {
    let config = experiment_config(s)?;
    let format = s.format(Format::Json)?;
    let report = run_experiment(&config)?;
    io::emit(&io::report_string(&report, format)?, out)?;
    verdict(&report)
}

fn verdict(report: &Report) -> CliResult<()> {
    let failed: Vec<&str> = report.failed().map(|r| r.statistic.as_str()).collect();
    eprintln!(
        "experiment {}: {} ({} records, {} failed)",
        report.name,
        if report.pass { "pass" } else { "FAIL" },
        report.records.len(),
        failed.len()
    );
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Failed(format!("experiment {} failed: {}", report.name, failed.join(", "))))
    }
}

fn report(args: ReportArgs) -> CliResult<()> {
    let format = match args.format.as_deref() {
        None => Format::Json,
        Some(f) => f.parse().map_err(|_| usage(format!("malformed value for --format: '{f}'")))?,
    };
    let r = io::read_report(&args.input)?;
    io::emit(&io::report_string(&r, format)?, args.out.as_deref())?;
    verdict(&r)
}

fn with_threads<T: Send>(s: &Settings, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match s.get::<usize>("threads")? {
        None => f(),
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Run(Error::ResourceGuard(format!("thread pool: {e}"))))?
            .install(f),
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    let (run, flags): (fn(&Settings, Option<&Path>) -> CliResult<()>, Flags) = match command {
        Command::Simulate(f) => (simulate, f),
        Command::Urn(f) => (urn, f),
        Command::Oracle(f) => (oracle, f),
        Command::Experiment(f) => (experiment, f),
        Command::Enumerate(f) => (enumerate, f),
        Command::Report(a) => return report(a),
    };
    let (settings, out) = resolve(flags)?;
    with_threads(&settings, || run(&settings, out.as_deref()))
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("crp-spectra: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_specs() {
        assert_eq!(parse_weights("const").unwrap(), WeightSpec::Const { value: 1.0 });
        assert_eq!(parse_weights("arc:0.1:0.4").unwrap(), WeightSpec::Arc { c1: 0.1, c2: 0.4 });
        assert_eq!(parse_weights("logz:0.5:-0.2").unwrap(), WeightSpec::LogZ { re: 0.5, im: -0.2 });
        assert!(parse_weights("arc:0.1").is_err());
        assert!(parse_weights("poly:1").is_err());
    }

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("0.3:-0.1"), Some(Complex64::new(0.3, -0.1)));
        assert_eq!(parse_point("-0.6"), Some(Complex64::new(-0.6, 0.0)));
        assert_eq!(parse_point("a:b"), None);
    }

    #[test]
    fn exit_codes() {
        fn argv(s: &str) -> Vec<String> {
            std::iter::once("crp-spectra").chain(s.split_whitespace()).map(String::from).collect()
        }
        assert_eq!(run(argv("simulate --bogus 1")), 1);
        assert_eq!(run(argv("oracle --alpha 1.2")), 2);
        assert_eq!(run(argv("simulate --alpha x --n 10")), 1);
        assert_eq!(run(argv("simulate --alpha 0.5")), 1);
    }
}
