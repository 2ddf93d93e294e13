pub mod cli;
pub mod crp;
pub mod error;
pub mod experiments;
pub mod io;
pub mod limits;
pub mod quad;
pub mod seed;
pub mod stats;
pub mod special;
pub mod spectral;
pub mod urn;

pub use error::{Error, Result};
