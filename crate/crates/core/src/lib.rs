pub mod analysis;
pub mod dmft;
pub mod error;
pub mod experiment;
pub mod exponents;
pub mod limits;
mod linalg;
pub mod linearnet;
pub mod simulator;
pub mod spectra;
pub mod trajectory;

pub use error::{Error, Result};
