//! Metaorder impact and decay estimation, a synthetic market generator, and
//! daily-flow kernel deconvolution.

pub mod curvefit;
pub mod datamodel;
pub mod deconvolution;
pub mod error;
pub mod flowstats;
pub mod impact;
mod par;
pub mod seeds;
pub mod simulator;

pub use error::{Error, ErrorKind, Result};
