//! Empirical null estimation by mode matching.

pub mod bias;
pub mod correlation;
pub mod covariance;
pub mod error;
pub mod expfam;
pub mod fdr;
pub mod histogram;
pub mod nullfit;
pub mod par;
pub mod quad;
pub mod scenario;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
