//! Super-resolution of the six 20 m Sentinel-2 bands to 10 m, guided by the
//! four native 10 m bands, with a small residual CNN trained on
//! reduced-resolution copies of the scene itself.

pub mod baselines;
pub mod compare;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod net;
pub mod preview;
pub mod raster;
pub mod resample;
pub mod synth;
pub mod wald;

pub use error::{Error, Result};
