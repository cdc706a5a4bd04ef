//! Pulse-wave simulation on 1D arterial networks, in-silico biosignal
//! datasets, amortized neural posterior estimation of cardiac biomarkers and
//! posterior calibration metrics.

pub mod error;
pub mod metrics;
pub mod npe;
pub mod population;
pub mod signal;
pub mod solver;
pub mod units;
pub mod vascular;

pub use error::{HemoError, Result};
