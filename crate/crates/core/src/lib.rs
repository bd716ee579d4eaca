//! Fixed-pattern-noise simulation and removal for infrared focal-plane
//! imagery: classical calibration and scene-based correctors, a cascade CNN
//! corrector, and the PSNR / roughness metrics used to compare them.

pub mod bench;
pub mod cascade;
pub mod classical;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod scenes;
pub mod sim;

pub use error::{CheckpointError, FpnrError, ImageIoError, Result};
pub use image::Image;

/// Crate version, recorded in manifests and dataset descriptors.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type CascadeModel32 = cascade::CascadeModel<f32>;
pub type CascadeModel64 = cascade::CascadeModel<f64>;
