//! Brightfield + fluorescence cytology data pipeline.
//!
//! Stages, in pipeline order: illumination correction ([`illum`]),
//! cross-mutual-information registration ([`registration`]), focus
//! selection ([`focus`]), nucleus peak detection ([`peaks`]), aligned patch
//! extraction and QC ([`pipeline`]), dataset labelling / fold planning /
//! misalignment injection / phantoms ([`dataset`]) and evaluation
//! ([`metrics`]).
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the pixel type to 32-bit floats as used on disk.

pub mod config;
pub mod dataset;
pub mod error;
pub mod focus;
pub mod illum;
pub mod image;
pub mod io;
pub mod metrics;
pub mod peaks;
pub mod pipeline;
pub mod registration;
pub mod scalar;
pub mod transform;

pub use error::{Error, Result};
pub use scalar::Real;
pub use transform::{RigidTransform2D, BF_TO_FL_SCALE};

pub type Plane32 = image::Plane<f32>;
pub type Plane64 = image::Plane<f64>;
pub type MultiChannelImage32 = image::MultiChannelImage<f32>;
pub type ZStack32 = image::ZStack<f32>;
