//! Cross-mutual-information registration: equal-count quantisation, MI
//! surfaces over integer translations (FFT or direct counting), global
//! rigid search and per-nucleus translation refinement.

mod fft;
mod global;
mod mi;
mod quantize;
mod reduce;
mod refine;

pub use global::{
    default_angle_grid, register_multiscale, register_rigid_global, register_stacks, GlobalParams, GlobalRegistration,
};
pub use mi::{mi_from_joint, mi_surface_translation, mi_surface_with, CountMethod, MiSurface};
pub use quantize::{quantize_equal_count, quantize_masked, LabelPlane, Quantized};
pub use reduce::reduce_for_registration;
pub use refine::{refine_translation, RefineParams, Refinement};
pub use crate::transform::{RigidTransform2D, TransformRecord, BF_TO_FL_SCALE};
