//! Blind motion deblurring from salient structure.
//!
//! A blurred image is reduced to its coherent edges (structure-texture
//! decomposition, shock filtering, thresholding), a blur kernel is fitted to
//! those edges over a coarse-to-fine pyramid, and the image is restored with
//! a TV prior that relaxes along the salient edges.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cg;
pub mod conv;
pub mod deconv;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod kernel_est;
pub mod metrics;
pub mod pipeline;
pub mod poisson;
pub mod resample;
pub mod structure;
pub mod synth;

pub use conv::{convolve, convolve_plane, ConvMode, ConvOperator};
pub use deconv::{adaptive_deconv, tv_deconv, DeconvParams};
pub use error::{DeblurError, Result};
pub use image::{divergence, gradients, to_grayscale, GradientField, Image, Kernel, Plane};
pub use io::{load_image, read_kernel, save_image, write_kernel, BitDepth};
pub use kernel_est::{estimate_kernel, l0_gradient_smooth, mu_schedule, project_kernel, KernelEstParams};
pub use metrics::{error_ratio, psnr, ssde, EvalReport};
pub use pipeline::{build_schedule, deblur_blind, BlindResult, CropRect, DeblurConfig, ScaleSchedule};
pub use structure::{MaskRule, StructureParams};
