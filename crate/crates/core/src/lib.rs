//! Task-aware, diversity-driven sequential acquisition of structure–property
//! datasets from shape-only libraries.
//!
//! The pipeline:
//!
//! * [`corpus`]: binary unit cells, signed distance fields, synthetic lattices.
//! * [`descriptor`]: a compact standardized latent descriptor per shape.
//! * [`homogenize`]: periodic FEM homogenization (ground-truth properties).
//! * [`gp`]: multiresponse Gaussian-process surrogate from latents to properties.
//! * [`dpp`]: similarity kernels, random Fourier features, conditioning and k-DPP sampling.
//! * [`quality`]: pointwise task-quality functions and activations.
//! * [`acquire`]: the staged acquisition loop.
//! * [`metrics`]: mean pairwise distance and distance gain.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the `*64` aliases
//! below are the concrete types used by the command line tool.

pub mod acquire;
pub mod corpus;
pub mod descriptor;
pub mod dpp;
pub mod gp;
pub mod homogenize;
pub mod linalg;
pub mod metrics;
pub mod quality;
pub mod rng;
mod scalar;

pub use scalar::Real;

pub type ShapeLibrary64 = corpus::ShapeLibrary<f64>;
pub type LatentMatrix64 = descriptor::LatentMatrix<f64>;
pub type PcaBasis64 = descriptor::PcaBasis<f64>;
pub type PropertyVector64 = homogenize::PropertyVector<f64>;
pub type MaterialSpec64 = homogenize::MaterialSpec<f64>;
pub type GpModel64 = gp::GpModel<f64>;
pub type LowRankFeature64 = dpp::LowRankFeature<f64>;
pub type AcquisitionState64 = acquire::AcquisitionState<f64>;

pub type ShapeLibrary32 = corpus::ShapeLibrary<f32>;
pub type LatentMatrix32 = descriptor::LatentMatrix<f32>;
pub type LowRankFeature32 = dpp::LowRankFeature<f32>;
