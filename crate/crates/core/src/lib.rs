//! Hessian-based multimodal similarity and affine registration for 3-D volumes.
//!
//! The crate is organised bottom-up:
//!
//! - [`volume_io`]: scalar volumes, landmark sets, file formats, phantoms and bias fields.
//! - [`derivatives`]: gradient and Hessian fields from separable Gaussian derivative kernels.
//! - [`metrics`]: pointwise Hessian similarity (closed form, angle form, least-squares
//!   reference) and gradient orientation alignment.
//! - [`transform`]: affine parameterisation, inversion, Hessian transport and trilinear
//!   interpolation.
//! - [`optimizer`]: best/1/bin differential evolution.
//! - [`registration`]: sampling, cost assembly and the end-to-end affine pipeline.
//! - [`evaluation`]: target registration error, similarity maps, bias robustness and
//!   similarity-vs-error scatter export.

pub mod derivatives;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod optimizer;
pub mod registration;
pub mod symmetric;
pub mod transform;
pub mod volume_io;

pub use error::{Error, Result};
pub use symmetric::Sym3;
