//! Tangent-space estimation from point clouds using gradients of
//! graph-Laplacian eigenvectors, with a local-PCA baseline and the
//! downstream consumers (local-view alignment, boundary detection).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod downstream;
pub mod error;
pub mod gradients;
pub mod graph;
pub mod io;
pub mod lanczos;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod spectral;
pub mod tangent;

pub use error::{Error, Result};
