//! Gradient estimates of Laplacian eigenvectors.
//!
//! Each eigenvector is first fit to first order on every neighborhood by
//! least squares (`g_i(j) = pinv(Xc_j) * (phi_i(N_j) - phi_i(j))`), then every
//! ambient component of the resulting gradient field is projected onto the
//! span of the first `m0` eigenvectors, which suppresses the high-frequency
//! part of the noise.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::graph::NeighborhoodGraph;
use crate::linalg::pseudo_inverse;
use crate::spectral::SpectralBasis;

/// Relative singular-value cutoff used for patch pseudoinverses.
pub const DEFAULT_RCOND: f64 = 1e-8;

/// Neighbor offsets around one point and their pseudoinverse.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredPatch {
    pub index: usize,
    pub neighbors: Vec<usize>,
    /// `k_nn x p`; row `s` is `x_{j_s} - x_j`.
    pub offsets: DMatrix<f64>,
    /// `p x k_nn`.
    pub pinv: DMatrix<f64>,
    pub rank: usize,
}

impl CenteredPatch {
    pub fn new(
        index: usize,
        neighbors: Vec<usize>,
        offsets: DMatrix<f64>,
        rcond: f64,
    ) -> Result<Self> {
        if offsets.nrows() != neighbors.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} offset rows", neighbors.len()),
                actual: format!("{}", offsets.nrows()),
            });
        }
        let (pinv, rank) = pseudo_inverse(&offsets, rcond);
        if rank == 0 {
            return Err(Error::DegeneratePatch { index });
        }
        Ok(Self {
            index,
            neighbors,
            offsets,
            pinv,
            rank,
        })
    }
}

pub fn center_patches(
    cloud: &PointCloud,
    graph: &NeighborhoodGraph,
    rcond: f64,
) -> Result<Vec<CenteredPatch>> {
    if !(rcond > 0.0 && rcond < 1.0) {
        return Err(Error::invalid(format!(
            "rcond must lie in (0, 1), got {rcond}"
        )));
    }
    if graph.n() != cloud.n() {
        return Err(Error::DimensionMismatch {
            expected: format!("graph over {} points", cloud.n()),
            actual: format!("{}", graph.n()),
        });
    }
    let p = cloud.dim();
    (0..cloud.n())
        .into_par_iter()
        .map(|j| {
            let nbrs = &graph.neighbors[j];
            let center = cloud.point(j);
            let offsets =
                DMatrix::from_fn(nbrs.len(), p, |s, a| cloud.points[(a, nbrs[s])] - center[a]);
            CenteredPatch::new(j, nbrs.clone(), offsets, rcond)
        })
        .collect()
}

/// Estimated gradients: `gradients[j]` is the `p x m` matrix whose column `i`
/// approximates the gradient of eigenvector `i` at point `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub gradients: Vec<DMatrix<f64>>,
    pub m: usize,
    pub m0: usize,
}

impl GradientField {
    pub fn n(&self) -> usize {
        self.gradients.len()
    }

    pub fn dim(&self) -> usize {
        self.gradients.first().map_or(0, |g| g.nrows())
    }
}

/// Per-point least-squares gradients of the columns of `values` (`n x m`),
/// without any spectral smoothing.
pub fn local_gradients(patches: &[CenteredPatch], values: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    patches
        .par_iter()
        .map(|patch| {
            let j = patch.index;
            let diffs = DMatrix::from_fn(patch.neighbors.len(), values.ncols(), |s, i| {
                values[(patch.neighbors[s], i)] - values[(j, i)]
            });
            &patch.pinv * diffs
        })
        .collect()
}

/// Gradients of the first `m` eigenvectors, smoothed through the span of
/// the basis' orthonormalized eigenvectors.
pub fn estimate_gradients(
    patches: &[CenteredPatch],
    basis: &SpectralBasis,
    m: usize,
) -> Result<GradientField> {
    if m == 0 || m > basis.m0 {
        return Err(Error::invalid(format!(
            "m must satisfy 0 < m <= m0 (m={m}, m0={})",
            basis.m0
        )));
    }
    let n = basis.n();
    if patches.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} patches"),
            actual: format!("{}", patches.len()),
        });
    }
    let p = patches[0].offsets.ncols();
    let phi = basis.eigenvectors.columns(0, m).into_owned();
    let raw = local_gradients(patches, &phi);

    // Stack the raw field as (m p) x n: row i*p + a holds component a of grad phi_i.
    let mut stacked = DMatrix::zeros(m * p, n);
    for (j, g) in raw.iter().enumerate() {
        for i in 0..m {
            for a in 0..p {
                stacked[(i * p + a, j)] = g[(a, i)];
            }
        }
    }
    let u = &basis.orthonormal;
    let coeffs = &stacked * u;
    let smoothed = coeffs * u.transpose();

    let gradients = (0..n)
        .map(|j| DMatrix::from_fn(p, m, |a, i| smoothed[(i * p + a, j)]))
        .collect();
    Ok(GradientField {
        gradients,
        m,
        m0: basis.m0,
    })
}

/// `(1/n) sum_j |Xc_j g_i(j) - (phi_i(N_j) - phi_i(j))|^2` for a gradient
/// field of a single function given as a `p x n` matrix.
pub fn local_fit_objective(
    patches: &[CenteredPatch],
    values: &DVector<f64>,
    field: &DMatrix<f64>,
) -> f64 {
    let n = patches.len() as f64;
    patches
        .iter()
        .map(|patch| {
            let j = patch.index;
            let diffs = DVector::from_fn(patch.neighbors.len(), |s, _| {
                values[patch.neighbors[s]] - values[j]
            });
            (&patch.offsets * field.column(j) - diffs).norm_squared()
        })
        .sum::<f64>()
        / n
}
