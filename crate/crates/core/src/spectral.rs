//! Low-frequency eigenpairs of the random-walk Laplacian.
//!
//! `L = I - Dn^{-1} K` is not symmetric, but `Dn^{1/2} L Dn^{-1/2} = I - S`
//! with `S = Dn^{-1/2} K Dn^{-1/2}` is. We solve the symmetric problem and map
//! eigenvectors back with `phi = Dn^{-1/2} v`.

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd;
use faer::{Mat, Par};
use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CsrMatrix;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LaplacianOperator;
use crate::lanczos::{largest_eigenpairs, LanczosOptions};
use crate::linalg::thin_q;

/// Problems up to this size are solved densely by default.
pub const DENSE_MAX_N: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum EigenSolver {
    /// Dense for `n <= DENSE_MAX_N`, Lanczos above.
    #[default]
    Auto,
    Dense,
    Lanczos,
}

/// The `m0` smallest eigenpairs of a Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// `n x m0` right eigenvectors of `L`, unit 2-norm, sign-normalized.
    pub eigenvectors: DMatrix<f64>,
    /// `n x m0` orthonormal basis of the span of `eigenvectors`.
    pub orthonormal: DMatrix<f64>,
    pub m0: usize,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.eigenvectors.nrows()
    }

    /// The basis restricted to its first `m0` eigenpairs.
    pub fn truncate(&self, m0: usize) -> Result<SpectralBasis> {
        if m0 == 0 || m0 > self.m0 {
            return Err(Error::invalid(format!(
                "cannot truncate a basis of {} eigenpairs to {m0}",
                self.m0
            )));
        }
        let eigenvectors = self.eigenvectors.columns(0, m0).into_owned();
        Ok(SpectralBasis {
            eigenvalues: self.eigenvalues[..m0].to_vec(),
            orthonormal: thin_q(&eigenvectors),
            eigenvectors,
            m0,
        })
    }

    /// Rebuilds a basis from stored eigenpairs (e.g. loaded from disk).
    pub fn from_parts(eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>) -> Result<SpectralBasis> {
        if eigenvalues.len() != eigenvectors.ncols() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} eigenvector columns", eigenvalues.len()),
                actual: format!("{}", eigenvectors.ncols()),
            });
        }
        Ok(SpectralBasis {
            m0: eigenvalues.len(),
            orthonormal: thin_q(&eigenvectors),
            eigenvalues,
            eigenvectors,
        })
    }
}

/// Task count of the dense solver, independent of the ambient thread pool.
const DENSE_THREADS: usize = 4;

/// Magnitudes within this relative distance of the maximum count as tied.
pub const SIGN_TIE_RTOL: f64 = 1e-10;

/// Flips `v` so its entry of largest magnitude (lowest index on ties) is positive.
pub fn normalize_sign(v: &mut DVector<f64>) {
    let max = v.amax();
    let best = v
        .iter()
        .position(|x| x.abs() >= max * (1.0 - SIGN_TIE_RTOL))
        .unwrap_or(0);
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

pub fn smallest_eigenpairs(lap: &LaplacianOperator, m0: usize) -> Result<SpectralBasis> {
    smallest_eigenpairs_with(lap, m0, EigenSolver::Auto)
}

pub fn smallest_eigenpairs_with(
    lap: &LaplacianOperator,
    m0: usize,
    solver: EigenSolver,
) -> Result<SpectralBasis> {
    let n = lap.n();
    if m0 == 0 || m0 > n {
        return Err(Error::invalid(format!(
            "m0 must satisfy 0 < m0 <= n (m0={m0}, n={n})"
        )));
    }
    let sym = lap.symmetric_kernel();
    let use_dense = match solver {
        EigenSolver::Dense => true,
        EigenSolver::Lanczos => false,
        EigenSolver::Auto => n <= DENSE_MAX_N,
    };
    let (values, vectors) = if use_dense {
        dense_smallest(&sym, m0)?
    } else {
        lanczos_smallest(&sym, m0)?
    };

    let inv_sqrt: Vec<f64> = lap
        .normalized_degrees
        .iter()
        .map(|d| 1.0 / d.sqrt())
        .collect();
    let mut eigenvectors = DMatrix::zeros(n, m0);
    for k in 0..m0 {
        let mut phi = DVector::from_fn(n, |i, _| vectors[(i, k)] * inv_sqrt[i]);
        let norm = phi.norm();
        phi /= norm;
        normalize_sign(&mut phi);
        eigenvectors.set_column(k, &phi);
    }
    Ok(SpectralBasis {
        eigenvalues: values,
        orthonormal: thin_q(&eigenvectors),
        eigenvectors,
        m0,
    })
}

fn dense_smallest(sym: &CsrMatrix<f64>, m0: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = sym.nrows();
    let mut op = Mat::<f64>::identity(n, n);
    for (i, j, &v) in sym.triplet_iter() {
        op[(i, j)] -= v;
    }
    let mut u = Mat::<f64>::zeros(n, n);
    let mut diag = Diag::<f64>::zeros(n);
    let par = Par::rayon(DENSE_THREADS);
    let scratch = evd::self_adjoint_evd_scratch::<f64>(
        n,
        evd::ComputeEigenvectors::Yes,
        par,
        Default::default(),
    );
    evd::self_adjoint_evd(
        op.as_ref(),
        diag.as_mut(),
        Some(u.as_mut()),
        par,
        MemStack::new(&mut MemBuffer::new(scratch)),
        Default::default(),
    )
    .map_err(|e| Error::ConvergenceFailure {
        what: format!("dense symmetric eigensolver ({e:?})"),
        residual: f64::NAN,
    })?;
    let s = diag.column_vector();
    let values = (0..m0).map(|k| s[k]).collect();
    let vectors = DMatrix::from_fn(n, m0, |i, k| u[(i, k)]);
    Ok((values, vectors))
}

fn lanczos_smallest(sym: &CsrMatrix<f64>, m0: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = sym.nrows();
    let apply = |v: &DVector<f64>| {
        let mut out = DVector::zeros(n);
        for (i, row) in sym.row_iter().enumerate() {
            out[i] = row
                .col_indices()
                .iter()
                .zip(row.values())
                .map(|(&c, &w)| w * v[c])
                .sum();
        }
        out
    };
    let (theta, vectors) = largest_eigenpairs(n, m0, apply, &LanczosOptions::default())?;
    Ok((theta.iter().map(|t| 1.0 - t).collect(), vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_walk_laplacian, Affinity};
    use nalgebra::SymmetricEigen;

    fn path3() -> LaplacianOperator {
        let adj = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        random_walk_laplacian(&Affinity::from_dense(&adj, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn path_graph_matches_dense_oracle() {
        let lap = path3();
        let basis = smallest_eigenpairs(&lap, 3).unwrap();
        // oracle: symmetric similarity transform solved by nalgebra
        let dense = lap.to_dense();
        let dn: Vec<f64> = lap.normalized_degrees.clone();
        let sym = DMatrix::from_fn(3, 3, |i, j| dense[(i, j)] * dn[i].sqrt() / dn[j].sqrt());
        let mut oracle: Vec<f64> = SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in basis.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
        // the path's random-walk spectrum is {0, 1, 2}
        assert!((basis.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert!((basis.eigenvalues[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_vector_spans_kernel() {
        let lap = path3();
        let basis = smallest_eigenpairs(&lap, 2).unwrap();
        assert!(basis.eigenvalues[0].abs() < 1e-12);
        let c = 1.0 / 3f64.sqrt();
        for i in 0..3 {
            assert!((basis.eigenvectors[(i, 0)] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_m0_above_n() {
        assert!(matches!(
            smallest_eigenpairs(&path3(), 4),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sign_convention() {
        let mut v = DVector::from_vec(vec![0.1, -0.9, 0.9]);
        normalize_sign(&mut v);
        // tie on magnitude: index 1 wins and is made positive
        assert_eq!(v[1], 0.9);
        let mut w = DVector::from_vec(vec![-0.5, 0.5 + 1e-15, -0.2]);
        normalize_sign(&mut w);
        assert!(w[0] > 0.0);
    }

    #[test]
    fn truncate_keeps_prefix() {
        let basis = smallest_eigenpairs(&path3(), 3).unwrap();
        let t = basis.truncate(2).unwrap();
        assert_eq!(t.m0, 2);
        assert_eq!(
            t.eigenvectors,
            basis.eigenvectors.columns(0, 2).into_owned()
        );
        assert!(basis.truncate(4).is_err());
    }
}
