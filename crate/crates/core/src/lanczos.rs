//! Thick-restart Lanczos with full reorthogonalization for the largest
//! eigenpairs of a symmetric operator.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::rng_from_seed;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_desc;

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Krylov subspace size before a restart; 0 picks `max(2 nev + 20, nev + 40)`.
    pub subspace: usize,
    pub tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            subspace: 0,
            tol: 1e-11,
            max_restarts: 2000,
            seed: 0x5eed,
        }
    }
}

fn orthogonalize(basis: &DMatrix<f64>, cols: usize, w: &mut DVector<f64>) -> DVector<f64> {
    let v = basis.columns(0, cols);
    let mut h = v.tr_mul(w);
    *w -= v * &h;
    // second pass (DGKS) keeps the basis orthonormal to working precision
    let h2 = v.tr_mul(w);
    *w -= v * &h2;
    h += h2;
    h
}

/// Returns the `nev` largest eigenvalues (descending) and their eigenvectors
/// of the symmetric operator `apply` of dimension `n`.
pub fn largest_eigenpairs<F>(
    n: usize,
    nev: usize,
    apply: F,
    opts: &LanczosOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if nev == 0 || nev > n {
        return Err(Error::invalid(format!(
            "nev must satisfy 0 < nev <= n (nev={nev}, n={n})"
        )));
    }
    let ncv = if opts.subspace == 0 {
        (2 * nev + 20).max(nev + 40)
    } else {
        opts.subspace
    }
    .min(n)
    .max(nev);

    let mut rng = rng_from_seed(opts.seed);
    let mut random_vec = || DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));

    let mut basis = DMatrix::<f64>::zeros(n, ncv + 1);
    let mut projected = DMatrix::<f64>::zeros(ncv, ncv);
    let start = random_vec();
    basis.set_column(0, &(&start / start.norm()));

    let mut kept = 0;
    let mut last_residual = f64::INFINITY;
    for _restart in 0..=opts.max_restarts {
        let mut beta = 0.0;
        for j in kept..ncv {
            let mut w = apply(&basis.column(j).into_owned());
            let h = orthogonalize(&basis, j + 1, &mut w);
            for i in 0..=j {
                projected[(i, j)] = h[i];
                projected[(j, i)] = h[i];
            }
            beta = w.norm();
            let scale = h.amax().max(1.0);
            if beta <= 1e-13 * scale {
                // invariant subspace found; continue with a fresh direction
                beta = 0.0;
                let mut fresh = random_vec();
                orthogonalize(&basis, j + 1, &mut fresh);
                w = &fresh / fresh.norm();
                basis.set_column(j + 1, &w);
            } else {
                basis.set_column(j + 1, &(w / beta));
            }
        }

        let (theta, y) = symmetric_eigen_desc(&projected);
        let residual = |i: usize| (beta * y[(ncv - 1, i)]).abs();
        last_residual = (0..nev)
            .map(|i| residual(i) / theta[i].abs().max(1.0))
            .fold(0.0, f64::max);
        let converged = last_residual <= opts.tol || ncv == n;
        if converged {
            let vectors = basis.columns(0, ncv) * y.columns(0, nev);
            return Ok((theta.iter().take(nev).copied().collect(), vectors));
        }

        let keep = (nev + (ncv - nev) / 2).min(ncv - 1).max(nev);
        let ritz = basis.columns(0, ncv) * y.columns(0, keep);
        let residual_vec = basis.column(ncv).into_owned();
        basis.columns_mut(0, keep).copy_from(&ritz);
        basis.set_column(keep, &residual_vec);
        projected.fill(0.0);
        for i in 0..keep {
            projected[(i, i)] = theta[i];
        }
        kept = keep;
    }
    Err(Error::ConvergenceFailure {
        what: "lanczos eigensolver".into(),
        residual: last_residual,
    })
}
