//! Subspace comparison, discrepancy reports and gradient energy splits.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::{median, orthonormality_defect, percentile, thin_svd};
use crate::tangent::{FrameHyperparams, Method, TangentFrameSet};

/// Inputs whose columns deviate from orthonormality by more than this are rejected.
pub const ORTHONORMALITY_TOL: f64 = 1e-6;

/// Principal angles between the column spans of `q1` and `q2`, ascending.
pub fn principal_angles(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(principal_cosines(q1, q2)?
        .into_iter()
        .map(f64::acos)
        .collect())
}

/// Cosines of the principal angles, descending and clamped to [0, 1].
pub fn principal_cosines(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> Result<Vec<f64>> {
    if q1.nrows() != q2.nrows() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} rows", q1.nrows()),
            actual: format!("{}", q2.nrows()),
        });
    }
    for q in [q1, q2] {
        let defect = orthonormality_defect(q);
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::invalid(format!(
                "frame columns are not orthonormal (defect {defect:e})"
            )));
        }
    }
    let k = q1.ncols().min(q2.ncols());
    if k == 0 {
        return Ok(Vec::new());
    }
    let (_, sigma, _) = thin_svd(&(q1.transpose() * q2));
    let cosines = sigma
        .into_iter()
        .take(k)
        .map(|c| c.clamp(0.0, 1.0))
        .collect();
    Ok(cosines)
}

/// `sum_i (1 - cos theta_i)` over the shared angles, plus one for every true
/// direction the estimate lacks.
pub fn discrepancy_score(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    let cosines = principal_cosines(est, truth)?;
    let missing = truth.ncols().saturating_sub(est.ncols());
    Ok(cosines.iter().map(|c| 1.0 - c).sum::<f64>() + missing as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    #[serde(default, skip_serializing)]
    pub per_point: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub method: Method,
    pub hyperparams: FrameHyperparams,
}

/// Summary statistics of per-point scores.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, median(values), percentile(values, 90.0))
}

pub fn discrepancy(est: &TangentFrameSet, truth: &[DMatrix<f64>]) -> Result<DiscrepancyReport> {
    discrepancy_of(&est.frames, truth, est.method, &est.hyperparams)
}

/// As [`discrepancy`] for bare frames, e.g. frames loaded from disk.
pub fn discrepancy_of(
    frames: &[DMatrix<f64>],
    truth: &[DMatrix<f64>],
    method: Method,
    hyperparams: &FrameHyperparams,
) -> Result<DiscrepancyReport> {
    if frames.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} true frames", frames.len()),
            actual: format!("{}", truth.len()),
        });
    }
    let per_point = frames
        .par_iter()
        .zip(truth.par_iter())
        .map(|(q, t)| discrepancy_score(q, t))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, median, p90) = summarize(&per_point);
    Ok(DiscrepancyReport {
        per_point,
        mean,
        median,
        p90,
        method,
        hyperparams: hyperparams.clone(),
    })
}

/// Horizontal/vertical split of the gradient energy of each function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySplit {
    pub indices: Vec<usize>,
    /// `(horizontal, vertical)` fractions per function.
    pub per_eigenvector: Vec<(f64, f64)>,
}

impl EnergySplit {
    pub fn vertical(&self) -> Vec<f64> {
        self.per_eigenvector.iter().map(|&(_, v)| v).collect()
    }
}

/// For each column `i` of the per-point gradient matrices, the share of
/// `sum_j |g_i(j)|^2` carried by the normal components `nu_j^T g_i(j)`.
/// A function with no gradient energy counts as purely horizontal.
pub fn vertical_energy_split(
    gradients: &[DMatrix<f64>],
    normals: &[DMatrix<f64>],
) -> Result<EnergySplit> {
    if gradients.len() != normals.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} normal frames", gradients.len()),
            actual: format!("{}", normals.len()),
        });
    }
    let m = gradients.first().map_or(0, |g| g.ncols());
    let mut total = vec![0.0; m];
    let mut vertical = vec![0.0; m];
    for (g, nu) in gradients.iter().zip(normals) {
        if g.nrows() != nu.nrows() || g.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: format!("{} x {m} gradients", nu.nrows()),
                actual: format!("{} x {}", g.nrows(), g.ncols()),
            });
        }
        let proj = nu.transpose() * g;
        for i in 0..m {
            total[i] += g.column(i).norm_squared();
            vertical[i] += proj.column(i).norm_squared();
        }
    }
    let per_eigenvector = total
        .iter()
        .zip(&vertical)
        .map(|(&t, &v)| {
            if t > 0.0 {
                let frac = (v / t).clamp(0.0, 1.0);
                (1.0 - frac, frac)
            } else {
                (1.0, 0.0)
            }
        })
        .collect();
    Ok(EnergySplit {
        indices: (0..m).collect(),
        per_eigenvector,
    })
}

/// Neumann eigenpair `(i, j)` of the Laplacian on `[0, l] x [-h, h]`, with the
/// mode `cos(i pi x / l) cos(j pi (y + h) / 2h)` sampled at the first two
/// coordinates of each point.
pub fn rectangle_mode_oracle(
    l: f64,
    halfwidth: f64,
    i: usize,
    j: usize,
    cloud: &PointCloud,
) -> Result<(f64, DVector<f64>)> {
    if !(l > 0.0 && halfwidth > 0.0) {
        return Err(Error::invalid("rectangle sides must be positive"));
    }
    if cloud.dim() < 2 {
        return Err(Error::invalid("rectangle modes need two coordinates"));
    }
    let kx = i as f64 * PI / l;
    let ky = j as f64 * PI / (2.0 * halfwidth);
    let eigenvalue = kx * kx + ky * ky;
    let mode = DVector::from_fn(cloud.n(), |c, _| {
        let x = cloud.points[(0, c)];
        let y = cloud.points[(1, c)];
        (kx * x).cos() * (ky * (y + halfwidth)).cos()
    });
    Ok((eigenvalue, mode))
}

/// Normalized horizontal and vertical energies `(i^2, j^2)` of mode `(i, j)`.
pub fn rectangle_mode_energies(i: usize, j: usize) -> (f64, f64) {
    ((i * i) as f64, (j * j) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeOrdering {
    /// First (0-based) eigenvector whose vertical fraction exceeds one half.
    pub first_vertical: Option<usize>,
    pub leading: usize,
    pub holds: bool,
}

/// Checks that no eigenvector among the first `leading` is predominantly
/// vertical.
pub fn tube_ordering(vertical_fractions: &[f64], leading: usize) -> TubeOrdering {
    let first_vertical = vertical_fractions.iter().position(|&v| v > 0.5);
    TubeOrdering {
        first_vertical,
        leading,
        holds: first_vertical.is_none_or(|i| i >= leading),
    }
}

/// `|A ∩ B| / |A ∪ B|`; two empty sets overlap perfectly.
pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Average ranks (1-based, ties share their mean rank).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut k = i;
        while k + 1 < order.len() && values[order[k + 1]] == values[order[i]] {
            k += 1;
        }
        let rank = (i + k) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=k] {
            out[idx] = rank;
        }
        i = k + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}
