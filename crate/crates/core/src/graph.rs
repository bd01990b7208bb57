//! Nearest-neighbor graphs, Gaussian affinities, degree normalization, the
//! random-walk Laplacian and Sinkhorn scaling to a doubly stochastic kernel.

use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::median;

/// `k_nn` nearest neighbors of every point, sorted by ascending distance.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodGraph {
    pub neighbors: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
    pub k_nn: usize,
    pub includes_self: bool,
}

impl NeighborhoodGraph {
    pub fn n(&self) -> usize {
        self.neighbors.len()
    }
}

fn sq_dist(points: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    points
        .column(i)
        .iter()
        .zip(points.column(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Exact Euclidean kNN by exhaustive scan. Ties are broken by the smaller
/// index. With `includes_self`, the point itself occupies the first slot and
/// the remaining `k_nn - 1` slots hold the nearest other points.
pub fn knn_graph(
    cloud: &PointCloud,
    k_nn: usize,
    includes_self: bool,
) -> Result<NeighborhoodGraph> {
    knn_graph_points(&cloud.points, k_nn, includes_self)
}

pub fn knn_graph_points(
    points: &DMatrix<f64>,
    k_nn: usize,
    includes_self: bool,
) -> Result<NeighborhoodGraph> {
    let n = points.ncols();
    if k_nn == 0 || k_nn >= n {
        return Err(Error::invalid(format!(
            "k_nn must satisfy 0 < k_nn < n (k_nn={k_nn}, n={n})"
        )));
    }
    let others = if includes_self { k_nn - 1 } else { k_nn };
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(points, i, j), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            };
            if others < cand.len() && others > 0 {
                cand.select_nth_unstable_by(others - 1, cmp);
            }
            cand.truncate(others);
            cand.sort_by(cmp);
            let mut idx = Vec::with_capacity(k_nn);
            let mut dist = Vec::with_capacity(k_nn);
            if includes_self {
                idx.push(i);
                dist.push(0.0);
            }
            for (d2, j) in cand {
                idx.push(j);
                dist.push(d2.sqrt());
            }
            (idx, dist)
        })
        .collect();
    let (neighbors, distances) = rows.into_iter().unzip();
    Ok(NeighborhoodGraph {
        neighbors,
        distances,
        k_nn,
        includes_self,
    })
}

/// `sqrt(2)` times the median (over points) distance to the
/// `ceil(k_nn / 2)`-th non-self neighbor.
pub fn bandwidth_heuristic(graph: &NeighborhoodGraph) -> Result<f64> {
    if graph.n() == 0 {
        return Err(Error::invalid("empty graph"));
    }
    let others = if graph.includes_self {
        graph.k_nn - 1
    } else {
        graph.k_nn
    };
    if others == 0 {
        return Err(Error::invalid("graph has no non-self neighbors"));
    }
    let rank = graph.k_nn.div_ceil(2).min(others);
    let offset = usize::from(graph.includes_self);
    let dists: Vec<f64> = graph
        .distances
        .iter()
        .map(|row| row[offset + rank - 1])
        .collect();
    Ok(std::f64::consts::SQRT_2 * median(&dists))
}

/// `exp(-|z|^2 / s^2)` given `|z|^2`.
pub fn gaussian_kernel(sq_norm: f64, bandwidth: f64) -> f64 {
    (-sq_norm / (bandwidth * bandwidth)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum AffinityMode {
    /// Kernel evaluated on the symmetrized kNN support (plus the diagonal).
    KnnTruncated,
    /// Kernel evaluated on all pairs.
    Dense,
}

/// Symmetric nonnegative affinity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinity {
    pub weights: CsrMatrix<f64>,
    pub bandwidth: f64,
    pub mode: AffinityMode,
}

fn csr_from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> CsrMatrix<f64> {
    let mut offsets = Vec::with_capacity(n + 1);
    let nnz: usize = rows.iter().map(Vec::len).sum();
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    offsets.push(0);
    for row in rows {
        for (c, v) in row {
            cols.push(c);
            vals.push(v);
        }
        offsets.push(cols.len());
    }
    CsrMatrix::try_from_csr_data(n, n, offsets, cols, vals).expect("rows are sorted and in range")
}

/// Dense copy of a CSR matrix.
pub fn csr_to_dense(m: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, j, &v) in m.triplet_iter() {
        out[(i, j)] += v;
    }
    out
}

fn csr_from_dense(m: &DMatrix<f64>) -> CsrMatrix<f64> {
    let n = m.nrows();
    let rows = (0..n)
        .map(|i| {
            (0..m.ncols())
                .filter(|&j| m[(i, j)] != 0.0)
                .map(|j| (j, m[(i, j)]))
                .collect()
        })
        .collect();
    csr_from_rows(n, rows)
}

fn row_sums(m: &CsrMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|r| r.values().iter().sum()).collect()
}

impl Affinity {
    /// Wraps an explicit symmetric nonnegative matrix (zeros are dropped from
    /// the support).
    pub fn from_dense(m: &DMatrix<f64>, bandwidth: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("affinity must be square"));
        }
        if m.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid(
                "affinity entries must be finite and nonnegative",
            ));
        }
        let scale = m.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
        if (m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("affinity must be symmetric"));
        }
        Ok(Self {
            weights: csr_from_dense(m),
            bandwidth,
            mode: AffinityMode::Dense,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        csr_to_dense(&self.weights)
    }

    /// Row sums `d_i = sum_j W_ij`.
    pub fn degrees(&self) -> Vec<f64> {
        row_sums(&self.weights)
    }
}

/// Gaussian affinity `W_ij = exp(-|x_i - x_j|^2 / s^2)`.
///
/// In [`AffinityMode::KnnTruncated`] the support is the union of kNN edges in
/// both directions plus the diagonal; `graph` must be given.
pub fn gaussian_affinity(
    cloud: &PointCloud,
    graph: Option<&NeighborhoodGraph>,
    bandwidth: f64,
    mode: AffinityMode,
) -> Result<Affinity> {
    gaussian_affinity_points(&cloud.points, graph, bandwidth, mode)
}

pub fn gaussian_affinity_points(
    points: &DMatrix<f64>,
    graph: Option<&NeighborhoodGraph>,
    bandwidth: f64,
    mode: AffinityMode,
) -> Result<Affinity> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let n = points.ncols();
    let support: Vec<Vec<usize>> = match mode {
        AffinityMode::Dense => (0..n).map(|_| (0..n).collect()).collect(),
        AffinityMode::KnnTruncated => {
            let graph = graph.ok_or_else(|| {
                Error::invalid("knn_truncated affinity requires a neighborhood graph")
            })?;
            if graph.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: format!("graph over {n} points"),
                    actual: format!("graph over {} points", graph.n()),
                });
            }
            let mut sets: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
            for (i, nbrs) in graph.neighbors.iter().enumerate() {
                for &j in nbrs {
                    sets[i].push(j);
                    sets[j].push(i);
                }
            }
            sets.par_iter_mut().for_each(|s| {
                s.sort_unstable();
                s.dedup();
            });
            sets
        }
    };
    let rows: Vec<Vec<(usize, f64)>> = support
        .into_par_iter()
        .enumerate()
        .map(|(i, cols)| {
            cols.into_iter()
                .map(|j| (j, gaussian_kernel(sq_dist(points, i, j), bandwidth)))
                .collect()
        })
        .collect();
    Ok(Affinity {
        weights: csr_from_rows(n, rows),
        bandwidth,
        mode,
    })
}

fn check_degrees(degrees: &[f64]) -> Result<()> {
    match degrees.iter().position(|&d| !(d > 0.0)) {
        Some(index) => Err(Error::DegenerateGraph { index }),
        None => Ok(()),
    }
}

fn scale_symmetric(m: &CsrMatrix<f64>, left: &[f64], right: &[f64]) -> CsrMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let (cols, vals) = row.cols_and_values_mut();
        for (c, v) in cols.iter().zip(vals.iter_mut()) {
            *v *= left[i] * right[*c];
        }
    }
    out
}

/// `K = D^{-1} A D^{-1}` with `D = diag(row sums of A)`.
pub fn normalized_affinity(aff: &Affinity) -> Result<Affinity> {
    let degrees = aff.degrees();
    check_degrees(&degrees)?;
    let inv: Vec<f64> = degrees.iter().map(|d| 1.0 / d).collect();
    Ok(Affinity {
        weights: scale_symmetric(&aff.weights, &inv, &inv),
        bandwidth: aff.bandwidth,
        mode: aff.mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    RandomWalk,
}

/// `L = I - Dn^{-1} K` where `K` is the degree-normalized affinity and `Dn`
/// its row sums.
#[derive(Debug, Clone)]
pub struct LaplacianOperator {
    pub kind: LaplacianKind,
    pub matrix: CsrMatrix<f64>,
    /// Row sums `d_i` of the raw affinity.
    pub degrees: Vec<f64>,
    /// Row sums of `K`.
    pub normalized_degrees: Vec<f64>,
    pub normalized_affinity: CsrMatrix<f64>,
}

impl LaplacianOperator {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        csr_to_dense(&self.matrix)
    }

    /// `S = Dn^{-1/2} K Dn^{-1/2}`, symmetric and similar to `I - L`.
    pub fn symmetric_kernel(&self) -> CsrMatrix<f64> {
        let inv_sqrt: Vec<f64> = self
            .normalized_degrees
            .iter()
            .map(|d| 1.0 / d.sqrt())
            .collect();
        scale_symmetric(&self.normalized_affinity, &inv_sqrt, &inv_sqrt)
    }
}

/// Random-walk Laplacian built from a raw affinity `A`.
pub fn random_walk_laplacian(aff: &Affinity) -> Result<LaplacianOperator> {
    let degrees = aff.degrees();
    check_degrees(&degrees)?;
    let k = normalized_affinity(aff)?;
    let normalized_degrees = k.degrees();
    check_degrees(&normalized_degrees)?;
    let n = aff.n();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let row = k.weights.row(i);
            let scale = -1.0 / normalized_degrees[i];
            let mut entries: Vec<(usize, f64)> = row
                .col_indices()
                .iter()
                .zip(row.values())
                .map(|(&c, &v)| (c, scale * v))
                .collect();
            match entries.binary_search_by_key(&i, |e| e.0) {
                Ok(pos) => entries[pos].1 += 1.0,
                Err(pos) => entries.insert(pos, (i, 1.0)),
            }
            entries
        })
        .collect();
    Ok(LaplacianOperator {
        kind: LaplacianKind::RandomWalk,
        matrix: csr_from_rows(n, rows),
        degrees,
        normalized_degrees,
        normalized_affinity: k.weights,
    })
}

/// Frobenius norm of the entrywise difference of two sparse matrices.
pub fn csr_frobenius_distance(a: &CsrMatrix<f64>, b: &CsrMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", a.nrows(), a.ncols()),
            actual: format!("{}x{}", b.nrows(), b.ncols()),
        });
    }
    let mut total = 0.0;
    for (ra, rb) in a.row_iter().zip(b.row_iter()) {
        let (ca, va) = (ra.col_indices(), ra.values());
        let (cb, vb) = (rb.col_indices(), rb.values());
        let (mut x, mut y) = (0, 0);
        while x < ca.len() || y < cb.len() {
            let diff = if y == cb.len() || (x < ca.len() && ca[x] < cb[y]) {
                x += 1;
                va[x - 1]
            } else if x == ca.len() || cb[y] < ca[x] {
                y += 1;
                -vb[y - 1]
            } else {
                x += 1;
                y += 1;
                va[x - 1] - vb[y - 1]
            };
            total += diff * diff;
        }
    }
    Ok(total.sqrt())
}

/// `|a - b|_F` for two Laplacians on the same vertex set.
pub fn laplacian_deviation(a: &LaplacianOperator, b: &LaplacianOperator) -> Result<f64> {
    csr_frobenius_distance(&a.matrix, &b.matrix)
}

pub const SINKHORN_TOL: f64 = 1e-8;
pub const SINKHORN_MAX_ITER: usize = 2000;

/// Symmetric Sinkhorn scaling: finds a positive diagonal `V` such that
/// `V A V` has unit row (and column) sums within `tol`.
pub fn sinkhorn_doubly_stochastic(aff: &Affinity, tol: f64, max_iter: usize) -> Result<Affinity> {
    if !(tol > 0.0) {
        return Err(Error::invalid("sinkhorn tolerance must be positive"));
    }
    check_degrees(&aff.degrees())?;
    let n = aff.n();
    let mut scale = vec![1.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let sums: Vec<f64> = aff
            .weights
            .row_iter()
            .enumerate()
            .map(|(i, row)| {
                let inner: f64 = row
                    .col_indices()
                    .iter()
                    .zip(row.values())
                    .map(|(&c, &v)| v * scale[c])
                    .sum();
                scale[i] * inner
            })
            .collect();
        residual = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        if residual <= tol {
            return Ok(Affinity {
                weights: scale_symmetric(&aff.weights, &scale, &scale),
                bandwidth: aff.bandwidth,
                mode: aff.mode,
            });
        }
        for (v, s) in scale.iter_mut().zip(&sums) {
            *v /= s.sqrt();
        }
    }
    Err(Error::ConvergenceFailure {
        what: "sinkhorn scaling".into(),
        residual,
    })
}
