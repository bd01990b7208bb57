//! Consumers of tangent frames: local views with rigid alignment into a
//! global embedding, and boundary detection.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::graph::{Affinity, NeighborhoodGraph};
use crate::linalg::{percentile, weighted_procrustes};
use crate::tangent::TangentFrameSet;

pub use crate::tangent::functional_variance_profile;

/// Largest tolerated row-sum deviation of a doubly stochastic kernel.
pub const DS_ROW_SUM_TOL: f64 = 1e-4;

pub const DEFAULT_BOUNDARY_PERCENTILE: f64 = 90.0;

/// Tangent coordinates of every neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalViews {
    pub d: usize,
    /// Members of view `j` (the neighborhood of point `j`).
    pub members: Vec<Vec<usize>>,
    /// `d x |members[j]|`; column `s` is `Q_j^T (x_{j_s} - mu_j)`.
    pub coords: Vec<DMatrix<f64>>,
    /// For each point `k`, the views that contain it.
    pub overlaps: Vec<Vec<usize>>,
}

impl LocalViews {
    pub fn n_views(&self) -> usize {
        self.members.len()
    }

    pub fn n_points(&self) -> usize {
        self.overlaps.len()
    }
}

pub fn build_local_views(
    cloud: &PointCloud,
    graph: &NeighborhoodGraph,
    frames: &TangentFrameSet,
) -> Result<LocalViews> {
    let d = frames
        .uniform_dim()
        .ok_or_else(|| Error::invalid("local views need frames of a single dimension"))?;
    if frames.n() != cloud.n() || graph.n() != cloud.n() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} frames and graph nodes", cloud.n()),
            actual: format!("{} frames, {} nodes", frames.n(), graph.n()),
        });
    }
    let p = cloud.dim();
    let coords = (0..cloud.n())
        .into_par_iter()
        .map(|j| {
            let nbrs = &graph.neighbors[j];
            let mut mu = DVector::zeros(p);
            for &s in nbrs {
                mu += cloud.points.column(s);
            }
            mu /= nbrs.len() as f64;
            let centered =
                DMatrix::from_fn(p, nbrs.len(), |a, s| cloud.points[(a, nbrs[s])] - mu[a]);
            frames.frames[j].transpose() * centered
        })
        .collect();
    let mut overlaps = vec![Vec::new(); cloud.n()];
    for (j, nbrs) in graph.neighbors.iter().enumerate() {
        for &k in nbrs {
            overlaps[k].push(j);
        }
    }
    Ok(LocalViews {
        d,
        members: graph.neighbors.clone(),
        coords,
        overlaps,
    })
}

/// Per-view rigid motions; point `z` of view `j` maps to `O_j^T z + t_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidAlignment {
    pub orthogonal: Vec<DMatrix<f64>>,
    pub translations: Vec<DVector<f64>>,
    /// Alignment error after initialization, then after each refinement round.
    pub error_history: Vec<f64>,
    pub warnings: Vec<String>,
}

impl RigidAlignment {
    pub fn error(&self) -> f64 {
        *self.error_history.last().unwrap_or(&0.0)
    }

    fn apply(&self, j: usize, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.orthogonal[j].transpose() * z;
        for mut col in out.column_iter_mut() {
            col += &self.translations[j];
        }
        out
    }
}

/// Shared-point counts between views.
fn overlap_counts(views: &LocalViews) -> Vec<BTreeMap<usize, usize>> {
    let mut counts = vec![BTreeMap::new(); views.n_views()];
    for owners in &views.overlaps {
        for &a in owners {
            for &b in owners {
                if a != b {
                    *counts[a].entry(b).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}

/// Local coordinates of `point` within view `j`.
fn member_position(views: &LocalViews, j: usize, point: usize) -> usize {
    views.members[j]
        .iter()
        .position(|&k| k == point)
        .expect("overlap lists are consistent with view members")
}

/// Transformed coordinates of every point averaged over the views containing it.
fn average_embedding(views: &LocalViews, transformed: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut sum = DMatrix::zeros(views.n_points(), views.d);
    for (j, members) in views.members.iter().enumerate() {
        for (s, &k) in members.iter().enumerate() {
            for a in 0..views.d {
                sum[(k, a)] += transformed[j][(a, s)];
            }
        }
    }
    for (k, owners) in views.overlaps.iter().enumerate() {
        let c = owners.len() as f64;
        for a in 0..views.d {
            sum[(k, a)] /= c;
        }
    }
    sum
}

/// `sum_k sum_{i<j in V_k} |a_ik - a_jk|^2`, evaluated as
/// `sum_k |V_k| sum_{i in V_k} |a_ik - z_k|^2`.
fn alignment_error(
    views: &LocalViews,
    transformed: &[DMatrix<f64>],
    embedding: &DMatrix<f64>,
) -> f64 {
    let mut err = 0.0;
    for (j, members) in views.members.iter().enumerate() {
        for (s, &k) in members.iter().enumerate() {
            let w = views.overlaps[k].len() as f64;
            let mut sq = 0.0;
            for a in 0..views.d {
                let diff = transformed[j][(a, s)] - embedding[(k, a)];
                sq += diff * diff;
            }
            err += w * sq;
        }
    }
    err
}

fn components(counts: &[BTreeMap<usize, usize>]) -> Vec<Vec<usize>> {
    let n = counts.len();
    let mut label = vec![usize::MAX; n];
    let mut out = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut comp = vec![start];
        label[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in counts[v].keys() {
                if label[w] == usize::MAX {
                    label[w] = id;
                    comp.push(w);
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Aligns all views by Procrustes initialization along a maximum-overlap
/// spanning tree, followed by `iters` rounds of refinement against the
/// averaged embedding. Returns the transforms and the `n x d` embedding.
pub fn align_views(views: &LocalViews, iters: usize) -> Result<(RigidAlignment, DMatrix<f64>)> {
    let nv = views.n_views();
    let d = views.d;
    if nv == 0 {
        return Err(Error::invalid("no views to align"));
    }
    if let Some(k) = views.overlaps.iter().position(|o| o.is_empty()) {
        return Err(Error::invalid(format!("point {k} belongs to no view")));
    }
    let counts = overlap_counts(views);
    let comps = components(&counts);
    if comps.len() > 1 {
        return Err(Error::AlignmentImpossible { components: comps });
    }

    let mut warnings = Vec::new();
    let mut orthogonal = vec![DMatrix::identity(d, d); nv];
    let mut translations = vec![DVector::zeros(d); nv];
    let mut transformed: Vec<DMatrix<f64>> = views.coords.clone();
    let mut placed = vec![false; nv];

    // Prim's algorithm on overlap counts: every view is placed from the
    // placed neighbor it shares the most points with.
    let root = (0..nv)
        .max_by_key(|&j| (counts[j].len(), Reverse(j)))
        .unwrap_or(0);
    placed[root] = true;
    let mut heap = BinaryHeap::new();
    let push_edges = |heap: &mut BinaryHeap<(usize, Reverse<usize>, Reverse<usize>)>, v: usize| {
        for (&w, &c) in &counts[v] {
            heap.push((c, Reverse(v), Reverse(w)));
        }
    };
    push_edges(&mut heap, root);
    while let Some((shared, Reverse(parent), Reverse(child))) = heap.pop() {
        if placed[child] {
            continue;
        }
        if shared < d + 1 {
            warnings.push(format!(
                "views {parent} and {child} share only {shared} points; rotation under-determined"
            ));
        }
        place_child(
            views,
            parent,
            child,
            &mut orthogonal,
            &mut translations,
            &mut transformed,
        );
        placed[child] = true;
        push_edges(&mut heap, child);
    }

    let mut alignment = RigidAlignment {
        orthogonal,
        translations,
        error_history: Vec::new(),
        warnings,
    };
    let mut embedding = average_embedding(views, &transformed);
    alignment
        .error_history
        .push(alignment_error(views, &transformed, &embedding));

    for _ in 0..iters {
        let fits: Vec<(DMatrix<f64>, DVector<f64>)> = (0..nv)
            .into_par_iter()
            .map(|j| {
                let members = &views.members[j];
                let dst = DMatrix::from_fn(d, members.len(), |a, s| embedding[(members[s], a)]);
                let weights: Vec<f64> = members
                    .iter()
                    .map(|&k| views.overlaps[k].len() as f64)
                    .collect();
                let (r, t) = weighted_procrustes(&views.coords[j], &dst, &weights);
                (r.transpose(), t)
            })
            .collect();
        for (j, (o, t)) in fits.into_iter().enumerate() {
            alignment.orthogonal[j] = o;
            alignment.translations[j] = t;
        }
        transformed = (0..nv)
            .map(|j| alignment.apply(j, &views.coords[j]))
            .collect();
        embedding = average_embedding(views, &transformed);
        alignment
            .error_history
            .push(alignment_error(views, &transformed, &embedding));
    }
    Ok((alignment, embedding))
}

fn place_child(
    views: &LocalViews,
    parent: usize,
    child: usize,
    orthogonal: &mut [DMatrix<f64>],
    translations: &mut [DVector<f64>],
    transformed: &mut [DMatrix<f64>],
) {
    let shared: Vec<usize> = views.members[child]
        .iter()
        .copied()
        .filter(|k| views.members[parent].contains(k))
        .collect();
    let d = views.d;
    let src = DMatrix::from_fn(d, shared.len(), |a, s| {
        views.coords[child][(a, member_position(views, child, shared[s]))]
    });
    let dst = DMatrix::from_fn(d, shared.len(), |a, s| {
        transformed[parent][(a, member_position(views, parent, shared[s]))]
    });
    let (r, t) = weighted_procrustes(&src, &dst, &vec![1.0; shared.len()]);
    let mut moved = &r * &views.coords[child];
    for mut col in moved.column_iter_mut() {
        col += &t;
    }
    orthogonal[child] = r.transpose();
    translations[child] = t;
    transformed[child] = moved;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub norms: Vec<f64>,
    pub percentile: f64,
    pub threshold: f64,
    pub labels: Vec<bool>,
}

impl BoundaryReport {
    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }
}

/// Boundary statistic `v_j = 1/(n-1) sum_i K_ij Q_j^T (x_i - x_j)` with a
/// doubly stochastic kernel `K`; points whose `|v_j|` exceeds the given
/// percentile are labelled as boundary.
pub fn detect_boundary(
    cloud: &PointCloud,
    frames: &[DMatrix<f64>],
    ds_kernel: &Affinity,
    pct: f64,
) -> Result<BoundaryReport> {
    if !(pct > 0.0 && pct < 100.0) {
        return Err(Error::invalid(format!(
            "percentile must lie in (0, 100), got {pct}"
        )));
    }
    let n = cloud.n();
    if frames.len() != n || ds_kernel.n() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} frames and kernel rows"),
            actual: format!("{} frames, {} rows", frames.len(), ds_kernel.n()),
        });
    }
    let worst = ds_kernel
        .degrees()
        .iter()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);
    if worst > DS_ROW_SUM_TOL {
        return Err(Error::invalid(format!(
            "kernel is not doubly stochastic (row-sum deviation {worst:e})"
        )));
    }
    let scale = 1.0 / (n as f64 - 1.0);
    let norms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            // the kernel is symmetric, so row j holds the weights K_ij
            let row = ds_kernel.weights.row(j);
            let mut acc = DVector::zeros(cloud.dim());
            for (&i, &w) in row.col_indices().iter().zip(row.values()) {
                acc += (cloud.points.column(i) - cloud.points.column(j)) * w;
            }
            (frames[j].transpose() * acc).norm() * scale
        })
        .collect();
    let threshold = percentile(&norms, pct);
    let labels = norms.iter().map(|&v| v > threshold).collect();
    Ok(BoundaryReport {
        norms,
        percentile: pct,
        threshold,
        labels,
    })
}
