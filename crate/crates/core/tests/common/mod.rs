//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Brute-force k nearest neighbors, ordered by (distance, index).
pub fn brute_force_knn(points: &DMatrix<f64>, k: usize, includes_self: bool) -> Vec<Vec<usize>> {
    let n = points.ncols();
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((points.column(i) - points.column(j)).norm_squared(), j))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut row = Vec::new();
            if includes_self {
                row.push(i);
            }
            row.extend(
                all.iter()
                    .take(k - usize::from(includes_self))
                    .map(|&(_, j)| j),
            );
            row
        })
        .collect()
}

/// Unit vector in the span of `q` (`p x 2`) at angle `a`.
fn on_plane(q: &DMatrix<f64>, a: f64) -> DVector<f64> {
    q.column(0) * a.cos() + q.column(1) * a.sin()
}

/// `max_b |<u, q(b)>|` by a grid over `[0, pi)` refined by ternary search.
fn best_alignment(u: &DVector<f64>, q: &DMatrix<f64>) -> f64 {
    let f = |b: f64| u.dot(&on_plane(q, b)).abs();
    let steps = 720;
    let h = std::f64::consts::PI / steps as f64;
    let best = (0..steps)
        .map(|s| s as f64 * h)
        .max_by(|x, y| f(*x).total_cmp(&f(*y)))
        .unwrap();
    let (mut lo, mut hi) = (best - h, best + h);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    f(0.5 * (lo + hi))
}

/// Principal angles (ascending) between two 2-D subspaces of `R^p` by the
/// min-max characterization, evaluated with grid search.
pub fn grid_principal_angles(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> [f64; 2] {
    let steps = 2000;
    let h = std::f64::consts::PI / steps as f64;
    let vals: Vec<f64> = (0..steps)
        .map(|s| best_alignment(&on_plane(q1, s as f64 * h), q2))
        .collect();
    let cmax = vals.iter().copied().fold(0.0, f64::max).min(1.0);
    // refine the minimum over the outer angle
    let arg = (0..steps)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap();
    let g = |a: f64| best_alignment(&on_plane(q1, a), q2);
    let (mut lo, mut hi) = (arg as f64 * h - h, arg as f64 * h + h);
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g(m1) > g(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let cmin = g(0.5 * (lo + hi)).min(1.0);
    [cmax.acos(), cmin.acos()]
}

/// Pseudoinverse from the normal equations of a full-rank matrix.
pub fn normal_equation_pinv(x: &DMatrix<f64>) -> DMatrix<f64> {
    if x.nrows() >= x.ncols() {
        (x.transpose() * x).try_inverse().expect("full column rank") * x.transpose()
    } else {
        x.transpose() * (x * x.transpose()).try_inverse().expect("full row rank")
    }
}

/// Doubly stochastic scaling by alternating row and column normalization.
pub fn alternating_normalization(a: &DMatrix<f64>, iters: usize) -> DMatrix<f64> {
    let mut m = a.clone();
    for _ in 0..iters {
        for mut row in m.row_iter_mut() {
            let s: f64 = row.sum();
            row /= s;
        }
        for mut col in m.column_iter_mut() {
            let s: f64 = col.sum();
            col /= s;
        }
    }
    m
}

/// Random orthogonal matrix from the QR factorization of a seeded matrix.
pub fn orthogonal(p: usize, seed: u64) -> DMatrix<f64> {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let m = DMatrix::from_fn(p, p, |_, _| next());
    m.qr().q()
}

/// `sqrt(sum (|z_a - z_b| - |u_a - u_b|)^2 / sum |u_a - u_b|^2)` over all
/// pairs of rows.
pub fn pairwise_stress(z: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let n = z.nrows();
    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..n {
        for b in a + 1..n {
            let dz = (z.row(a) - z.row(b)).norm();
            let du = (u.row(a) - u.row(b)).norm();
            num += (dz - du) * (dz - du);
            den += du * du;
        }
    }
    (num / den).sqrt()
}

/// `|P1 - P2|_max` for the projectors onto two frames.
pub fn projector_gap(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> f64 {
    (q1 * q1.transpose() - q2 * q2.transpose()).amax()
}
