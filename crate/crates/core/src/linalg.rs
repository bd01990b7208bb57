//! Small dense helpers shared across modules.

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{self, ComputeSvdVectors};
use faer::{Mat, MatRef, Par};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Thin SVD `m = u diag(s) v^T` with `s` descending; `u` is `rows x k`, `v`
/// is `cols x k`, `k = min(rows, cols)`.
pub fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    let a = MatRef::from_column_major_slice(m.as_slice(), rows, cols);
    let mut u = Mat::<f64>::zeros(rows, k);
    let mut v = Mat::<f64>::zeros(cols, k);
    let mut s = Diag::<f64>::zeros(k);
    let scratch = svd::svd_scratch::<f64>(
        rows,
        cols,
        ComputeSvdVectors::Thin,
        ComputeSvdVectors::Thin,
        Par::Seq,
        Default::default(),
    );
    let solved = svd::svd(
        a,
        s.as_mut(),
        Some(u.as_mut()),
        Some(v.as_mut()),
        Par::Seq,
        MemStack::new(&mut MemBuffer::new(scratch)),
        Default::default(),
    );
    if solved.is_err() {
        // nalgebra as a fallback, sorted to the same convention
        let svd = m.clone().svd(true, true);
        let (nu, nv) = (
            svd.u.expect("u requested"),
            svd.v_t.expect("v_t requested").transpose(),
        );
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        return (
            DMatrix::from_fn(rows, k, |i, c| nu[(i, order[c])]),
            order.iter().map(|&c| svd.singular_values[c]).collect(),
            DMatrix::from_fn(cols, k, |i, c| nv[(i, order[c])]),
        );
    }
    let s = s.column_vector();
    (
        DMatrix::from_fn(rows, k, |i, c| u[(i, c)]),
        (0..k).map(|c| s[c]).collect(),
        DMatrix::from_fn(cols, k, |i, c| v[(i, c)]),
    )
}

/// Moore-Penrose pseudoinverse with singular values below `rcond * sigma_max`
/// treated as zero. Returns the pseudoinverse and the retained rank.
pub fn pseudo_inverse(m: &DMatrix<f64>, rcond: f64) -> (DMatrix<f64>, usize) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(cols, rows), 0);
    }
    let (u, sigma, v) = thin_svd(m);
    let cutoff = rcond * sigma[0];
    let mut pinv = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (i, &s) in sigma.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            // pinv += v_i * u_i^T / s
            pinv.ger(1.0 / s, &v.column(i), &u.column(i), 1.0);
        }
    }
    (pinv, rank)
}

/// Orthonormal basis (thin Q factor) of the column space of `m`.
pub fn thin_q(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.ncols().min(m.nrows());
    let q = m.clone().qr().q();
    q.columns(0, k).into_owned()
}

/// Largest absolute deviation of `q^T q` from the identity.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let gram = q.transpose() * q;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (stable with respect to the original index on ties).
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Singular values (descending) and matching left singular
/// vectors of `m`; `min(rows, cols)` of each.
pub fn left_singular_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (u, sigma, _) = thin_svd(m);
    (sigma, u)
}

/// Weighted orthogonal Procrustes: finds `o` in O(d) and `t` minimizing
/// `sum_i w_i |o * src_i + t - dst_i|^2`. Columns are points.
pub fn weighted_procrustes(
    src: &DMatrix<f64>,
    dst: &DMatrix<f64>,
    weights: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let d = src.nrows();
    let total: f64 = weights.iter().sum();
    let mut src_mean = DVector::zeros(d);
    let mut dst_mean = DVector::zeros(d);
    for (i, &w) in weights.iter().enumerate() {
        src_mean += src.column(i) * w;
        dst_mean += dst.column(i) * w;
    }
    src_mean /= total;
    dst_mean /= total;
    let mut cross = DMatrix::zeros(d, d);
    for (i, &w) in weights.iter().enumerate() {
        let a = dst.column(i) - &dst_mean;
        let b = src.column(i) - &src_mean;
        cross.ger(w, &a, &b, 1.0);
    }
    let (u, _, v) = thin_svd(&cross);
    let o = u * v.transpose();
    let t = &dst_mean - &o * &src_mean;
    (o, t)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

/// Linear-interpolated percentile (`q` in [0, 100]) of `values`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = (q / 100.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}
