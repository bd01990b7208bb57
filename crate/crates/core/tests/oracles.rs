mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tangent_core::dataset::{CloudMeta, PointCloud};
use tangent_core::gradients::{CenteredPatch, DEFAULT_RCOND};
use tangent_core::graph::{
    gaussian_affinity, knn_graph_points, random_walk_laplacian, sinkhorn_doubly_stochastic,
    Affinity, AffinityMode,
};
use tangent_core::linalg::pseudo_inverse;
use tangent_core::metrics::principal_angles;
use tangent_core::spectral::{smallest_eigenpairs_with, EigenSolver};

fn points_strategy(p: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = DMatrix<f64>> {
    n.prop_flat_map(move |n| {
        proptest::collection::vec(-10.0..10.0f64, p * n)
            .prop_map(move |v| DMatrix::from_vec(p, n, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn knn_matches_brute_force(points in points_strategy(3, 12..60), k in 1usize..10, with_self in any::<bool>()) {
        let k = k.min(points.ncols() - 1).max(1 + usize::from(with_self));
        let graph = knn_graph_points(&points, k, with_self).unwrap();
        prop_assert_eq!(graph.neighbors, common::brute_force_knn(&points, k, with_self));
    }

    #[test]
    fn pinv_matches_normal_equations(rows in 3usize..12, seed in 0u64..1000) {
        let q = common::orthogonal(rows.max(3), seed);
        let x = DMatrix::from_fn(rows, 3, |i, a| q[(i % q.nrows(), a)] * (1.0 + a as f64) + 0.1 * (i as f64 - a as f64));
        let (pinv, rank) = pseudo_inverse(&x, DEFAULT_RCOND);
        prop_assume!(rank == 3);
        let oracle = common::normal_equation_pinv(&x);
        prop_assert!((&pinv - &oracle).norm() <= 1e-8 * oracle.norm());
    }

    #[test]
    fn sinkhorn_matches_alternating_normalization(points in points_strategy(2, 5..25)) {
        let aff = gaussian_affinity_dense(&points);
        let ds = sinkhorn_doubly_stochastic(&aff, 1e-14, 100_000).unwrap();
        let oracle = common::alternating_normalization(&aff.to_dense(), 20_000);
        prop_assert!((ds.to_dense() - oracle).amax() <= 1e-10);
    }
}

fn gaussian_affinity_dense(points: &DMatrix<f64>) -> Affinity {
    let cloud = PointCloud::new(points.clone(), 0, CloudMeta::default()).unwrap();
    gaussian_affinity(&cloud, None, 8.0, AffinityMode::Dense).unwrap()
}

#[test]
fn pinv_of_orthogonal_rows() {
    // rows orthogonal (but not normalized) in R^4
    let q = common::orthogonal(4, 7);
    let x = DMatrix::from_fn(2, 4, |i, a| q[(a, i)] * (i as f64 + 2.0));
    let patch = CenteredPatch::new(0, vec![1, 2], x.clone(), DEFAULT_RCOND).unwrap();
    let oracle = common::normal_equation_pinv(&x);
    assert!((&patch.pinv - &oracle).norm() <= 1e-8 * oracle.norm());
    assert!((&x * &patch.pinv * &x - &x).amax() <= 1e-8 * x.norm());
}

#[test]
fn rank_deficient_patch_annihilates_normal_direction() {
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -2.0, -2.0, 0.5, 0.5]);
    let patch = CenteredPatch::new(0, vec![1, 2, 3], x, DEFAULT_RCOND).unwrap();
    assert_eq!(patch.rank, 1);
    let normal = DVector::from_vec(vec![1.0, -1.0]);
    assert!((normal.transpose() * &patch.pinv).amax() < 1e-12);
}

#[test]
fn principal_angles_match_grid_search() {
    for seed in 0..6u64 {
        let q = common::orthogonal(4, seed);
        let r = common::orthogonal(4, seed + 100);
        let a = q.columns(0, 2).into_owned();
        // a second plane tilted away from the first by a known amount
        let b = (&a * 0.7 + r.columns(0, 2) * 0.6).qr().q();
        let ours = principal_angles(&a, &b).unwrap();
        let oracle = common::grid_principal_angles(&a, &b);
        for (x, y) in ours.iter().zip(oracle.iter()) {
            assert!((x - y).abs() <= 1e-3, "seed {seed}: {ours:?} vs {oracle:?}");
        }
    }
}

#[test]
fn three_node_path_by_hand() {
    let adj = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    let lap = random_walk_laplacian(&Affinity::from_dense(&adj, 1.0).unwrap()).unwrap();
    // K = D^-1 A D^-1 with D = diag(1, 2, 1); L = I - Dn^-1 K
    let expected_l =
        DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -0.5, 1.0, -0.5, 0.0, -1.0, 1.0]);
    assert!((lap.to_dense() - &expected_l).amax() <= 1e-12);
    let s3 = 1.0 / 3f64.sqrt();
    let s2 = 1.0 / 2f64.sqrt();
    let expected_vecs = [[s3, s3, s3], [s2, 0.0, -s2], [s3, -s3, s3]];
    for solver in [EigenSolver::Dense, EigenSolver::Auto] {
        let basis = smallest_eigenpairs_with(&lap, 3, solver).unwrap();
        for (k, &lam) in [0.0, 1.0, 2.0].iter().enumerate() {
            assert!((basis.eigenvalues[k] - lam).abs() <= 1e-10);
            for i in 0..3 {
                assert!((basis.eigenvectors[(i, k)] - expected_vecs[k][i]).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn lanczos_agrees_with_dense_on_a_ring() {
    let n = 300;
    let pts = DMatrix::from_fn(2, n, |a, j| {
        let t = 2.0 * std::f64::consts::PI * (j as f64 + 0.3 * (j as f64).sin()) / n as f64;
        if a == 0 {
            t.cos()
        } else {
            (1.0 + 0.2 * t.cos()) * t.sin()
        }
    });
    let cloud = PointCloud::new(pts, 0, CloudMeta::default()).unwrap();
    let graph = tangent_core::graph::knn_graph(&cloud, 10, true).unwrap();
    let aff = gaussian_affinity(&cloud, Some(&graph), 0.05, AffinityMode::KnnTruncated).unwrap();
    let lap = random_walk_laplacian(&aff).unwrap();
    let dense = smallest_eigenpairs_with(&lap, 11, EigenSolver::Dense).unwrap();
    let lanczos = smallest_eigenpairs_with(&lap, 11, EigenSolver::Lanczos).unwrap();
    for (a, b) in dense.eigenvalues.iter().zip(&lanczos.eigenvalues) {
        assert!((a - b).abs() <= 1e-9);
    }
    // same span: the projector residual of one basis onto the other
    let u = &dense.orthonormal;
    let v = &lanczos.orthonormal;
    assert!((v - u * (u.transpose() * v)).amax() <= 1e-6);
}
