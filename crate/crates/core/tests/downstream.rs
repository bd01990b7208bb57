mod common;

use nalgebra::{DMatrix, DVector};
use tangent_core::dataset::{gen_rectangle_strip, DatasetSpec};
use tangent_core::downstream::{
    align_views, build_local_views, detect_boundary, LocalViews, RigidAlignment,
};
use tangent_core::graph::knn_graph;
use tangent_core::pipeline::{boundary_kernel, run_embedding, MethodSelection, RunConfig};
use tangent_core::tangent::{lpca_frames, DimPolicy};
use tangent_core::Error;

fn to_global(alignment: &RigidAlignment, j: usize, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = alignment.orthogonal[j].transpose() * z;
    for mut col in out.column_iter_mut() {
        col += &alignment.translations[j];
    }
    out
}

fn views(members: Vec<Vec<usize>>, coords: Vec<DMatrix<f64>>, n_points: usize) -> LocalViews {
    let mut overlaps = vec![Vec::new(); n_points];
    for (j, m) in members.iter().enumerate() {
        for &k in m {
            overlaps[k].push(j);
        }
    }
    LocalViews {
        d: coords[0].nrows(),
        members,
        coords,
        overlaps,
    }
}

#[test]
fn two_views_recover_a_known_motion() {
    let ground = DMatrix::from_column_slice(2, 3, &[0.0, 0.0, 1.0, 0.2, 0.3, 0.9]);
    let (c, s) = (0.6f64.cos(), 0.6f64.sin());
    let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let shift = DVector::from_vec(vec![2.0, -1.5]);
    let mut moved = &rot * &ground;
    for mut col in moved.column_iter_mut() {
        col += &shift;
    }
    let v = views(
        vec![vec![0, 1, 2], vec![0, 1, 2]],
        vec![ground.clone(), moved.clone()],
        3,
    );
    let (alignment, z) = align_views(&v, 5).unwrap();
    assert!(alignment.warnings.is_empty());
    assert!((to_global(&alignment, 0, &ground) - to_global(&alignment, 1, &moved)).amax() <= 1e-8);
    assert!(alignment.error() <= 1e-16);
    let u = ground.transpose();
    for a in 0..3 {
        for b in 0..3 {
            let dz = (z.row(a) - z.row(b)).norm();
            let du = (u.row(a) - u.row(b)).norm();
            assert!((dz - du).abs() <= 1e-8);
        }
    }
}

#[test]
fn single_view_is_left_in_place() {
    let coords = DMatrix::from_column_slice(2, 4, &[0.0, 1.0, 2.0, 0.5, -1.0, 0.0, 0.3, 0.3]);
    let v = views(vec![vec![0, 1, 2, 3]], vec![coords.clone()], 4);
    let (alignment, z) = align_views(&v, 3).unwrap();
    assert!((&alignment.orthogonal[0] - DMatrix::identity(2, 2)).amax() <= 1e-12);
    assert!(alignment.translations[0].amax() <= 1e-12);
    assert!((z - coords.transpose()).amax() <= 1e-15);
}

#[test]
fn small_overlaps_are_flagged() {
    let a = DMatrix::from_column_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let v = views(
        vec![vec![0, 1, 2, 3], vec![2, 3, 4, 5]],
        vec![a.clone(), a],
        6,
    );
    let (alignment, _) = align_views(&v, 2).unwrap();
    assert_eq!(alignment.warnings.len(), 1);
}

#[test]
fn disconnected_overlaps_cannot_be_aligned() {
    let a = DMatrix::from_column_slice(1, 2, &[0.0, 1.0]);
    let v = views(
        vec![vec![0, 1], vec![1, 0], vec![2, 3], vec![3, 2]],
        vec![a.clone(), a.clone(), a.clone(), a],
        4,
    );
    match align_views(&v, 2) {
        Err(Error::AlignmentImpossible { components }) => {
            assert_eq!(components, vec![vec![0, 1], vec![2, 3]]);
        }
        other => panic!("expected alignment failure, got {other:?}"),
    }
}

#[test]
fn noiseless_swiss_roll_unrolls_isometrically() {
    let spec = DatasetSpec::swiss_roll(3000);
    let cloud = spec.generate(0).unwrap();
    let graph = knn_graph(&cloud, 9, true).unwrap();
    let mut frames = lpca_frames(&cloud, &graph, DimPolicy::Fixed(2)).unwrap();
    frames.frames = cloud.true_tangent_frames().unwrap();
    let (alignment, z) =
        align_views(&build_local_views(&cloud, &graph, &frames).unwrap(), 10).unwrap();
    assert!(alignment
        .error_history
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    let clean = cloud.clean.as_ref().unwrap();
    let chart = DMatrix::from_fn(cloud.n(), 2, |j, a| clean[j].params[a]);
    let rows: Vec<usize> = (0..cloud.n()).step_by(6).collect();
    let stress = common::pairwise_stress(&z.select_rows(&rows), &chart.select_rows(&rows));
    assert!(stress <= 0.05, "stress {stress}");
}

#[test]
fn refinement_never_increases_the_error() {
    for seed in 0..3 {
        let mut cfg = RunConfig::swiss_roll().with_seed(seed);
        cfg.dataset = DatasetSpec::swiss_roll(2000);
        cfg.method = MethodSelection::Lego;
        let outcome = run_embedding(&cfg).unwrap();
        let h = &outcome.alignment.error_history;
        assert_eq!(h.len(), cfg.align_iters + 1);
        assert!(h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{h:?}");
    }
}

#[test]
fn strip_views_are_signed_offsets() {
    let cloud = gen_rectangle_strip(40, 5, 1.0, 0.05).unwrap();
    let graph = knn_graph(&cloud, 8, true).unwrap();
    let mut frames = lpca_frames(&cloud, &graph, DimPolicy::Fixed(1)).unwrap();
    frames.frames = cloud.true_tangent_frames().unwrap();
    let v = build_local_views(&cloud, &graph, &frames).unwrap();
    for (j, nbrs) in graph.neighbors.iter().enumerate() {
        let mu = nbrs.iter().map(|&s| cloud.points[(0, s)]).sum::<f64>() / nbrs.len() as f64;
        for (s, &k) in nbrs.iter().enumerate() {
            assert!((v.coords[j][(0, s)].abs() - (cloud.points[(0, k)] - mu).abs()).abs() <= 1e-12);
        }
    }
}

#[test]
fn strip_boundary_is_found_at_the_ends() {
    let (gx, gy) = (400, 9);
    let cloud = gen_rectangle_strip(gx, gy, 1.0, 0.05).unwrap();
    let truth = cloud.true_tangent_frames().unwrap();
    let edge: Vec<bool> = (0..cloud.n())
        .map(|j| j % gx == 0 || j % gx == gx - 1)
        .collect();
    let edge_count = edge.iter().filter(|&&b| b).count();
    let pct = 100.0 * (1.0 - edge_count as f64 / cloud.n() as f64);
    // kernel supports narrower than the strip
    for k in [32, 64] {
        let kernel = boundary_kernel(&cloud, k).unwrap();
        let report = detect_boundary(&cloud, &truth, &kernel, pct).unwrap();
        let hits = edge
            .iter()
            .zip(&report.labels)
            .filter(|(e, l)| **e && **l)
            .count();
        assert!(
            hits as f64 >= 0.8 * edge_count as f64,
            "k={k}: recall {hits}/{edge_count}"
        );

        let boundary_max = (0..cloud.n())
            .filter(|&j| edge[j])
            .map(|j| report.norms[j])
            .fold(0.0, f64::max);
        let centre = (gy / 2) * gx + gx / 2;
        assert!(report.norms[centre] <= 0.1 * boundary_max);
    }
}

#[test]
fn boundary_rejects_kernels_that_are_not_doubly_stochastic() {
    let cloud = gen_rectangle_strip(20, 3, 1.0, 0.05).unwrap();
    let graph = knn_graph(&cloud, 6, true).unwrap();
    let aff = tangent_core::graph::gaussian_affinity(
        &cloud,
        Some(&graph),
        0.1,
        tangent_core::graph::AffinityMode::KnnTruncated,
    )
    .unwrap();
    let truth = cloud.true_tangent_frames().unwrap();
    assert!(matches!(
        detect_boundary(&cloud, &truth, &aff, 90.0),
        Err(Error::InvalidArgument(_))
    ));
    let kernel = boundary_kernel(&cloud, 30).unwrap();
    assert!(detect_boundary(&cloud, &truth, &kernel, 100.0).is_err());
}
