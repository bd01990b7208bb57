use tangent_core::dataset::DatasetSpec;
use tangent_core::downstream::detect_boundary;
use tangent_core::gradients::center_patches;
use tangent_core::graph::knn_graph;
use tangent_core::io;
use tangent_core::metrics::{discrepancy_of, spearman};
use tangent_core::pipeline::{
    boundary_kernel, evaluate_saved, hyperparam_sweep, noise_ablation, run_estimation,
    MethodSelection, RunConfig,
};
use tangent_core::spectral::SpectralBasis;
use tangent_core::tangent::{lego_frames_from_patches, Method};

fn small_torus(dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::torus();
    cfg.dataset = DatasetSpec::truncated_torus(800);
    cfg.m0 = 40;
    cfg.out_dir = Some(dir.to_path_buf());
    cfg
}

#[test]
fn saved_frames_reproduce_the_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_torus(dir.path());
    let result = run_estimation(&cfg).unwrap();
    for method in [Method::Lego, Method::Lpca] {
        let saved = evaluate_saved(&cfg, dir.path(), method).unwrap();
        assert_eq!(&saved, result.report(method).unwrap());
    }
    let summary: serde_json::Value = io::read_json(&dir.path().join("summary.json")).unwrap();
    assert_eq!(summary["n"], 800);
    for path in &result.artifacts {
        assert!(path.exists(), "{}", path.display());
    }
}

#[test]
fn saved_eigenvectors_reproduce_the_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_torus(dir.path());
    let result = run_estimation(&cfg).unwrap();
    let cloud = io::read_cloud(dir.path()).unwrap();
    assert_eq!(cloud.points, result.cloud.points);
    let basis = SpectralBasis::from_parts(
        io::read_spectrum(&dir.path().join("spectrum.csv")).unwrap(),
        io::read_matrix(&dir.path().join("eigenvectors.csv")).unwrap(),
    )
    .unwrap();
    let graph = knn_graph(&cloud, cfg.k_nn, cfg.includes_self).unwrap();
    let patches = center_patches(&cloud, &graph, cfg.rcond).unwrap();
    let frames =
        lego_frames_from_patches(&patches, &basis, cfg.m, cfg.dim_policy, cfg.k_nn).unwrap();
    let saved = io::read_frames(&dir.path().join("frames_lego.csv")).unwrap();
    assert_eq!(frames.frames, saved);
    assert_eq!(
        frames.frames,
        result.estimates.frames_for(Method::Lego).unwrap().frames
    );

    let truth = result.cloud.true_tangent_frames().unwrap();
    let report = discrepancy_of(&saved, &truth, Method::Lego, &frames.hyperparams).unwrap();
    assert_eq!(&report, result.report(Method::Lego).unwrap());

    let kernel = boundary_kernel(&cloud, 64).unwrap();
    let a = detect_boundary(&cloud, &saved, &kernel, 90.0).unwrap();
    let b = detect_boundary(&result.cloud, &frames.frames, &kernel, 90.0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reruns_into_fresh_directories_agree() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_estimation(&small_torus(d1.path())).unwrap();
    run_estimation(&small_torus(d2.path())).unwrap();
    for name in [
        "points.csv",
        "eigenvectors.csv",
        "frames_lego.csv",
        "frames_lpca.csv",
        "discrepancy_lego.csv",
    ] {
        let a = std::fs::read(d1.path().join(name)).unwrap();
        let b = std::fs::read(d2.path().join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn config_round_trips_through_json() {
    let cfg = RunConfig::swiss_roll().with_seed(42);
    let text = serde_json::to_string(&cfg).unwrap();
    let back: RunConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["not_a_field"] = 1.into();
    assert!(serde_json::from_value::<RunConfig>(value).is_err());
}

#[test]
fn noise_ablation_degrades_local_pca() {
    let cfg = RunConfig::wave();
    let grid = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let ablation = noise_ablation(&cfg, &grid).unwrap();
    assert_eq!(ablation.rows.len(), 2 * grid.len());

    let mut clean = cfg.clone();
    clean.noise_scale = 0.0;
    let baseline = run_estimation(&clean).unwrap();
    for method in [Method::Lego, Method::Lpca] {
        let row = ablation.series(method)[0];
        assert_eq!(row.sigma, 0.0);
        assert_eq!(row.mean, baseline.report(method).unwrap().mean);
    }

    let lpca: Vec<f64> = ablation
        .series(Method::Lpca)
        .iter()
        .map(|r| r.mean)
        .collect();
    assert!(spearman(&grid, &lpca) >= 0.8, "{lpca:?}");
    assert!(ablation.lpca_rank_correlation.unwrap() >= 0.8);
    assert_eq!(ablation.lego_below_lpca_at_max, Some(true));
    assert!(noise_ablation(&cfg, &[0.5, 0.2]).is_err());
}

#[test]
fn sweep_rejects_bad_cells_individually() {
    let mut cfg = RunConfig::wave();
    cfg.method = MethodSelection::Lego;
    let sweep = hyperparam_sweep(&cfg, &[10, 30, 30, 60], &[20, 50]).unwrap();
    assert_eq!(sweep.cells.len(), 8);
    for cell in &sweep.cells {
        if cell.m > cell.m0 {
            assert!(cell.rejected.is_some() && cell.median.is_none());
        } else {
            assert!(cell.rejected.is_none() && cell.median.is_some());
        }
    }
    let dupes: Vec<_> = sweep
        .cells
        .iter()
        .filter(|c| c.m == 30 && c.m0 == 50)
        .collect();
    assert_eq!(dupes.len(), 2);
    assert_eq!(dupes[0], dupes[1]);
}
