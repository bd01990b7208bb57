mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};
use tangent_core::io;
use tangent_core::pipeline::{
    evaluate_saved, hyperparam_sweep, laplacian_stability_study, noise_ablation, prepare_cloud,
    relative_spread, run_boundary, run_embedding, run_estimation, run_spectrum,
    tube_spectrum_validation, RunConfig,
};
use tangent_core::Error;

/// Tangent space estimation on noisy point clouds.
#[derive(Parser, Debug)]
#[command(name = "tangent", version, propagate_version = true)]
struct Cli {
    /// Print the JSON schema of the run configuration and exit.
    #[arg(long)]
    schema: bool,

    #[command(subcommand)]
    command: Option<Verb>,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; missing fields come from the preset.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Default configuration: wave, swiss_roll or torus. Chosen from the
    /// config file's dataset when absent.
    #[arg(long)]
    preset: Option<String>,

    /// Set a configuration field, e.g. `method=lego` or `dataset.n=3000`.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, env = "TANGENT_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Sample the noisy point cloud and write it with its true frames.
    Generate(Common),
    /// Estimate tangent frames with the selected methods and score them.
    Estimate(Common),
    /// Score frames saved by `estimate` against the true frames.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding `frames_<method>.csv`; defaults to the output
        /// directory.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Align local views into a global embedding.
    Embed(Common),
    /// Detect boundary points from the estimated frames.
    Boundary(Common),
    /// Compute and save the low-frequency Laplacian eigenpairs.
    Spectrum(Common),
    /// Repeat the estimation over the configured noise scales.
    AblateNoise(Common),
    /// Sweep LEGO over the configured `m` and `m0` grids.
    AblateHyper(Common),
    /// Check the eigenvector ordering on a thin strip.
    ValidateTube(Common),
    /// Check the convergence rate of the noisy Laplacian.
    ValidateStability(Common),
}

impl Verb {
    fn name(&self) -> &'static str {
        match self {
            Verb::Generate(_) => "generate",
            Verb::Estimate(_) => "estimate",
            Verb::Evaluate { .. } => "evaluate",
            Verb::Embed(_) => "embed",
            Verb::Boundary(_) => "boundary",
            Verb::Spectrum(_) => "spectrum",
            Verb::AblateNoise(_) => "ablate-noise",
            Verb::AblateHyper(_) => "ablate-hyper",
            Verb::ValidateTube(_) => "validate-tube",
            Verb::ValidateStability(_) => "validate-stability",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Verb::Generate(c)
            | Verb::Estimate(c)
            | Verb::Embed(c)
            | Verb::Boundary(c)
            | Verb::Spectrum(c)
            | Verb::AblateNoise(c)
            | Verb::AblateHyper(c)
            | Verb::ValidateTube(c)
            | Verb::ValidateStability(c) => c,
            Verb::Evaluate { common, .. } => common,
        }
    }
}

enum Failure {
    Usage(String),
    Assertion(Value),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if is_usage(&e) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e)
        }
    }
}

fn is_usage(e: &Error) -> bool {
    match e {
        Error::InvalidArgument(_) => true,
        Error::Stage { source, .. } => is_usage(source),
        _ => false,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.schema {
        let schema = schemars::schema_for!(RunConfig);
        let text = serde_json::to_string_pretty(&schema).expect("schema serializes");
        let _ = writeln!(std::io::stdout(), "{text}");
        return ExitCode::SUCCESS;
    }
    let Some(verb) = cli.command else {
        let _ = Cli::command().print_help();
        return ExitCode::from(2);
    };
    match run(&verb) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Assertion(summary)) => {
            println!("{summary}");
            eprintln!("{}: validation failed", verb.name());
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}: {e}", verb.name());
            ExitCode::from(1)
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = config::resolve(
        common.preset.as_deref(),
        common.config.as_deref(),
        &common.overrides,
    )
    .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.into()))?;
    }
    Ok(cfg)
}

fn require_out(cfg: &RunConfig, verb: &str) -> Result<PathBuf, Failure> {
    cfg.out_dir
        .clone()
        .ok_or_else(|| Failure::Usage(format!("{verb} needs an output directory (--out)")))
}

fn run(verb: &Verb) -> Result<Value, Failure> {
    let common = verb.common();
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    let cfg = resolve(common)?;
    let start = Instant::now();
    let mut summary = match verb {
        Verb::Generate(_) => generate(&cfg)?,
        Verb::Estimate(_) => estimate(&cfg)?,
        Verb::Evaluate { from, .. } => evaluate(&cfg, from.as_deref())?,
        Verb::Embed(_) => embed(&cfg)?,
        Verb::Boundary(_) => boundary(&cfg)?,
        Verb::Spectrum(_) => spectrum(&cfg)?,
        Verb::AblateNoise(_) => ablate_noise(&cfg)?,
        Verb::AblateHyper(_) => ablate_hyper(&cfg)?,
        Verb::ValidateTube(_) => validate_tube(&cfg)?,
        Verb::ValidateStability(_) => validate_stability(&cfg)?,
    };
    summary["verb"] = verb.name().into();
    summary["seconds"] = start.elapsed().as_secs_f64().into();
    if summary.get("passed") == Some(&Value::Bool(false)) {
        return Err(Failure::Assertion(summary));
    }
    Ok(summary)
}

fn generate(cfg: &RunConfig) -> Result<Value, Failure> {
    let dir = require_out(cfg, "generate")?;
    let cloud = prepare_cloud(cfg)?;
    let files = io::write_cloud(&dir, &cloud)?;
    Ok(json!({"n": cloud.n(), "p": cloud.dim(), "artifacts": files}))
}

fn estimate(cfg: &RunConfig) -> Result<Value, Failure> {
    let result = run_estimation(cfg)?;
    let reports: serde_json::Map<String, Value> = result
        .reports
        .iter()
        .map(|r| {
            (
                r.method.name().to_string(),
                json!({"mean": r.mean, "median": r.median}),
            )
        })
        .collect();
    Ok(json!({
        "n": result.n,
        "p": result.p,
        "bandwidth": result.bandwidth,
        "discrepancy": reports,
        "artifacts": result.artifacts,
    }))
}

fn evaluate(cfg: &RunConfig, from: Option<&Path>) -> Result<Value, Failure> {
    let dir = match from {
        Some(d) => d.to_path_buf(),
        None => require_out(cfg, "evaluate")?,
    };
    let mut reports = serde_json::Map::new();
    for method in cfg.method.methods() {
        if !dir.join(format!("frames_{}.csv", method.name())).exists() {
            continue;
        }
        let r = evaluate_saved(cfg, &dir, method)?;
        reports.insert(
            method.name().into(),
            json!({"mean": r.mean, "median": r.median}),
        );
    }
    if reports.is_empty() {
        return Err(Failure::Usage(format!(
            "no saved frames in {}",
            dir.display()
        )));
    }
    Ok(json!({"from": dir, "discrepancy": reports}))
}

fn embed(cfg: &RunConfig) -> Result<Value, Failure> {
    let outcome = run_embedding(cfg)?;
    Ok(json!({
        "method": outcome.method,
        "alignment_error": outcome.alignment.error(),
        "warnings": outcome.alignment.warnings.len(),
        "distortion": outcome.distortion,
        "artifacts": outcome.artifacts,
    }))
}

fn boundary(cfg: &RunConfig) -> Result<Value, Failure> {
    let outcome = run_boundary(cfg)?;
    let counts: serde_json::Map<String, Value> = outcome
        .reports
        .iter()
        .map(|(k, r)| (k.clone(), r.count().into()))
        .collect();
    Ok(json!({
        "percentile": cfg.boundary.percentile,
        "boundary_points": counts,
        "jaccard_vs_truth": outcome.jaccard_vs_truth,
        "artifacts": outcome.artifacts,
    }))
}

fn spectrum(cfg: &RunConfig) -> Result<Value, Failure> {
    let (basis, bandwidth, artifacts) = run_spectrum(cfg)?;
    let head: Vec<f64> = basis.eigenvalues.iter().take(10).copied().collect();
    Ok(json!({
        "m0": basis.m0,
        "bandwidth": bandwidth,
        "leading_eigenvalues": head,
        "artifacts": artifacts,
    }))
}

fn ablate_noise(cfg: &RunConfig) -> Result<Value, Failure> {
    let ablation = noise_ablation(cfg, &cfg.sweep.sigma_grid)?;
    Ok(json!({
        "sigma_grid": cfg.sweep.sigma_grid,
        "rows": ablation.rows.len(),
        "lpca_rank_correlation": ablation.lpca_rank_correlation,
        "lego_below_lpca_at_max": ablation.lego_below_lpca_at_max,
    }))
}

fn ablate_hyper(cfg: &RunConfig) -> Result<Value, Failure> {
    let sweep = hyperparam_sweep(cfg, &cfg.sweep.m_grid, &cfg.sweep.m0_grid)?;
    let spreads: serde_json::Map<String, Value> = cfg
        .sweep
        .m0_grid
        .iter()
        .filter_map(|&m0| {
            let medians: Vec<f64> = sweep.medians_at(m0).iter().map(|c| c.1).collect();
            (!medians.is_empty()).then(|| (m0.to_string(), relative_spread(&medians).into()))
        })
        .collect();
    Ok(json!({
        "cells": sweep.cells.len(),
        "rejected": sweep.cells.iter().filter(|c| c.rejected.is_some()).count(),
        "relative_spread_by_m0": spreads,
        "lpca_median": sweep.lpca.median,
    }))
}

fn validate_tube(cfg: &RunConfig) -> Result<Value, Failure> {
    let report = tube_spectrum_validation(&cfg.tube)?;
    let mut artifacts = Vec::new();
    if let Some(dir) = &cfg.out_dir {
        let path = dir.join("tube_report.json");
        io::write_json(&path, &report)?;
        artifacts.push(path);
    }
    Ok(json!({
        "passed": report.passed,
        "checks": report.checks,
        "first_vertical": report.first_vertical,
        "artifacts": artifacts,
    }))
}

fn validate_stability(cfg: &RunConfig) -> Result<Value, Failure> {
    let study = laplacian_stability_study(&cfg.stability)?;
    let mut artifacts = Vec::new();
    if let Some(dir) = &cfg.out_dir {
        let path = dir.join("stability_study.json");
        io::write_json(&path, &study)?;
        let table = dir.join("stability.csv");
        let rows: Vec<Vec<String>> = study
            .sweeps
            .iter()
            .flat_map(|s| &s.rows)
            .map(|r| {
                vec![
                    r.seed.to_string(),
                    r.n.to_string(),
                    r.sigma.to_string(),
                    r.affinity.to_string(),
                    r.kernel.to_string(),
                    r.laplacian.to_string(),
                ]
            })
            .collect();
        io::write_table(
            &table,
            &["seed", "n", "sigma", "affinity", "kernel", "laplacian"],
            &rows,
        )?;
        artifacts.extend([path, table]);
    }
    Ok(json!({
        "passed": study.passed,
        "checks": study.checks,
        "artifacts": artifacts,
    }))
}
