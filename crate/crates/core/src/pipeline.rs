//! End-to-end runs: configuration, estimation with both methods, sweeps and
//! the two theory-validation experiments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_noise, gen_wave_on_circle, DatasetSpec, NoiseSpec, PointCloud};
use crate::downstream::{
    align_views, build_local_views, detect_boundary, BoundaryReport, RigidAlignment,
};
use crate::error::{Error, Result, StageExt};
use crate::gradients::{center_patches, local_gradients, CenteredPatch, DEFAULT_RCOND};
use crate::graph::{
    bandwidth_heuristic, csr_frobenius_distance, gaussian_affinity, knn_graph, normalized_affinity,
    random_walk_laplacian, sinkhorn_doubly_stochastic, Affinity, AffinityMode, NeighborhoodGraph,
    SINKHORN_MAX_ITER, SINKHORN_TOL,
};
use crate::io;
use crate::linalg::{median, weighted_procrustes};
use crate::metrics::{
    discrepancy, discrepancy_of, jaccard, log_log_slope, rectangle_mode_oracle, spearman,
    vertical_energy_split, DiscrepancyReport, TubeOrdering,
};
use crate::spectral::{smallest_eigenpairs_with, EigenSolver, SpectralBasis};
use crate::tangent::{
    functional_variance_profile, lego_frames_from_patches, lpca_frames, DimPolicy,
    FrameHyperparams, Method, TangentFrameSet,
};

/// Correlation required between eigenvector #2 of the strip and `cos(pi x / l)`.
pub const TUBE_MODE_CORRELATION_MIN: f64 = 0.95;
/// Largest vertical fraction allowed among the leading strip eigenvectors.
pub const TUBE_LEADING_VERTICAL_MAX: f64 = 0.1;
/// Vertical fraction marking an eigenvector as a cross-section mode.
pub const TUBE_VERTICAL_MIN: f64 = 0.5;
/// Two analytic modes correlating above this with one eigenvector make the
/// match ambiguous.
pub const TUBE_MATCH_AMBIGUITY: f64 = 0.9;
/// Required log-log slope of the Laplacian deviation against `n`.
pub const STABILITY_LAPLACIAN_SLOPE_MAX: f64 = -0.3;
/// Allowed growth exponent of the affinity deviation.
pub const STABILITY_AFFINITY_SLOPE_MAX: f64 = 0.7;
/// Dense affinities are limited to this many points in the stability sweep.
pub const STABILITY_DENSE_MAX_N: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum MethodSelection {
    Lego,
    Lpca,
    #[default]
    Both,
}

impl MethodSelection {
    pub fn methods(&self) -> Vec<Method> {
        match self {
            MethodSelection::Lego => vec![Method::Lego],
            MethodSelection::Lpca => vec![Method::Lpca],
            MethodSelection::Both => vec![Method::Lego, Method::Lpca],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    /// Neighbors per point in the support of the doubly stochastic kernel.
    #[serde(default = "default_boundary_k_nn")]
    pub k_nn: usize,
    #[serde(default = "default_boundary_percentile")]
    pub percentile: f64,
}

fn default_boundary_k_nn() -> usize {
    256
}
fn default_boundary_percentile() -> f64 {
    crate::downstream::DEFAULT_BOUNDARY_PERCENTILE
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            k_nn: default_boundary_k_nn(),
            percentile: default_boundary_percentile(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_sigma_grid")]
    pub sigma_grid: Vec<f64>,
    #[serde(default = "default_m_grid")]
    pub m_grid: Vec<usize>,
    #[serde(default = "default_m0_grid")]
    pub m0_grid: Vec<usize>,
}

fn default_sigma_grid() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}
fn default_m_grid() -> Vec<usize> {
    vec![10, 20, 30, 35, 40, 45, 50, 55, 60]
}
fn default_m0_grid() -> Vec<usize> {
    vec![100]
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma_grid: default_sigma_grid(),
            m_grid: default_m_grid(),
            m0_grid: default_m0_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TubeConfig {
    pub grid_x: usize,
    pub grid_y: usize,
    pub length: f64,
    pub halfwidth: f64,
    pub k_nn: usize,
    /// Kernel bandwidth; the kNN heuristic when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Number of eigenvectors analysed.
    pub m0: usize,
    /// Eigenvectors that must stay horizontal.
    pub leading: usize,
}

impl Default for TubeConfig {
    fn default() -> Self {
        Self {
            grid_x: 400,
            grid_y: 9,
            length: 1.0,
            halfwidth: 0.05,
            k_nn: 30,
            bandwidth: None,
            m0: 24,
            leading: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub n_grid: Vec<usize>,
    /// Noise proxy constant: `sigma = sqrt(c / (n log n))`.
    pub c: f64,
    pub bandwidth: f64,
    pub seeds: Vec<u64>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![250, 500, 1000, 2000],
            c: 0.01,
            bandwidth: 0.1,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// Full description of one run. Flags override fields; fields override
/// the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Noise model; the dataset's default noise when absent.
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Multiplies the noise level (the ablation's `sigma`).
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    pub k_nn: usize,
    /// Kernel bandwidth `s`; the kNN heuristic when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_affinity_mode")]
    pub affinity_mode: AffinityMode,
    pub m: usize,
    pub m0: usize,
    pub dim_policy: DimPolicy,
    #[serde(default)]
    pub method: MethodSelection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub solver: EigenSolver,
    #[serde(default = "default_rcond")]
    pub rcond: f64,
    /// Whether each point is its own first neighbor.
    #[serde(default = "default_includes_self")]
    pub includes_self: bool,
    #[serde(default = "default_align_iters")]
    pub align_iters: usize,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub tube: TubeConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
}

fn default_noise_scale() -> f64 {
    1.0
}
fn default_affinity_mode() -> AffinityMode {
    AffinityMode::KnnTruncated
}
fn default_rcond() -> f64 {
    DEFAULT_RCOND
}
fn default_includes_self() -> bool {
    true
}
fn default_align_iters() -> usize {
    10
}

/// Seed of an independent random stream derived from a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn new(
        dataset: DatasetSpec,
        k_nn: usize,
        m: usize,
        m0: usize,
        dim_policy: DimPolicy,
    ) -> Self {
        Self {
            dataset,
            noise: None,
            noise_scale: 1.0,
            k_nn,
            bandwidth: None,
            affinity_mode: default_affinity_mode(),
            m,
            m0,
            dim_policy,
            method: MethodSelection::Both,
            seed: 0,
            out_dir: None,
            solver: EigenSolver::Auto,
            rcond: DEFAULT_RCOND,
            includes_self: true,
            align_iters: default_align_iters(),
            boundary: BoundaryConfig::default(),
            sweep: SweepConfig::default(),
            tube: TubeConfig::default(),
            stability: StabilityConfig::default(),
        }
    }

    /// Wave on a circle: `n = 1000`, `k_nn = 14`, `m0 = 100`, `m = 20`, `d = 1`.
    pub fn wave() -> Self {
        Self::new(
            DatasetSpec::wave_on_circle(1000),
            14,
            20,
            100,
            DimPolicy::Fixed(1),
        )
    }

    /// Swiss roll: `n = 10700`, `k_nn = 9`, `m0 = 100`, `m = 40`, `d = 2`.
    pub fn swiss_roll() -> Self {
        Self::new(
            DatasetSpec::swiss_roll(10_700),
            9,
            40,
            100,
            DimPolicy::Fixed(2),
        )
    }

    /// Truncated torus: `n = 3617`, `k_nn = 14`, `m0 = 100`, `m = 20`, `d = 2`.
    pub fn torus() -> Self {
        Self::new(
            DatasetSpec::truncated_torus(3617),
            14,
            20,
            100,
            DimPolicy::Fixed(2),
        )
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dataset.n();
        if self.m == 0 || self.m > self.m0 {
            return Err(Error::invalid(format!(
                "m must satisfy 0 < m <= m0 (m={}, m0={})",
                self.m, self.m0
            )));
        }
        if self.m0 > n {
            return Err(Error::invalid(format!("m0 ({}) exceeds n ({n})", self.m0)));
        }
        if self.k_nn < 2 || self.k_nn >= n {
            return Err(Error::invalid(format!(
                "k_nn must satisfy 2 <= k_nn < n (k_nn={}, n={n})",
                self.k_nn
            )));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::invalid("noise_scale must be finite and >= 0"));
        }
        if let Some(s) = self.bandwidth {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!(
                    "bandwidth must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }

    /// The noise applied to the clean cloud, after defaults and scaling.
    pub fn noise_spec(&self) -> NoiseSpec {
        let base = self
            .noise
            .unwrap_or_else(|| self.dataset.default_noise(derive_seed(self.seed, 1)));
        base.scaled(self.noise_scale)
    }

    fn hyperparams(&self, method: Method) -> FrameHyperparams {
        let lego = method == Method::Lego;
        FrameHyperparams {
            k_nn: self.k_nn,
            m: lego.then_some(self.m),
            m0: lego.then_some(self.m0),
            dim_policy: self.dim_policy,
        }
    }
}

/// The noisy cloud described by `cfg`.
pub fn prepare_cloud(cfg: &RunConfig) -> Result<PointCloud> {
    cfg.validate()?;
    let clean = cfg.dataset.generate(cfg.seed).stage("dataset")?;
    apply_noise(&clean, &cfg.noise_spec()).stage("noise")
}

/// Laplacian eigenbasis of a cloud under the graph settings of `cfg`.
/// Returns the basis and the bandwidth used.
pub fn spectral_basis(
    cfg: &RunConfig,
    cloud: &PointCloud,
    graph: &NeighborhoodGraph,
    m0: usize,
) -> Result<(SpectralBasis, f64)> {
    let s = match cfg.bandwidth {
        Some(s) => s,
        None => bandwidth_heuristic(graph).stage("graph")?,
    };
    let aff = gaussian_affinity(cloud, Some(graph), s, cfg.affinity_mode).stage("graph")?;
    let lap = random_walk_laplacian(&aff).stage("laplacian")?;
    let basis = smallest_eigenpairs_with(&lap, m0, cfg.solver).stage("spectral")?;
    Ok((basis, s))
}

/// Intermediate products of one estimation.
#[derive(Debug, Clone)]
pub struct Estimates {
    pub graph: NeighborhoodGraph,
    pub basis: Option<SpectralBasis>,
    pub bandwidth: Option<f64>,
    pub frames: Vec<TangentFrameSet>,
    /// Seconds per stage, in execution order.
    pub timings: Vec<(String, f64)>,
}

impl Estimates {
    pub fn frames_for(&self, method: Method) -> Option<&TangentFrameSet> {
        self.frames.iter().find(|f| f.method == method)
    }
}

/// Graph, spectrum and frames for every selected method.
pub fn estimate(cfg: &RunConfig, cloud: &PointCloud) -> Result<Estimates> {
    cfg.validate()?;
    cfg.dim_policy.validate(cloud.dim()).stage("tangent")?;
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let graph = knn_graph(cloud, cfg.k_nn, cfg.includes_self).stage("graph")?;
    lap("graph", &mut timings);
    let methods = cfg.method.methods();
    let (mut basis, mut bandwidth, mut frames) = (None, None, Vec::new());
    if methods.contains(&Method::Lego) {
        let (b, s) = spectral_basis(cfg, cloud, &graph, cfg.m0)?;
        lap("spectral", &mut timings);
        let patches = center_patches(cloud, &graph, cfg.rcond).stage("gradients")?;
        frames.push(
            lego_frames_from_patches(&patches, &b, cfg.m, cfg.dim_policy, cfg.k_nn)
                .stage("tangent")?,
        );
        lap("lego", &mut timings);
        basis = Some(b);
        bandwidth = Some(s);
    }
    if methods.contains(&Method::Lpca) {
        frames.push(lpca_frames(cloud, &graph, cfg.dim_policy).stage("tangent")?);
        lap("lpca", &mut timings);
    }
    Ok(Estimates {
        graph,
        basis,
        bandwidth,
        frames,
        timings,
    })
}

/// Serializable outcome of [`run_estimation`].
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub n: usize,
    pub p: usize,
    pub bandwidth: Option<f64>,
    /// Empty when the cloud has no ground truth.
    pub reports: Vec<DiscrepancyReport>,
    /// Functional variance profile per method.
    pub profiles: BTreeMap<String, Vec<f64>>,
    pub timings: BTreeMap<String, f64>,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip)]
    pub cloud: PointCloud,
    #[serde(skip)]
    pub estimates: Estimates,
}

impl RunResult {
    pub fn report(&self, method: Method) -> Option<&DiscrepancyReport> {
        self.reports.iter().find(|r| r.method == method)
    }
}

/// Generates the cloud, estimates frames, scores them against the truth and
/// persists artifacts when `out_dir` is set.
pub fn run_estimation(cfg: &RunConfig) -> Result<RunResult> {
    let start = Instant::now();
    let cloud = prepare_cloud(cfg)?;
    let generated = start.elapsed().as_secs_f64();
    let estimates = estimate(cfg, &cloud)?;
    let mut timings: BTreeMap<String, f64> = estimates.timings.iter().cloned().collect();
    timings.insert("dataset".into(), generated);

    let mut reports = Vec::new();
    if cloud.clean.is_some() {
        let truth = cloud.true_tangent_frames().stage("metrics")?;
        for f in &estimates.frames {
            reports.push(discrepancy(f, &truth).stage("metrics")?);
        }
    }
    let profiles = estimates
        .frames
        .iter()
        .map(|f| {
            (
                f.method.name().to_string(),
                functional_variance_profile(f).iter().copied().collect(),
            )
        })
        .collect();

    let mut result = RunResult {
        config: cfg.clone(),
        n: cloud.n(),
        p: cloud.dim(),
        bandwidth: estimates.bandwidth,
        reports,
        profiles,
        timings,
        artifacts: Vec::new(),
        cloud,
        estimates,
    };
    if let Some(dir) = &cfg.out_dir {
        result.artifacts = persist_run(dir, &result).stage("io")?;
        io::write_json(&dir.join("summary.json"), &result).stage("io")?;
        result.artifacts.push(dir.join("summary.json"));
    }
    timings_total(&mut result.timings, start);
    Ok(result)
}

fn timings_total(timings: &mut BTreeMap<String, f64>, start: Instant) {
    timings.insert("total".into(), start.elapsed().as_secs_f64());
}

fn persist_run(dir: &Path, result: &RunResult) -> Result<Vec<PathBuf>> {
    let mut paths = io::write_cloud(dir, &result.cloud)?;
    if let Some(basis) = &result.estimates.basis {
        let spectrum = dir.join("spectrum.csv");
        io::write_spectrum(&spectrum, &basis.eigenvalues)?;
        let vectors = dir.join("eigenvectors.csv");
        io::write_matrix(&vectors, &basis.eigenvectors)?;
        paths.extend([spectrum, vectors]);
    }
    for f in &result.estimates.frames {
        let name = f.method.name();
        let frames = dir.join(format!("frames_{name}.csv"));
        io::write_frames(&frames, &f.frames)?;
        let dims = dir.join(format!("dims_{name}.csv"));
        io::write_dims(&dims, &f.dims)?;
        let profile = dir.join(format!("profile_{name}.json"));
        io::write_json(&profile, &result.profiles[name])?;
        paths.extend([frames, dims, profile]);
    }
    for r in &result.reports {
        let name = r.method.name();
        let json = dir.join(format!("report_{name}.json"));
        io::write_json(&json, r)?;
        let csv = dir.join(format!("discrepancy_{name}.csv"));
        io::write_per_point(&csv, "discrepancy", &r.per_point)?;
        paths.extend([json, csv]);
    }
    Ok(paths)
}

/// Scores frames saved by [`run_estimation`] in `dir` against the ground
/// truth regenerated from `cfg`.
pub fn evaluate_saved(cfg: &RunConfig, dir: &Path, method: Method) -> Result<DiscrepancyReport> {
    let frames = io::read_frames(&dir.join(format!("frames_{}.csv", method.name()))).stage("io")?;
    let cloud = prepare_cloud(cfg)?;
    let truth = cloud.true_tangent_frames().stage("metrics")?;
    discrepancy_of(&frames, &truth, method, &cfg.hyperparams(method)).stage("metrics")
}

/// One row of the noise ablation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub sigma: f64,
    pub method: Method,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseAblation {
    pub rows: Vec<AblationRow>,
    /// Rank correlation of LPCA mean discrepancy with `sigma`.
    pub lpca_rank_correlation: Option<f64>,
    /// Whether LEGO's mean discrepancy at the largest `sigma` is below LPCA's.
    pub lego_below_lpca_at_max: Option<bool>,
}

impl NoiseAblation {
    pub fn series(&self, method: Method) -> Vec<&AblationRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }
}

/// Repeats the estimation with the noise scaled by each `sigma` (same noise
/// realization throughout).
pub fn noise_ablation(cfg: &RunConfig, sigma_grid: &[f64]) -> Result<NoiseAblation> {
    if sigma_grid.is_empty() {
        return Err(Error::invalid("sigma grid is empty"));
    }
    if sigma_grid.windows(2).any(|w| !(w[0] < w[1])) || !(sigma_grid[0] >= 0.0) {
        return Err(Error::invalid(
            "sigma grid must be nonnegative and strictly ascending",
        ));
    }
    let cells: Vec<Vec<AblationRow>> = sigma_grid
        .par_iter()
        .map(|&sigma| {
            let mut c = cfg.clone();
            c.noise_scale = cfg.noise_scale * sigma;
            c.out_dir = None;
            let cloud = prepare_cloud(&c)?;
            let est = estimate(&c, &cloud)?;
            let truth = cloud.true_tangent_frames().stage("metrics")?;
            est.frames
                .iter()
                .map(|f| {
                    let r = discrepancy(f, &truth).stage("metrics")?;
                    Ok(AblationRow {
                        sigma,
                        method: f.method,
                        mean: r.mean,
                        median: r.median,
                        p90: r.p90,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<AblationRow> = cells.into_iter().flatten().collect();
    let mean_of = |m: Method| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.method == m)
            .map(|r| r.mean)
            .collect()
    };
    let lpca = mean_of(Method::Lpca);
    let lego = mean_of(Method::Lego);
    let lpca_rank_correlation = (lpca.len() >= 2).then(|| spearman(sigma_grid, &lpca));
    let lego_below_lpca_at_max = match (lego.last(), lpca.last()) {
        (Some(a), Some(b)) => Some(a < b),
        _ => None,
    };
    let result = NoiseAblation {
        rows,
        lpca_rank_correlation,
        lego_below_lpca_at_max,
    };
    if let Some(dir) = &cfg.out_dir {
        let rows: Vec<Vec<String>> = result
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.sigma.to_string(),
                    r.method.name().into(),
                    r.mean.to_string(),
                    r.median.to_string(),
                    r.p90.to_string(),
                ]
            })
            .collect();
        io::write_table(
            &dir.join("noise_ablation.csv"),
            &["sigma", "method", "mean", "median", "p90"],
            &rows,
        )
        .stage("io")?;
    }
    Ok(result)
}

/// One `(m, m0)` cell of a hyperparameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub m: usize,
    pub m0: usize,
    /// Set when the pair was rejected.
    pub rejected: Option<String>,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub p90: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperSweep {
    pub cells: Vec<SweepCell>,
    /// LPCA on the same cloud, for reference.
    pub lpca: DiscrepancyReport,
}

impl HyperSweep {
    /// LEGO median discrepancy of the accepted cells with the given `m0`,
    /// keyed by `m`.
    pub fn medians_at(&self, m0: usize) -> Vec<(usize, f64)> {
        self.cells
            .iter()
            .filter(|c| c.m0 == m0)
            .filter_map(|c| c.median.map(|v| (c.m, v)))
            .collect()
    }
}

/// `(max - min) / mean`.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (max - min) / mean
}

/// LEGO discrepancy for every `(m, m0)` pair on one noisy cloud. Pairs with
/// `m > m0` or `m0 > n` are rejected individually.
pub fn hyperparam_sweep(
    cfg: &RunConfig,
    m_grid: &[usize],
    m0_grid: &[usize],
) -> Result<HyperSweep> {
    if m_grid.is_empty() || m0_grid.is_empty() {
        return Err(Error::invalid("hyperparameter grids must be nonempty"));
    }
    let cloud = prepare_cloud(cfg)?;
    let n = cloud.n();
    let truth = cloud.true_tangent_frames().stage("metrics")?;
    let graph = knn_graph(&cloud, cfg.k_nn, cfg.includes_self).stage("graph")?;
    let top = m0_grid
        .iter()
        .copied()
        .filter(|&m0| m0 > 0 && m0 <= n)
        .max();
    let full = match top {
        Some(m0) => Some(spectral_basis(cfg, &cloud, &graph, m0)?.0),
        None => None,
    };
    let patches: Vec<CenteredPatch> =
        center_patches(&cloud, &graph, cfg.rcond).stage("gradients")?;
    let pairs: Vec<(usize, usize)> = m0_grid
        .iter()
        .flat_map(|&m0| m_grid.iter().map(move |&m| (m, m0)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(m, m0)| {
            let reject = |why: String| SweepCell {
                m,
                m0,
                rejected: Some(why),
                mean: None,
                median: None,
                p90: None,
            };
            if m == 0 || m > m0 {
                return Ok(reject(format!("m={m} must satisfy 0 < m <= m0={m0}")));
            }
            if m0 > n {
                return Ok(reject(format!("m0={m0} exceeds n={n}")));
            }
            let basis = full.as_ref().expect("some m0 is valid").truncate(m0)?;
            let frames = lego_frames_from_patches(&patches, &basis, m, cfg.dim_policy, cfg.k_nn)
                .stage("tangent")?;
            let r = discrepancy(&frames, &truth).stage("metrics")?;
            if let Some(dir) = &cfg.out_dir {
                let cell_dir = dir.join("cells").join(format!("m{m}_m0{m0}"));
                io::write_json(&cell_dir.join("report.json"), &r).stage("io")?;
            }
            Ok(SweepCell {
                m,
                m0,
                rejected: None,
                mean: Some(r.mean),
                median: Some(r.median),
                p90: Some(r.p90),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lpca = discrepancy(
        &lpca_frames(&cloud, &graph, cfg.dim_policy).stage("tangent")?,
        &truth,
    )
    .stage("metrics")?;
    let sweep = HyperSweep { cells, lpca };
    if let Some(dir) = &cfg.out_dir {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let rows: Vec<Vec<String>> = sweep
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.m.to_string(),
                    c.m0.to_string(),
                    opt(c.mean),
                    opt(c.median),
                    opt(c.p90),
                    c.rejected.clone().unwrap_or_default(),
                ]
            })
            .collect();
        io::write_table(
            &dir.join("hyperparam_sweep.csv"),
            &["m", "m0", "mean", "median", "p90", "rejected"],
            &rows,
        )
        .stage("io")?;
    }
    Ok(sweep)
}

/// A named pass/fail check with the measured value and its bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            passed: value <= bound,
        }
    }

    fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            passed: value >= bound,
        }
    }
}

/// Best analytic match of one strip eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeMatch {
    pub index: usize,
    pub mode: (usize, usize),
    pub correlation: f64,
    /// `|(lambda_k / lambda_1) / (mu_k / mu_1) - 1|` against the matched
    /// analytic eigenvalues; absent for the constant mode.
    pub eigenvalue_rel_error: Option<f64>,
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TubeReport {
    pub eigenvalues: Vec<f64>,
    pub matches: Vec<ModeMatch>,
    pub vertical_fractions: Vec<f64>,
    pub ordering: TubeOrdering,
    /// First (0-based) eigenvector with vertical fraction at least one half.
    pub first_vertical: Option<usize>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Eigenvectors of a thin strip against the analytic Neumann modes.
pub fn tube_spectrum_validation(cfg: &TubeConfig) -> Result<TubeReport> {
    if !(cfg.halfwidth / cfg.length <= 0.1) {
        return Err(Error::invalid(
            "strip aspect halfwidth/length must be at most 0.1",
        ));
    }
    if cfg.leading >= cfg.m0 {
        return Err(Error::invalid(
            "m0 must exceed the number of leading eigenvectors",
        ));
    }
    let cloud = DatasetSpec::RectangleStrip {
        grid_x: cfg.grid_x,
        grid_y: cfg.grid_y,
        length: cfg.length,
        halfwidth: cfg.halfwidth,
    }
    .generate(0)
    .stage("dataset")?;
    let mut run = RunConfig::new(
        DatasetSpec::RectangleStrip {
            grid_x: cfg.grid_x,
            grid_y: cfg.grid_y,
            length: cfg.length,
            halfwidth: cfg.halfwidth,
        },
        cfg.k_nn,
        1,
        cfg.m0,
        DimPolicy::Fixed(1),
    );
    run.bandwidth = cfg.bandwidth;
    run.validate()?;
    let graph = knn_graph(&cloud, cfg.k_nn, true).stage("graph")?;
    let (basis, _) = spectral_basis(&run, &cloud, &graph, cfg.m0)?;

    let patches = center_patches(&cloud, &graph, DEFAULT_RCOND).stage("gradients")?;
    let grads = local_gradients(&patches, &basis.eigenvectors);
    let normals = cloud.true_normal_frames().stage("metrics")?;
    let vertical = vertical_energy_split(&grads, &normals)
        .stage("metrics")?
        .vertical();

    // candidate modes: enough horizontal and vertical orders to cover m0
    let max_i = cfg.m0 + 2;
    let max_j = cfg.grid_y.saturating_sub(1).clamp(1, 4);
    let mut candidates = Vec::new();
    for i in 0..=max_i {
        for j in 0..=max_j {
            let (mu, v) =
                rectangle_mode_oracle(cfg.length, cfg.halfwidth, i, j, &cloud).stage("metrics")?;
            candidates.push(((i, j), mu, v.normalize()));
        }
    }
    let mu_first = (std::f64::consts::PI / cfg.length).powi(2);
    let lambda_first = basis.eigenvalues[1];
    let matches: Vec<ModeMatch> = (0..cfg.m0)
        .map(|k| {
            let phi = basis.eigenvectors.column(k).normalize();
            let mut scored: Vec<(f64, usize)> = candidates
                .iter()
                .enumerate()
                .map(|(c, (_, _, v))| (phi.dot(v).abs(), c))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            let (correlation, best) = scored[0];
            let ambiguous = scored.len() > 1 && scored[1].0 > TUBE_MATCH_AMBIGUITY;
            let (mode, mu, _) = &candidates[best];
            let eigenvalue_rel_error = (*mu > 0.0 && k > 0)
                .then(|| ((basis.eigenvalues[k] / lambda_first) / (mu / mu_first) - 1.0).abs());
            ModeMatch {
                index: k,
                mode: *mode,
                correlation,
                eigenvalue_rel_error,
                ambiguous,
            }
        })
        .collect();

    let ordering = crate::metrics::tube_ordering(&vertical, cfg.leading);
    let first_vertical = vertical.iter().position(|&v| v >= TUBE_VERTICAL_MIN);
    let leading_max = vertical[..cfg.leading].iter().copied().fold(0.0, f64::max);
    // correlation of eigenvector #2 with cos(pi x / l)
    let first_mode = candidates
        .iter()
        .find(|(mode, _, _)| *mode == (1, 0))
        .expect("mode (1, 0) is a candidate");
    let second_corr = basis
        .eigenvectors
        .column(1)
        .normalize()
        .dot(&first_mode.2)
        .abs();
    let checks = vec![
        Check::at_most(
            "leading_vertical_fraction",
            leading_max,
            TUBE_LEADING_VERTICAL_MAX,
        ),
        Check::at_least(
            "first_vertical_index",
            first_vertical.map_or(f64::INFINITY, |i| i as f64),
            cfg.leading as f64,
        ),
        Check::at_least(
            "second_eigenvector_correlation",
            second_corr,
            TUBE_MODE_CORRELATION_MIN,
        ),
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(TubeReport {
        eigenvalues: basis.eigenvalues.clone(),
        matches,
        vertical_fractions: vertical,
        ordering,
        first_vertical,
        checks,
        passed,
    })
}

/// Deviations between noisy and clean operators at one `(n, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub n: usize,
    pub seed: u64,
    pub sigma: f64,
    pub affinity: f64,
    pub kernel: f64,
    pub laplacian: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySweep {
    pub rows: Vec<StabilityRow>,
    /// Log-log slope of each deviation against `n`.
    pub slope_affinity: f64,
    pub slope_kernel: f64,
    pub slope_laplacian: f64,
}

/// `sqrt(c / (n log n))`.
pub fn stability_noise_level(n: usize, c: f64) -> f64 {
    let n = n as f64;
    (c / (n * n.ln())).sqrt()
}

/// Dense operators of a clean wave-on-circle cloud and of its copy under
/// isotropic Gaussian noise of level `sqrt(c / (n log n))`, with a common
/// bandwidth `s`, compared in Frobenius norm over `n_grid`.
pub fn laplacian_stability_sweep(
    n_grid: &[usize],
    c: f64,
    s: f64,
    seed: u64,
) -> Result<StabilitySweep> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "n grid must be nonempty and strictly ascending",
        ));
    }
    if *n_grid.last().expect("nonempty") > STABILITY_DENSE_MAX_N {
        return Err(Error::invalid(format!(
            "dense operators are limited to n <= {STABILITY_DENSE_MAX_N}"
        )));
    }
    if !(c >= 0.0) || !(s > 0.0) {
        return Err(Error::invalid("need c >= 0 and s > 0"));
    }
    let rows = n_grid
        .iter()
        .map(|&n| {
            let stream = derive_seed(seed, n as u64);
            let clean = gen_wave_on_circle(n, 0.1, 8, stream).stage("dataset")?;
            let sigma = stability_noise_level(n, c);
            let noisy = apply_noise(&clean, &NoiseSpec::isotropic(sigma, derive_seed(stream, 1))).stage("noise")?;
            let ops = |cloud: &PointCloud| -> Result<(Affinity, Affinity, crate::graph::LaplacianOperator)> {
                let a = gaussian_affinity(cloud, None, s, AffinityMode::Dense)?;
                let k = normalized_affinity(&a)?;
                let l = random_walk_laplacian(&a)?;
                Ok((a, k, l))
            };
            let (a0, k0, l0) = ops(&clean).stage("laplacian")?;
            let (a1, k1, l1) = ops(&noisy).stage("laplacian")?;
            Ok(StabilityRow {
                n,
                seed,
                sigma,
                affinity: csr_frobenius_distance(&a1.weights, &a0.weights)?,
                kernel: csr_frobenius_distance(&k1.weights, &k0.weights)?,
                laplacian: csr_frobenius_distance(&l1.matrix, &l0.matrix)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let slope = |f: fn(&StabilityRow) -> f64| {
        let ys: Vec<f64> = rows.iter().map(f).collect();
        if ns.len() >= 2 && ys.iter().all(|&y| y > 0.0) {
            log_log_slope(&ns, &ys)
        } else {
            f64::NAN
        }
    };
    Ok(StabilitySweep {
        slope_affinity: slope(|r| r.affinity),
        slope_kernel: slope(|r| r.kernel),
        slope_laplacian: slope(|r| r.laplacian),
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityStudy {
    pub sweeps: Vec<StabilitySweep>,
    pub median_slope_laplacian: f64,
    pub median_slope_affinity: f64,
    /// Largest deviation observed with `c = 0`.
    pub zero_noise_deviation: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// [`laplacian_stability_sweep`] over several seeds, plus a noiseless
/// control run.
pub fn laplacian_stability_study(cfg: &StabilityConfig) -> Result<StabilityStudy> {
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("stability study needs at least one seed"));
    }
    let sweeps = cfg
        .seeds
        .par_iter()
        .map(|&seed| laplacian_stability_sweep(&cfg.n_grid, cfg.c, cfg.bandwidth, seed))
        .collect::<Result<Vec<_>>>()?;
    let control = laplacian_stability_sweep(&cfg.n_grid[..1], 0.0, cfg.bandwidth, cfg.seeds[0])?;
    let zero_noise_deviation = control
        .rows
        .iter()
        .map(|r| r.affinity.max(r.kernel).max(r.laplacian))
        .fold(0.0, f64::max);
    let median_slope_laplacian =
        median(&sweeps.iter().map(|s| s.slope_laplacian).collect::<Vec<_>>());
    let median_slope_affinity =
        median(&sweeps.iter().map(|s| s.slope_affinity).collect::<Vec<_>>());
    let checks = vec![
        Check::at_most(
            "median_slope_laplacian",
            median_slope_laplacian,
            STABILITY_LAPLACIAN_SLOPE_MAX,
        ),
        Check::at_most(
            "median_slope_affinity",
            median_slope_affinity,
            STABILITY_AFFINITY_SLOPE_MAX,
        ),
        Check::at_most("zero_noise_deviation", zero_noise_deviation, 0.0),
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(StabilityStudy {
        sweeps,
        median_slope_laplacian,
        median_slope_affinity,
        zero_noise_deviation,
        checks,
        passed,
    })
}

/// Doubly stochastic Gaussian kernel on a wide kNN support, for boundary
/// detection.
pub fn boundary_kernel(cloud: &PointCloud, k_nn: usize) -> Result<Affinity> {
    let k = k_nn.min(cloud.n() - 1);
    let graph = knn_graph(cloud, k, true)?;
    let s = bandwidth_heuristic(&graph)?;
    let aff = gaussian_affinity(cloud, Some(&graph), s, AffinityMode::KnnTruncated)?;
    sinkhorn_doubly_stochastic(&aff, SINKHORN_TOL, SINKHORN_MAX_ITER)
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryOutcome {
    pub reports: BTreeMap<String, BoundaryReport>,
    /// Jaccard overlap of each method's labels with those from the true
    /// frames.
    pub jaccard_vs_truth: BTreeMap<String, f64>,
    pub artifacts: Vec<PathBuf>,
}

/// Boundary labels from each method's frames and, when available, from the
/// true frames (`"truth"`).
pub fn run_boundary(cfg: &RunConfig) -> Result<BoundaryOutcome> {
    let cloud = prepare_cloud(cfg)?;
    let est = estimate(cfg, &cloud)?;
    boundary_from_estimates(cfg, &cloud, &est)
}

pub fn boundary_from_estimates(
    cfg: &RunConfig,
    cloud: &PointCloud,
    est: &Estimates,
) -> Result<BoundaryOutcome> {
    let kernel = boundary_kernel(cloud, cfg.boundary.k_nn).stage("downstream")?;
    let pct = cfg.boundary.percentile;
    let mut reports = BTreeMap::new();
    for f in &est.frames {
        reports.insert(
            f.method.name().to_string(),
            detect_boundary(cloud, &f.frames, &kernel, pct).stage("downstream")?,
        );
    }
    let mut jaccard_vs_truth = BTreeMap::new();
    if cloud.clean.is_some() {
        let truth = cloud.true_tangent_frames().stage("metrics")?;
        let t = detect_boundary(cloud, &truth, &kernel, pct).stage("downstream")?;
        for (name, r) in &reports {
            jaccard_vs_truth.insert(name.clone(), jaccard(&r.labels, &t.labels));
        }
        reports.insert("truth".into(), t);
    }
    let mut artifacts = Vec::new();
    if let Some(dir) = &cfg.out_dir {
        for (name, r) in &reports {
            let path = dir.join(format!("boundary_{name}.csv"));
            io::write_boundary(&path, &r.norms, &r.labels).stage("io")?;
            artifacts.push(path);
        }
    }
    Ok(BoundaryOutcome {
        reports,
        jaccard_vs_truth,
        artifacts,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingOutcome {
    pub method: Method,
    pub alignment: RigidAlignment,
    /// Residual of the best rigid fit of the embedding to the intrinsic
    /// chart, relative to the chart's spread; only for isometric charts.
    pub distortion: Option<f64>,
    #[serde(skip)]
    pub embedding: DMatrix<f64>,
    pub artifacts: Vec<PathBuf>,
}

/// Local views from the frames of the first selected method, aligned into
/// a global embedding.
pub fn run_embedding(cfg: &RunConfig) -> Result<EmbeddingOutcome> {
    let cloud = prepare_cloud(cfg)?;
    let est = estimate(cfg, &cloud)?;
    let frames = est
        .frames
        .first()
        .ok_or_else(|| Error::invalid("no method selected"))?;
    let views = build_local_views(&cloud, &est.graph, frames).stage("downstream")?;
    let (alignment, embedding) = align_views(&views, cfg.align_iters).stage("downstream")?;
    let distortion = match cfg.dataset {
        DatasetSpec::SwissRoll { .. } => Some(embedding_distortion(&embedding, &chart(&cloud)?)),
        _ => None,
    };
    let mut artifacts = Vec::new();
    if let Some(dir) = &cfg.out_dir {
        let path = dir.join("embedding.csv");
        io::write_embedding(&path, &embedding).stage("io")?;
        artifacts.push(path);
    }
    Ok(EmbeddingOutcome {
        method: frames.method,
        alignment,
        distortion,
        embedding,
        artifacts,
    })
}

/// `n x d` intrinsic coordinates of the clean samples.
fn chart(cloud: &PointCloud) -> Result<DMatrix<f64>> {
    let clean = cloud
        .clean
        .as_ref()
        .ok_or_else(|| Error::InvalidState("cloud has no intrinsic coordinates".into()))?;
    let d = clean.first().map_or(0, |c| c.params.len());
    Ok(DMatrix::from_fn(cloud.n(), d, |j, a| clean[j].params[a]))
}

/// `|O z + t - u|_F / |u - mean(u)|_F` for the best rigid motion, with
/// embedding `z` and reference `u` given as `n x d` matrices.
pub fn embedding_distortion(embedding: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let src = embedding.transpose();
    let dst = reference.transpose();
    let weights = vec![1.0; src.ncols()];
    let (o, t) = weighted_procrustes(&src, &dst, &weights);
    let mut fitted = &o * &src;
    for mut col in fitted.column_iter_mut() {
        col += &t;
    }
    let mean: DVector<f64> = dst.column_mean();
    let mut spread = 0.0;
    for col in dst.column_iter() {
        spread += (col - &mean).norm_squared();
    }
    ((fitted - &dst).norm_squared() / spread).sqrt()
}

/// Eigenpairs of the Laplacian of the configured cloud; persists
/// `spectrum.csv` and `eigenvectors.csv` when `out_dir` is set.
pub fn run_spectrum(cfg: &RunConfig) -> Result<(SpectralBasis, f64, Vec<PathBuf>)> {
    let cloud = prepare_cloud(cfg)?;
    let graph = knn_graph(&cloud, cfg.k_nn, cfg.includes_self).stage("graph")?;
    let (basis, s) = spectral_basis(cfg, &cloud, &graph, cfg.m0)?;
    let mut artifacts = Vec::new();
    if let Some(dir) = &cfg.out_dir {
        let spectrum = dir.join("spectrum.csv");
        io::write_spectrum(&spectrum, &basis.eigenvalues).stage("io")?;
        let vectors = dir.join("eigenvectors.csv");
        io::write_matrix(&vectors, &basis.eigenvectors).stage("io")?;
        artifacts.extend([spectrum, vectors]);
    }
    Ok((basis, s, artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_wave() -> RunConfig {
        let mut cfg = RunConfig::wave();
        cfg.dataset = DatasetSpec::wave_on_circle(300);
        cfg.m0 = 30;
        cfg.m = 10;
        cfg
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_wave();
        cfg.m = 31;
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
        let mut cfg = small_wave();
        cfg.k_nn = 300;
        assert!(cfg.validate().is_err());
        assert!(small_wave().validate().is_ok());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = RunConfig::torus();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let minimal: RunConfig = serde_json::from_str(
            r#"{"dataset": {"name": "swiss_roll", "n": 500}, "k_nn": 9, "m": 40, "m0": 100,
                "dim_policy": {"fixed": 2}}"#,
        )
        .unwrap();
        assert_eq!(minimal.method, MethodSelection::Both);
        assert!(minimal.includes_self);
    }

    #[test]
    fn stage_errors_are_tagged() {
        let mut cfg = small_wave();
        cfg.dim_policy = DimPolicy::Fixed(3);
        let cloud = prepare_cloud(&cfg).unwrap();
        match estimate(&cfg, &cloud) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "tangent"),
            other => panic!("expected a stage error, got {other:?}"),
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    #[test]
    fn sweep_rejects_bad_pairs_per_cell() {
        let cfg = small_wave();
        let sweep = hyperparam_sweep(&cfg, &[5, 40], &[20, 30]).unwrap();
        assert_eq!(sweep.cells.len(), 4);
        let rejected: Vec<_> = sweep
            .cells
            .iter()
            .filter(|c| c.rejected.is_some())
            .collect();
        assert_eq!(rejected.len(), 2);
        assert!(rejected.iter().all(|c| c.m == 40));
    }

    #[test]
    fn relative_spread_by_hand() {
        assert!((relative_spread(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(relative_spread(&[2.0, 2.0]), 0.0);
    }

    #[test]
    fn distortion_of_rigid_copy_vanishes() {
        let u = DMatrix::from_fn(20, 2, |j, a| {
            (j as f64 * 0.3 + a as f64).sin() + j as f64 * 0.1
        });
        let (c, s) = (0.6f64, 0.8f64);
        let z = DMatrix::from_fn(20, 2, |j, a| {
            let (x, y) = (u[(j, 0)], u[(j, 1)]);
            if a == 0 {
                c * x - s * y + 1.0
            } else {
                s * x + c * y - 2.0
            }
        });
        assert!(embedding_distortion(&z, &u) < 1e-12);
    }
}
