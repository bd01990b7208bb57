//! Synthetic manifolds with ground-truth tangent and normal frames, and the
//! noise models used to corrupt them.
//!
//! Every generator is driven by a closed-form parametrization (see
//! [`Parametrization`]); the analytic frames are derived from hand-written
//! derivatives, so they can be cross-checked against numerical differentiation
//! of [`Parametrization::embed`].

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The generator used for every stochastic operation in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A point on the clean manifold together with its exact local geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanSample {
    pub point: DVector<f64>,
    /// `p x d`, orthonormal columns.
    pub tangent_frame: DMatrix<f64>,
    /// `p x (p - d)`, orthonormal columns, orthogonal to `tangent_frame`.
    pub normal_frame: DMatrix<f64>,
    /// Intrinsic coordinates (e.g. `(u, v)` on the torus).
    pub params: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CloudMeta {
    pub dataset: String,
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// `n` points in `R^p`, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: DMatrix<f64>,
    pub clean: Option<Vec<CleanSample>>,
    pub seed: u64,
    pub meta: CloudMeta,
}

impl PointCloud {
    pub fn new(points: DMatrix<f64>, seed: u64, meta: CloudMeta) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::invalid("point cloud must have n >= 1 and p >= 1"));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("point cloud has non-finite coordinates"));
        }
        Ok(Self {
            points,
            clean: None,
            seed,
            meta,
        })
    }

    pub fn n(&self) -> usize {
        self.points.ncols()
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn point(&self, j: usize) -> nalgebra::DVectorView<'_, f64> {
        self.points.column(j)
    }

    /// Ground-truth tangent frames, if the cloud carries clean samples.
    pub fn true_tangent_frames(&self) -> Result<Vec<DMatrix<f64>>> {
        let clean = self
            .clean
            .as_ref()
            .ok_or_else(|| Error::InvalidState("cloud has no ground-truth frames".into()))?;
        Ok(clean.iter().map(|c| c.tangent_frame.clone()).collect())
    }

    pub fn true_normal_frames(&self) -> Result<Vec<DMatrix<f64>>> {
        let clean = self
            .clean
            .as_ref()
            .ok_or_else(|| Error::InvalidState("cloud has no ground-truth frames".into()))?;
        Ok(clean.iter().map(|c| c.normal_frame.clone()).collect())
    }

    /// Applies a rigid motion `x -> rotation * x + shift` to the points and
    /// to any ground-truth frames.
    pub fn transformed(&self, rotation: &DMatrix<f64>, shift: &DVector<f64>) -> PointCloud {
        let mut points = rotation * &self.points;
        for mut c in points.column_iter_mut() {
            c += shift;
        }
        let clean = self.clean.as_ref().map(|samples| {
            samples
                .iter()
                .map(|s| CleanSample {
                    point: rotation * &s.point + shift,
                    tangent_frame: rotation * &s.tangent_frame,
                    normal_frame: rotation * &s.normal_frame,
                    params: s.params.clone(),
                })
                .collect()
        });
        PointCloud {
            points,
            clean,
            seed: self.seed,
            meta: self.meta.clone(),
        }
    }
}

/// A closed-form chart of a synthetic manifold.
pub trait Parametrization {
    fn intrinsic_dim(&self) -> usize;
    fn ambient_dim(&self) -> usize;
    fn embed(&self, params: &[f64]) -> DVector<f64>;
    /// Analytic orthonormal tangent and normal frames at `params`.
    fn frames(&self, params: &[f64]) -> (DMatrix<f64>, DMatrix<f64>);

    fn sample_at(&self, params: &[f64]) -> CleanSample {
        let (tangent_frame, normal_frame) = self.frames(params);
        CleanSample {
            point: self.embed(params),
            tangent_frame,
            normal_frame,
            params: DVector::from_column_slice(params),
        }
    }
}

fn cloud_from_samples(samples: Vec<CleanSample>, seed: u64, meta: CloudMeta) -> Result<PointCloud> {
    let p = samples[0].point.len();
    let mut points = DMatrix::zeros(p, samples.len());
    for (j, s) in samples.iter().enumerate() {
        points.set_column(j, &s.point);
    }
    let mut cloud = PointCloud::new(points, seed, meta)?;
    cloud.clean = Some(samples);
    Ok(cloud)
}

/// Closed planar curve `r(t) = 1 + amp * cos(freq * t)` in polar form.
#[derive(Debug, Clone, Copy)]
pub struct WaveOnCircle {
    pub amp: f64,
    pub freq: u32,
}

impl Parametrization for WaveOnCircle {
    fn intrinsic_dim(&self) -> usize {
        1
    }

    fn ambient_dim(&self) -> usize {
        2
    }

    fn embed(&self, params: &[f64]) -> DVector<f64> {
        let t = params[0];
        let r = 1.0 + self.amp * (self.freq as f64 * t).cos();
        DVector::from_vec(vec![r * t.cos(), r * t.sin()])
    }

    fn frames(&self, params: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let t = params[0];
        let k = self.freq as f64;
        let r = 1.0 + self.amp * (k * t).cos();
        let dr = -self.amp * k * (k * t).sin();
        let dx = dr * t.cos() - r * t.sin();
        let dy = dr * t.sin() + r * t.cos();
        let len = dx.hypot(dy);
        let (tx, ty) = (dx / len, dy / len);
        // outward normal: tangent rotated clockwise
        (
            DMatrix::from_column_slice(2, 1, &[tx, ty]),
            DMatrix::from_column_slice(2, 1, &[ty, -tx]),
        )
    }
}

impl WaveOnCircle {
    /// Builds a cloud at explicit curve parameters (no sampling).
    pub fn cloud_at(&self, ts: &[f64], seed: u64) -> Result<PointCloud> {
        if ts.is_empty() {
            return Err(Error::invalid("need at least one parameter value"));
        }
        let samples = ts.iter().map(|&t| self.sample_at(&[t])).collect();
        cloud_from_samples(samples, seed, self.meta())
    }

    fn meta(&self) -> CloudMeta {
        let mut params = BTreeMap::new();
        params.insert("wave_amp".into(), self.amp);
        params.insert("wave_freq".into(), self.freq as f64);
        CloudMeta {
            dataset: "wave_on_circle".into(),
            params,
            notes: vec![
                "curve radius 1 + a cos(kt), sampling density 1 + 0.5 sin t (stand-in constants)"
                    .into(),
            ],
        }
    }
}

/// Non-uniformly sampled wave on a circle, density proportional to `1 + 0.5 sin t`.
pub fn gen_wave_on_circle(
    n: usize,
    wave_amp: f64,
    wave_freq: u32,
    seed: u64,
) -> Result<PointCloud> {
    if n < 8 {
        return Err(Error::invalid(format!(
            "wave_on_circle needs n >= 8, got {n}"
        )));
    }
    if !wave_amp.is_finite() || wave_amp.abs() >= 1.0 {
        return Err(Error::invalid("wave_amp must satisfy |a| < 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut ts = Vec::with_capacity(n);
    while ts.len() < n {
        let t: f64 = rng.random_range(0.0..2.0 * PI);
        let accept: f64 = rng.random_range(0.0..1.5);
        if accept < 1.0 + 0.5 * t.sin() {
            ts.push(t);
        }
    }
    let curve = WaveOnCircle {
        amp: wave_amp,
        freq: wave_freq,
    };
    let mut cloud = curve.cloud_at(&ts, seed)?;
    cloud.meta.params.insert("n".into(), n as f64);
    Ok(cloud)
}

/// Archimedean spiral `r(theta) = theta / (4 pi)`, `theta in [pi, 5 pi]`,
/// extruded along `y`. Parametrized by arclength `s` and height `h`, which is
/// an isometric chart.
#[derive(Debug, Clone, Copy)]
pub struct SwissRoll;

impl SwissRoll {
    pub const THETA_MIN: f64 = PI;
    pub const THETA_MAX: f64 = 5.0 * PI;

    fn arclength_from_zero(theta: f64) -> f64 {
        (theta * (theta * theta + 1.0).sqrt() + theta.asinh()) / (8.0 * PI)
    }

    /// Arclength of the spiral from `THETA_MIN` to `theta`.
    pub fn arclength(theta: f64) -> f64 {
        Self::arclength_from_zero(theta) - Self::arclength_from_zero(Self::THETA_MIN)
    }

    pub fn total_arclength() -> f64 {
        Self::arclength(Self::THETA_MAX)
    }

    /// Inverse of [`SwissRoll::arclength`] by Newton iteration.
    pub fn theta_at(s: f64) -> f64 {
        let mut theta = Self::THETA_MIN
            + (Self::THETA_MAX - Self::THETA_MIN) * (s / Self::total_arclength()).clamp(0.0, 1.0);
        for _ in 0..50 {
            let f = Self::arclength(theta) - s;
            let df = (theta * theta + 1.0).sqrt() / (4.0 * PI);
            let step = f / df;
            theta -= step;
            if step.abs() < 1e-15 * theta.abs().max(1.0) {
                break;
            }
        }
        theta
    }
}

impl Parametrization for SwissRoll {
    fn intrinsic_dim(&self) -> usize {
        2
    }

    fn ambient_dim(&self) -> usize {
        3
    }

    fn embed(&self, params: &[f64]) -> DVector<f64> {
        let theta = Self::theta_at(params[0]);
        let r = theta / (4.0 * PI);
        DVector::from_vec(vec![r * theta.cos(), params[1], r * theta.sin()])
    }

    fn frames(&self, params: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let theta = Self::theta_at(params[0]);
        let r = theta / (4.0 * PI);
        let dr = 1.0 / (4.0 * PI);
        let a = dr * theta.cos() - r * theta.sin();
        let b = dr * theta.sin() + r * theta.cos();
        let len = a.hypot(b);
        let (a, b) = (a / len, b / len);
        let tangent = DMatrix::from_column_slice(3, 2, &[a, 0.0, b, 0.0, 1.0, 0.0]);
        let normal = DMatrix::from_column_slice(3, 1, &[b, 0.0, -a]);
        (tangent, normal)
    }
}

/// Area-uniform Swiss roll; the height is `aspect` times the spiral arclength.
pub fn gen_swiss_roll(n: usize, aspect: f64, seed: u64) -> Result<PointCloud> {
    if n < 16 {
        return Err(Error::invalid(format!("swiss_roll needs n >= 16, got {n}")));
    }
    if !(aspect > 0.0) || !aspect.is_finite() {
        return Err(Error::invalid("swiss_roll aspect must be positive"));
    }
    let length = SwissRoll::total_arclength();
    let height = aspect * length;
    let mut rng = rng_from_seed(seed);
    let samples = (0..n)
        .map(|_| {
            let s: f64 = rng.random_range(0.0..length);
            let h: f64 = rng.random_range(0.0..height);
            SwissRoll.sample_at(&[s, h])
        })
        .collect();
    let mut params = BTreeMap::new();
    params.insert("n".into(), n as f64);
    params.insert("aspect".into(), aspect);
    params.insert("arclength".into(), length);
    params.insert("height".into(), height);
    let meta = CloudMeta {
        dataset: "swiss_roll".into(),
        params,
        notes: vec!["spiral r = theta/(4 pi), theta in [pi, 5 pi] (stand-in constants)".into()],
    };
    cloud_from_samples(samples, seed, meta)
}

/// Torus of revolution about the `z` axis.
#[derive(Debug, Clone, Copy)]
pub struct Torus {
    pub major_radius: f64,
    pub minor_radius: f64,
}

impl Parametrization for Torus {
    fn intrinsic_dim(&self) -> usize {
        2
    }

    fn ambient_dim(&self) -> usize {
        3
    }

    fn embed(&self, params: &[f64]) -> DVector<f64> {
        let (u, v) = (params[0], params[1]);
        let w = self.major_radius + self.minor_radius * v.cos();
        DVector::from_vec(vec![w * u.cos(), w * u.sin(), self.minor_radius * v.sin()])
    }

    fn frames(&self, params: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (u, v) = (params[0], params[1]);
        let (su, cu, sv, cv) = (u.sin(), u.cos(), v.sin(), v.cos());
        let tangent = DMatrix::from_column_slice(3, 2, &[-su, cu, 0.0, -sv * cu, -sv * su, cv]);
        let normal = DMatrix::from_column_slice(3, 1, &[cv * cu, cv * su, sv]);
        (tangent, normal)
    }
}

/// Area-uniform samples on `u in u_range`, `v in [0, 2 pi)`.
pub fn gen_truncated_torus(
    n: usize,
    major_radius: f64,
    minor_radius: f64,
    u_range: (f64, f64),
    seed: u64,
) -> Result<PointCloud> {
    if !(minor_radius > 0.0 && minor_radius < major_radius) {
        return Err(Error::invalid(format!(
            "torus radii must satisfy 0 < r_minor < R (got r_minor={minor_radius}, R={major_radius})"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("torus needs n >= 1"));
    }
    if !(u_range.1 > u_range.0) {
        return Err(Error::invalid("torus u_range must be non-empty"));
    }
    let torus = Torus {
        major_radius,
        minor_radius,
    };
    let mut rng = rng_from_seed(seed);
    let mut samples = Vec::with_capacity(n);
    while samples.len() < n {
        let u: f64 = rng.random_range(u_range.0..u_range.1);
        let v: f64 = rng.random_range(0.0..2.0 * PI);
        let accept: f64 = rng.random_range(0.0..major_radius + minor_radius);
        if accept < major_radius + minor_radius * v.cos() {
            samples.push(torus.sample_at(&[u, v]));
        }
    }
    let mut params = BTreeMap::new();
    params.insert("n".into(), n as f64);
    params.insert("major_radius".into(), major_radius);
    params.insert("minor_radius".into(), minor_radius);
    params.insert("u_min".into(), u_range.0);
    params.insert("u_max".into(), u_range.1);
    let meta = CloudMeta {
        dataset: "truncated_torus".into(),
        params,
        notes: vec!["radii and truncation are stand-in constants".into()],
    };
    cloud_from_samples(samples, seed, meta)
}

/// Regular lattice on `[0, length] x [-halfwidth, halfwidth]`, viewed as a
/// tube around the segment `[0, length] x {0}`.
pub fn gen_rectangle_strip(
    grid_x: usize,
    grid_y: usize,
    length: f64,
    halfwidth: f64,
) -> Result<PointCloud> {
    if grid_x < 4 || grid_y < 2 {
        return Err(Error::invalid(format!(
            "rectangle strip needs grid_x >= 4 and grid_y >= 2, got {grid_x}x{grid_y}"
        )));
    }
    if !(length > 0.0 && halfwidth > 0.0) {
        return Err(Error::invalid(
            "strip length and halfwidth must be positive",
        ));
    }
    let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
    let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let dx = length / (grid_x - 1) as f64;
    let dy = 2.0 * halfwidth / (grid_y - 1) as f64;
    let mut points = DMatrix::zeros(2, grid_x * grid_y);
    let mut samples = Vec::with_capacity(grid_x * grid_y);
    for iy in 0..grid_y {
        for ix in 0..grid_x {
            let x = ix as f64 * dx;
            let y = -halfwidth + iy as f64 * dy;
            let j = iy * grid_x + ix;
            points[(0, j)] = x;
            points[(1, j)] = y;
            samples.push(CleanSample {
                point: DVector::from_vec(vec![x, 0.0]),
                tangent_frame: e1.clone(),
                normal_frame: e2.clone(),
                params: DVector::from_vec(vec![x]),
            });
        }
    }
    let mut params = BTreeMap::new();
    params.insert("grid_x".into(), grid_x as f64);
    params.insert("grid_y".into(), grid_y as f64);
    params.insert("length".into(), length);
    params.insert("halfwidth".into(), halfwidth);
    let meta = CloudMeta {
        dataset: "rectangle_strip".into(),
        params,
        notes: Vec::new(),
    };
    let mut cloud = PointCloud::new(points, 0, meta)?;
    cloud.clean = Some(samples);
    Ok(cloud)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `eta * nu` with `eta ~ U(-level, level)` along the normal direction.
    UniformNormalInterval,
    /// As above with per-point bound `level * level_fn(params)`.
    HeteroskedasticNormalInterval,
    /// Uniform in the ball of radius `level` inside the normal space.
    UniformBallNormal,
    /// `N(0, level^2 I)` in the ambient space.
    IsotropicGaussian,
}

/// Per-point noise bound `base + amp * (1 + cos(freq * params[coord]))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CosineLevel {
    pub base: f64,
    pub amp: f64,
    pub freq: f64,
    #[serde(default)]
    pub coord: usize,
}

impl CosineLevel {
    pub fn eval(&self, params: &[f64]) -> f64 {
        self.base + self.amp * (1.0 + (self.freq * params[self.coord]).cos())
    }

    /// `1e-2 + 2.5e-3 (1 + cos 2u)`, the heteroskedastic profile used on the torus.
    pub fn torus_profile() -> Self {
        Self {
            base: 1e-2,
            amp: 2.5e-3,
            freq: 2.0,
            coord: 0,
        }
    }

    /// The torus profile scaled by 2.5, used on the wave-on-circle curve.
    pub fn wave_profile() -> Self {
        Self {
            base: 2.5e-2,
            amp: 6.25e-3,
            freq: 2.0,
            coord: 0,
        }
    }

    pub fn max_value(&self) -> f64 {
        self.base + 2.0 * self.amp.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Bound (interval/ball kinds), standard deviation (Gaussian), or the
    /// multiplier applied to `level_fn` (heteroskedastic).
    pub level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_fn: Option<CosineLevel>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::UniformNormalInterval,
            level: 0.0,
            level_fn: None,
            seed: 0,
        }
    }

    pub fn uniform(level: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::UniformNormalInterval,
            level,
            level_fn: None,
            seed,
        }
    }

    pub fn heteroskedastic(level_fn: CosineLevel, seed: u64) -> Self {
        Self {
            kind: NoiseKind::HeteroskedasticNormalInterval,
            level: 1.0,
            level_fn: Some(level_fn),
            seed,
        }
    }

    pub fn isotropic(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::IsotropicGaussian,
            level: sigma,
            level_fn: None,
            seed,
        }
    }

    /// Same spec with the level multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            level: self.level * factor,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0) || !self.level.is_finite() {
            return Err(Error::invalid("noise level must be finite and >= 0"));
        }
        if self.kind == NoiseKind::HeteroskedasticNormalInterval && self.level_fn.is_none() {
            return Err(Error::invalid("heteroskedastic noise requires level_fn"));
        }
        Ok(())
    }
}

fn random_unit(rng: &mut SeededRng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let norm: f64 = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Corrupts `cloud` according to `spec`. The clean samples are shared with
/// the input; only `points` change.
pub fn apply_noise(cloud: &PointCloud, spec: &NoiseSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut out = cloud.clone();
    if spec.level == 0.0 {
        return Ok(out);
    }
    let mut rng = rng_from_seed(spec.seed);
    let p = cloud.dim();
    if spec.kind == NoiseKind::IsotropicGaussian {
        for x in out.points.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += spec.level * z;
        }
        return Ok(out);
    }
    let clean = cloud.clean.as_ref().ok_or_else(|| {
        Error::InvalidState("normal-direction noise requires ground-truth frames".into())
    })?;
    for (j, sample) in clean.iter().enumerate() {
        let k = sample.normal_frame.ncols();
        if k == 0 {
            continue;
        }
        let bound = match spec.kind {
            NoiseKind::HeteroskedasticNormalInterval => {
                spec.level
                    * spec
                        .level_fn
                        .expect("validated")
                        .eval(sample.params.as_slice())
            }
            _ => spec.level,
        };
        let coeffs = match spec.kind {
            NoiseKind::UniformBallNormal => {
                let radius = bound * rng.random::<f64>().powf(1.0 / k as f64);
                random_unit(&mut rng, k) * radius
            }
            _ => {
                let eta = rng.random_range(-1.0..1.0) * bound;
                if k == 1 {
                    DVector::from_element(1, eta)
                } else {
                    random_unit(&mut rng, k) * eta
                }
            }
        };
        let shift = &sample.normal_frame * coeffs;
        debug_assert_eq!(shift.len(), p);
        let mut col = out.points.column_mut(j);
        col += shift;
    }
    Ok(out)
}

/// Declarative description of a dataset, as used in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DatasetSpec {
    WaveOnCircle {
        n: usize,
        #[serde(default = "default_wave_amp")]
        wave_amp: f64,
        #[serde(default = "default_wave_freq")]
        wave_freq: u32,
    },
    SwissRoll {
        n: usize,
        #[serde(default = "default_aspect")]
        aspect: f64,
    },
    TruncatedTorus {
        n: usize,
        #[serde(default = "default_major")]
        major_radius: f64,
        #[serde(default = "default_minor")]
        minor_radius: f64,
        #[serde(default)]
        u_min: f64,
        #[serde(default = "default_u_max")]
        u_max: f64,
    },
    RectangleStrip {
        grid_x: usize,
        grid_y: usize,
        length: f64,
        halfwidth: f64,
    },
}

fn default_wave_amp() -> f64 {
    0.1
}
fn default_wave_freq() -> u32 {
    8
}
/// Height over arclength of the default Swiss roll.
pub const DEFAULT_SWISS_ROLL_ASPECT: f64 = 0.05;
fn default_aspect() -> f64 {
    DEFAULT_SWISS_ROLL_ASPECT
}
fn default_major() -> f64 {
    0.3
}
fn default_minor() -> f64 {
    0.12
}
fn default_u_max() -> f64 {
    1.5 * PI
}

/// Uniform normal noise bound used on the Swiss roll.
pub const SWISS_ROLL_NOISE: f64 = 0.0175;

impl DatasetSpec {
    pub fn wave_on_circle(n: usize) -> Self {
        DatasetSpec::WaveOnCircle {
            n,
            wave_amp: default_wave_amp(),
            wave_freq: default_wave_freq(),
        }
    }

    pub fn swiss_roll(n: usize) -> Self {
        DatasetSpec::SwissRoll {
            n,
            aspect: default_aspect(),
        }
    }

    pub fn truncated_torus(n: usize) -> Self {
        DatasetSpec::TruncatedTorus {
            n,
            major_radius: default_major(),
            minor_radius: default_minor(),
            u_min: 0.0,
            u_max: default_u_max(),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<PointCloud> {
        match *self {
            DatasetSpec::WaveOnCircle {
                n,
                wave_amp,
                wave_freq,
            } => gen_wave_on_circle(n, wave_amp, wave_freq, seed),
            DatasetSpec::SwissRoll { n, aspect } => gen_swiss_roll(n, aspect, seed),
            DatasetSpec::TruncatedTorus {
                n,
                major_radius,
                minor_radius,
                u_min,
                u_max,
            } => gen_truncated_torus(n, major_radius, minor_radius, (u_min, u_max), seed),
            DatasetSpec::RectangleStrip {
                grid_x,
                grid_y,
                length,
                halfwidth,
            } => gen_rectangle_strip(grid_x, grid_y, length, halfwidth),
        }
    }

    /// The experiment-level noise for this dataset (the `sigma = 1` end of
    /// the noise ablation).
    pub fn default_noise(&self, seed: u64) -> NoiseSpec {
        match self {
            DatasetSpec::SwissRoll { .. } => NoiseSpec::uniform(SWISS_ROLL_NOISE, seed),
            DatasetSpec::WaveOnCircle { .. } => {
                NoiseSpec::heteroskedastic(CosineLevel::wave_profile(), seed)
            }
            DatasetSpec::TruncatedTorus { .. } => {
                NoiseSpec::heteroskedastic(CosineLevel::torus_profile(), seed)
            }
            DatasetSpec::RectangleStrip { .. } => NoiseSpec::none(),
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            DatasetSpec::WaveOnCircle { .. } | DatasetSpec::RectangleStrip { .. } => 1,
            DatasetSpec::SwissRoll { .. } | DatasetSpec::TruncatedTorus { .. } => 2,
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            DatasetSpec::WaveOnCircle { n, .. }
            | DatasetSpec::SwissRoll { n, .. }
            | DatasetSpec::TruncatedTorus { n, .. } => n,
            DatasetSpec::RectangleStrip { grid_x, grid_y, .. } => grid_x * grid_y,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }

    #[test]
    fn evenly_spaced_circle_has_radial_normals() {
        let curve = WaveOnCircle { amp: 0.0, freq: 3 };
        let ts: Vec<f64> = (0..4).map(|i| i as f64 * PI / 2.0).collect();
        let cloud = curve.cloud_at(&ts, 0).unwrap();
        assert_eq!(cloud.n(), 4);
        for (j, s) in cloud.clean.as_ref().unwrap().iter().enumerate() {
            assert!((s.point.norm() - 1.0).abs() < 1e-15);
            let radial = cloud.point(j).into_owned();
            assert!((s.tangent_frame.column(0).dot(&radial)).abs() < 1e-15);
            assert!((s.tangent_frame.column(0).norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn generators_reject_bad_arguments() {
        assert!(matches!(
            gen_wave_on_circle(7, 0.1, 8, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            gen_swiss_roll(15, 0.1, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            gen_swiss_roll(100, 0.0, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            gen_truncated_torus(10, 0.4, 0.4, (0.0, 1.0), 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            gen_rectangle_strip(3, 2, 1.0, 0.1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn full_scale_sizes() {
        assert_eq!(
            gen_swiss_roll(10700, 0.05, 1).unwrap().points.shape(),
            (3, 10700)
        );
        assert_eq!(
            gen_truncated_torus(3617, 1.0, 0.4, (0.0, 1.5 * PI), 1)
                .unwrap()
                .points
                .shape(),
            (3, 3617)
        );
    }

    #[test]
    fn torus_points_sit_at_minor_radius_from_core_circle() {
        let cloud = gen_truncated_torus(500, 1.0, 0.4, (0.0, 2.0 * PI), 3).unwrap();
        for j in 0..cloud.n() {
            let x = cloud.point(j);
            let rho = x[0].hypot(x[1]);
            let dist = (rho - 1.0).hypot(x[2]);
            assert!((dist - 0.4).abs() < 1e-10);
        }
    }

    #[test]
    fn strip_lattice_layout() {
        let cloud = gen_rectangle_strip(4, 2, 3.0, 0.5).unwrap();
        assert_eq!(cloud.n(), 8);
        assert!((cloud.points[(0, 1)] - cloud.points[(0, 0)] - 1.0).abs() < 1e-15);
        for s in cloud.clean.as_ref().unwrap() {
            assert_eq!(
                s.tangent_frame,
                DMatrix::from_column_slice(2, 1, &[1.0, 0.0])
            );
            assert_eq!(
                s.normal_frame,
                DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
            );
        }
    }

    #[test]
    fn frames_are_orthonormal_and_complementary() {
        let clouds = [
            gen_wave_on_circle(200, 0.1, 8, 1).unwrap(),
            gen_swiss_roll(200, 0.1, 1).unwrap(),
            gen_truncated_torus(200, 1.0, 0.4, (0.0, 1.5 * PI), 1).unwrap(),
        ];
        for cloud in &clouds {
            for s in cloud.clean.as_ref().unwrap() {
                let t = &s.tangent_frame;
                let nf = &s.normal_frame;
                assert!(crate::linalg::orthonormality_defect(t) < 1e-10);
                assert!(crate::linalg::orthonormality_defect(nf) < 1e-10);
                assert!(max_abs(&(nf.transpose() * t)) < 1e-10);
                assert_eq!(t.ncols() + nf.ncols(), cloud.dim());
            }
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let cloud = gen_swiss_roll(100, 0.1, 2).unwrap();
        let noisy = apply_noise(&cloud, &NoiseSpec::uniform(0.0, 9)).unwrap();
        assert_eq!(noisy.points, cloud.points);
    }

    #[test]
    fn swiss_roll_noise_is_bounded_and_normal() {
        let cloud = gen_swiss_roll(2000, 0.05, 2).unwrap();
        let noisy = apply_noise(&cloud, &NoiseSpec::uniform(SWISS_ROLL_NOISE, 9)).unwrap();
        for (j, s) in cloud.clean.as_ref().unwrap().iter().enumerate() {
            let disp = noisy.point(j) - &s.point;
            assert!(disp.norm() <= SWISS_ROLL_NOISE);
            assert!((s.tangent_frame.transpose() * &disp).norm() <= 1e-10);
        }
    }

    #[test]
    fn heteroskedastic_bound_respected() {
        let cloud = gen_truncated_torus(1000, 1.0, 0.4, (0.0, 1.5 * PI), 5).unwrap();
        let profile = CosineLevel::torus_profile();
        let noisy = apply_noise(&cloud, &NoiseSpec::heteroskedastic(profile, 4)).unwrap();
        for (j, s) in cloud.clean.as_ref().unwrap().iter().enumerate() {
            let disp = noisy.point(j) - &s.point;
            assert!(disp.norm() <= profile.eval(s.params.as_slice()) + 1e-15);
            assert!((s.tangent_frame.transpose() * &disp).norm() <= 1e-10);
        }
    }

    #[test]
    fn ball_noise_confined_to_normal_space() {
        let cloud = gen_truncated_torus(300, 1.0, 0.4, (0.0, 1.5 * PI), 5).unwrap();
        let spec = NoiseSpec {
            kind: NoiseKind::UniformBallNormal,
            level: 0.02,
            level_fn: None,
            seed: 1,
        };
        let noisy = apply_noise(&cloud, &spec).unwrap();
        for (j, s) in cloud.clean.as_ref().unwrap().iter().enumerate() {
            let disp = noisy.point(j) - &s.point;
            assert!(disp.norm() <= 0.02);
            assert!((s.tangent_frame.transpose() * &disp).norm() <= 1e-10);
        }
    }

    #[test]
    fn normal_noise_requires_frames() {
        let cloud = PointCloud::new(DMatrix::zeros(2, 3), 0, CloudMeta::default()).unwrap();
        assert!(matches!(
            apply_noise(&cloud, &NoiseSpec::uniform(0.1, 0)),
            Err(Error::InvalidState(_))
        ));
        // isotropic noise does not need them
        assert!(apply_noise(&cloud, &NoiseSpec::isotropic(0.1, 0)).is_ok());
    }

    #[test]
    fn heteroskedastic_requires_level_fn() {
        let cloud = gen_swiss_roll(20, 0.1, 0).unwrap();
        let spec = NoiseSpec {
            kind: NoiseKind::HeteroskedasticNormalInterval,
            level: 1.0,
            level_fn: None,
            seed: 0,
        };
        assert!(matches!(
            apply_noise(&cloud, &spec),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_truncated_torus(300, 1.0, 0.4, (0.0, 1.5 * PI), 11).unwrap();
        let b = gen_truncated_torus(300, 1.0, 0.4, (0.0, 1.5 * PI), 11).unwrap();
        assert_eq!(a.points, b.points);
        let na = apply_noise(&a, &NoiseSpec::uniform(0.01, 3)).unwrap();
        let nb = apply_noise(&b, &NoiseSpec::uniform(0.01, 3)).unwrap();
        assert_eq!(na.points, nb.points);
    }

    #[test]
    fn arclength_inverse_roundtrip() {
        for k in 0..=20 {
            let s = SwissRoll::total_arclength() * k as f64 / 20.0;
            let theta = SwissRoll::theta_at(s);
            assert!((SwissRoll::arclength(theta) - s).abs() < 1e-12);
        }
    }
}
