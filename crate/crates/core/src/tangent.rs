//! Tangent frames from eigenvector gradients (LEGO) and from local PCA.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::gradients::{
    center_patches, estimate_gradients, CenteredPatch, GradientField, DEFAULT_RCOND,
};
use crate::graph::NeighborhoodGraph;
use crate::linalg::{left_singular_desc, symmetric_eigen_desc};
use crate::spectral::SpectralBasis;

/// Absorbs rounding in cumulative sums compared against `f_var`.
const THRESHOLD_SLACK: f64 = 1e-12;

/// How many leading directions each frame keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum DimPolicy {
    /// The same dimension `d` at every point.
    Fixed(usize),
    /// Smallest `s` whose leading `s` squared singular values explain at
    /// least this fraction of the total.
    Threshold(f64),
}

impl DimPolicy {
    pub fn validate(&self, p: usize) -> Result<()> {
        match *self {
            DimPolicy::Fixed(d) if d == 0 || d > p => Err(Error::invalid(format!(
                "fixed dimension must satisfy 0 < d <= p (d={d}, p={p})"
            ))),
            DimPolicy::Threshold(f) if !(f > 0.0 && f < 1.0) => {
                Err(Error::invalid(format!("f_var must lie in (0, 1), got {f}")))
            }
            _ => Ok(()),
        }
    }

    /// Applies the policy to a descending profile that sums to one.
    pub fn select(&self, profile: &[f64]) -> usize {
        match *self {
            DimPolicy::Fixed(d) => d,
            DimPolicy::Threshold(f_var) => {
                let mut acc = 0.0;
                for (s, v) in profile.iter().enumerate() {
                    acc += v;
                    if acc >= f_var - THRESHOLD_SLACK {
                        return s + 1;
                    }
                }
                profile.len()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lego,
    Lpca,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Lego => "lego",
            Method::Lpca => "lpca",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHyperparams {
    pub k_nn: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<usize>,
    pub dim_policy: DimPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrameSet {
    /// `p x d_j` with orthonormal columns.
    pub frames: Vec<DMatrix<f64>>,
    pub dims: Vec<usize>,
    /// Length `p`, descending, summing to one.
    pub singular_profiles: Vec<DVector<f64>>,
    pub method: Method,
    pub hyperparams: FrameHyperparams,
}

impl TangentFrameSet {
    pub fn n(&self) -> usize {
        self.frames.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.singular_profiles.first().map_or(0, |s| s.len())
    }

    /// The common frame dimension, or `None` if dimensions vary.
    pub fn uniform_dim(&self) -> Option<usize> {
        let first = *self.dims.first()?;
        self.dims.iter().all(|&d| d == first).then_some(first)
    }

    /// Orthogonal projector `Q_j Q_j^T`.
    pub fn projector(&self, j: usize) -> DMatrix<f64> {
        &self.frames[j] * self.frames[j].transpose()
    }
}

fn normalized_profile(values: &[f64], p: usize, index: usize) -> Result<DVector<f64>> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateFrame { index });
    }
    Ok(DVector::from_fn(p, |i, _| {
        values.get(i).map_or(0.0, |v| v / total)
    }))
}

/// Frames from an already estimated gradient field.
pub fn frames_from_gradients(
    field: &GradientField,
    policy: DimPolicy,
    k_nn: usize,
) -> Result<TangentFrameSet> {
    let p = field.dim();
    policy.validate(p)?;
    if let DimPolicy::Fixed(d) = policy {
        if d > field.m {
            return Err(Error::invalid(format!(
                "fixed dimension {d} exceeds the number of gradients m={}",
                field.m
            )));
        }
    }
    let per_point: Vec<(DMatrix<f64>, usize, DVector<f64>)> = field
        .gradients
        .par_iter()
        .enumerate()
        .map(|(j, g)| {
            let (sigma, u) = left_singular_desc(g);
            let squares: Vec<f64> = sigma.iter().map(|s| s * s).collect();
            let profile = normalized_profile(&squares, p, j)?;
            let d = policy.select(profile.as_slice()).min(u.ncols());
            Ok((u.columns(0, d).into_owned(), d, profile))
        })
        .collect::<Result<_>>()?;
    Ok(assemble(
        per_point,
        Method::Lego,
        FrameHyperparams {
            k_nn,
            m: Some(field.m),
            m0: Some(field.m0),
            dim_policy: policy,
        },
    ))
}

fn assemble(
    per_point: Vec<(DMatrix<f64>, usize, DVector<f64>)>,
    method: Method,
    hyperparams: FrameHyperparams,
) -> TangentFrameSet {
    let mut frames = Vec::with_capacity(per_point.len());
    let mut dims = Vec::with_capacity(per_point.len());
    let mut singular_profiles = Vec::with_capacity(per_point.len());
    for (q, d, s) in per_point {
        frames.push(q);
        dims.push(d);
        singular_profiles.push(s);
    }
    TangentFrameSet {
        frames,
        dims,
        singular_profiles,
        method,
        hyperparams,
    }
}

/// LEGO frames from precomputed patches.
pub fn lego_frames_from_patches(
    patches: &[CenteredPatch],
    basis: &SpectralBasis,
    m: usize,
    policy: DimPolicy,
    k_nn: usize,
) -> Result<TangentFrameSet> {
    let field = estimate_gradients(patches, basis, m)?;
    frames_from_gradients(&field, policy, k_nn)
}

pub fn lego_frames(
    cloud: &PointCloud,
    graph: &NeighborhoodGraph,
    basis: &SpectralBasis,
    m: usize,
    policy: DimPolicy,
) -> Result<TangentFrameSet> {
    policy.validate(cloud.dim())?;
    if m == 0 || m > basis.m0 {
        return Err(Error::invalid(format!(
            "m must satisfy 0 < m <= m0 (m={m}, m0={})",
            basis.m0
        )));
    }
    let patches = center_patches(cloud, graph, DEFAULT_RCOND)?;
    lego_frames_from_patches(&patches, basis, m, policy, graph.k_nn)
}

/// Local PCA: top eigenvectors of the neighborhood covariance
/// `C_j = sum_s (x_{j_s} - mu_j)(x_{j_s} - mu_j)^T`.
pub fn lpca_frames(
    cloud: &PointCloud,
    graph: &NeighborhoodGraph,
    policy: DimPolicy,
) -> Result<TangentFrameSet> {
    let p = cloud.dim();
    policy.validate(p)?;
    if graph.n() != cloud.n() {
        return Err(Error::DimensionMismatch {
            expected: format!("graph over {} points", cloud.n()),
            actual: format!("{}", graph.n()),
        });
    }
    let per_point = (0..cloud.n())
        .into_par_iter()
        .map(|j| {
            let nbrs = &graph.neighbors[j];
            let mut mu = DVector::zeros(p);
            for &s in nbrs {
                mu += cloud.points.column(s);
            }
            mu /= nbrs.len() as f64;
            let mut cov = DMatrix::zeros(p, p);
            for &s in nbrs {
                let c = cloud.points.column(s) - &mu;
                cov.ger(1.0, &c, &c, 1.0);
            }
            let (values, vectors) = symmetric_eigen_desc(&cov);
            let clipped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
            let profile = normalized_profile(&clipped, p, j)?;
            let d = policy.select(profile.as_slice());
            Ok((vectors.columns(0, d).into_owned(), d, profile))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(
        per_point,
        Method::Lpca,
        FrameHyperparams {
            k_nn: graph.k_nn,
            m: None,
            m0: None,
            dim_policy: policy,
        },
    ))
}

/// Mean normalized singular profile over all points. Meaningful for frames
/// computed with `d = p`, although the profiles do not depend on `d`.
pub fn functional_variance_profile(frames: &TangentFrameSet) -> DVector<f64> {
    let p = frames.ambient_dim();
    let mut mean = DVector::zeros(p);
    for s in &frames.singular_profiles {
        mean += s;
    }
    if !frames.singular_profiles.is_empty() {
        mean /= frames.singular_profiles.len() as f64;
    }
    mean
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CloudMeta;
    use crate::graph::knn_graph;

    fn collinear3() -> PointCloud {
        PointCloud::new(
            DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 0.0, 1.0, 2.0]),
            0,
            CloudMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn lpca_on_collinear_points() {
        let cloud = collinear3();
        let graph = knn_graph(&cloud, 2, true).unwrap();
        let frames = lpca_frames(&cloud, &graph, DimPolicy::Fixed(1)).unwrap();
        let dir = DVector::from_vec(vec![1.0, 1.0]) / 2f64.sqrt();
        for j in 0..3 {
            assert!((frames.frames[j].column(0).dot(&dir).abs() - 1.0).abs() < 1e-12);
            assert!(frames.singular_profiles[j][1].abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_rule() {
        let profile = [0.6, 0.3, 0.1];
        assert_eq!(DimPolicy::Threshold(0.5).select(&profile), 1);
        assert_eq!(DimPolicy::Threshold(0.9).select(&profile), 2);
        assert_eq!(DimPolicy::Threshold(0.95).select(&profile), 3);
        assert_eq!(DimPolicy::Fixed(2).select(&profile), 2);
    }

    #[test]
    fn policy_validation() {
        assert!(DimPolicy::Fixed(0).validate(3).is_err());
        assert!(DimPolicy::Fixed(4).validate(3).is_err());
        assert!(DimPolicy::Threshold(1.0).validate(3).is_err());
        assert!(DimPolicy::Threshold(0.0).validate(3).is_err());
        assert!(DimPolicy::Threshold(0.9).validate(3).is_ok());
    }

    #[test]
    fn zero_gradients_are_degenerate() {
        let field = GradientField {
            gradients: vec![DMatrix::zeros(2, 3)],
            m: 3,
            m0: 3,
        };
        assert!(matches!(
            frames_from_gradients(&field, DimPolicy::Fixed(1), 2),
            Err(Error::DegenerateFrame { index: 0 })
        ));
    }

    #[test]
    fn gradient_frames_and_profile_by_hand() {
        // gradients along e2 dominate those along e1
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let field = GradientField {
            gradients: vec![g],
            m: 2,
            m0: 2,
        };
        let frames = frames_from_gradients(&field, DimPolicy::Fixed(1), 2).unwrap();
        assert!((frames.frames[0][(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((frames.singular_profiles[0][0] - 0.8).abs() < 1e-12);
        assert!((frames.singular_profiles[0][1] - 0.2).abs() < 1e-12);
        let profile = functional_variance_profile(&frames);
        assert!((profile.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_dim_above_m_is_rejected() {
        let field = GradientField {
            gradients: vec![DMatrix::identity(3, 1)],
            m: 1,
            m0: 1,
        };
        assert!(matches!(
            frames_from_gradients(&field, DimPolicy::Fixed(2), 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn profile_pads_to_ambient_dim() {
        let field = GradientField {
            gradients: vec![DMatrix::from_row_slice(3, 1, &[0.0, 3.0, 4.0])],
            m: 1,
            m0: 1,
        };
        let frames = frames_from_gradients(&field, DimPolicy::Threshold(0.9), 2).unwrap();
        assert_eq!(frames.singular_profiles[0].len(), 3);
        assert_eq!(frames.dims[0], 1);
    }
}
