//! Point clouds, empirical measures, and the sampling distributions they
//! come from. All supports are bounded boxes, so every p-th moment is finite
//! and rejection sampling terminates quickly.

use crate::seed::Seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("invalid distribution parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("point cloud must contain at least one point")]
    EmptyCloud,
    #[error("point cloud dimension must be at least 1")]
    ZeroDim,
    #[error("flat buffer of length {len} is not a multiple of dim {dim}")]
    RaggedBuffer { len: usize, dim: usize },
    #[error("point {index} has {got} coordinates, expected {expected}")]
    DimMismatch { index: usize, got: usize, expected: usize },
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("rejection sampling failed to land in the box after {attempts} attempts")]
    RejectionStalled { attempts: usize },
    #[error("sample count must be at least 1")]
    ZeroSamples,
    #[error("point file: {0}")]
    Io(#[from] std::io::Error),
    #[error("point file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Sampling law with bounded support. The box it lives in is recoverable via
/// [`SamplingDistribution::bounding_box`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplingDistribution {
    /// Uniform on `[0, side]^dim`.
    UniformCube {
        dim: usize,
        #[serde(default = "default_side")]
        side: f64,
    },
    /// Isotropic gaussian restricted to the box `[lo, hi]^dim` by rejection.
    TruncatedGaussian {
        dim: usize,
        mean: Vec<f64>,
        scale: f64,
        #[serde(default)]
        lo: f64,
        #[serde(default = "default_side")]
        hi: f64,
    },
    /// Two truncated gaussians on a shared box, mixed by `weights`.
    TwoComponentMixture {
        dim: usize,
        weights: [f64; 2],
        means: [Vec<f64>; 2],
        scales: [f64; 2],
        #[serde(default)]
        lo: f64,
        #[serde(default = "default_side")]
        hi: f64,
    },
}

fn default_side() -> f64 {
    1.0
}

impl SamplingDistribution {
    pub fn dim(&self) -> usize {
        match *self {
            SamplingDistribution::UniformCube { dim, .. }
            | SamplingDistribution::TruncatedGaussian { dim, .. }
            | SamplingDistribution::TwoComponentMixture { dim, .. } => dim,
        }
    }

    /// Coordinate-wise `[lo, hi]` of the support box.
    pub fn bounding_box(&self) -> (f64, f64) {
        match *self {
            SamplingDistribution::UniformCube { side, .. } => (0.0, side),
            SamplingDistribution::TruncatedGaussian { lo, hi, .. }
            | SamplingDistribution::TwoComponentMixture { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let (lo, hi) = self.bounding_box();
        x.len() == self.dim() && x.iter().all(|&v| v >= lo && v <= hi)
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        let fail = |field, reason: String| Err(MeasureError::InvalidParameter { field, reason });
        if self.dim() == 0 {
            return fail("dim", "must be positive".into());
        }
        match self {
            SamplingDistribution::UniformCube { side, .. } => {
                if !(side.is_finite() && *side > 0.0) {
                    return fail("side", format!("must be positive and finite, got {side}"));
                }
            }
            SamplingDistribution::TruncatedGaussian { dim, mean, scale, lo, hi } => {
                validate_box(*lo, *hi)?;
                validate_component("mean", "scale", mean, *scale, *dim, *lo, *hi)?;
            }
            SamplingDistribution::TwoComponentMixture { dim, weights, means, scales, lo, hi } => {
                validate_box(*lo, *hi)?;
                if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
                    return fail("weights", format!("must be non-negative, got {weights:?}"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return fail("weights", format!("must sum to 1, got {total}"));
                }
                validate_component("means", "scales", &means[0], scales[0], *dim, *lo, *hi)?;
                validate_component("means", "scales", &means[1], scales[1], *dim, *lo, *hi)?;
            }
        }
        Ok(())
    }
}

fn validate_box(lo: f64, hi: f64) -> Result<(), MeasureError> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(MeasureError::InvalidParameter {
            field: "lo/hi",
            reason: format!("box must satisfy lo < hi with finite ends, got [{lo}, {hi}]"),
        });
    }
    Ok(())
}

fn validate_component(
    mean_field: &'static str,
    scale_field: &'static str,
    mean: &[f64],
    scale: f64,
    dim: usize,
    lo: f64,
    hi: f64,
) -> Result<(), MeasureError> {
    if mean.len() != dim {
        return Err(MeasureError::InvalidParameter {
            field: mean_field,
            reason: format!("expected {dim} coordinates, got {}", mean.len()),
        });
    }
    // Keeping the centre inside the box bounds the rejection rate.
    if mean.iter().any(|&m| !(m.is_finite() && m >= lo && m <= hi)) {
        return Err(MeasureError::InvalidParameter {
            field: mean_field,
            reason: format!("every coordinate must lie in [{lo}, {hi}], got {mean:?}"),
        });
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(MeasureError::InvalidParameter {
            field: scale_field,
            reason: format!("must be positive and finite, got {scale}"),
        });
    }
    Ok(())
}

/// n points in R^d, stored row-major. Immutable after construction; shape and
/// finiteness are checked once here so downstream code can index freely.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self, MeasureError> {
        if dim == 0 {
            return Err(MeasureError::ZeroDim);
        }
        if data.is_empty() {
            return Err(MeasureError::EmptyCloud);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(MeasureError::RaggedBuffer { len: data.len(), dim });
        }
        if let Some(bad) = data.chunks_exact(dim).position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(MeasureError::NonFinite { index: bad });
        }
        Ok(PointCloud { dim, data })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self, MeasureError> {
        let first = points.first().ok_or(MeasureError::EmptyCloud)?;
        let dim = first.len();
        if dim == 0 {
            return Err(MeasureError::ZeroDim);
        }
        let mut data = Vec::with_capacity(points.len() * dim);
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(MeasureError::DimMismatch { index, got: p.len(), expected: dim });
            }
            data.extend_from_slice(p);
        }
        PointCloud::from_flat(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false // n >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + Clone {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// One point per line, `dim` comma-separated columns, no header. Floats
    /// use shortest round-trip formatting so read(write(c)) == c exactly.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for p in self.points() {
            for (j, v) in p.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(s: &str) -> Result<Self, MeasureError> {
        let mut points = Vec::new();
        for (i, raw) in s.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|c| {
                    c.trim().parse::<f64>().map_err(|e| MeasureError::Parse {
                        line: i + 1,
                        reason: format!("bad float `{c}`: {e}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            points.push(row);
        }
        PointCloud::from_points(&points)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), MeasureError> {
        Ok(std::fs::write(path, self.to_csv_string())?)
    }

    pub fn read_csv(path: &Path) -> Result<Self, MeasureError> {
        PointCloud::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// Uniformly weighted empirical measure on a point cloud; every atom carries
/// mass 1/n, so total mass is 1 by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    cloud: PointCloud,
}

impl EmpiricalMeasure {
    pub fn new(cloud: PointCloud) -> Self {
        EmpiricalMeasure { cloud }
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.cloud.dim()
    }

    pub fn atom_weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.len() as f64 * self.atom_weight()
    }

    /// (1/n) Σ ‖x_i‖^p, the p-th absolute moment about the origin.
    pub fn pth_absolute_moment(&self, p: f64) -> f64 {
        let w = self.atom_weight();
        self.cloud
            .points()
            .map(|x| {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                w * norm.powf(p)
            })
            .sum()
    }
}

/// Draw n i.i.d. points from `dist`. Deterministic in `seed`.
pub fn sample_points(
    dist: &SamplingDistribution,
    n: usize,
    seed: Seed,
) -> Result<PointCloud, MeasureError> {
    dist.validate()?;
    if n == 0 {
        return Err(MeasureError::ZeroSamples);
    }
    let d = dist.dim();
    let mut rng = seed.rng();
    let mut data = Vec::with_capacity(n * d);
    match dist {
        SamplingDistribution::UniformCube { side, .. } => {
            for _ in 0..n * d {
                data.push(rng.gen::<f64>() * side);
            }
        }
        SamplingDistribution::TruncatedGaussian { mean, scale, lo, hi, .. } => {
            for _ in 0..n {
                sample_truncated(&mut rng, mean, *scale, *lo, *hi, &mut data)?;
            }
        }
        SamplingDistribution::TwoComponentMixture { weights, means, scales, lo, hi, .. } => {
            for _ in 0..n {
                let u: f64 = rng.gen();
                let c = usize::from(u >= weights[0]);
                sample_truncated(&mut rng, &means[c], scales[c], *lo, *hi, &mut data)?;
            }
        }
    }
    PointCloud::from_flat(d, data)
}

const REJECTION_CAP: usize = 100_000;

fn sample_truncated(
    rng: &mut impl Rng,
    mean: &[f64],
    scale: f64,
    lo: f64,
    hi: f64,
    out: &mut Vec<f64>,
) -> Result<(), MeasureError> {
    let d = mean.len();
    let mut candidate = vec![0.0; d];
    for attempt in 1..=REJECTION_CAP {
        for (c, &m) in candidate.iter_mut().zip(mean) {
            *c = m + scale * standard_normal(rng);
        }
        if candidate.iter().all(|&v| v >= lo && v <= hi) {
            out.extend_from_slice(&candidate);
            return Ok(());
        }
        if attempt == REJECTION_CAP {
            break;
        }
    }
    Err(MeasureError::RejectionStalled { attempts: REJECTION_CAP })
}

/// Box-Muller transform. Two uniforms per normal; the spare is discarded to
/// keep stream consumption independent of call pattern.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1], keeps ln finite
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Push the residual g - f through the measure: the 1-d empirical measure
/// whose atoms are (g - f)(x_i) with the same uniform weights. Its p-th
/// absolute moment is exactly the discrete p-loss of g against f on the cloud.
pub fn pushforward_residual(
    g: impl Fn(&[f64]) -> f64,
    f: impl Fn(&[f64]) -> f64,
    mu: &EmpiricalMeasure,
) -> Result<EmpiricalMeasure, MeasureError> {
    let atoms: Vec<f64> = mu.cloud().points().map(|x| g(x) - f(x)).collect();
    Ok(EmpiricalMeasure::new(PointCloud::from_flat(1, atoms)?))
}
