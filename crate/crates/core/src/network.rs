//! Small fully-connected networks: evaluation, gradients, Lipschitz
//! brackets, and a flat on-disk format. Scalar output throughout; the last
//! affine layer is never followed by an activation.

use crate::measures::{sample_points, MeasureError, SamplingDistribution};
use crate::seed::Seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("input has dimension {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter buffer has {got} scalars, spec requires {expected}")]
    ParamCountMismatch { expected: usize, got: usize },
    #[error("activation Lipschitz factor must be >= 0, got {value}")]
    InvalidLipActivation { value: f64 },
    #[error("power iteration failed to settle within {iterations} iterations; best iterate {best}")]
    PowerIterationStalled { iterations: usize, best: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file corrupt: {reason}")]
    BadModelFile { reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation z. For relu the kink at 0 takes the
    /// subgradient 0, consistent with sign(0) = 0 elsewhere.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    /// Global Lipschitz constant of the scalar activation.
    pub fn lipschitz(self) -> f64 {
        1.0
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, NetworkError> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            t => Err(NetworkError::BadModelFile { reason: format!("unknown activation tag {t}") }),
        }
    }
}

/// Architecture: layer dims d_1, ..., d_{L+1} with d_{L+1} = 1, plus the
/// activation used between affine layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MlpSpecRaw", into = "MlpSpecRaw")]
pub struct MlpSpec {
    layer_dims: Vec<usize>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpSpecRaw {
    layer_dims: Vec<usize>,
    activation: Activation,
}

impl TryFrom<MlpSpecRaw> for MlpSpec {
    type Error = NetworkError;
    fn try_from(raw: MlpSpecRaw) -> Result<Self, NetworkError> {
        MlpSpec::new(raw.layer_dims, raw.activation)
    }
}

impl From<MlpSpec> for MlpSpecRaw {
    fn from(spec: MlpSpec) -> Self {
        MlpSpecRaw { layer_dims: spec.layer_dims, activation: spec.activation }
    }
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self, NetworkError> {
        if layer_dims.len() < 2 {
            return Err(NetworkError::InvalidSpec {
                reason: format!("need at least input and output dims, got {layer_dims:?}"),
            });
        }
        if layer_dims.contains(&0) {
            return Err(NetworkError::InvalidSpec {
                reason: format!("all layer dims must be positive, got {layer_dims:?}"),
            });
        }
        if *layer_dims.last().unwrap() != 1 {
            return Err(NetworkError::InvalidSpec {
                reason: format!("output dim must be 1, got {layer_dims:?}"),
            });
        }
        Ok(MlpSpec { layer_dims, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Number of affine layers L.
    pub fn depth(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }
}

/// Σ_k d_{k+1}·(d_k + 1): every affine layer contributes a weight matrix and
/// a bias vector.
pub fn param_count(spec: &MlpSpec) -> usize {
    spec.layer_dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

/// Weights and biases for an [`MlpSpec`]; `weights[k]` is row-major
/// d_{k+1} x d_k.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let dims = &spec.layer_dims;
        let weights = dims.windows(2).map(|w| vec![0.0; w[1] * w[0]]).collect();
        let biases = dims.windows(2).map(|w| vec![0.0; w[1]]).collect();
        MlpParams { spec: spec.clone(), weights, biases }
    }

    /// Scaled uniform init: weights in +-sqrt(6/(d_k + d_{k+1})), biases 0.
    pub fn init(spec: &MlpSpec, rng: &mut impl Rng) -> Self {
        let mut params = MlpParams::zeros(spec);
        for (k, w) in params.weights.iter_mut().enumerate() {
            let (d_in, d_out) = (spec.layer_dims[k], spec.layer_dims[k + 1]);
            let bound = (6.0 / (d_in + d_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = bound * (2.0 * rng.gen::<f64>() - 1.0);
            }
        }
        params
    }

    /// The network that outputs `c` everywhere: zero weights, final bias c.
    pub fn constant_output(spec: &MlpSpec, c: f64) -> Self {
        let mut params = MlpParams::zeros(spec);
        let last = params.biases.last_mut().unwrap();
        last[0] = c;
        params
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub(crate) fn layers_mut(&mut self) -> (&mut [Vec<f64>], &mut [Vec<f64>]) {
        (&mut self.weights, &mut self.biases)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, NetworkError> {
        if x.len() != self.spec.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.spec.input_dim(),
                got: x.len(),
            });
        }
        let mut scratch = Scratch::for_spec(&self.spec);
        Ok(self.forward_into(x, &mut scratch))
    }

    /// Forward pass that records pre-activations and activations for a
    /// subsequent backward pass. Assumes x has the right dimension.
    pub(crate) fn forward_into(&self, x: &[f64], s: &mut Scratch) -> f64 {
        let depth = self.spec.depth();
        let act = self.spec.activation;
        s.acts[0].copy_from_slice(x);
        for k in 0..depth {
            let d_in = self.spec.layer_dims[k];
            let d_out = self.spec.layer_dims[k + 1];
            let w = &self.weights[k];
            let b = &self.biases[k];
            let (head, tail) = s.acts.split_at_mut(k + 1);
            let input = &head[k];
            let output = &mut tail[0];
            let pre = &mut s.pres[k];
            let last = k + 1 == depth;
            for r in 0..d_out {
                let row = &w[r * d_in..(r + 1) * d_in];
                let mut z = b[r];
                for (wv, xv) in row.iter().zip(input.iter()) {
                    z += wv * xv;
                }
                pre[r] = z;
                output[r] = if last { z } else { act.apply(z) };
            }
        }
        s.acts[depth][0]
    }

    /// Runs forward, then adds `coeff` times the gradient of the output with
    /// respect to every parameter into `grads`. Returns the output.
    pub(crate) fn accumulate_output_gradient(
        &self,
        x: &[f64],
        coeff: f64,
        grads: &mut Gradients,
        s: &mut Scratch,
    ) -> f64 {
        let out = self.forward_into(x, s);
        self.backward_from(coeff, grads, s);
        out
    }

    /// Backward pass reusing the activations recorded by the immediately
    /// preceding `forward_into` on the same scratch. Adds `coeff` times the
    /// output gradient into `grads`.
    pub(crate) fn backward_from(&self, coeff: f64, grads: &mut Gradients, s: &mut Scratch) {
        let depth = self.spec.depth();
        let act = self.spec.activation;
        s.delta.clear();
        s.delta.push(coeff);
        for k in (0..depth).rev() {
            let d_in = self.spec.layer_dims[k];
            let d_out = self.spec.layer_dims[k + 1];
            let dw = &mut grads.dw[k];
            let db = &mut grads.db[k];
            for r in 0..d_out {
                let dr = s.delta[r];
                db[r] += dr;
                let row = &mut dw[r * d_in..(r + 1) * d_in];
                for (g, a) in row.iter_mut().zip(&s.acts[k]) {
                    *g += dr * a;
                }
            }
            if k > 0 {
                s.delta_next.clear();
                s.delta_next.resize(d_in, 0.0);
                let w = &self.weights[k];
                for r in 0..d_out {
                    let dr = s.delta[r];
                    let row = &w[r * d_in..(r + 1) * d_in];
                    for (nd, wv) in s.delta_next.iter_mut().zip(row) {
                        *nd += wv * dr;
                    }
                }
                for (nd, &z) in s.delta_next.iter_mut().zip(&s.pres[k - 1]) {
                    *nd *= act.derivative(z);
                }
                std::mem::swap(&mut s.delta, &mut s.delta_next);
            }
        }
    }

    /// Gradient of the scalar output with respect to all parameters.
    pub fn output_gradient(&self, x: &[f64]) -> Result<Gradients, NetworkError> {
        if x.len() != self.spec.input_dim() {
            return Err(NetworkError::DimensionMismatch {
                expected: self.spec.input_dim(),
                got: x.len(),
            });
        }
        let mut grads = Gradients::zeros(&self.spec);
        let mut s = Scratch::for_spec(&self.spec);
        self.accumulate_output_gradient(x, 1.0, &mut grads, &mut s);
        Ok(grads)
    }

    /// Flat parameter vector: W_1 row-major, b_1, W_2, b_2, ...
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.spec.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        flat
    }

    pub fn from_flat(spec: &MlpSpec, flat: &[f64]) -> Result<Self, NetworkError> {
        if flat.len() != spec.param_count() {
            return Err(NetworkError::ParamCountMismatch {
                expected: spec.param_count(),
                got: flat.len(),
            });
        }
        let mut params = MlpParams::zeros(spec);
        let mut offset = 0;
        for (w, b) in params.weights.iter_mut().zip(&mut params.biases) {
            let wn = w.len();
            w.copy_from_slice(&flat[offset..offset + wn]);
            offset += wn;
            let bn = b.len();
            b.copy_from_slice(&flat[offset..offset + bn]);
            offset += bn;
        }
        Ok(params)
    }

    /// Binary format: magic `MLP1`, activation tag u8, layer count u32 LE,
    /// layer dims u32 LE, then the flat parameter vector as f64 LE.
    pub fn write_to(&self, mut out: impl Write) -> Result<(), NetworkError> {
        out.write_all(b"MLP1")?;
        out.write_all(&[self.spec.activation.tag()])?;
        out.write_all(&(self.spec.layer_dims.len() as u32).to_le_bytes())?;
        for &d in &self.spec.layer_dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in self.to_flat() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self, NetworkError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"MLP1" {
            return Err(NetworkError::BadModelFile { reason: format!("bad magic {magic:?}") });
        }
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        let activation = Activation::from_tag(tag[0])?;
        let mut u32buf = [0u8; 4];
        input.read_exact(&mut u32buf)?;
        let n_dims = u32::from_le_bytes(u32buf) as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(NetworkError::BadModelFile {
                reason: format!("implausible layer count {n_dims}"),
            });
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            input.read_exact(&mut u32buf)?;
            dims.push(u32::from_le_bytes(u32buf) as usize);
        }
        let spec = MlpSpec::new(dims, activation)
            .map_err(|e| NetworkError::BadModelFile { reason: e.to_string() })?;
        let mut flat = vec![0.0f64; spec.param_count()];
        let mut f64buf = [0u8; 8];
        for v in flat.iter_mut() {
            input.read_exact(&mut f64buf)?;
            *v = f64::from_le_bytes(f64buf);
        }
        // Trailing bytes mean the file does not match its own header.
        if input.read(&mut [0u8; 1])? != 0 {
            return Err(NetworkError::BadModelFile { reason: "trailing bytes".into() });
        }
        MlpParams::from_flat(&spec, &flat)
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let file = std::fs::File::open(path)?;
        MlpParams::read_from(std::io::BufReader::new(file))
    }
}

/// Per-layer gradient accumulator, same shapes as [`MlpParams`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) dw: Vec<Vec<f64>>,
    pub(crate) db: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let dims = spec.layer_dims();
        Gradients {
            dw: dims.windows(2).map(|w| vec![0.0; w[1] * w[0]]).collect(),
            db: dims.windows(2).map(|w| vec![0.0; w[1]]).collect(),
        }
    }

    pub fn reset(&mut self) {
        for w in &mut self.dw {
            w.fill(0.0);
        }
        for b in &mut self.db {
            b.fill(0.0);
        }
    }

    /// Flat view in [`MlpParams::to_flat`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (w, b) in self.dw.iter().zip(&self.db) {
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        flat
    }
}

/// Reusable forward/backward buffers.
pub(crate) struct Scratch {
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Scratch {
    pub(crate) fn for_spec(spec: &MlpSpec) -> Self {
        let dims = spec.layer_dims();
        Scratch {
            acts: dims.iter().map(|&d| vec![0.0; d]).collect(),
            pres: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
            delta: Vec::with_capacity(dims.iter().copied().max().unwrap_or(1)),
            delta_next: Vec::new(),
        }
    }
}

const POWER_ITER_CAP: usize = 10_000;

/// Largest singular value of a rows x cols matrix (row-major) by power
/// iteration on AᵀA, relative tolerance 1e-8. Vector-shaped matrices are
/// handled exactly (their norm is the Euclidean norm of the entries).
pub fn spectral_norm(rows: usize, cols: usize, a: &[f64]) -> Result<f64, NetworkError> {
    debug_assert_eq!(a.len(), rows * cols);
    let frob_sq: f64 = a.iter().map(|v| v * v).sum();
    if frob_sq == 0.0 {
        return Ok(0.0);
    }
    if rows == 1 || cols == 1 {
        return Ok(frob_sq.sqrt());
    }
    // Deterministic, slightly skewed start vector; exact orthogonality to
    // the top singular vector is not a realistic risk with the skew.
    let mut v: Vec<f64> = (0..cols).map(|j| 1.0 + (j as f64) * 1e-3).collect();
    normalize(&mut v);
    let mut av = vec![0.0; rows];
    let mut atav = vec![0.0; cols];
    let mut sigma_prev = 0.0;
    for iter in 0..POWER_ITER_CAP {
        for (r, out) in av.iter_mut().enumerate() {
            let row = &a[r * cols..(r + 1) * cols];
            *out = row.iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let sigma = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        atav.fill(0.0);
        for (r, &avr) in av.iter().enumerate() {
            let row = &a[r * cols..(r + 1) * cols];
            for (o, x) in atav.iter_mut().zip(row) {
                *o += x * avr;
            }
        }
        if sigma > 0.0 && (sigma - sigma_prev).abs() <= 1e-8 * sigma && iter > 0 {
            return Ok(sigma);
        }
        sigma_prev = sigma;
        v.copy_from_slice(&atav);
        if !normalize(&mut v) {
            // A v landed in the null space of Aᵀ; the skewed start makes
            // this practically unreachable, but restart defensively.
            v = (0..cols).map(|j| 1.0 + (j as f64 + iter as f64) * 2e-3).collect();
            normalize(&mut v);
        }
    }
    Err(NetworkError::PowerIterationStalled { iterations: POWER_ITER_CAP, best: sigma_prev })
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return false;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

/// Certified Lipschitz upper bound: Π_k ‖W_k‖₂ x lip_activation^(L−1).
pub fn lipschitz_upper(params: &MlpParams, lip_activation: f64) -> Result<f64, NetworkError> {
    if !(lip_activation.is_finite() && lip_activation >= 0.0) {
        return Err(NetworkError::InvalidLipActivation { value: lip_activation });
    }
    let spec = params.spec();
    let mut product = 1.0;
    for k in 0..spec.depth() {
        let rows = spec.layer_dims()[k + 1];
        let cols = spec.layer_dims()[k];
        product *= spectral_norm(rows, cols, params.weight(k))?;
    }
    Ok(product * lip_activation.powi(spec.depth() as i32 - 1))
}

/// Empirical Lipschitz lower bound: max difference quotient over sampled
/// pairs. Pairs closer than 1e-12 are re-drawn so the quotient stays finite.
pub fn lipschitz_lower_empirical(
    params: &MlpParams,
    dist: &SamplingDistribution,
    pairs: usize,
    seed: Seed,
) -> Result<f64, NetworkError> {
    if dist.dim() != params.spec().input_dim() {
        return Err(NetworkError::DimensionMismatch {
            expected: params.spec().input_dim(),
            got: dist.dim(),
        });
    }
    let pairs = pairs.max(1);
    let mut best: f64 = 0.0;
    let mut scratch = Scratch::for_spec(params.spec());
    // Drawing 2 points per pair through sample_points keeps the stream
    // layout identical to every other sampler in the crate.
    let mut drawn = 0usize;
    let mut attempt = 0u64;
    while drawn < pairs {
        let cloud = sample_points(dist, 2, seed.child(attempt))?;
        attempt += 1;
        let (x, y) = (cloud.point(0), cloud.point(1));
        let gap = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if gap < 1e-12 {
            continue;
        }
        drawn += 1;
        let fx = params.forward_into(x, &mut scratch);
        let fy = params.forward_into(y, &mut scratch);
        best = best.max((fx - fy).abs() / gap);
    }
    Ok(best)
}

/// Bracket on the network's Lipschitz constant: `lower <= Lip(u) <= upper`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LipschitzEstimate {
    pub upper: f64,
    pub lower: f64,
    pub pair_count: usize,
}

pub fn lipschitz_estimate(
    params: &MlpParams,
    dist: &SamplingDistribution,
    pairs: usize,
    seed: Seed,
) -> Result<LipschitzEstimate, NetworkError> {
    Ok(LipschitzEstimate {
        upper: lipschitz_upper(params, params.spec().activation().lipschitz())?,
        lower: lipschitz_lower_empirical(params, dist, pairs, seed)?,
        pair_count: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;

    fn spec(dims: &[usize], act: Activation) -> MlpSpec {
        MlpSpec::new(dims.to_vec(), act).unwrap()
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(param_count(&spec(&[2, 8, 1], Activation::Relu)), 33);
        assert_eq!(param_count(&spec(&[1, 1, 1], Activation::Relu)), 4);
        for d in 1..6 {
            assert_eq!(param_count(&spec(&[d, 1], Activation::Relu)), d + 1);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![2], Activation::Relu).is_err());
        assert!(MlpSpec::new(vec![2, 0, 1], Activation::Relu).is_err());
        assert!(MlpSpec::new(vec![2, 4, 2], Activation::Relu).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&spec(&[3, 5, 1], Activation::Relu));
        assert_eq!(p.forward(&[0.3, -1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn relu_identity_chain() {
        let s = spec(&[1, 1, 1], Activation::Relu);
        let p = MlpParams::from_flat(&s, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.forward(&[0.7]).unwrap(), 0.7);
        assert_eq!(p.forward(&[-0.7]).unwrap(), 0.0);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let p = MlpParams::zeros(&spec(&[2, 3, 1], Activation::Tanh));
        assert!(matches!(
            p.forward(&[1.0]),
            Err(NetworkError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn constant_output_network() {
        let p = MlpParams::constant_output(&spec(&[2, 4, 1], Activation::Relu), 2.5);
        assert_eq!(p.forward(&[0.1, 0.9]).unwrap(), 2.5);
        assert_eq!(p.forward(&[-3.0, 7.0]).unwrap(), 2.5);
    }

    fn finite_difference_gradient(params: &MlpParams, x: &[f64]) -> Vec<f64> {
        let spec = params.spec().clone();
        let flat = params.to_flat();
        let h = 1e-5;
        (0..flat.len())
            .map(|i| {
                let mut plus = flat.clone();
                plus[i] += h;
                let mut minus = flat.clone();
                minus[i] -= h;
                let up = MlpParams::from_flat(&spec, &plus).unwrap().forward(x).unwrap();
                let down = MlpParams::from_flat(&spec, &minus).unwrap().forward(x).unwrap();
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn backprop_matches_finite_differences_tanh() {
        let s = spec(&[2, 6, 4, 1], Activation::Tanh);
        for k in 0..20u64 {
            let root = Seed::new(4200 + k);
            let params = MlpParams::init(&s, &mut root.rng());
            let mut rng = root.child(1).rng();
            let x = [rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0];
            let bp = params.output_gradient(&x).unwrap().to_flat();
            let fd = finite_difference_gradient(&params, &x);
            let diff: f64 =
                bp.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let norm: f64 = bp.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff <= 1e-6 * norm.max(1e-9), "k={k}: rel err {}", diff / norm);
        }
    }

    #[test]
    fn backprop_matches_finite_differences_relu_away_from_kinks() {
        // Fixed weights whose pre-activations at the probe points sit far
        // from 0, so the finite-difference step cannot cross a kink.
        let s = spec(&[1, 2, 1], Activation::Relu);
        let params = MlpParams::from_flat(&s, &[1.0, -1.0, -0.5, 0.5, 1.0, 1.0, 0.25]).unwrap();
        for &x in &[2.0, -2.0, 3.5, -0.9] {
            let bp = params.output_gradient(&[x]).unwrap().to_flat();
            let fd = finite_difference_gradient(&params, &[x]);
            for (a, b) in bp.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn final_layer_homogeneity() {
        // With zero final bias, scaling the last weight matrix scales the
        // output linearly.
        let s = spec(&[2, 5, 1], Activation::Relu);
        for k in 0..5u64 {
            let mut params = MlpParams::init(&s, &mut Seed::new(77 + k).rng());
            {
                let (w, b) = params.layers_mut();
                b[1][0] = 0.0;
                let _ = &w;
            }
            let x = [0.4, -0.3];
            let base = params.forward(&x).unwrap();
            let lambda = 1.7;
            {
                let (w, _) = params.layers_mut();
                for v in w[1].iter_mut() {
                    *v *= lambda;
                }
            }
            let scaled = params.forward(&x).unwrap();
            assert!(
                (scaled - lambda * base).abs() <= 1e-12 * (1.0 + base.abs()),
                "{scaled} vs {}",
                lambda * base
            );
        }
    }

    #[test]
    fn spectral_norm_known_matrices() {
        // Vector shapes are Euclidean norms.
        assert_eq!(spectral_norm(1, 1, &[3.0]).unwrap(), 3.0);
        assert_eq!(spectral_norm(1, 2, &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(spectral_norm(3, 1, &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        // Diagonal matrix: norm is the largest |entry|.
        let d = [2.0, 0.0, 0.0, -7.0];
        assert!((spectral_norm(2, 2, &d).unwrap() - 7.0).abs() < 1e-7);
        // Rank-1: [[1,2],[2,4]] has singular value 5.
        let r1 = [1.0, 2.0, 2.0, 4.0];
        assert!((spectral_norm(2, 2, &r1).unwrap() - 5.0).abs() < 1e-7);
    }

    #[test]
    fn lipschitz_upper_examples() {
        let single = MlpParams::from_flat(&spec(&[1, 1], Activation::Relu), &[3.0, 0.0]).unwrap();
        assert_eq!(lipschitz_upper(&single, 1.0).unwrap(), 3.0);
        let chain =
            MlpParams::from_flat(&spec(&[1, 1, 1], Activation::Relu), &[2.0, 0.0, 5.0, 0.0])
                .unwrap();
        assert_eq!(lipschitz_upper(&chain, 1.0).unwrap(), 10.0);
        assert!(matches!(
            lipschitz_upper(&chain, -1.0),
            Err(NetworkError::InvalidLipActivation { .. })
        ));
    }

    #[test]
    fn lipschitz_lower_examples() {
        let dist = SamplingDistribution::UniformCube { dim: 1, side: 1.0 };
        let s1 = spec(&[1, 4, 1], Activation::Relu);
        let zero = MlpParams::zeros(&s1);
        assert_eq!(lipschitz_lower_empirical(&zero, &dist, 16, Seed::new(1)).unwrap(), 0.0);

        let affine = MlpParams::from_flat(&spec(&[1, 1], Activation::Relu), &[3.0, 0.1]).unwrap();
        let low = lipschitz_lower_empirical(&affine, &dist, 8, Seed::new(2)).unwrap();
        assert!((low - 3.0).abs() < 1e-9, "affine quotient {low}");
    }

    #[test]
    fn lower_bounded_by_upper_on_random_nets() {
        let dist = SamplingDistribution::UniformCube { dim: 2, side: 1.0 };
        for k in 0..10u64 {
            let s = spec(&[2, 8, 1], Activation::Relu);
            let params = MlpParams::init(&s, &mut Seed::new(9000 + k).rng());
            let est = lipschitz_estimate(&params, &dist, 10_000, Seed::new(9100 + k)).unwrap();
            assert!(
                est.lower <= est.upper + 1e-12,
                "k={k}: lower {} > upper {}",
                est.lower,
                est.upper
            );
            assert!(est.lower >= 0.0);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let s = spec(&[2, 3, 1], Activation::Tanh);
        let params = MlpParams::init(&s, &mut Seed::new(5).rng());
        let mut buf = Vec::new();
        params.write_to(&mut buf).unwrap();
        let back = MlpParams::read_from(buf.as_slice()).unwrap();
        assert_eq!(params, back);
        // Same params, same bytes.
        let mut buf2 = Vec::new();
        params.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn model_file_rejects_corruption() {
        let s = spec(&[1, 2, 1], Activation::Relu);
        let params = MlpParams::zeros(&s);
        let mut buf = Vec::new();
        params.write_to(&mut buf).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            MlpParams::read_from(bad_magic.as_slice()),
            Err(NetworkError::BadModelFile { .. })
        ));
        let truncated = &buf[..buf.len() - 3];
        assert!(MlpParams::read_from(truncated).is_err());
        let mut extended = buf.clone();
        extended.push(0);
        assert!(matches!(
            MlpParams::read_from(extended.as_slice()),
            Err(NetworkError::BadModelFile { .. })
        ));
    }

    #[test]
    fn serde_spec_round_trip() {
        let s = spec(&[2, 4, 1], Activation::Relu);
        let json = serde_json::to_string(&s).unwrap();
        let back: MlpSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
        assert!(serde_json::from_str::<MlpSpec>(
            r#"{"layer_dims": [2, 4, 2], "activation": "relu"}"#
        )
        .is_err());
    }
}
