//! Small fully-connected networks with exact reverse-mode parameter gradients.
//!
//! A network is described by an [`MlpSpec`] and its parameters live in a flat
//! [`ParamVector`]. Layer `l` occupies a contiguous block holding its weight
//! matrix (`out x in`, row-major) followed by its bias vector. A spec without
//! hidden layers is the linear model `g(x) = w.x + b`, whose flat layout is
//! `(w_1, ..., w_d, b)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseMatrix;
use crate::rng::RngStream;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const FLEXIBLE_HIDDEN: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidEpsilon(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

impl MlpSpec {
    pub fn linear(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_sizes: Vec::new(),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// One hidden layer of 50 leaky-ReLU units.
    pub fn flexible(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_sizes: vec![FLEXIBLE_HIDDEN],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    pub fn is_linear(&self) -> bool {
        self.hidden_sizes.is_empty()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 {
            return Err(NnError::InvalidSpec("input_dim must be positive".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(NnError::InvalidSpec("hidden layer of width 0".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(NnError::InvalidSpec(format!(
                "leaky slope {} outside (0, 1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_sizes {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims.push((fan_in, self.output_dim()));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init_params(&self, rng: &mut RngStream) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out) in self.layer_dims() {
            let bound = (1.0 / fan_in as f64).sqrt();
            for _ in 0..(fan_in * fan_out + fan_out) {
                values.push(rng.uniform_range(-bound, bound));
            }
        }
        ParamVector(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn unflatten(&self, spec: &MlpSpec) -> Result<Vec<LayerParams>, NnError> {
        check_len(spec, &self.0)?;
        let mut offset = 0;
        let mut layers = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            let w = self.0[offset..offset + fan_in * fan_out].to_vec();
            offset += fan_in * fan_out;
            let bias = self.0[offset..offset + fan_out].to_vec();
            offset += fan_out;
            let weights = DenseMatrix::from_vec(fan_out, fan_in, w).map_err(|e| NnError::InvalidSpec(e.to_string()))?;
            layers.push(LayerParams { weights, bias });
        }
        Ok(layers)
    }

    pub fn flatten(layers: &[LayerParams]) -> Self {
        let mut values = Vec::new();
        for layer in layers {
            values.extend_from_slice(layer.weights.as_slice());
            values.extend_from_slice(&layer.bias);
        }
        Self(values)
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn check_len(spec: &MlpSpec, params: &[f64]) -> Result<(), NnError> {
    let expected = spec.param_count();
    if params.len() != expected {
        return Err(NnError::DimensionMismatch {
            what: "parameter vector",
            expected,
            actual: params.len(),
        });
    }
    Ok(())
}

/// Scratch buffers holding the activations of the last forward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    // acts[0] is the input; acts[l + 1] is the output of layer l (after activation
    // for hidden layers). pre[l] is the pre-activation of hidden layer l.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    dims: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

impl Workspace {
    pub fn new(spec: &MlpSpec) -> Self {
        let dims = spec.layer_dims();
        let mut acts = vec![vec![0.0; spec.input_dim]];
        acts.extend(dims.iter().map(|&(_, o)| vec![0.0; o]));
        let widest = dims.iter().map(|&(i, o)| i.max(o)).max().unwrap_or(1);
        let mut offsets = Vec::with_capacity(dims.len());
        let mut offset = 0;
        for &(i, o) in &dims {
            offsets.push(offset);
            offset += i * o + o;
        }
        Self {
            acts,
            pre: spec.hidden_sizes.iter().map(|&h| vec![0.0; h]).collect(),
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
            dims,
            offsets,
        }
    }
}

/// A borrowed view pairing a spec with a parameter slice of the right length.
#[derive(Debug, Clone, Copy)]
pub struct Mlp<'a> {
    spec: &'a MlpSpec,
    params: &'a [f64],
}

impl<'a> Mlp<'a> {
    pub fn new(spec: &'a MlpSpec, params: &'a [f64]) -> Result<Self, NnError> {
        check_len(spec, params)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        self.spec
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch {
                what: "input vector",
                expected: self.spec.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass that records activations in `ws` for a later backward pass.
    ///
    /// Panics if `x` has the wrong length; use [`mlp_forward`] for checked calls.
    pub fn forward(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        let slope = self.spec.leaky_slope;
        let n_layers = self.spec.hidden_sizes.len() + 1;
        ws.acts[0].copy_from_slice(x);
        for l in 0..n_layers {
            let (fan_in, fan_out) = ws.dims[l];
            let offset = ws.offsets[l];
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let mut z = b[j];
                for (wk, xk) in row.iter().zip(input.iter()) {
                    z += wk * xk;
                }
                if l + 1 < n_layers {
                    ws.pre[l][j] = z;
                    out[j] = if z > 0.0 { z } else { slope * z };
                } else {
                    out[j] = z;
                }
            }
        }
        ws.acts[n_layers][0]
    }

    /// Adds `upstream * grad_theta g(x)` into `grad`, using activations from the
    /// preceding [`Mlp::forward`] on the same workspace.
    pub fn backward_accumulate(&self, ws: &mut Workspace, upstream: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        if upstream == 0.0 {
            return;
        }
        let slope = self.spec.leaky_slope;
        let n_layers = ws.dims.len();
        ws.delta.clear();
        ws.delta.push(upstream);
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = ws.dims[l];
            let base = ws.offsets[l];
            let input = &ws.acts[l];
            for j in 0..fan_out {
                let d = ws.delta[j];
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad[base + j * fan_in..base + (j + 1) * fan_in];
                for (g, a) in gw.iter_mut().zip(input.iter()) {
                    *g += d * a;
                }
                grad[base + fan_in * fan_out + j] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[base..base + fan_in * fan_out];
            ws.delta_prev.clear();
            ws.delta_prev.resize(fan_in, 0.0);
            for j in 0..fan_out {
                let d = ws.delta[j];
                if d == 0.0 {
                    continue;
                }
                for (dp, wk) in ws.delta_prev.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                    *dp += d * wk;
                }
            }
            for (dp, z) in ws.delta_prev.iter_mut().zip(&ws.pre[l - 1]) {
                if *z <= 0.0 {
                    *dp *= slope;
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }

    /// Checked single evaluation with its own scratch space.
    pub fn value(&self, x: &[f64]) -> Result<f64, NnError> {
        self.check_input(x)?;
        if self.spec.is_linear() {
            let d = self.spec.input_dim;
            let w = &self.params[..d];
            return Ok(w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.params[d]);
        }
        let mut ws = Workspace::new(self.spec);
        Ok(self.forward(x, &mut ws))
    }
}

pub fn mlp_forward(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Result<f64, NnError> {
    Mlp::new(spec, params.as_slice())?.value(x)
}

/// `upstream * grad_theta g_theta(x)` in the flat parameter layout.
pub fn mlp_backward(spec: &MlpSpec, params: &ParamVector, x: &[f64], upstream: f64) -> Result<ParamVector, NnError> {
    let net = Mlp::new(spec, params.as_slice())?;
    net.check_input(x)?;
    let mut ws = Workspace::new(spec);
    net.forward(x, &mut ws);
    let mut grad = vec![0.0; params.len()];
    net.backward_accumulate(&mut ws, upstream, &mut grad);
    Ok(ParamVector(grad))
}

/// Relative error with a small absolute floor in the denominator, so that
/// coordinates whose true derivative is ~0 are not judged on pure round-off.
pub fn relative_error(a: f64, b: f64) -> f64 {
    scaled_relative_error(a, b, 1e-6)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn scaled_relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Denominator floor for a whole gradient: `1e-3` of its largest entry, and
/// never below `1e-6`. Central differences cannot resolve entries far below
/// the gradient scale to relative precision.
pub fn gradient_floor(grad: &[f64]) -> f64 {
    let top = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (1e-3 * top).max(1e-6)
}

/// Worst coordinate-wise relative error, floored by [`gradient_floor`], between [`mlp_backward`] and central
/// differences with step `epsilon`.
pub fn grad_check(spec: &MlpSpec, params: &ParamVector, x: &[f64], epsilon: f64) -> Result<f64, NnError> {
    if !(epsilon > 0.0) {
        return Err(NnError::InvalidEpsilon(epsilon));
    }
    let analytic = mlp_backward(spec, params, x, 1.0)?;
    let floor = gradient_floor(&analytic.0);
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        let orig = probe.0[k];
        probe.0[k] = orig + epsilon;
        let up = mlp_forward(spec, &probe, x)?;
        probe.0[k] = orig - epsilon;
        let down = mlp_forward(spec, &probe, x)?;
        probe.0[k] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(scaled_relative_error(analytic.0[k], numeric, floor));
    }
    Ok(worst)
}

/// Worst coordinate-wise relative error, floored by [`gradient_floor`], between the gradient returned by
/// `objective` and central differences of its value.
pub fn objective_grad_check(mut objective: impl FnMut(&[f64]) -> (f64, Vec<f64>), at: &[f64], epsilon: f64) -> f64 {
    let (_, analytic) = objective(at);
    let floor = gradient_floor(&analytic);
    let mut probe = at.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..at.len() {
        probe[k] = at[k] + epsilon;
        let up = objective(&probe).0;
        probe[k] = at[k] - epsilon;
        let down = objective(&probe).0;
        probe[k] = at[k];
        worst = worst.max(scaled_relative_error(analytic[k], (up - down) / (2.0 * epsilon), floor));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straight-line reference forward pass over unflattened layers.
    fn reference_forward(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> f64 {
        let layers = params.unflatten(spec).unwrap();
        let mut a = x.to_vec();
        for (l, layer) in layers.iter().enumerate() {
            let mut z = layer.weights.matvec(&a);
            for (zi, bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            if l + 1 < layers.len() {
                for zi in &mut z {
                    if *zi < 0.0 {
                        *zi *= spec.leaky_slope;
                    }
                }
            }
            a = z;
        }
        a[0]
    }

    #[test]
    fn linear_forward_is_dot_product() {
        let spec = MlpSpec::linear(2);
        let p = ParamVector(vec![1.0, -1.0, 0.0]);
        assert_eq!(mlp_forward(&spec, &p, &[2.0, 3.0]).unwrap(), -1.0);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::flexible(2);
        let p = ParamVector::zeros(spec.param_count());
        assert_eq!(mlp_forward(&spec, &p, &[0.4, -9.0]).unwrap(), 0.0);
    }

    #[test]
    fn mlp_forward_matches_reference() {
        let spec = MlpSpec::flexible(2);
        let p = spec.init_params(&mut RngStream::new(11, "init"));
        let x = [0.3, -0.7];
        let got = mlp_forward(&spec, &p, &x).unwrap();
        let want = reference_forward(&spec, &p, &x);
        assert!((got - want).abs() <= 1e-14 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn linear_backward() {
        let spec = MlpSpec::linear(2);
        let p = ParamVector(vec![0.3, 0.1, -2.0]);
        let g = mlp_backward(&spec, &p, &[2.0, 3.0], 1.0).unwrap();
        assert_eq!(g.0, vec![2.0, 3.0, 1.0]);
        let z = mlp_backward(&MlpSpec::flexible(2), &ParamVector::zeros(201), &[1.0, 1.0], 0.0).unwrap();
        assert!(z.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_errors_name_the_offender() {
        let spec = MlpSpec::linear(2);
        let err = mlp_forward(&spec, &ParamVector(vec![1.0; 4]), &[1.0, 1.0]).unwrap_err();
        assert!(matches!(
            err,
            NnError::DimensionMismatch {
                what: "parameter vector",
                expected: 3,
                actual: 4
            }
        ));
        let err = mlp_forward(&spec, &ParamVector(vec![1.0; 3]), &[1.0]).unwrap_err();
        assert!(matches!(
            err,
            NnError::DimensionMismatch {
                what: "input vector",
                ..
            }
        ));
    }

    #[test]
    fn grad_check_linear_and_mlp() {
        let lin = MlpSpec::linear(2);
        let p = ParamVector(vec![0.5, -1.5, 0.25]);
        assert!(grad_check(&lin, &p, &[2.0, 3.0], 1e-5).unwrap() <= 1e-10);
        let spec = MlpSpec::flexible(2);
        let p = spec.init_params(&mut RngStream::new(5, "init"));
        assert!(grad_check(&spec, &p, &[0.3, -0.7], 1e-5).unwrap() <= 1e-5);
        assert!(matches!(
            grad_check(&spec, &p, &[0.3, -0.7], 0.0),
            Err(NnError::InvalidEpsilon(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences_at_many_points() {
        let mut rng = RngStream::new(2024, "gradpoints");
        for spec in [
            MlpSpec::linear(2),
            MlpSpec::flexible(2),
            MlpSpec {
                input_dim: 3,
                hidden_sizes: vec![7, 4],
                leaky_slope: 0.01,
            },
        ] {
            for _ in 0..100 {
                let p = spec.init_params(&mut rng);
                let x = rng.normal_vec(spec.input_dim);
                let err = grad_check(&spec, &p, &x, 1e-5).unwrap();
                assert!(err <= 1e-5, "spec {:?}: {err}", spec.hidden_sizes);
            }
        }
    }

    #[test]
    fn output_layer_homogeneity() {
        let spec = MlpSpec::flexible(2);
        let mut p = spec.init_params(&mut RngStream::new(9, "init"));
        let x = [0.8, 0.1];
        let base = mlp_forward(&spec, &p, &x).unwrap();
        let n = p.len();
        // last layer: 50 weights + 1 bias
        for v in &mut p.0[n - 51..] {
            *v *= 3.0;
        }
        let scaled = mlp_forward(&spec, &p, &x).unwrap();
        assert!((scaled - 3.0 * base).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trips(seed in any::<u64>(), h in 1usize..8, d in 1usize..5) {
            let spec = MlpSpec { input_dim: d, hidden_sizes: vec![h], leaky_slope: 0.01 };
            let p = spec.init_params(&mut RngStream::new(seed, "rt"));
            let back = ParamVector::flatten(&p.unflatten(&spec).unwrap());
            prop_assert_eq!(back, p);
        }
    }
}
