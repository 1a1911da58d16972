//! Minimal dense neural-network kernel.
//!
//! A multilayer perceptron over `f64` with exact reverse-mode gradients, a
//! central-difference gradient oracle, and a bias-corrected adaptive-moment
//! optimizer. No external ML dependency; everything the predictor needs and
//! nothing more.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One dense layer: `out = act(weight . input + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(out_dim, in_dim)` weight matrix.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Parameters of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Gradients shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Intermediate values of a forward pass, needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (post-activation of the previous layer).
    inputs: Vec<Array1<f64>>,
    /// Pre-activation of each layer.
    pre_activations: Vec<Array1<f64>>,
    /// Layer shapes, used to detect stale caches.
    signature: Vec<(usize, usize)>,
}

impl MlpParams {
    /// Build a seeded MLP with tanh hidden layers and a linear output
    /// layer. Weights are uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::usage("mlp needs at least input and output dims"));
        }
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (idx, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight =
                Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-scale..scale));
            let activation = if idx + 2 == dims.len() { Activation::Linear } else { Activation::Tanh };
            layers.push(Layer { weight, bias: Array1::zeros(fan_out), activation });
        }
        Ok(MlpParams { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.ncols())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weight.nrows() != layer.bias.len() {
                return Err(Error::usage(format!("layer {i}: weight rows != bias len")));
            }
            if i > 0 && layer.weight.ncols() != self.layers[i - 1].weight.nrows() {
                return Err(Error::usage(format!("layer {i}: input dim mismatch")));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(())
    }

    fn signature(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.weight.nrows(), l.weight.ncols())).collect()
    }

    /// Total parameter count.
    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Flatten all parameters into one vector (weights row-major, then
    /// bias, layer by layer).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    /// Overwrite parameters from a flat vector produced by [`flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::usage("assign_flat: length mismatch"));
        }
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = flat[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[k];
                k += 1;
            }
        }
        Ok(())
    }
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        MlpGrads {
            layers: p
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.raw_dim())))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    /// Accumulate `other` scaled by `c`.
    pub fn add_scaled(&mut self, other: &MlpGrads, c: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.scaled_add(c, ow);
            b.scaled_add(c, ob);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * c);
            b.mapv_inplace(|v| v * c);
        }
    }
}

/// Forward pass; the cache feeds [`mlp_backward`].
pub fn mlp_forward(p: &MlpParams, input: &Array1<f64>) -> Result<(Array1<f64>, ForwardCache)> {
    if input.len() != p.input_dim() {
        return Err(Error::usage(format!(
            "mlp_forward: input len {} != expected {}",
            input.len(),
            p.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(p.layers.len());
    let mut pre_activations = Vec::with_capacity(p.layers.len());
    let mut a = input.clone();
    for layer in &p.layers {
        let z = layer.weight.dot(&a) + &layer.bias;
        inputs.push(a);
        a = z.mapv(|v| layer.activation.apply(v));
        pre_activations.push(z);
    }
    let cache = ForwardCache { inputs, pre_activations, signature: p.signature() };
    Ok((a, cache))
}

/// Exact reverse-mode gradients for the scalar loss whose gradient with
/// respect to the network output is `output_grad`. Returns parameter
/// gradients and the gradient with respect to the input.
pub fn mlp_backward(
    p: &MlpParams,
    cache: &ForwardCache,
    output_grad: &Array1<f64>,
) -> Result<(MlpGrads, Array1<f64>)> {
    if cache.signature != p.signature() {
        return Err(Error::usage("mlp_backward: cache does not match parameters"));
    }
    if output_grad.len() != p.output_dim() {
        return Err(Error::usage("mlp_backward: output_grad dim mismatch"));
    }
    let mut grads = MlpGrads::zeros_like(p);
    let mut upstream = output_grad.clone();
    for (idx, layer) in p.layers.iter().enumerate().rev() {
        let z = &cache.pre_activations[idx];
        let dz: Array1<f64> = upstream
            .iter()
            .zip(z.iter())
            .map(|(g, z)| g * layer.activation.derivative(*z))
            .collect();
        let a_in = &cache.inputs[idx];
        // dW = dz (outer) a_in
        let (gw, gb) = &mut grads.layers[idx];
        for (row, dz_i) in dz.iter().enumerate() {
            for (col, a_j) in a_in.iter().enumerate() {
                gw[(row, col)] = dz_i * a_j;
            }
            gb[row] = *dz_i;
        }
        upstream = layer.weight.t().dot(&dz);
    }
    Ok((grads, upstream))
}

/// Central-difference gradient oracle: `(f(p + h e) - f(p - h e)) / 2h`
/// per parameter. Kept independent of the analytic backward pass.
pub fn finite_diff_grad<F>(loss_fn: F, p: &MlpParams, h: f64) -> MlpGrads
where
    F: Fn(&MlpParams) -> f64,
{
    let mut flat = p.flatten();
    let mut grads = vec![0.0; flat.len()];
    let mut probe = p.clone();
    for k in 0..flat.len() {
        let orig = flat[k];
        flat[k] = orig + h;
        probe.assign_flat(&flat).expect("shape preserved");
        let up = loss_fn(&probe);
        flat[k] = orig - h;
        probe.assign_flat(&flat).expect("shape preserved");
        let down = loss_fn(&probe);
        flat[k] = orig;
        grads[k] = (up - down) / (2.0 * h);
    }
    probe.assign_flat(&flat).expect("shape preserved");
    let mut out = MlpGrads::zeros_like(p);
    let mut k = 0;
    for (w, b) in &mut out.layers {
        for g in w.iter_mut() {
            *g = grads[k];
            k += 1;
        }
        for g in b.iter_mut() {
            *g = grads[k];
            k += 1;
        }
    }
    out
}

/// Adaptive-moment optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected adaptive-moment update over flat parameter and
/// gradient vectors. Non-finite gradients are surfaced as errors.
pub fn adam_step_flat(params: &mut [f64], grads: &[f64], st: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != st.first_moment.len() {
        return Err(Error::usage("adam_step: size mismatch"));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("adam_step: non-finite gradient"));
    }
    st.step += 1;
    let bc1 = 1.0 - st.beta1.powi(st.step as i32);
    let bc2 = 1.0 - st.beta2.powi(st.step as i32);
    for i in 0..params.len() {
        let m = &mut st.first_moment[i];
        let v = &mut st.second_moment[i];
        *m = st.beta1 * *m + (1.0 - st.beta1) * grads[i];
        *v = st.beta2 * *v + (1.0 - st.beta2) * grads[i] * grads[i];
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        params[i] -= st.learning_rate * m_hat / (v_hat.sqrt() + st.epsilon);
    }
    Ok(())
}

/// One optimizer step over MLP-shaped parameters.
pub fn adam_step(
    p: &MlpParams,
    grads: &MlpGrads,
    st: &OptimizerState,
) -> Result<(MlpParams, OptimizerState)> {
    let mut flat = p.flatten();
    let grad_flat = grads.flatten();
    let mut next_st = st.clone();
    adam_step_flat(&mut flat, &grad_flat, &mut next_st)?;
    let mut next_p = p.clone();
    next_p.assign_flat(&flat)?;
    Ok((next_p, next_st))
}

// ---------------------------------------------------------------------------
// Weights file format.

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    activation: Activation,
    /// Row-major weight entries.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct MlpFile {
    pub schema_version: u32,
    layers: Vec<LayerFile>,
}

impl MlpParams {
    pub fn to_file(&self) -> MlpFile {
        MlpFile {
            schema_version: 1,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    activation: l.activation,
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_file(f: &MlpFile) -> Result<Self> {
        if f.schema_version != 1 {
            return Err(Error::usage(format!(
                "unsupported weights schema_version {}",
                f.schema_version
            )));
        }
        let mut layers = Vec::with_capacity(f.layers.len());
        for (i, lf) in f.layers.iter().enumerate() {
            if lf.weight.len() != lf.rows * lf.cols || lf.bias.len() != lf.rows {
                return Err(Error::usage(format!("weights layer {i}: shape mismatch")));
            }
            layers.push(Layer {
                weight: Array2::from_shape_vec((lf.rows, lf.cols), lf.weight.clone())
                    .map_err(|e| Error::usage(e.to_string()))?,
                bias: Array1::from_vec(lf.bias.clone()),
                activation: lf.activation,
            });
        }
        let p = MlpParams { layers };
        p.validate()?;
        Ok(p)
    }
}

/// Relative error with a guarded denominator, used by gradient checks.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Relative error between two gradient vectors: `||a - b|| / max(||a||,
/// ||b||)`, guarded. Robust to finite-difference roundoff on individual
/// near-zero components.
pub fn gradient_vector_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_output_is_bias() {
        let mut p = MlpParams::new(&[3, 2], 0).unwrap();
        p.layers[0].weight.fill(0.0);
        p.layers[0].bias = Array1::from_vec(vec![0.5, -1.5]);
        let (out, _) = mlp_forward(&p, &Array1::from_vec(vec![9.0, -3.0, 4.0])).unwrap();
        assert_eq!(out.to_vec(), vec![0.5, -1.5]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut p = MlpParams::new(&[3, 3], 0).unwrap();
        p.layers[0].weight = Array2::eye(3);
        p.layers[0].bias.fill(0.0);
        let x = Array1::from_vec(vec![1.0, -2.0, 0.25]);
        let (out, _) = mlp_forward(&p, &x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn forward_is_deterministic() {
        let p = MlpParams::new(&[7, 64, 64, 4], 42).unwrap();
        let x = Array1::from_vec(vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7]);
        let (a, _) = mlp_forward(&p, &x).unwrap();
        let (b, _) = mlp_forward(&p, &x).unwrap();
        assert_eq!(a, b);
        let p2 = MlpParams::new(&[7, 64, 64, 4], 42).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let p = MlpParams::new(&[3, 2], 0).unwrap();
        assert!(mlp_forward(&p, &Array1::zeros(4)).is_err());
    }

    #[test]
    fn stale_cache_rejected() {
        let p = MlpParams::new(&[3, 2], 0).unwrap();
        let other = MlpParams::new(&[3, 5, 2], 0).unwrap();
        let (_, cache) = mlp_forward(&p, &Array1::zeros(3)).unwrap();
        assert!(mlp_backward(&other, &cache, &Array1::zeros(2)).is_err());
    }

    #[test]
    fn linear_layer_matches_least_squares_gradient() {
        // L = || W x + b - y ||^2 has closed-form gradient 2 r x^T.
        let mut p = MlpParams::new(&[2, 2], 1).unwrap();
        p.layers[0].weight = Array2::from_shape_vec((2, 2), vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        p.layers[0].bias = Array1::from_vec(vec![0.1, -0.2]);
        let x = Array1::from_vec(vec![1.5, -0.5]);
        let y = Array1::from_vec(vec![1.0, 2.0]);
        let (out, cache) = mlp_forward(&p, &x).unwrap();
        let residual = &out - &y;
        let output_grad = residual.mapv(|r| 2.0 * r);
        let (grads, _) = mlp_backward(&p, &cache, &output_grad).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = 2.0 * residual[i] * x[j];
                assert!((grads.layers[0].0[(i, j)] - expected).abs() < 1e-12);
            }
            assert!((grads.layers[0].1[i] - 2.0 * residual[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let p = MlpParams::new(&[4, 8, 3], 2).unwrap();
        let (_, cache) = mlp_forward(&p, &Array1::from_elem(4, 0.3)).unwrap();
        let (grads, input_grad) = mlp_backward(&p, &cache, &Array1::zeros(3)).unwrap();
        assert!(grads.flatten().iter().all(|g| *g == 0.0));
        assert!(input_grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let p = MlpParams::new(&[5, 8, 8, 3], 3).unwrap();
        let x = Array1::from_vec(vec![0.2, -0.4, 0.6, 0.1, -0.9]);
        // Loss: sum of squared outputs.
        let loss = |params: &MlpParams| {
            let (out, _) = mlp_forward(params, &x).unwrap();
            out.iter().map(|v| v * v).sum::<f64>()
        };
        let (out, cache) = mlp_forward(&p, &x).unwrap();
        let (analytic, _) = mlp_backward(&p, &cache, &out.mapv(|v| 2.0 * v)).unwrap();
        let numeric = finite_diff_grad(loss, &p, 1e-5);
        let a = analytic.flatten();
        let n = numeric.flatten();
        let worst = a
            .iter()
            .zip(&n)
            .map(|(x, y)| relative_error(*x, *y))
            .fold(0.0_f64, f64::max);
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn finite_diff_on_quadratic_and_constant() {
        let p = MlpParams::new(&[2, 2], 4).unwrap();
        let quad = |params: &MlpParams| params.flatten().iter().map(|v| v * v).sum::<f64>();
        let g = finite_diff_grad(quad, &p, 1e-5).flatten();
        for (grad, param) in g.iter().zip(p.flatten()) {
            assert!((grad - 2.0 * param).abs() < 1e-8);
        }
        let constant = |_: &MlpParams| 3.5;
        assert!(finite_diff_grad(constant, &p, 1e-5).flatten().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn finite_diff_richardson_consistency() {
        let p = MlpParams::new(&[3, 4, 1], 5).unwrap();
        let x = Array1::from_vec(vec![0.3, -0.1, 0.8]);
        let loss = |params: &MlpParams| {
            let (out, _) = mlp_forward(params, &x).unwrap();
            (out[0] - 1.0).powi(2)
        };
        let coarse = finite_diff_grad(&loss, &p, 1e-4).flatten();
        let fine = finite_diff_grad(&loss, &p, 1e-5).flatten();
        for (c, f) in coarse.iter().zip(&fine) {
            // Central differences have O(h^2) error: the two estimates agree
            // far better than the coarse step size alone.
            assert!((c - f).abs() < 1e-6 + 1e-4 * f.abs());
        }
    }

    #[test]
    fn adam_zero_gradient_no_move() {
        let p = MlpParams::new(&[2, 2], 6).unwrap();
        let st = OptimizerState::new(p.len(), 1e-3);
        let (next, next_st) = adam_step(&p, &MlpGrads::zeros_like(&p), &st).unwrap();
        assert_eq!(p, next);
        assert_eq!(next_st.step, 1);
    }

    #[test]
    fn adam_constant_gradient_moves_against_sign() {
        let mut p = MlpParams::new(&[1, 1], 7).unwrap();
        p.layers[0].weight[(0, 0)] = 0.0;
        let mut grads = MlpGrads::zeros_like(&p);
        grads.layers[0].0[(0, 0)] = 1.0; // positive constant gradient
        let mut st = OptimizerState::new(p.len(), 1e-2);
        let mut prev = 0.0;
        for _ in 0..50 {
            let (next, next_st) = adam_step(&p, &grads, &st).unwrap();
            p = next;
            st = next_st;
            let w = p.layers[0].weight[(0, 0)];
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        // Minimize p^2 from any |p0| <= 1.
        for &p0 in &[1.0, -1.0, 0.37] {
            let mut p = MlpParams::new(&[1, 1], 8).unwrap();
            p.layers[0].weight[(0, 0)] = p0;
            p.layers[0].bias[0] = 0.0;
            let mut st = OptimizerState::new(p.len(), 1e-2);
            for _ in 0..500 {
                let mut grads = MlpGrads::zeros_like(&p);
                grads.layers[0].0[(0, 0)] = 2.0 * p.layers[0].weight[(0, 0)];
                let (next, next_st) = adam_step(&p, &grads, &st).unwrap();
                p = next;
                st = next_st;
            }
            assert!(p.layers[0].weight[(0, 0)].abs() < 1e-2);
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let p = MlpParams::new(&[1, 1], 9).unwrap();
        let mut grads = MlpGrads::zeros_like(&p);
        grads.layers[0].0[(0, 0)] = f64::NAN;
        let st = OptimizerState::new(p.len(), 1e-3);
        assert!(matches!(adam_step(&p, &grads, &st), Err(Error::Numeric(_))));
    }

    #[test]
    fn weights_file_round_trip() {
        let p = MlpParams::new(&[7, 16, 4], 10).unwrap();
        let json = serde_json::to_string(&p.to_file()).unwrap();
        let loaded = MlpParams::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(p, loaded);
    }
}
