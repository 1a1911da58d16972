//! Diffusion-based motion predictor: a physics-informed VAE.
//!
//! The encoder maps a time-reversed state plus guidance features to a
//! Gaussian over the previous action (mean squashed into the action bounds,
//! std squashed into `(eps, 1-eps)`). A sample drawn by reparameterization
//! is pushed through the deterministic bicycle step, which acts as the
//! decoder; transition stochasticity is carried by a learned diagonal
//! covariance that enters the loss, not the decoder. The loss is threefold:
//! state-reconstruction MSE, an action-variance regularizer with interior
//! minimum at sigma = 0.5, and a noise-likelihood term that scales the MSE
//! by the learned covariance.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::diffusion::TrajectoryDataset;
use crate::dynamics::{
    step_action_jacobian, step_deterministic, ActionCommand, DynamicsParams, GuidanceFeatures,
    NoiseCovariance, VehicleState, ACTION_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step_flat, mlp_backward, mlp_forward, MlpFile, MlpGrads, MlpParams, OptimizerState,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::world::LotConfig;
use rand_distr::{Distribution, StandardNormal};

/// Width of the encoder input: 5 state elements plus theta and l.
pub const INPUT_DIM: usize = STATE_DIM + 2;
/// Encoder output: per-dimension pre-squash mean and pre-squash sigma.
pub const OUTPUT_DIM: usize = 2 * ACTION_DIM;

/// Squash floor/ceiling for the per-action std, as required by the
/// variance regularizer's `log(1 - sigma - eps)` term.
pub const SIGMA_EPS: f64 = 1e-4;

/// Bounds on the learnable transition log-variances. The noise-likelihood
/// term drops its normalization constant, so nothing in the loss opposes
/// covariance growth; the log-variances are therefore kept in a physically
/// meaningful band (the ceiling also keeps planner rollouts informative).
pub const LOG_SIGMA_MIN: f64 = -18.420680743952367; // ln(1e-8)
pub const LOG_SIGMA_MAX: f64 = -3.912023005428146; // ln(0.02)

/// Learnable parameters of the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub encoder: MlpParams,
    /// Per-state-element transition-noise log-variances.
    pub log_sigma: [f64; STATE_DIM],
    /// Fixed affine input scaling (element-wise divisor).
    pub input_scale: [f64; INPUT_DIM],
    /// Dynamics the decoder integrates; also defines the action bounds the
    /// encoder mean is squashed into.
    pub dynamics: DynamicsParams,
}

/// Gaussian over one action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub mean: ActionCommand,
    pub sigma: [f64; ACTION_DIM],
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Stability constant of the variance regularizer.
    pub epsilon: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Hidden layer widths of the encoder.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            learning_rate: 1e-3,
            lambda1: 0.1,
            lambda2: 0.01,
            epsilon: 1e-4,
            validation_fraction: 0.1,
            seed: 0,
            hidden: vec![64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate must be > 0"));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::config("train.lambda1 and train.lambda2 must be >= 0"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= SIGMA_EPS) {
            return Err(Error::config("train.epsilon must be in (0, 1e-4]"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("train.validation_fraction must be in (0, 1)"));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::config("train.hidden must be non-empty positive widths"));
        }
        Ok(())
    }
}

impl PredictorParams {
    /// Seeded initialization sized for the given lot and dynamics.
    pub fn init(cfg: &TrainConfig, lot: &LotConfig, dynamics: DynamicsParams) -> Result<Self> {
        let mut dims = vec![INPUT_DIM];
        dims.extend(&cfg.hidden);
        dims.push(OUTPUT_DIM);
        let pos_scale = lot.width.max(lot.height) / 2.0;
        let input_scale = [
            pos_scale,
            pos_scale,
            dynamics.v_max,
            dynamics.v_max,
            std::f64::consts::PI,
            std::f64::consts::PI,
            pos_scale,
        ];
        Ok(PredictorParams {
            encoder: MlpParams::new(&dims, derive_seed(cfg.seed, 0x11))?,
            log_sigma: [(0.1_f64 * 0.1).ln(); STATE_DIM],
            input_scale,
            dynamics,
        })
    }

    /// Learned transition covariance as per-element variances.
    pub fn sigma_cov(&self) -> NoiseCovariance {
        let mut v = [0.0; STATE_DIM];
        for (out, ls) in v.iter_mut().zip(self.log_sigma) {
            *out = ls.exp();
        }
        NoiseCovariance::from_array(v)
    }

    fn scaled_input(&self, s: &VehicleState, g: &GuidanceFeatures) -> Array1<f64> {
        let raw = [s.x, s.y, s.vx, s.vy, s.h, g.theta, g.l];
        Array1::from_iter(raw.iter().zip(self.input_scale).map(|(v, sc)| v / sc))
    }

    /// Flatten encoder weights and log-variances into one parameter vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = self.encoder.flatten();
        flat.extend(self.log_sigma);
        flat
    }

    pub fn n_params(&self) -> usize {
        self.encoder.len() + STATE_DIM
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.encoder.len();
        if flat.len() != n + STATE_DIM {
            return Err(Error::usage("predictor assign_flat: length mismatch"));
        }
        self.encoder.assign_flat(&flat[..n])?;
        self.log_sigma.copy_from_slice(&flat[n..]);
        Ok(())
    }

    fn clamp_log_sigma(&mut self) {
        for ls in &mut self.log_sigma {
            *ls = ls.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Squashed encoder head values and their derivatives with respect to the
/// raw network outputs.
struct SquashedOutput {
    mean: [f64; ACTION_DIM],
    sigma: [f64; ACTION_DIM],
    dmean: [f64; ACTION_DIM],
    dsigma: [f64; ACTION_DIM],
}

fn squash(raw: &Array1<f64>, p: &DynamicsParams) -> SquashedOutput {
    let bounds = [p.throttle_bounds, p.steer_bounds];
    let mut out = SquashedOutput {
        mean: [0.0; ACTION_DIM],
        sigma: [0.0; ACTION_DIM],
        dmean: [0.0; ACTION_DIM],
        dsigma: [0.0; ACTION_DIM],
    };
    for d in 0..ACTION_DIM {
        let (lb, ub) = bounds[d];
        let mid = 0.5 * (lb + ub);
        let half = 0.5 * (ub - lb);
        let t = raw[d].tanh();
        out.mean[d] = mid + half * t;
        out.dmean[d] = half * (1.0 - t * t);
        let s = logistic(raw[ACTION_DIM + d]);
        out.sigma[d] = SIGMA_EPS + (1.0 - 2.0 * SIGMA_EPS) * s;
        out.dsigma[d] = (1.0 - 2.0 * SIGMA_EPS) * s * (1.0 - s);
    }
    out
}

/// Encoder forward pass: previous-action distribution for a reversed state
/// and its guidance features.
pub fn encode(
    p: &PredictorParams,
    s_rev: &VehicleState,
    g: &GuidanceFeatures,
) -> Result<ActionDistribution> {
    let (raw, _) = mlp_forward(&p.encoder, &p.scaled_input(s_rev, g))?;
    let sq = squash(&raw, &p.dynamics);
    Ok(ActionDistribution { mean: ActionCommand::from_array(sq.mean), sigma: sq.sigma })
}

/// Draw an action from the distribution at fixed noise: `mean + sigma * n`
/// per dimension, clipped to the action bounds.
pub fn reparameterize(
    d: &ActionDistribution,
    noise: [f64; ACTION_DIM],
    p: &DynamicsParams,
) -> ActionCommand {
    let mean = d.mean.as_array();
    let mut a = [0.0; ACTION_DIM];
    for dim in 0..ACTION_DIM {
        a[dim] = mean[dim] + d.sigma[dim] * noise[dim];
    }
    p.clamp_action(ActionCommand::from_array(a))
}

/// The decoder: one deterministic bicycle step applied in reversed time
/// coordinates. Identical to `step_deterministic` by construction.
pub fn decode_physics(s_rev: &VehicleState, z: ActionCommand, p: &DynamicsParams) -> VehicleState {
    step_deterministic(*s_rev, z, p)
}

/// Loss terms of one sample. `r_a` and `r_eps` are unscaled; `total`
/// applies the lambda weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub r_a: f64,
    pub r_eps: f64,
}

/// Gradients of the loss with respect to its direct inputs.
#[derive(Debug, Clone, Copy)]
pub struct LossGrads {
    pub d_pred: [f64; STATE_DIM],
    pub d_sigma_a: [f64; ACTION_DIM],
    pub d_cov: [f64; STATE_DIM],
}

/// Three-term VAE loss.
///
/// `MSE` is the mean squared difference over the five state elements;
/// `R_a = -mean_d [log(sigma_d + eps) + log(1 - sigma_d - eps)]` keeps the
/// action variance away from both overconfidence and maximal uncertainty
/// (interior minimum at 0.5); `R_eps = MSE / (2 * mean(Sigma)^2)` scales
/// the reconstruction error by the learned transition covariance.
pub fn vae_loss(
    pred: &VehicleState,
    truth: &VehicleState,
    sigma_a: [f64; ACTION_DIM],
    cov: [f64; STATE_DIM],
    lambda1: f64,
    lambda2: f64,
    eps: f64,
) -> Result<(LossParts, LossGrads)> {
    for s in sigma_a {
        if !(s > eps && s < 1.0 - eps) {
            return Err(Error::usage(format!(
                "vae_loss: sigma_a {s} outside ({eps}, {})",
                1.0 - eps
            )));
        }
    }
    if cov.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::usage("vae_loss: covariance entries must be > 0"));
    }
    let mut diff = [0.0; STATE_DIM];
    for (e, d) in diff.iter_mut().enumerate() {
        *d = pred.as_array()[e] - truth.as_array()[e];
    }
    let mse = diff.iter().map(|d| d * d).sum::<f64>() / STATE_DIM as f64;

    let mut r_a = 0.0;
    let mut d_sigma_a = [0.0; ACTION_DIM];
    for d in 0..ACTION_DIM {
        r_a -= (sigma_a[d] + eps).ln() + (1.0 - sigma_a[d] - eps).ln();
        d_sigma_a[d] = lambda1 * (-1.0 / (sigma_a[d] + eps) + 1.0 / (1.0 - sigma_a[d] - eps))
            / ACTION_DIM as f64;
    }
    r_a /= ACTION_DIM as f64;

    let cov_mean = cov.iter().sum::<f64>() / STATE_DIM as f64;
    let r_eps = mse / (2.0 * cov_mean * cov_mean);
    let total = mse + lambda1 * r_a + lambda2 * r_eps;
    if !total.is_finite() {
        return Err(Error::numeric("vae_loss: non-finite loss"));
    }

    let mse_weight = 1.0 + lambda2 / (2.0 * cov_mean * cov_mean);
    let mut d_pred = [0.0; STATE_DIM];
    for e in 0..STATE_DIM {
        d_pred[e] = mse_weight * 2.0 * diff[e] / STATE_DIM as f64;
    }
    let d_cov_entry = -lambda2 * mse / (cov_mean * cov_mean * cov_mean) / STATE_DIM as f64;

    Ok((
        LossParts { total, mse, r_a, r_eps },
        LossGrads { d_pred, d_sigma_a, d_cov: [d_cov_entry; STATE_DIM] },
    ))
}

/// One training sample: reversed state + guidance, supervised by the true
/// previous reversed state.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample {
    pub state: VehicleState,
    pub guidance: GuidanceFeatures,
    pub target: VehicleState,
}

impl TrainSample {
    pub fn from_dataset(d: &TrajectoryDataset) -> Vec<TrainSample> {
        d.records
            .iter()
            .map(|r| TrainSample { state: r.state, guidance: r.guidance, target: r.next_state })
            .collect()
    }
}

/// Loss (and optionally parameter gradients) of one sample at fixed
/// reparameterization noise.
pub fn sample_loss_and_grads(
    p: &PredictorParams,
    sample: &TrainSample,
    noise: [f64; ACTION_DIM],
    cfg: &TrainConfig,
    grads: Option<(&mut MlpGrads, &mut [f64; STATE_DIM])>,
) -> Result<LossParts> {
    let input = p.scaled_input(&sample.state, &sample.guidance);
    let (raw, cache) = mlp_forward(&p.encoder, &input)?;
    let sq = squash(&raw, &p.dynamics);

    // Reparameterized action; the clip differentiates straight-through
    // inside the bounds and to zero outside.
    let bounds = [p.dynamics.throttle_bounds, p.dynamics.steer_bounds];
    let mut z = [0.0; ACTION_DIM];
    let mut clip_mask = [1.0; ACTION_DIM];
    for d in 0..ACTION_DIM {
        let raw_z = sq.mean[d] + sq.sigma[d] * noise[d];
        let (lb, ub) = bounds[d];
        z[d] = raw_z.clamp(lb, ub);
        if raw_z < lb || raw_z > ub {
            clip_mask[d] = 0.0;
        }
    }
    let action = ActionCommand::from_array(z);
    let pred = decode_physics(&sample.state, action, &p.dynamics);
    let cov = p.sigma_cov().as_array();
    let (parts, loss_grads) = vae_loss(
        &pred,
        &sample.target,
        sq.sigma,
        cov,
        cfg.lambda1,
        cfg.lambda2,
        cfg.epsilon,
    )?;

    if let Some((enc_grads, cov_grads)) = grads {
        let jac = step_action_jacobian(sample.state, action, &p.dynamics);
        let mut d_z = [0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            for e in 0..STATE_DIM {
                d_z[d] += loss_grads.d_pred[e] * jac[e][d];
            }
            d_z[d] *= clip_mask[d];
        }
        let mut out_grad = Array1::zeros(OUTPUT_DIM);
        for d in 0..ACTION_DIM {
            let d_mean = d_z[d];
            let d_sigma = d_z[d] * noise[d] + loss_grads.d_sigma_a[d];
            out_grad[d] = d_mean * sq.dmean[d];
            out_grad[ACTION_DIM + d] = d_sigma * sq.dsigma[d];
        }
        let (g, _) = mlp_backward(&p.encoder, &cache, &out_grad)?;
        enc_grads.add_scaled(&g, 1.0);
        for e in 0..STATE_DIM {
            // Chain rule onto the log-variances.
            cov_grads[e] += loss_grads.d_cov[e] * cov[e];
        }
    }
    Ok(parts)
}

/// Per-epoch loss summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub val_loss: f64,
    pub val_mse: f64,
}

/// Loss history of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

fn mean_parts(parts: &[LossParts]) -> (f64, f64) {
    let n = parts.len().max(1) as f64;
    (
        parts.iter().map(|p| p.total).sum::<f64>() / n,
        parts.iter().map(|p| p.mse).sum::<f64>() / n,
    )
}

/// Train a predictor on a reversed dataset.
///
/// Mini-batch loop with fresh reparameterization noise per sample per
/// epoch, adaptive-moment updates over encoder weights and log-variances,
/// and a held-out validation split evaluated every epoch. Deterministic
/// given the config seed.
pub fn train(data: &TrajectoryDataset, cfg: &TrainConfig) -> Result<(PredictorParams, TrainReport)> {
    cfg.validate()?;
    let samples = TrainSample::from_dataset(data);
    if samples.is_empty() {
        return Err(Error::usage("train: dataset is empty after reversal"));
    }
    let mut params = PredictorParams::init(cfg, &data.meta.lot, data.meta.dynamics)?;
    let report = train_loop(&mut params, &samples, cfg, cfg.epochs, true)?;
    Ok((params, report))
}

/// Core mini-batch loop shared by offline training and online adaptation.
/// Updates `params` in place; with `validate = false` the whole sample set
/// is used for training and validation columns repeat the training loss.
pub fn train_loop(
    params: &mut PredictorParams,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    epochs: usize,
    validate: bool,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::usage("train_loop: no samples"));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, 0x22));
    let mut noise_rng = rng_from_seed(derive_seed(cfg.seed, 0x33));

    let n_val = if validate {
        (((n as f64) * cfg.validation_fraction).floor() as usize).min(n - 1)
    } else {
        0
    };
    shuffle_list(&mut order, &mut shuffle_rng);
    let (train_idx, val_idx) = order.split_at(n - n_val);
    let mut epoch_order = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut opt = OptimizerState::new(params.n_params(), cfg.learning_rate);
    let mut report = TrainReport::default();

    for epoch in 0..epochs {
        shuffle_list(&mut epoch_order, &mut shuffle_rng);
        let mut epoch_parts = Vec::with_capacity(epoch_order.len());
        for (batch_no, batch) in epoch_order.chunks(cfg.batch_size).enumerate() {
            let mut enc_grads = MlpGrads::zeros_like(&params.encoder);
            let mut cov_grads = [0.0; STATE_DIM];
            for &idx in batch {
                let noise = [
                    StandardNormal.sample(&mut noise_rng),
                    StandardNormal.sample(&mut noise_rng),
                ];
                let parts = sample_loss_and_grads(
                    params,
                    &samples[idx],
                    noise,
                    cfg,
                    Some((&mut enc_grads, &mut cov_grads)),
                )
                .map_err(|e| {
                    Error::numeric(format!("epoch {epoch} batch {batch_no} record {idx}: {e}"))
                })?;
                epoch_parts.push(parts);
            }
            let scale = 1.0 / batch.len() as f64;
            enc_grads.scale(scale);
            for g in &mut cov_grads {
                *g *= scale;
            }
            let mut flat = params.flatten();
            let mut grad_flat = enc_grads.flatten();
            grad_flat.extend(cov_grads);
            adam_step_flat(&mut flat, &grad_flat, &mut opt)?;
            params.assign_flat(&flat)?;
            params.clamp_log_sigma();
        }
        let (train_loss, train_mse) = mean_parts(&epoch_parts);

        let (val_loss, val_mse) = if val_idx.is_empty() {
            (train_loss, train_mse)
        } else {
            let mut val_rng = rng_from_seed(derive_seed(cfg.seed, 0x4400 + epoch as u64));
            let mut val_parts = Vec::with_capacity(val_idx.len());
            for &idx in &val_idx {
                let noise = [
                    StandardNormal.sample(&mut val_rng),
                    StandardNormal.sample(&mut val_rng),
                ];
                val_parts.push(sample_loss_and_grads(params, &samples[idx], noise, cfg, None)?);
            }
            mean_parts(&val_parts)
        };
        report.epochs.push(EpochStats { epoch, train_loss, train_mse, val_loss, val_mse });
    }
    Ok(report)
}

fn shuffle_list(list: &mut [usize], rng: &mut Rng) {
    use rand::Rng as _;
    for i in (1..list.len()).rev() {
        let j = rng.random_range(0..=i);
        list.swap(i, j);
    }
}

/// Evaluation metrics over a held-out reversed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// MSE between the reparameterized prediction and the true previous
    /// reversed state, averaged over samples and the five elements.
    pub mse: f64,
    /// Fraction of (sample, element) pairs within k predicted stds of the
    /// predicted mean, k = 1, 2, 3.
    pub coverage_1: f64,
    pub coverage_2: f64,
    pub coverage_3: f64,
    pub per_element_mse: [f64; STATE_DIM],
    pub n_samples: usize,
    pub seed: u64,
}

/// Evaluate prediction quality: sampled-action reconstruction MSE plus
/// per-element sigma coverage. The predicted output std per element
/// propagates the action std through the decoder Jacobian and adds the
/// learned transition std.
pub fn evaluate(p: &PredictorParams, data: &TrajectoryDataset, seed: u64) -> Result<Metrics> {
    let samples = TrainSample::from_dataset(data);
    evaluate_samples(p, &samples, seed)
}

pub fn evaluate_samples(
    p: &PredictorParams,
    samples: &[TrainSample],
    seed: u64,
) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::usage("evaluate: dataset is empty"));
    }
    let mut rng = rng_from_seed(seed);
    let cov = p.sigma_cov().as_array();
    let mut sq_sum = [0.0; STATE_DIM];
    let mut inside = [0usize; 3];
    let mut total_pairs = 0usize;
    for s in samples {
        let dist = encode(p, &s.state, &s.guidance)?;
        let noise = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
        let z = reparameterize(&dist, noise, &p.dynamics);
        let sampled = decode_physics(&s.state, z, &p.dynamics);
        let mean_pred = decode_physics(&s.state, dist.mean, &p.dynamics);
        let jac = step_action_jacobian(s.state, dist.mean, &p.dynamics);
        let truth = s.target.as_array();
        for e in 0..STATE_DIM {
            let err = sampled.as_array()[e] - truth[e];
            sq_sum[e] += err * err;
            let propagated: f64 =
                (0..ACTION_DIM).map(|d| (jac[e][d] * dist.sigma[d]).powi(2)).sum();
            let std_e = (propagated + cov[e]).sqrt();
            let dev = (truth[e] - mean_pred.as_array()[e]).abs();
            for (k, count) in inside.iter_mut().enumerate() {
                if dev <= (k + 1) as f64 * std_e {
                    *count += 1;
                }
            }
            total_pairs += 1;
        }
    }
    let n = samples.len() as f64;
    let mut per_element_mse = [0.0; STATE_DIM];
    for e in 0..STATE_DIM {
        per_element_mse[e] = sq_sum[e] / n;
    }
    let mse = per_element_mse.iter().sum::<f64>() / STATE_DIM as f64;
    Ok(Metrics {
        mse,
        coverage_1: inside[0] as f64 / total_pairs as f64,
        coverage_2: inside[1] as f64 / total_pairs as f64,
        coverage_3: inside[2] as f64 / total_pairs as f64,
        per_element_mse,
        n_samples: samples.len(),
        seed,
    })
}

// ---------------------------------------------------------------------------
// Model file format: encoder weights plus log-variances and a config echo.

#[derive(Serialize, Deserialize)]
pub struct PredictorFile {
    pub schema_version: u32,
    pub encoder: MlpFile,
    pub log_sigma: [f64; STATE_DIM],
    pub input_scale: [f64; INPUT_DIM],
    pub dynamics: DynamicsParams,
    /// Echo of the training configuration that produced the model.
    pub train_config: TrainConfig,
}

impl PredictorParams {
    pub fn to_file(&self, cfg: &TrainConfig) -> PredictorFile {
        PredictorFile {
            schema_version: 1,
            encoder: self.encoder.to_file(),
            log_sigma: self.log_sigma,
            input_scale: self.input_scale,
            dynamics: self.dynamics,
            train_config: cfg.clone(),
        }
    }

    pub fn from_file(f: &PredictorFile) -> Result<Self> {
        if f.schema_version != 1 {
            return Err(Error::usage(format!(
                "unsupported model schema_version {}",
                f.schema_version
            )));
        }
        let encoder = MlpParams::from_file(&f.encoder)?;
        if encoder.input_dim() != INPUT_DIM || encoder.output_dim() != OUTPUT_DIM {
            return Err(Error::usage(format!(
                "model encoder shape {}->{} does not match the {INPUT_DIM}->{OUTPUT_DIM} contract",
                encoder.input_dim(),
                encoder.output_dim()
            )));
        }
        Ok(PredictorParams {
            encoder,
            log_sigma: f.log_sigma,
            input_scale: f.input_scale,
            dynamics: f.dynamics,
        })
    }

    pub fn save(&self, cfg: &TrainConfig, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_file(cfg))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, TrainConfig)> {
        let text = std::fs::read_to_string(path)?;
        let file: PredictorFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad model file: {e}"),
        })?;
        Ok((Self::from_file(&file)?, file.train_config))
    }
}
