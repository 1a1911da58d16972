//! Active-Inference control through the learned predictor.
//!
//! Candidate actions are drawn from the predictor, imagined forward with
//! the stochastic bicycle model under the learned transition covariance,
//! and scored by Expected Free Energy: the Boltzmann log-preference over
//! accumulated rewards plus the per-step transition entropy, additive over
//! the horizon. The lowest-EFE candidate's first action is executed. A
//! rolling buffer of recent transitions feeds online fine-tuning whenever
//! the one-step prediction error exceeds a threshold.

use serde::{Deserialize, Serialize};

use crate::diffusion::TransitionRecord;
use crate::dynamics::{
    guidance, reverse_state, step_stochastic, ActionCommand, GuidanceFeatures, VehicleState,
    ACTION_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::predictor::{
    decode_physics, encode, reparameterize, train_loop, PredictorParams, TrainConfig, TrainSample,
};
use crate::rng::{rng_for_stream, Rng};
use crate::world::{is_parked, world_step, ParkTolerance, Spot, WorldState};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Boltzmann preference and reward weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceWeights {
    /// Inverse temperature of the preference distribution.
    pub beta: f64,
    pub lambda_goal: f64,
    pub lambda_safety: f64,
    pub lambda_smooth: f64,
    /// Per-neighbor cap on the safety distance term (m); keeps the term
    /// from rewarding unbounded flight from the lot.
    pub saturation_radius: f64,
}

impl Default for PreferenceWeights {
    fn default() -> Self {
        PreferenceWeights {
            beta: 1.0,
            lambda_goal: 1.0,
            lambda_safety: 0.2,
            lambda_smooth: 0.1,
            saturation_radius: 10.0,
        }
    }
}

impl PreferenceWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::config("weights.beta must be > 0"));
        }
        if self.lambda_goal < 0.0 || self.lambda_safety < 0.0 || self.lambda_smooth < 0.0 {
            return Err(Error::config("weights.lambda_* must be >= 0"));
        }
        if !(self.saturation_radius > 0.0) {
            return Err(Error::config("weights.saturation_radius must be > 0"));
        }
        Ok(())
    }
}

/// Planner dimensions and online-adaptation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Rollout horizon N.
    pub horizon: usize,
    /// Candidate first-actions K.
    pub n_candidates: usize,
    /// Rollouts per candidate M.
    pub n_rollouts: usize,
    /// Exploration noise added to the predictor mean (throttle, steer).
    pub jitter: [f64; ACTION_DIM],
    /// One-step prediction MSE above which adaptation triggers.
    pub vfe_error_threshold: f64,
    pub adapt_buffer_size: usize,
    pub adapt_epochs: usize,
    pub adapt_learning_rate: f64,
    /// Anchor weight of the adaptation prior.
    pub adapt_anchor_mu: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 5,
            n_candidates: 16,
            n_rollouts: 4,
            jitter: [0.5, 0.05],
            vfe_error_threshold: 0.5,
            adapt_buffer_size: 64,
            adapt_epochs: 5,
            adapt_learning_rate: 1e-3,
            adapt_anchor_mu: 1e-3,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.n_candidates == 0 || self.n_rollouts == 0 {
            return Err(Error::config("planner.horizon, n_candidates, n_rollouts must be >= 1"));
        }
        if !(self.vfe_error_threshold > 0.0) {
            return Err(Error::config("planner.vfe_error_threshold must be > 0"));
        }
        if self.jitter.iter().any(|j| *j < 0.0) {
            return Err(Error::config("planner.jitter must be >= 0"));
        }
        if self.adapt_buffer_size == 0 || self.adapt_epochs == 0 {
            return Err(Error::config("planner.adapt_buffer_size and adapt_epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Reward of one predicted state: negative goal distance, saturated
/// distance to neighbors, and an action-smoothness penalty with the action
/// difference normalized by the per-dimension bound half-widths.
pub fn reward(
    s_next: &VehicleState,
    goal: (f64, f64),
    neighbors: &[(f64, f64)],
    a: ActionCommand,
    a_prev: ActionCommand,
    w: &PreferenceWeights,
    half_widths: [f64; ACTION_DIM],
) -> f64 {
    let goal_dist = (s_next.x - goal.0).hypot(s_next.y - goal.1);
    let mut safety = 0.0;
    for n in neighbors {
        let d = (s_next.x - n.0).hypot(s_next.y - n.1);
        safety += d.min(w.saturation_radius);
    }
    let da = [
        (a.throttle - a_prev.throttle) / half_widths[0],
        (a.steer - a_prev.steer) / half_widths[1],
    ];
    let smooth = (da[0] * da[0] + da[1] * da[1]).sqrt();
    -w.lambda_goal * goal_dist + w.lambda_safety * safety - w.lambda_smooth * smooth
}

/// Additive negative log-preference of a trajectory: `-beta * sum(rewards)`
/// (the beta-dependent normalizer is dropped as argmin-invariant).
pub fn log_preference(rewards: &[f64], beta: f64) -> f64 {
    -beta * rewards.iter().sum::<f64>()
}

/// One imagined trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Visited states, length horizon + 1 (including the start).
    pub states: Vec<VehicleState>,
    pub actions: Vec<ActionCommand>,
    pub rewards: Vec<f64>,
    /// Per-step transition entropy (state-independent under the learned
    /// diagonal covariance, recorded for the EFE bookkeeping).
    pub entropies: Vec<f64>,
    /// Per-step differential entropy of the action distribution
    /// (diagnostics only).
    pub action_entropies: Vec<f64>,
}

/// Differential entropy of the learned transition Gaussian.
fn transition_entropy(p: &PredictorParams) -> f64 {
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    p.log_sigma.iter().map(|ls| 0.5 * (two_pi_e * ls.exp()).ln()).sum()
}

fn gaussian_action_entropy(sigma: &[f64; ACTION_DIM]) -> f64 {
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    sigma.iter().map(|s| 0.5 * (two_pi_e * s * s).ln()).sum()
}

/// Sample an action from the predictor at a state: encoder mean plus
/// exploration jitter, then reparameterized with the predicted std.
fn draw_action(
    p: &PredictorParams,
    s: &VehicleState,
    g: &GuidanceFeatures,
    jitter: [f64; ACTION_DIM],
    rng: &mut Rng,
) -> Result<(ActionCommand, [f64; ACTION_DIM])> {
    let mut dist = encode(p, s, g)?;
    let mean = dist.mean.as_array();
    let mut jittered = [0.0; ACTION_DIM];
    for d in 0..ACTION_DIM {
        let j: f64 = if jitter[d] > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
        jittered[d] = mean[d] + jitter[d] * j;
    }
    dist.mean = p.dynamics.clamp_action(ActionCommand::from_array(jittered));
    let noise = [StandardNormal.sample(rng), StandardNormal.sample(rng)];
    Ok((reparameterize(&dist, noise, &p.dynamics), dist.sigma))
}

/// Imagine one trajectory of `horizon` steps from `start` toward `goal`.
///
/// Actions come from the predictor (the first may be pinned); states
/// evolve by the stochastic bicycle step under the learned covariance;
/// rewards are evaluated against the goal and the static neighbor
/// positions.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    p: &PredictorParams,
    start: &VehicleState,
    goal: (f64, f64),
    neighbors: &[(f64, f64)],
    horizon: usize,
    w: &PreferenceWeights,
    jitter: [f64; ACTION_DIM],
    a_prev: ActionCommand,
    first_action: Option<ActionCommand>,
    rng: &mut Rng,
) -> Result<RolloutResult> {
    if horizon == 0 {
        return Err(Error::usage("rollout: horizon must be >= 1"));
    }
    let cov = p.sigma_cov();
    let h_trans = transition_entropy(p);
    let half_widths = p.dynamics.action_half_widths();
    let mut out = RolloutResult {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        entropies: Vec::with_capacity(horizon),
        action_entropies: Vec::with_capacity(horizon),
    };
    let mut s = *start;
    let mut prev = a_prev;
    out.states.push(s);
    for tau in 0..horizon {
        let g = guidance(&s, goal);
        let (action, sigma) = match (tau, first_action) {
            (0, Some(a)) => {
                let dist = encode(p, &s, &g)?;
                (a, dist.sigma)
            }
            _ => draw_action(p, &s, &g, jitter, rng)?,
        };
        let next = step_stochastic(s, action, &p.dynamics, &cov, rng);
        out.rewards.push(reward(&next, goal, neighbors, action, prev, w, half_widths));
        out.entropies.push(h_trans);
        out.action_entropies.push(gaussian_action_entropy(&sigma));
        out.actions.push(action);
        out.states.push(next);
        prev = action;
        s = next;
    }
    Ok(out)
}

/// Expected Free Energy of a candidate: the mean over its rollouts of the
/// per-step `-beta * reward + transition entropy`, additive over the
/// horizon.
pub fn efe(rollouts: &[RolloutResult], w: &PreferenceWeights) -> Result<f64> {
    if rollouts.is_empty() {
        return Err(Error::usage("efe: need at least one rollout"));
    }
    let horizon = rollouts[0].rewards.len();
    if rollouts.iter().any(|r| r.rewards.len() != horizon) {
        return Err(Error::usage("efe: rollouts have mismatched horizons"));
    }
    let mut total = 0.0;
    for r in rollouts {
        total += log_preference(&r.rewards, w.beta) + r.entropies.iter().sum::<f64>();
    }
    Ok(total / rollouts.len() as f64)
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin_lowest_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Diagnostics of one action selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectDiagnostics {
    pub candidate_efes: Vec<f64>,
    pub chosen: usize,
    pub candidates: Vec<ActionCommand>,
}

/// Pick the K-candidate EFE-argmin first action.
///
/// Each candidate first-action is drawn from the predictor with jitter,
/// then scored by M rollouts whose first step is pinned to the candidate.
/// Candidate evaluation uses rng streams derived per candidate, so the
/// selected action does not depend on evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn select_action(
    p: &PredictorParams,
    s: &VehicleState,
    goal: (f64, f64),
    neighbors: &[(f64, f64)],
    a_prev: ActionCommand,
    cfg: &PlannerConfig,
    w: &PreferenceWeights,
    rng: &mut Rng,
) -> Result<(ActionCommand, SelectDiagnostics)> {
    if cfg.n_candidates == 0 {
        return Err(Error::usage("select_action: n_candidates must be >= 1"));
    }
    let g = guidance(s, goal);
    let mut candidates = Vec::with_capacity(cfg.n_candidates);
    for _ in 0..cfg.n_candidates {
        let (a, _) = draw_action(p, s, &g, cfg.jitter, rng)?;
        candidates.push(a);
    }
    let stream_base: u64 = rng.random();
    let mut efes = Vec::with_capacity(cfg.n_candidates);
    for (k, &candidate) in candidates.iter().enumerate() {
        let mut candidate_rng = rng_for_stream(stream_base, k as u64);
        let mut rollouts = Vec::with_capacity(cfg.n_rollouts);
        for _ in 0..cfg.n_rollouts {
            rollouts.push(rollout(
                p,
                s,
                goal,
                neighbors,
                cfg.horizon,
                w,
                cfg.jitter,
                a_prev,
                Some(candidate),
                &mut candidate_rng,
            )?);
        }
        efes.push(efe(&rollouts, w)?);
    }
    let chosen = argmin_lowest_index(&efes);
    Ok((candidates[chosen], SelectDiagnostics { candidate_efes: efes, chosen, candidates }))
}

/// One-step prediction MSE over the five state elements; the heading
/// component compares angles, so a wrap at +-pi does not read as a jump.
fn one_step_error(predicted: &VehicleState, observed: &VehicleState) -> f64 {
    let p = predicted.as_array();
    let o = observed.as_array();
    let mut sum = 0.0;
    for e in 0..STATE_DIM - 1 {
        sum += (p[e] - o[e]) * (p[e] - o[e]);
    }
    let dh = crate::dynamics::normalize_angle(p[STATE_DIM - 1] - o[STATE_DIM - 1]);
    sum += dh * dh;
    sum / STATE_DIM as f64
}

/// Outcome of [`vfe_adapt`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub applied: bool,
    pub pre_mse: f64,
    pub post_mse: f64,
}

/// Mean one-step reconstruction MSE of the predictor's mean action over a
/// buffer of reversed-format pairs.
fn buffer_mse(p: &PredictorParams, samples: &[TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let dist = encode(p, &s.state, &s.guidance)?;
        let pred = decode_physics(&s.state, dist.mean, &p.dynamics);
        let err: f64 = pred
            .as_array()
            .iter()
            .zip(s.target.as_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += err / STATE_DIM as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Convert recent forward transitions into reversed-format training pairs,
/// with guidance recomputed toward each record's reference spot.
fn buffer_to_samples(buffer: &[TransitionRecord]) -> Vec<TrainSample> {
    buffer
        .iter()
        .map(|r| {
            let dest = (
                r.state.x + r.guidance.l * r.guidance.theta.cos(),
                r.state.y + r.guidance.l * r.guidance.theta.sin(),
            );
            let state = reverse_state(r.next_state);
            TrainSample { state, guidance: guidance(&state, dest), target: reverse_state(r.state) }
        })
        .collect()
}

/// Fine-tune the predictor on recent transitions.
///
/// Runs the training loop over the buffer only, then applies the anchoring
/// prior as an exact proximal shrink toward the pre-adaptation parameters:
/// `phi_new = phi_old + (phi_hat - phi_old) / (1 + 2 mu)`. Plain gradient
/// descent on the quadratic anchor diverges once `mu * lr` passes 1; the
/// proximal form is stable for every `mu`, reduces to the data optimum at
/// `mu = 0` and to `phi_old` as `mu -> inf`. A non-finite adaptation loss
/// aborts and returns the original parameters.
pub fn vfe_adapt(
    p: &PredictorParams,
    buffer: &[TransitionRecord],
    learning_rate: f64,
    epochs: usize,
    mu: f64,
    train_seed: u64,
) -> Result<(PredictorParams, AdaptReport)> {
    if buffer.is_empty() {
        return Err(Error::usage("vfe_adapt: buffer is empty"));
    }
    let samples = buffer_to_samples(buffer);
    let pre_mse = buffer_mse(p, &samples)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: samples.len().min(64),
        learning_rate,
        seed: train_seed,
        ..TrainConfig::default()
    };
    let mut adapted = p.clone();
    match train_loop(&mut adapted, &samples, &cfg, epochs, false) {
        Ok(_) => {}
        Err(Error::Numeric(_)) => {
            return Ok((p.clone(), AdaptReport { applied: false, pre_mse, post_mse: pre_mse }));
        }
        Err(e) => return Err(e),
    }
    let old = p.flatten();
    let mut new = adapted.flatten();
    let shrink = 1.0 / (1.0 + 2.0 * mu);
    for (n, o) in new.iter_mut().zip(&old) {
        *n = o + (*n - o) * shrink;
    }
    adapted.assign_flat(&new)?;
    let post_mse = buffer_mse(&adapted, &samples)?;
    Ok((adapted, AdaptReport { applied: true, pre_mse, post_mse }))
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Parked,
    Collision,
    Timeout,
}

/// One per-vehicle, per-tick trace row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub vehicle_id: usize,
    /// State before the action was applied.
    pub state: VehicleState,
    pub action: ActionCommand,
    /// EFE of the chosen candidate.
    pub efe: f64,
    /// One-step prediction MSE observed after the action.
    pub pred_error: f64,
    pub adapted: bool,
}

/// Full result of one control episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub outcome: EpisodeOutcome,
    pub steps_used: usize,
    pub trace: Vec<StepTrace>,
    /// Final state per controlled vehicle.
    pub final_states: Vec<VehicleState>,
    /// Goal spot per controlled vehicle.
    pub goals: Vec<Spot>,
    /// (step, vehicle) pairs where adaptation fired.
    pub adaptation_events: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Run one full control episode.
///
/// Every tick each controlled vehicle selects an EFE-minimizing action;
/// all actions are applied simultaneously; the one-step prediction error
/// is monitored and the predictor fine-tuned when it exceeds the
/// threshold. The episode ends when every controlled vehicle is parked,
/// on any contact, or at the step cap.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    world: &WorldState,
    params: &PredictorParams,
    cfg: &PlannerConfig,
    w: &PreferenceWeights,
    tol: &ParkTolerance,
    process_noise: &crate::dynamics::NoiseCovariance,
    seed: u64,
) -> Result<EpisodeResult> {
    if world.is_terminal() {
        return Err(Error::usage("run_episode: world is terminal"));
    }
    cfg.validate()?;
    w.validate()?;
    let mut rng = rng_for_stream(seed, 0xEA);
    let mut model = params.clone();
    let controlled = world.controlled_indices();
    let goals: Vec<Spot> = controlled
        .iter()
        .map(|&i| {
            world.vehicles[i]
                .target_spot
                .map(|s| world.lot.spots[s])
                .ok_or_else(|| Error::usage("controlled vehicle has no destination spot"))
        })
        .collect::<Result<_>>()?;

    let mut w_state = world.clone();
    let mut prev_actions = vec![ActionCommand::zero(); controlled.len()];
    let mut buffer: Vec<TransitionRecord> = Vec::new();
    let mut trace = Vec::new();
    let mut adaptation_events = Vec::new();

    let all_parked = |ws: &WorldState| {
        controlled
            .iter()
            .zip(&goals)
            .all(|(&i, goal)| is_parked(&ws.vehicles[i].state, goal, tol))
    };

    if all_parked(&w_state) {
        return Ok(EpisodeResult {
            outcome: EpisodeOutcome::Parked,
            steps_used: 0,
            trace,
            final_states: controlled.iter().map(|&i| w_state.vehicles[i].state).collect(),
            goals,
            adaptation_events,
            seed,
        });
    }

    let outcome = loop {
        let step = w_state.step_count;
        let mut actions = Vec::with_capacity(controlled.len());
        let mut efes = Vec::with_capacity(controlled.len());
        for (v, &world_idx) in controlled.iter().enumerate() {
            let s = w_state.vehicles[world_idx].state;
            let neighbors: Vec<(f64, f64)> = w_state
                .vehicles
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != world_idx)
                .map(|(_, veh)| (veh.state.x, veh.state.y))
                .collect();
            let (action, diag) = select_action(
                &model,
                &s,
                goals[v].center,
                &neighbors,
                prev_actions[v],
                cfg,
                w,
                &mut rng,
            )?;
            actions.push(action);
            efes.push(diag.candidate_efes[diag.chosen]);
        }
        let before: Vec<VehicleState> =
            controlled.iter().map(|&i| w_state.vehicles[i].state).collect();
        w_state = world_step(&w_state, &actions, &model.dynamics, process_noise, &mut rng)?;

        let mut adapted_this_step = vec![false; controlled.len()];
        for (v, &world_idx) in controlled.iter().enumerate() {
            let observed = w_state.vehicles[world_idx].state;
            let predicted = decode_physics(&before[v], actions[v], &model.dynamics);
            let pred_error = one_step_error(&predicted, &observed);
            buffer.push(TransitionRecord {
                trial_id: 0,
                vehicle_id: v,
                t: step,
                state: before[v],
                guidance: guidance(&before[v], goals[v].center),
                action: actions[v],
                next_state: observed,
            });
            if buffer.len() > cfg.adapt_buffer_size {
                let excess = buffer.len() - cfg.adapt_buffer_size;
                buffer.drain(..excess);
            }
            if pred_error > cfg.vfe_error_threshold {
                let (new_model, report) = vfe_adapt(
                    &model,
                    &buffer,
                    cfg.adapt_learning_rate,
                    cfg.adapt_epochs,
                    cfg.adapt_anchor_mu,
                    rng.random(),
                )?;
                if report.applied {
                    model = new_model;
                    adaptation_events.push((step, v));
                    adapted_this_step[v] = true;
                }
            }
            trace.push(StepTrace {
                step,
                vehicle_id: v,
                state: before[v],
                action: actions[v],
                efe: efes[v],
                pred_error,
                adapted: adapted_this_step[v],
            });
        }
        prev_actions = actions;

        if let Some(event) = w_state.terminal_event {
            match event {
                crate::world::TerminalEvent::MaxSteps => break EpisodeOutcome::Timeout,
                _ => break EpisodeOutcome::Collision,
            }
        }
        if all_parked(&w_state) {
            break EpisodeOutcome::Parked;
        }
    };

    Ok(EpisodeResult {
        outcome,
        steps_used: w_state.step_count,
        trace,
        final_states: controlled.iter().map(|&i| w_state.vehicles[i].state).collect(),
        goals,
        adaptation_events,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{collect, CollectConfig, NoiseSchedule};
    use crate::dynamics::{DynamicsParams, NoiseCovariance};
    use crate::predictor::LOG_SIGMA_MIN;
    use crate::rng::rng_from_seed;
    use crate::world::{build_world, LotConfig, Placement};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn quiet_params(seed: u64) -> PredictorParams {
        let cfg = TrainConfig { hidden: vec![8, 8], seed, ..TrainConfig::default() };
        let mut p =
            PredictorParams::init(&cfg, &LotConfig::scenario_1(), DynamicsParams::default())
                .unwrap();
        p.log_sigma = [LOG_SIGMA_MIN; STATE_DIM];
        p
    }

    #[test]
    fn reward_examples() {
        let w = PreferenceWeights {
            beta: 1.0,
            lambda_goal: 1.0,
            lambda_safety: 0.0,
            lambda_smooth: 0.0,
            saturation_radius: 10.0,
        };
        let hw = DynamicsParams::default().action_half_widths();
        let at_goal = VehicleState::at_rest(3.0, 4.0, 0.0);
        assert_eq!(
            reward(&at_goal, (3.0, 4.0), &[], ActionCommand::zero(), ActionCommand::zero(), &w, hw),
            0.0
        );
        let away = VehicleState::at_rest(5.0, 4.0, 0.0);
        assert_close(
            reward(&away, (3.0, 4.0), &[], ActionCommand::zero(), ActionCommand::zero(), &w, hw),
            -2.0,
            1e-12,
        );
        let w2 = PreferenceWeights { lambda_goal: 0.0, lambda_safety: 0.5, lambda_smooth: 0.0, ..w };
        assert_close(
            reward(
                &at_goal,
                (3.0, 4.0),
                &[(0.0, 4.0)],
                ActionCommand::zero(),
                ActionCommand::zero(),
                &w2,
                hw,
            ),
            1.5,
            1e-12,
        );
    }

    #[test]
    fn log_preference_linearity() {
        assert_eq!(log_preference(&[0.0, 0.0, 0.0], 2.0), 0.0);
        let rewards = [1.0, -0.5, 2.0];
        let total: f64 = rewards.iter().sum();
        assert_close(log_preference(&rewards, 2.0), -2.0 * total, 1e-12);
        assert_close(log_preference(&rewards, 4.0), 2.0 * log_preference(&rewards, 2.0), 1e-12);
        let other = [0.5, 0.5, 0.5];
        let beta = 3.0;
        let diff = log_preference(&rewards, beta) - log_preference(&other, beta);
        let expected = -beta * (total - other.iter().sum::<f64>());
        assert_close(diff, expected, 1e-12);
    }

    #[test]
    fn rollout_shapes_and_determinism() {
        let p = quiet_params(1);
        let w = PreferenceWeights::default();
        let s = VehicleState::new(0.0, 0.0, 1.0, 0.0, 0.0);
        let one = rollout(
            &p,
            &s,
            (5.0, 0.0),
            &[],
            1,
            &w,
            [0.0, 0.0],
            ActionCommand::zero(),
            None,
            &mut rng_from_seed(2),
        )
        .unwrap();
        assert_eq!(one.states.len(), 2);
        assert_eq!(one.actions.len(), 1);

        let run = || {
            rollout(
                &p,
                &s,
                (5.0, 0.0),
                &[],
                5,
                &w,
                [0.1, 0.01],
                ActionCommand::zero(),
                None,
                &mut rng_from_seed(3),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rollout_degenerate_noise_matches_deterministic_mean_rollout() {
        // Zero jitter with sigma and covariance at their floors: the
        // rollout tracks the deterministic bicycle rollout of the encoder
        // means to within those floors.
        let p = quiet_params(4);
        let w = PreferenceWeights::default();
        let s = VehicleState::new(1.0, -2.0, 0.8, 0.0, 0.0);
        let goal = (6.0, 1.0);
        let r = rollout(
            &p,
            &s,
            goal,
            &[],
            4,
            &w,
            [0.0, 0.0],
            ActionCommand::zero(),
            None,
            &mut rng_from_seed(5),
        )
        .unwrap();
        let mut expected = s;
        for tau in 0..4 {
            let g = guidance(&expected, goal);
            let dist = encode(&p, &expected, &g).unwrap();
            expected = decode_physics(&expected, dist.mean, &p.dynamics);
            for (a, b) in r.states[tau + 1].as_array().iter().zip(expected.as_array()) {
                // The sigma and covariance floors (1e-4) compound through
                // the encoder across steps; the tolerance covers that
                // amplification.
                assert_close(*a, b, 5e-2);
            }
        }
    }

    #[test]
    fn efe_additivity_and_shift_invariance() {
        let w = PreferenceWeights::default();
        let mk = |rewards: Vec<f64>, h: f64| RolloutResult {
            states: vec![VehicleState::at_rest(0.0, 0.0, 0.0); rewards.len() + 1],
            actions: vec![ActionCommand::zero(); rewards.len()],
            entropies: vec![h; rewards.len()],
            action_entropies: vec![0.0; rewards.len()],
            rewards,
        };
        let n = 6;
        let per_step = -w.beta * 1.5 + 0.3;
        let r = mk(vec![1.5; n], 0.3);
        assert_close(efe(&[r], &w).unwrap(), n as f64 * per_step, 1e-12);

        let base: Vec<Vec<f64>> =
            vec![vec![1.0, 0.2, -0.3], vec![0.5, 0.5, 0.5], vec![2.0, -1.0, 0.1]];
        let before: Vec<f64> =
            base.iter().map(|r| efe(&[mk(r.clone(), 0.1)], &w).unwrap()).collect();
        let after: Vec<f64> = base
            .iter()
            .map(|r| {
                let shifted: Vec<f64> = r.iter().map(|x| x + 7.0).collect();
                efe(&[mk(shifted, 0.1)], &w).unwrap()
            })
            .collect();
        assert_eq!(argmin_lowest_index(&before), argmin_lowest_index(&after));
        for (b, a) in before.iter().zip(&after) {
            assert_close(a - b, -w.beta * 7.0 * 3.0, 1e-9);
        }

        assert!(efe(&[mk(vec![1.0; 3], 0.0), mk(vec![1.0; 4], 0.0)], &w).is_err());
    }

    #[test]
    fn efe_pure_goal_ordering() {
        // Safety and smoothness off, identical entropies: EFE ordering is
        // descending total goal-reward.
        let w = PreferenceWeights { lambda_safety: 0.0, lambda_smooth: 0.0, ..Default::default() };
        let mk = |rewards: Vec<f64>| RolloutResult {
            states: vec![VehicleState::at_rest(0.0, 0.0, 0.0); rewards.len() + 1],
            actions: vec![ActionCommand::zero(); rewards.len()],
            entropies: vec![0.2; rewards.len()],
            action_entropies: vec![0.0; rewards.len()],
            rewards,
        };
        let candidates = [vec![-1.0, -1.2], vec![-0.2, -0.1], vec![-3.0, -0.5]];
        let mut efes = Vec::new();
        let mut totals = Vec::new();
        for c in &candidates {
            efes.push(efe(&[mk(c.clone())], &w).unwrap());
            totals.push(c.iter().sum::<f64>());
        }
        let mut by_efe: Vec<usize> = (0..3).collect();
        by_efe.sort_by(|&a, &b| efes[a].partial_cmp(&efes[b]).unwrap());
        let mut by_reward: Vec<usize> = (0..3).collect();
        by_reward.sort_by(|&a, &b| totals[b].partial_cmp(&totals[a]).unwrap());
        assert_eq!(by_efe, by_reward);
    }

    #[test]
    fn two_candidate_goal_seeking() {
        // Brute-force check: at large beta the goal-ward candidate scores
        // strictly lower EFE than the goal-averse one.
        let p = quiet_params(6);
        let w = PreferenceWeights { beta: 50.0, ..Default::default() };
        let s = VehicleState::new(0.0, 0.0, 1.0, 0.0, 0.0);
        let goal = (8.0, 0.0);
        let toward = ActionCommand::new(3.0, 0.0);
        let away = ActionCommand::new(-3.0, 0.0);
        let mut efes = Vec::new();
        for candidate in [toward, away] {
            let mut rng = rng_from_seed(7);
            let mut rollouts = Vec::new();
            for _ in 0..4 {
                rollouts.push(
                    rollout(
                        &p,
                        &s,
                        goal,
                        &[],
                        5,
                        &w,
                        [0.0, 0.0],
                        ActionCommand::zero(),
                        Some(candidate),
                        &mut rng,
                    )
                    .unwrap(),
                );
            }
            efes.push(efe(&rollouts, &w).unwrap());
        }
        assert!(efes[0] < efes[1], "toward {} vs away {}", efes[0], efes[1]);
    }

    #[test]
    fn select_action_k1_and_tie_break() {
        let p = quiet_params(8);
        let cfg = PlannerConfig { n_candidates: 1, ..Default::default() };
        let w = PreferenceWeights::default();
        let s = VehicleState::new(0.0, 0.0, 0.5, 0.0, 0.0);
        let (a, diag) = select_action(
            &p,
            &s,
            (5.0, 0.0),
            &[],
            ActionCommand::zero(),
            &cfg,
            &w,
            &mut rng_from_seed(9),
        )
        .unwrap();
        assert_eq!(diag.candidate_efes.len(), 1);
        assert_eq!(diag.chosen, 0);
        assert_eq!(a, diag.candidates[0]);

        assert_eq!(argmin_lowest_index(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmin_lowest_index(&[2.0, 1.0, 1.0]), 1);
        let bad = PlannerConfig { n_candidates: 0, ..Default::default() };
        assert!(select_action(
            &p,
            &s,
            (5.0, 0.0),
            &[],
            ActionCommand::zero(),
            &bad,
            &w,
            &mut rng_from_seed(9)
        )
        .is_err());
    }

    fn small_buffer(dt_scale: f64, n: usize) -> Vec<TransitionRecord> {
        // Transitions generated under scaled dt, guidance toward a spot.
        let mut p = DynamicsParams::default();
        p.dt *= dt_scale;
        let mut rng = rng_from_seed(10);
        let dest = (0.0, 7.5);
        let mut out = Vec::new();
        let mut s = VehicleState::new(2.0, -3.0, 1.0, 0.0, 0.0);
        for t in 0..n {
            let a = ActionCommand::new(rng.random_range(-2.0..2.0), rng.random_range(-0.3..0.3));
            let next = crate::dynamics::step_deterministic(s, a, &p);
            out.push(TransitionRecord {
                trial_id: 0,
                vehicle_id: 0,
                t,
                state: s,
                guidance: guidance(&s, dest),
                action: a,
                next_state: next,
            });
            s = next;
        }
        out
    }

    #[test]
    fn vfe_adapt_edge_cases() {
        let p = quiet_params(11);
        assert!(vfe_adapt(&p, &[], 1e-3, 3, 1e-3, 0).is_err());

        let buffer = small_buffer(1.0, 16);
        // Zero learning rate: parameters unchanged.
        let (same, _) = vfe_adapt(&p, &buffer, 0.0, 3, 1e-3, 1).unwrap();
        assert_eq!(p.flatten(), same.flatten());

        // Huge anchor weight: parameters pinned to the originals.
        let (pinned, _) = vfe_adapt(&p, &buffer, 1e-3, 3, 1e9, 2).unwrap();
        let delta: f64 = p
            .flatten()
            .iter()
            .zip(pinned.flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(delta < 1e-6, "anchor let parameters drift by {delta}");
    }

    #[test]
    fn vfe_adapt_reduces_biased_buffer_mse() {
        // Buffer generated under doubled dt: a systematic model bias the
        // adaptation must reduce.
        let p = quiet_params(12);
        let buffer = small_buffer(2.0, 32);
        let (_, report) = vfe_adapt(&p, &buffer, 1e-3, 10, 1e-3, 3).unwrap();
        assert!(report.applied);
        assert!(report.post_mse < report.pre_mse, "pre {} post {}", report.pre_mse, report.post_mse);
    }

    fn control_world(seed: u64) -> WorldState {
        let cfg = LotConfig::scenario_1();
        let p = DynamicsParams::default();
        let mut rng = rng_from_seed(seed);
        build_world(&cfg, &Placement::ControlRandom, &p, &mut rng).unwrap()
    }

    #[test]
    fn episode_already_parked() {
        let mut world = control_world(13);
        let controlled = world.controlled_indices();
        for &i in &controlled {
            let spot = world.lot.spots[world.vehicles[i].target_spot.unwrap()];
            world.vehicles[i].state =
                VehicleState::at_rest(spot.center.0, spot.center.1, spot.orientation);
        }
        let p = quiet_params(14);
        let result = run_episode(
            &world,
            &p,
            &PlannerConfig::default(),
            &PreferenceWeights::default(),
            &ParkTolerance::default(),
            &NoiseCovariance::zero(),
            15,
        )
        .unwrap();
        assert_eq!(result.outcome, EpisodeOutcome::Parked);
        assert_eq!(result.steps_used, 0);
    }

    #[test]
    fn episode_seeded_determinism() {
        let world = control_world(16).with_max_steps(8);
        let p = quiet_params(17);
        let cfg =
            PlannerConfig { n_candidates: 4, n_rollouts: 2, horizon: 3, ..Default::default() };
        let run = || {
            run_episode(
                &world,
                &p,
                &cfg,
                &PreferenceWeights::default(),
                &ParkTolerance::default(),
                &NoiseCovariance::from_array([1e-6; 5]),
                18,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn collected_dataset_feeds_adaptation() {
        // End-to-end smoke: collect, then adapt on the raw buffer format.
        let mut lot = LotConfig::scenario_1();
        lot.n_controlled = 1;
        lot.n_parked = 0;
        let cfg = CollectConfig {
            lot,
            dynamics: DynamicsParams::default(),
            schedule: NoiseSchedule { steps: 20, ..Default::default() },
            process_noise: NoiseCovariance::zero(),
        };
        let (data, _) = collect(&cfg, 1, 19).unwrap();
        let p = quiet_params(20);
        let (_, report) = vfe_adapt(&p, &data.records, 1e-3, 2, 1e-3, 21).unwrap();
        assert!(report.applied);
    }
}
