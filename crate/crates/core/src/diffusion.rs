//! Forward diffusion over trajectories and dataset reversal.
//!
//! Vehicles start parked and take chained random actions whose standard
//! deviation grows linearly over the episode, driving the lot from order
//! into disorder until a collision or the step cap ends the trial. Every
//! transition is recorded together with guidance features (bearing and
//! distance to the vehicle's own origin spot). Reversing the dataset turns
//! each chain into rollback pairs: the time-reversed state at step t paired
//! with the time-reversed state one step earlier.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    guidance, reverse_state, ActionCommand, DynamicsParams, GuidanceFeatures, NoiseCovariance,
    VehicleState, ACTION_DIM,
};
use crate::error::{Error, Result};
use crate::rng::{rng_for_stream, Rng};
use crate::world::{build_world, world_step, LotConfig, Placement, TerminalEvent};
use rand_distr::{Distribution, StandardNormal};

/// Linearly growing per-dimension action-noise schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    /// Noise std at step 0 (throttle, steer).
    pub sigma_min: [f64; ACTION_DIM],
    /// Noise std at step T-1.
    pub sigma_max: [f64; ACTION_DIM],
    /// Total steps T.
    pub steps: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            sigma_min: [0.5, 0.02],
            sigma_max: [3.0, 0.3],
            steps: 100,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::config("schedule.steps must be >= 2"));
        }
        for d in 0..ACTION_DIM {
            if !(self.sigma_min[d] >= 0.0) {
                return Err(Error::config("schedule.sigma_min must be >= 0"));
            }
            if self.sigma_min[d] > self.sigma_max[d] {
                return Err(Error::config("schedule.sigma_min must be <= schedule.sigma_max"));
            }
        }
        Ok(())
    }
}

/// Noise std at step `i`: `sigma_min + (sigma_max - sigma_min) * i/(T-1)`.
pub fn sigma_at(i: usize, sched: &NoiseSchedule) -> Result<[f64; ACTION_DIM]> {
    if i >= sched.steps {
        return Err(Error::usage(format!(
            "schedule step {i} out of range 0..{}",
            sched.steps
        )));
    }
    let frac = i as f64 / (sched.steps - 1) as f64;
    let mut out = [0.0; ACTION_DIM];
    for d in 0..ACTION_DIM {
        out[d] = sched.sigma_min[d] + (sched.sigma_max[d] - sched.sigma_min[d]) * frac;
    }
    Ok(out)
}

/// Draw the next chained action: per-dimension Gaussian centered on the
/// previous action, clipped to the action bounds.
pub fn sample_chained_action(
    prev: ActionCommand,
    sigma: [f64; ACTION_DIM],
    p: &DynamicsParams,
    rng: &mut Rng,
) -> ActionCommand {
    let mut a = prev.as_array();
    for (value, s) in a.iter_mut().zip(sigma) {
        if s > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            *value += s * z;
        }
    }
    p.clamp_action(ActionCommand::from_array(a))
}

/// One recorded transition of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub trial_id: usize,
    pub vehicle_id: usize,
    /// Step index within the chain.
    pub t: usize,
    pub state: VehicleState,
    /// Guidance of `state` toward the vehicle's reference spot.
    pub guidance: GuidanceFeatures,
    pub action: ActionCommand,
    pub next_state: VehicleState,
}

/// Environment configuration for a collection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub lot: LotConfig,
    pub dynamics: DynamicsParams,
    pub schedule: NoiseSchedule,
    /// True transition noise applied by the simulator.
    pub process_noise: NoiseCovariance,
}

/// Dataset metadata, serialized as the header line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub schedule: NoiseSchedule,
    pub dynamics: DynamicsParams,
    pub lot: LotConfig,
    pub process_noise: NoiseCovariance,
    pub seed: u64,
    pub n_trials: usize,
}

/// Recorded transitions plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub meta: DatasetMeta,
    pub records: Vec<TransitionRecord>,
}

/// Per-trial outcome counts reported by collection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TerminationHistogram {
    pub collision: usize,
    pub boundary: usize,
    pub max_steps: usize,
}

fn run_trial(
    cfg: &CollectConfig,
    trial_id: usize,
    rng: &mut Rng,
) -> Result<(Vec<TransitionRecord>, TerminalEvent)> {
    let mut world = build_world(&cfg.lot, &Placement::RandomSpots, &cfg.dynamics, rng)?
        .with_max_steps(cfg.schedule.steps);
    let controlled = world.controlled_indices();
    let origins: Vec<(f64, f64)> = controlled
        .iter()
        .map(|&i| cfg.lot.spots[world.vehicles[i].origin_spot.expect("training placement")].center)
        .collect();

    let mut prev_actions = vec![ActionCommand::zero(); controlled.len()];
    // Per-vehicle chains, regrouped contiguously at the end.
    let mut chains: Vec<Vec<TransitionRecord>> = vec![Vec::new(); controlled.len()];

    let mut step = 0;
    let event = loop {
        let sigma = sigma_at(step, &cfg.schedule)?;
        let actions: Vec<ActionCommand> = prev_actions
            .iter()
            .map(|&prev| sample_chained_action(prev, sigma, &cfg.dynamics, rng))
            .collect();
        let before: Vec<VehicleState> =
            controlled.iter().map(|&i| world.vehicles[i].state).collect();
        world = world_step(&world, &actions, &cfg.dynamics, &cfg.process_noise, rng)?;
        for (v, &world_idx) in controlled.iter().enumerate() {
            chains[v].push(TransitionRecord {
                trial_id,
                vehicle_id: v,
                t: step,
                state: before[v],
                guidance: guidance(&before[v], origins[v]),
                action: actions[v],
                next_state: world.vehicles[world_idx].state,
            });
        }
        prev_actions = actions;
        step += 1;
        if let Some(ev) = world.terminal_event {
            break ev;
        }
    };
    Ok((chains.into_iter().flatten().collect(), event))
}

/// Run `n_trials` independent forward-diffusion trials and collect every
/// transition. Trials use derived seeds, so parallel and sequential
/// execution produce the same dataset.
pub fn collect(
    cfg: &CollectConfig,
    n_trials: usize,
    seed: u64,
) -> Result<(TrajectoryDataset, TerminationHistogram)> {
    cfg.lot.validate()?;
    cfg.dynamics.validate()?;
    cfg.schedule.validate()?;
    cfg.process_noise.validate()?;
    if n_trials == 0 {
        return Err(Error::config("collect: n_trials must be >= 1"));
    }
    let trials: Vec<Result<(Vec<TransitionRecord>, TerminalEvent)>> = (0..n_trials)
        .into_par_iter()
        .map(|trial_id| {
            let mut rng = rng_for_stream(seed, trial_id as u64);
            run_trial(cfg, trial_id, &mut rng)
        })
        .collect();

    let mut records = Vec::new();
    let mut hist = TerminationHistogram::default();
    let mut completed = 0;
    for trial in trials {
        let (recs, event) = trial?;
        completed += 1;
        records.extend(recs);
        match event {
            TerminalEvent::Collision(_, _) => hist.collision += 1,
            TerminalEvent::Boundary(_) => hist.boundary += 1,
            TerminalEvent::MaxSteps => hist.max_steps += 1,
        }
    }
    if completed == 0 {
        return Err(Error::config("collect: no trials completed"));
    }
    let meta = DatasetMeta {
        schema_version: 1,
        schedule: cfg.schedule,
        dynamics: cfg.dynamics,
        lot: cfg.lot.clone(),
        process_noise: cfg.process_noise,
        seed,
        n_trials,
    };
    Ok((TrajectoryDataset { meta, records }, hist))
}

impl TrajectoryDataset {
    /// Iterate chains: maximal runs of records sharing (trial_id, vehicle_id).
    pub fn chains(&self) -> Vec<&[TransitionRecord]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            let boundary = i == self.records.len()
                || self.records[i].trial_id != self.records[start].trial_id
                || self.records[i].vehicle_id != self.records[start].vehicle_id;
            if boundary {
                out.push(&self.records[start..i]);
                start = i;
            }
        }
        out
    }

    /// Audit structural invariants: chains contiguous and time-ordered,
    /// actions within bounds, transitions reachable under the dynamics.
    pub fn audit(&self) -> Result<()> {
        let p = &self.meta.dynamics;
        let slack = 6.0 * self.meta.process_noise.sigma_x2.max(self.meta.process_noise.sigma_y2).sqrt();
        let max_move = p.v_max * p.dt + slack;
        for chain in self.chains() {
            for (k, r) in chain.iter().enumerate() {
                if r.t != chain[0].t + k {
                    return Err(Error::usage(format!(
                        "chain (trial {}, vehicle {}) not time-ordered",
                        r.trial_id, r.vehicle_id
                    )));
                }
                if !p.contains_action(r.action) {
                    return Err(Error::usage("recorded action outside bounds".to_string()));
                }
                let dx = r.next_state.x - r.state.x;
                let dy = r.next_state.y - r.state.y;
                if dx.abs() > max_move || dy.abs() > max_move {
                    return Err(Error::usage("transition exceeds reachable displacement".to_string()));
                }
            }
        }
        Ok(())
    }

    /// Reconstruct the reference spot center a chain's guidance points at.
    fn chain_origin(chain: &[TransitionRecord]) -> (f64, f64) {
        let r = &chain[0];
        (
            r.state.x + r.guidance.l * r.guidance.theta.cos(),
            r.state.y + r.guidance.l * r.guidance.theta.sin(),
        )
    }
}

/// Re-emit every chain in reverse time order with every state time-reversed.
///
/// A forward chain S_0 -> ... -> S_n becomes rollback records
/// (S'_n -> S'_{n-1}), ..., (S'_1 -> S'_0): `state` is the current reversed
/// state, `next_state` the true previous reversed state (the training
/// target), and `action` keeps the forward action as metadata only — the
/// reverse-phase action differs from it and is never supervised. Guidance is
/// recomputed at the reversed record's position toward the chain's origin
/// spot.
pub fn reverse_dataset(d: &TrajectoryDataset) -> TrajectoryDataset {
    let mut records = Vec::with_capacity(d.records.len());
    for chain in d.chains() {
        let origin = TrajectoryDataset::chain_origin(chain);
        for (k, r) in chain.iter().rev().enumerate() {
            let state = reverse_state(r.next_state);
            records.push(TransitionRecord {
                trial_id: r.trial_id,
                vehicle_id: r.vehicle_id,
                t: k,
                state,
                guidance: guidance(&state, origin),
                action: r.action,
                next_state: reverse_state(r.state),
            });
        }
    }
    TrajectoryDataset { meta: d.meta.clone(), records }
}

// ---------------------------------------------------------------------------
// Dataset file format: JSON lines, one record per line, header first.

#[derive(Serialize, Deserialize)]
struct RecordLine {
    trial_id: usize,
    vehicle_id: usize,
    t: usize,
    state: [f64; 5],
    theta: f64,
    l: f64,
    action: [f64; 2],
    next_state: [f64; 5],
}

impl From<&TransitionRecord> for RecordLine {
    fn from(r: &TransitionRecord) -> Self {
        RecordLine {
            trial_id: r.trial_id,
            vehicle_id: r.vehicle_id,
            t: r.t,
            state: r.state.as_array(),
            theta: r.guidance.theta,
            l: r.guidance.l,
            action: r.action.as_array(),
            next_state: r.next_state.as_array(),
        }
    }
}

impl From<RecordLine> for TransitionRecord {
    fn from(l: RecordLine) -> Self {
        TransitionRecord {
            trial_id: l.trial_id,
            vehicle_id: l.vehicle_id,
            t: l.t,
            state: VehicleState::from_array(l.state),
            guidance: GuidanceFeatures { theta: l.theta, l: l.l },
            action: ActionCommand::from_array(l.action),
            next_state: VehicleState::from_array(l.next_state),
        }
    }
}

impl TrajectoryDataset {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.meta).map_err(io_err)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, &RecordLine::from(r)).map_err(io_err)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, message: "empty dataset file".into() })?;
        let meta: DatasetMeta = serde_json::from_str(&header?).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        if meta.schema_version != 1 {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported schema_version {}", meta.schema_version),
            });
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            records.push(rec.into());
        }
        Ok(TrajectoryDataset { meta, records })
    }
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
