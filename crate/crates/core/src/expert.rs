//! Scripted demonstrator with angular noise on its commanded velocity.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Collector, DataError, DatasetEntry, DatasetIndex, Demonstration, ACTION_WIDTH};
use crate::sim::{
    held_out_targets, is_success, sample_train_target, EnvConfig, Episode, SimError, SimState, TargetConfig,
    DEFAULT_EVAL_SEED,
};

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("expert failed {failures} of {attempts} episodes while collecting {wanted} demonstrations")]
    ExpertStuck { attempts: usize, failures: usize, wanted: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertParams {
    /// Std (cm, per axis) of the expert's initial guess of the slot position.
    pub estimate_err_cm: f64,
    pub v_cruise: f64,
    pub v_descend: f64,
    pub v_seek: f64,
    pub press_force_target: f64,
    /// Proportional gain from force error to downward speed (cm/s per unit).
    pub press_gain: f64,
    pub theta_max_deg: f64,
    /// Episodes longer than this count as failures (s).
    pub max_duration: f64,
    pub seed: u64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            estimate_err_cm: 1.0,
            v_cruise: 4.0,
            v_descend: 3.0,
            v_seek: 1.5,
            press_force_target: 2.0,
            press_gain: 0.5,
            theta_max_deg: 15.0,
            max_duration: 15.0,
            seed: 0,
        }
    }
}

/// Rotates `v` by `theta` radians in the plane; the length is unchanged.
pub fn perturb_direction(v: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Approach,
    Descend,
    Seek,
    Insert,
    Hold,
}

/// Per-episode expert memory: current phase and the noisy slot guess.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertMemory {
    pub phase: Phase,
    pub estimate: [f64; 2],
    /// Rotation applied on the latest tick (radians).
    pub last_theta: f64,
}

impl ExpertMemory {
    pub fn new<R: Rng + ?Sized>(truth: &TargetConfig, params: &ExpertParams, rng: &mut R) -> Self {
        let mut estimate = truth.slot_xy;
        if params.estimate_err_cm > 0.0 {
            let n = Normal::new(0.0, params.estimate_err_cm).expect("finite estimate error");
            estimate[0] += n.sample(rng);
            estimate[1] += n.sample(rng);
        }
        Self { phase: Phase::Approach, estimate, last_theta: 0.0 }
    }
}

fn towards(from: [f64; 2], to: [f64; 2], speed: f64, tick_dt: f64) -> [f64; 2] {
    let d = [to[0] - from[0], to[1] - from[1]];
    let dist = d[0].hypot(d[1]);
    if dist == 0.0 {
        return [0.0, 0.0];
    }
    // slow down so the last tick lands on the goal instead of overshooting
    let v = speed.min(dist / tick_dt);
    [d[0] / dist * v, d[1] / dist * v]
}

/// One policy-rate expert action (cm and gripper change per tick) and the
/// updated memory.
pub fn expert_action<R: Rng + ?Sized>(
    state: &SimState,
    truth: &TargetConfig,
    memory: &ExpertMemory,
    params: &ExpertParams,
    cfg: &EnvConfig,
    rng: &mut R,
) -> ([f32; ACTION_WIDTH], ExpertMemory) {
    let tick_dt = 1.0 / cfg.policy_rate_hz as f64;
    let ee = state.ee_xy();
    let fz = state.contact[2];
    // downward speed that holds the target press force on a rigid surface
    let press_feedforward = params.press_force_target / cfg.k_n * cfg.sim_rate_hz as f64;
    let mut mem = memory.clone();

    if is_success(state, cfg) {
        mem.phase = Phase::Hold;
    }
    if mem.phase == Phase::Approach && (ee[0] - mem.estimate[0]).hypot(ee[1] - mem.estimate[1]) < 1e-3 {
        mem.phase = Phase::Descend;
    }
    if mem.phase == Phase::Descend && (fz > 0.0 || state.depth > 0.0) {
        mem.phase = Phase::Seek;
    }
    if mem.phase == Phase::Seek && state.depth > 0.0 {
        mem.phase = Phase::Insert;
    }

    let (vxy, vz) = match mem.phase {
        Phase::Approach => {
            let vz = ((cfg.z_start - state.ee[2]) / tick_dt).clamp(-params.v_descend, params.v_descend);
            (towards(ee, mem.estimate, params.v_cruise, tick_dt), vz)
        }
        Phase::Descend => (towards(ee, mem.estimate, params.v_cruise, tick_dt), -params.v_descend),
        Phase::Seek => {
            let vz = -press_feedforward - params.press_gain * (params.press_force_target - fz);
            (towards(ee, truth.slot_xy, params.v_seek, tick_dt), vz)
        }
        Phase::Insert => (towards(ee, truth.slot_xy, params.v_seek, tick_dt), -params.v_descend),
        Phase::Hold => ([0.0, 0.0], 0.0),
    };

    let theta_max = params.theta_max_deg.to_radians();
    let theta = if theta_max > 0.0 { rng.random_range(-theta_max..=theta_max) } else { 0.0 };
    let vxy = perturb_direction(vxy, theta);
    mem.last_theta = theta;

    let lim = cfg.max_tick();
    let a = [
        (vxy[0] * tick_dt).clamp(-lim, lim),
        (vxy[1] * tick_dt).clamp(-lim, lim),
        (vz * tick_dt).clamp(-lim, lim),
        0.0,
    ];
    (a.map(|v| v as f32), mem)
}

/// Runs one scripted episode: a still first tick for the skin baseline, then
/// expert ticks until success or the time limit.
pub fn run_expert_episode(
    cfg: &EnvConfig,
    params: &ExpertParams,
    target: &TargetConfig,
    seed: u64,
) -> Result<Demonstration, ExpertError> {
    let mut ep = Episode::new(cfg, target, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut mem = ExpertMemory::new(target, params, &mut rng);
    let max_ticks = (params.max_duration * cfg.policy_rate_hz as f64).round() as u64;
    ep.tick([0.0; ACTION_WIDTH])?;
    while !ep.is_success() && ep.ticks() < max_ticks {
        let (a, next) = expert_action(ep.state(), target, &mem, params, cfg, &mut rng);
        mem = next;
        ep.tick(a)?;
    }
    Ok(ep.finish(Collector::Scripted, params.theta_max_deg)?)
}

/// Options for [`collect_scripted`] beyond the expert itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectOptions {
    /// Training slots keep clear of the held-out set drawn from this seed.
    pub eval_seed: u64,
    pub n_held_out: usize,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self { eval_seed: DEFAULT_EVAL_SEED, n_held_out: 10 }
    }
}

/// Collects `n` successful demonstrations into `out_dir`, re-rolling failed
/// episodes, and writes `index.json`.
pub fn collect_scripted(
    cfg: &EnvConfig,
    params: &ExpertParams,
    n: usize,
    out_dir: &Path,
    opts: &CollectOptions,
) -> Result<DatasetIndex, ExpertError> {
    cfg.validate()?;
    let held_out = held_out_targets(cfg, opts.n_held_out, opts.eval_seed)?;
    let mut master = ChaCha8Rng::seed_from_u64(params.seed);
    let max_attempts = 2 * n + 10;
    let mut index = DatasetIndex {
        collector: Collector::Scripted,
        theta_max_deg: params.theta_max_deg,
        estimate_err_cm: params.estimate_err_cm,
        seed: params.seed,
        eval_seed: opts.eval_seed,
        attempts: 0,
        demos: Vec::with_capacity(n),
    };
    while index.demos.len() < n {
        if index.attempts >= max_attempts {
            return Err(ExpertError::ExpertStuck {
                attempts: index.attempts,
                failures: index.attempts - index.demos.len(),
                wanted: n,
            });
        }
        index.attempts += 1;
        let target = sample_train_target(cfg, &mut master, &held_out)?;
        let seed = master.next_u64();
        let demo = run_expert_episode(cfg, params, &target, seed)?;
        if !demo.meta.success {
            continue;
        }
        let dir = format!("demo_{:04}", index.demos.len());
        crate::data::save_demo(&demo, &out_dir.join(&dir))?;
        index.demos.push(DatasetEntry { dir, seed, slot_xy: target.slot_xy, duration: demo.meta.duration });
    }
    index.save(out_dir)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn() {
        let v = perturb_direction([1.0, 0.0], std::f64::consts::FRAC_PI_2);
        assert!((v[0]).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        assert_eq!(perturb_direction([0.3, -2.0], 0.0), [0.3, -2.0]);
    }
}
