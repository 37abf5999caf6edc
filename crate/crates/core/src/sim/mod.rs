//! Planar-with-height peg insertion: contact physics, cameras and skin.

mod config;
mod episode;
mod render;
mod skin;
mod targets;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{EnvConfig, Rect, SkinConfig, TargetConfig};
pub use episode::Episode;
pub use render::render;
pub use skin::{
    clean_field, dipole_field, dipole_position, magnetometer_positions, rest_field, skin_read, SkinReading,
    N_MAGNETOMETERS,
};
pub use targets::{check_separation, held_out_targets, linf, sample_train_target, DEFAULT_EVAL_SEED};

use crate::data::TACTILE_WIDTH;

/// Gripper opening/closing speed (fraction per second).
const GRIP_RATE: f64 = 2.0;
/// Highest reachable end-effector height (cm).
pub const Z_CEILING: f64 = 8.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("action contains a non-finite component: {0:?}")]
    NonFiniteAction([f64; 4]),
    #[error("episode ended before its first tick")]
    EmptyEpisode,
    #[error("cannot place {n} held-out targets {delta} cm apart from each other and the training targets")]
    CannotSeparate { n: usize, delta: f64 },
}

/// Complete simulator state. Positions in cm, forces in arbitrary units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub ee: [f64; 3],
    /// 1 is closed on the peg.
    pub gripper: f64,
    pub vel: [f64; 3],
    pub contact: [f64; 3],
    /// Viscous shear on the board, kept separately from bevel and wall forces.
    pub shear: [f64; 2],
    pub depth: f64,
    pub t: f64,
    pub steps: u64,
    pub target: TargetConfig,
    pub drift: [f32; TACTILE_WIDTH],
    pub rng_state: u64,
}

impl SimState {
    pub fn ee_xy(&self) -> [f64; 2] {
        [self.ee[0], self.ee[1]]
    }

    /// End-effector offset from the slot centre.
    pub fn slot_offset(&self) -> [f64; 2] {
        [self.ee[0] - self.target.slot_xy[0], self.ee[1] - self.target.slot_xy[1]]
    }

    pub fn proprio(&self) -> [f32; 4] {
        [self.ee[0] as f32, self.ee[1] as f32, self.ee[2] as f32, self.gripper as f32]
    }
}

pub fn reset(cfg: &EnvConfig, target: &TargetConfig, seed: u64) -> Result<SimState, SimError> {
    cfg.validate_target(target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.start_region;
    let x = r.origin[0] + rng.random::<f64>() * r.size[0];
    let y = r.origin[1] + rng.random::<f64>() * r.size[1];
    Ok(SimState {
        ee: [x, y, cfg.z_start],
        gripper: 1.0,
        vel: [0.0; 3],
        contact: [0.0; 3],
        shear: [0.0; 2],
        depth: 0.0,
        t: 0.0,
        steps: 0,
        target: *target,
        drift: [0.0; TACTILE_WIDTH],
        rng_state: rng.next_u64(),
    })
}

/// Advances one physics step. `action` holds per-step displacements
/// `(dx, dy, dz)` in cm plus a gripper change; each is clamped to the
/// per-step limit.
pub fn step(state: &SimState, action: [f64; 4], cfg: &EnvConfig) -> Result<SimState, SimError> {
    if action.iter().any(|a| !a.is_finite()) {
        return Err(SimError::NonFiniteAction(action));
    }
    let dt = cfg.dt_sim();
    let lim = cfg.max_step();
    let d = [action[0].clamp(-lim, lim), action[1].clamp(-lim, lim), action[2].clamp(-lim, lim)];
    let dg = action[3].clamp(-GRIP_RATE * dt, GRIP_RATE * dt);

    let mut rng = ChaCha8Rng::seed_from_u64(state.rng_state);
    let mut drift = state.drift;
    if cfg.drift_sigma > 0.0 {
        let walk = Normal::new(0.0, cfg.drift_sigma).expect("drift_sigma is finite");
        for ch in drift.iter_mut() {
            *ch += walk.sample(&mut rng) as f32;
        }
    }

    let tgt = &state.target;
    let tol = tgt.slot_tol;
    let mut xy = [
        (state.ee[0] + d[0]).clamp(0.0, cfg.workspace[0]),
        (state.ee[1] + d[1]).clamp(0.0, cfg.workspace[1]),
    ];
    let off = [xy[0] - tgt.slot_xy[0], xy[1] - tgt.slot_xy[1]];
    let z_cmd = (state.ee[2] + d[2]).min(Z_CEILING);
    let mut contact = [0.0; 3];
    let mut shear = [0.0; 2];
    let z;

    if state.ee[2] < 0.0 {
        // In the slot: the walls hold the peg within the clearance.
        for i in 0..2 {
            let excess = off[i].abs() - tol;
            if excess > 0.0 {
                xy[i] = tgt.slot_xy[i] + tol * off[i].signum();
                contact[i] = -off[i].signum() * cfg.k_wall * excess;
            }
        }
        z = floor_of_slot(z_cmd, cfg, &mut contact);
    } else if z_cmd >= 0.0 {
        z = z_cmd;
    } else if off[0].abs() <= tol && off[1].abs() <= tol {
        z = floor_of_slot(z_cmd, cfg, &mut contact);
    } else {
        // Pressing on the board: the position controller is stopped at the
        // surface and the skin feels the unmet demand.
        z = 0.0;
        contact[2] = cfg.k_n * -z_cmd;
        let alpha = dt / (cfg.mu_damp + dt);
        let on_board_before = state.ee[2] == 0.0 && state.contact[2] > 0.0;
        for i in 0..2 {
            let prev = if on_board_before { state.shear[i] } else { 0.0 };
            let target = -cfg.k_t * d[i] / dt;
            shear[i] = prev + alpha * (target - prev);
            contact[i] = shear[i];
        }
        let band = tol + cfg.chamfer_width;
        if off[0].abs() <= band && off[1].abs() <= band {
            for i in 0..2 {
                if off[i].abs() > tol {
                    contact[i] -= off[i].signum() * cfg.chamfer_gain * contact[2];
                }
            }
        }
    }

    let ee = [xy[0], xy[1], z];
    let steps = state.steps + 1;
    Ok(SimState {
        ee,
        gripper: (state.gripper + dg).clamp(0.0, 1.0),
        vel: [(ee[0] - state.ee[0]) / dt, (ee[1] - state.ee[1]) / dt, (ee[2] - state.ee[2]) / dt],
        contact,
        shear,
        depth: (-z).max(0.0),
        t: steps as f64 / cfg.sim_rate_hz as f64,
        steps,
        target: *tgt,
        drift,
        rng_state: rng.next_u64(),
    })
}

fn floor_of_slot(z_cmd: f64, cfg: &EnvConfig, contact: &mut [f64; 3]) -> f64 {
    let bottom = -cfg.insert_depth_max;
    if z_cmd < bottom {
        contact[2] = cfg.k_n * (bottom - z_cmd);
        bottom
    } else {
        z_cmd
    }
}

pub fn is_success(state: &SimState, cfg: &EnvConfig) -> bool {
    let off = state.slot_offset();
    let tol = state.target.slot_tol;
    state.depth >= cfg.insert_depth_goal && off[0].abs() <= tol && off[1].abs() <= tol
}
