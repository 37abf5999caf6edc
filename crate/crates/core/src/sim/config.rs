use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::modality::View;

/// Axis-aligned rectangle in board coordinates (cm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub origin: [f64; 2],
    pub size: [f64; 2],
}

impl Rect {
    pub fn new(origin: [f64; 2], size: [f64; 2]) -> Self {
        Self { origin, size }
    }
    pub fn max(&self) -> [f64; 2] {
        [self.origin[0] + self.size[0], self.origin[1] + self.size[1]]
    }
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let m = self.max();
        p[0] >= self.origin[0] && p[0] <= m[0] && p[1] >= self.origin[1] && p[1] <= m[1]
    }
    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(other.origin) && self.contains(other.max())
    }
}

/// Magnetic skin geometry. Lengths in cm, compliances in cm per force unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkinConfig {
    /// Rest height of the dipole above the magnetometer plane.
    pub h0: f64,
    /// Spacing of the four outer magnetometers from the centre one.
    pub s: f64,
    /// Dipole moment (z axis); the default makes the centre z reading 100.
    pub m0: f64,
    pub c_n: f64,
    pub c_t: f64,
}

impl Default for SkinConfig {
    fn default() -> Self {
        Self { h0: 0.4, s: 0.6, m0: 3.2, c_n: 0.05, c_t: 0.05 }
    }
}

/// Goal and appearance of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub slot_xy: [f64; 2],
    pub peg_color: [u8; 3],
    pub peg_half_width: f64,
    /// 0 makes the slot indistinguishable from the board.
    pub slot_contrast: f64,
    /// Largest per-axis offset at which the peg still enters the slot.
    pub slot_tol: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { slot_xy: [20.0, 11.5], peg_color: [200, 60, 40], peg_half_width: 0.5, slot_contrast: 0.6, slot_tol: 0.3 }
    }
}

impl TargetConfig {
    pub fn at(slot_xy: [f64; 2]) -> Self {
        Self { slot_xy, ..Self::default() }
    }

    /// Half-width of the drawn opening: the peg plus clearance.
    pub fn opening_half_width(&self) -> f64 {
        self.peg_half_width + self.slot_tol
    }
}

/// Static simulator configuration, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub workspace: [f64; 2],
    pub train_grid: Rect,
    pub start_region: Rect,
    pub z_start: f64,
    /// Physics rate; the integration step is `1 / sim_rate_hz`.
    pub sim_rate_hz: u32,
    pub policy_rate_hz: u32,
    pub tactile_rate_hz: u32,
    pub camera_rate_hz: u32,
    /// Per-axis speed limit (cm/s).
    pub v_max: f64,
    pub k_n: f64,
    pub k_t: f64,
    /// Time constant (s) of the shear response.
    pub mu_damp: f64,
    pub k_wall: f64,
    /// Width of the bevel around the opening that pushes the peg sideways.
    pub chamfer_width: f64,
    /// Lateral bevel force per unit of normal force.
    pub chamfer_gain: f64,
    pub insert_depth_goal: f64,
    pub insert_depth_max: f64,
    pub image_hw: usize,
    pub views: Vec<View>,
    /// Side of the square area seen by the wrist camera (cm).
    pub wrist_window: f64,
    /// Half-width of the gripper housing as seen from above (cm).
    pub gripper_half_width: f64,
    pub drift_sigma: f64,
    pub noise_sigma: f64,
    pub skin: SkinConfig,
    /// Minimum L∞ distance between held-out and training slots (cm).
    pub holdout_delta: f64,
    /// Appearance applied to sampled targets.
    pub target_defaults: TargetConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            workspace: [40.0, 20.0],
            train_grid: Rect::new([10.0, 8.0], [20.0, 7.0]),
            start_region: Rect::new([12.0, 1.0], [16.0, 3.0]),
            z_start: 3.0,
            sim_rate_hz: 100,
            policy_rate_hz: 10,
            tactile_rate_hz: 100,
            camera_rate_hz: 30,
            v_max: 6.0,
            k_n: 100.0,
            k_t: 0.4,
            mu_damp: 0.03,
            k_wall: 100.0,
            chamfer_width: 1.2,
            chamfer_gain: 1.0,
            insert_depth_goal: 0.5,
            insert_depth_max: 1.0,
            image_hw: 64,
            views: View::ALL.to_vec(),
            wrist_window: 8.0,
            gripper_half_width: 2.0,
            drift_sigma: 0.02,
            noise_sigma: 0.5,
            skin: SkinConfig::default(),
            holdout_delta: 1.0,
            target_defaults: TargetConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| SimError::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dt_sim(&self) -> f64 {
        1.0 / self.sim_rate_hz as f64
    }

    /// Physics steps per policy tick.
    pub fn substeps(&self) -> u32 {
        self.sim_rate_hz / self.policy_rate_hz
    }

    /// Physics steps between tactile samples.
    pub fn tactile_decimation(&self) -> u32 {
        self.sim_rate_hz / self.tactile_rate_hz
    }

    /// Largest per-step displacement along one axis.
    pub fn max_step(&self) -> f64 {
        self.v_max * self.dt_sim()
    }

    /// Largest per-tick displacement along one axis.
    pub fn max_tick(&self) -> f64 {
        self.v_max / self.policy_rate_hz as f64
    }

    pub fn workspace_rect(&self) -> Rect {
        Rect::new([0.0, 0.0], self.workspace)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.workspace[0] > 0.0 && self.workspace[1] > 0.0) {
            return bad("workspace must be positive");
        }
        if !self.workspace_rect().contains_rect(&self.train_grid) {
            return bad("train_grid must lie inside the workspace");
        }
        if !self.workspace_rect().contains_rect(&self.start_region) {
            return bad("start_region must lie inside the workspace");
        }
        let rates = [self.sim_rate_hz, self.policy_rate_hz, self.tactile_rate_hz, self.camera_rate_hz];
        if rates.contains(&0) {
            return bad("rates must be positive");
        }
        // Cameras sample the latest physics state instead, so they are exempt.
        if self.sim_rate_hz % self.policy_rate_hz != 0 || self.sim_rate_hz % self.tactile_rate_hz != 0 {
            return bad("policy and tactile periods must be whole multiples of the physics step");
        }
        let positive = [
            self.v_max,
            self.k_n,
            self.k_wall,
            self.insert_depth_goal,
            self.wrist_window,
            self.skin.h0,
            self.skin.s,
            self.skin.m0,
            self.z_start,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return bad("speeds, stiffnesses, lengths and the dipole moment must be positive");
        }
        let non_negative = [
            self.k_t,
            self.mu_damp,
            self.chamfer_width,
            self.chamfer_gain,
            self.gripper_half_width,
            self.drift_sigma,
            self.noise_sigma,
            self.skin.c_n,
            self.skin.c_t,
            self.holdout_delta,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("gains, widths and noise levels must be non-negative");
        }
        if self.insert_depth_max < self.insert_depth_goal {
            return bad("insert_depth_max must be at least insert_depth_goal");
        }
        if self.image_hw < 4 {
            return bad("image_hw must be at least 4");
        }
        if self.views.is_empty() {
            return bad("at least one camera view is required");
        }
        self.validate_target(&self.target_defaults.clone_with_slot(self.train_grid.origin))
    }

    pub fn validate_target(&self, target: &TargetConfig) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidTarget(m));
        if !self.workspace_rect().contains(target.slot_xy) || !target.slot_xy.iter().all(|v| v.is_finite()) {
            return bad(format!("slot {:?} outside the workspace", target.slot_xy));
        }
        if !(target.slot_tol > 0.0) {
            return bad("slot_tol must be positive".into());
        }
        if !(0.0..=1.0).contains(&target.slot_contrast) {
            return bad("slot_contrast must lie in [0, 1]".into());
        }
        if !(target.peg_half_width > 0.0) || !target.peg_half_width.is_finite() {
            return bad("peg_half_width must be positive".into());
        }
        Ok(())
    }
}

impl TargetConfig {
    fn clone_with_slot(&self, slot_xy: [f64; 2]) -> Self {
        Self { slot_xy, ..*self }
    }
}
