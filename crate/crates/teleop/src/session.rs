use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use visk_core::data::{baseline, save_demo, Collector, DatasetEntry, DatasetIndex, ACTION_WIDTH, TACTILE_WIDTH};
use visk_core::expert::perturb_direction;
use visk_core::sim::{held_out_targets, sample_train_target, EnvConfig, Episode, TargetConfig, DEFAULT_EVAL_SEED};

use crate::protocol::{ClientMessage, Command, Frame};
use crate::TeleopError;

/// Skin samples averaged into the per-episode baseline.
const K_BASELINE: usize = visk_core::data::DEFAULT_K_BASELINE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeleopConfig {
    pub env: EnvConfig,
    /// Half-width of the uniform direction perturbation, degrees.
    pub theta_max_deg: f64,
    pub seed: u64,
    /// Random scenes keep clear of the held-out set drawn from this seed.
    pub eval_seed: u64,
    pub n_held_out: usize,
    /// Episodes stop on their own after this long (s).
    pub max_episode_s: f64,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            theta_max_deg: 15.0,
            seed: 0,
            eval_seed: DEFAULT_EVAL_SEED,
            n_held_out: 10,
            max_episode_s: 60.0,
        }
    }
}

/// Result of ending an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StopOutcome {
    pub success: bool,
    /// Saved demonstration directory, for successful recorded episodes.
    pub saved: Option<PathBuf>,
}

/// Teleoperation state machine: an idle scene, or a running episode that
/// is being recorded. Commands are latest-wins and held between ticks.
pub struct Session {
    cfg: TeleopConfig,
    out_dir: PathBuf,
    rng: ChaCha8Rng,
    held_out: Vec<TargetConfig>,
    target: TargetConfig,
    episode: Episode,
    recording: bool,
    command: Command,
    theta: f64,
    baseline: [f32; TACTILE_WIDTH],
    index: DatasetIndex,
}

impl Session {
    pub fn new(cfg: TeleopConfig, out_dir: &Path) -> Result<Self, TeleopError> {
        cfg.env.validate()?;
        let held_out = held_out_targets(&cfg.env, cfg.n_held_out, cfg.eval_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let target = sample_train_target(&cfg.env, &mut rng, &held_out)?;
        let episode = Episode::new(&cfg.env, &target, rng.next_u64())?;
        let index = DatasetIndex {
            collector: Collector::Teleop,
            theta_max_deg: cfg.theta_max_deg,
            estimate_err_cm: 0.0,
            seed: cfg.seed,
            eval_seed: cfg.eval_seed,
            attempts: 0,
            demos: Vec::new(),
        };
        let baseline = episode.latest_tactile();
        let command = Command { grip: episode.state().gripper, ..Command::default() };
        Ok(Self {
            cfg,
            out_dir: out_dir.to_path_buf(),
            rng,
            held_out,
            target,
            episode,
            recording: false,
            command,
            theta: 0.0,
            baseline,
            index,
        })
    }

    pub fn config(&self) -> &TeleopConfig {
        &self.cfg
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn target(&self) -> &TargetConfig {
        &self.target
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn command(&self) -> Command {
        self.command
    }

    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }

    /// Zero velocity with the gripper left where it is.
    fn hold_command(&self) -> Command {
        Command { grip: self.episode.state().gripper, ..Command::default() }
    }

    fn scene(&mut self, slot_xy: Option<[f64; 2]>) -> Result<(), TeleopError> {
        self.target = match slot_xy {
            Some(xy) => {
                let t = TargetConfig { slot_xy: xy, ..self.cfg.env.target_defaults };
                self.cfg.env.validate_target(&t)?;
                t
            }
            None => sample_train_target(&self.cfg.env, &mut self.rng, &self.held_out)?,
        };
        self.episode = Episode::new(&self.cfg.env, &self.target, self.rng.next_u64())?;
        self.baseline = self.episode.latest_tactile();
        self.recording = false;
        self.command = self.hold_command();
        self.theta = 0.0;
        Ok(())
    }

    /// Applies one client message. Stopping returns what happened to the
    /// episode.
    pub fn handle(&mut self, msg: ClientMessage) -> Result<Option<StopOutcome>, TeleopError> {
        match msg {
            ClientMessage::Cmd(c) => self.command = c.clamped(),
            ClientMessage::Reset { slot_xy } => self.scene(slot_xy)?,
            ClientMessage::StartEpisode { slot_xy } => {
                let keep = slot_xy.or(Some(self.target.slot_xy));
                self.scene(keep)?;
                // hold still for one tick so the skin baseline is captured at rest
                self.episode.tick([0.0; ACTION_WIDTH])?;
                let b = baseline(self.episode.tactile(), K_BASELINE)?;
                self.baseline = b.try_into().expect("tactile width");
                self.recording = true;
            }
            ClientMessage::StopEpisode => return self.stop().map(Some),
        }
        Ok(None)
    }

    /// Ends the current recording, saving it if the peg is inserted.
    pub fn stop(&mut self) -> Result<StopOutcome, TeleopError> {
        if !self.recording {
            return Ok(StopOutcome { success: false, saved: None });
        }
        self.recording = false;
        let success = self.episode.is_success();
        let seed = self.episode.seed();
        let ep = std::mem::replace(&mut self.episode, Episode::new(&self.cfg.env, &self.target, seed)?);
        self.index.attempts += 1;
        let demo = ep.finish(Collector::Teleop, self.cfg.theta_max_deg)?;
        let saved = if success {
            let dir = format!("demo_{:04}", self.index.demos.len());
            let path = self.out_dir.join(&dir);
            save_demo(&demo, &path)?;
            self.index.demos.push(DatasetEntry { dir, seed, slot_xy: self.target.slot_xy, duration: demo.meta.duration });
            Some(path)
        } else {
            None
        };
        self.index.save(&self.out_dir)?;
        self.scene(None)?;
        Ok(StopOutcome { success, saved })
    }

    /// One policy-rate control step with the held command. Idle scenes do
    /// not advance. Returns an outcome when the episode hit its time limit.
    pub fn control_tick(&mut self) -> Result<Option<StopOutcome>, TeleopError> {
        if !self.recording {
            return Ok(None);
        }
        let lim = self.cfg.env.max_tick();
        let c = self.command;
        let theta_max = self.cfg.theta_max_deg.to_radians();
        self.theta = if theta_max > 0.0 { self.rng.random_range(-theta_max..=theta_max) } else { 0.0 };
        let vxy = perturb_direction([c.vx * lim, c.vy * lim], self.theta);
        let dgrip = c.grip - self.episode.state().gripper;
        let a = [vxy[0], vxy[1], c.vz * lim, dgrip].map(|v| v as f32);
        self.episode.tick(a)?;
        let limit = (self.cfg.max_episode_s * self.cfg.env.policy_rate_hz as f64).round() as u64;
        if self.episode.ticks() >= limit {
            return self.stop().map(Some);
        }
        Ok(None)
    }

    /// Current snapshot for the client.
    pub fn frame(&self) -> Frame {
        let ep = &self.episode;
        let views = self
            .cfg
            .env
            .views
            .iter()
            .filter_map(|v| Some((v.as_str().to_string(), Frame::encode_image(ep.latest_frame(*v)?))))
            .collect::<BTreeMap<_, _>>();
        let raw = ep.latest_tactile();
        Frame {
            tick: ep.ticks(),
            views,
            tactile: std::array::from_fn(|i| raw[i] - self.baseline[i]),
            proprio: ep.latest_proprio(),
            success: ep.is_success(),
            recording: self.recording,
            theta: self.theta.to_degrees(),
        }
    }
}
