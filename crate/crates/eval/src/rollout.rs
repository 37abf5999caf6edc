use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visk_core::data::{Collector, Demonstration, SyncedFrame, ACTION_WIDTH, TACTILE_WIDTH};
use visk_core::sim::{EnvConfig, Episode, TargetConfig};
use visk_core::ModalityMask;
use visk_policy::Policy;

use crate::EvalError;

/// What a controller sees at a policy tick.
pub struct TickInput<'a> {
    pub episode: &'a Episode,
    /// Per-episode skin rest reading captured while holding still.
    pub baseline: &'a [f32; TACTILE_WIDTH],
    /// Ticks since the baseline hold ended.
    pub tick: u64,
}

impl TickInput<'_> {
    /// The current observation for the enabled modalities, tactile
    /// baseline-subtracted, in the same layout training uses.
    pub fn frame(&self, mask: &ModalityMask) -> Result<SyncedFrame, EvalError> {
        let ep = self.episode;
        let mut images = Vec::new();
        for view in mask.views() {
            let img = ep.latest_frame(view).ok_or_else(|| {
                EvalError::CheckpointMismatch(format!("policy needs view `{view}` but the environment does not render it"))
            })?;
            images.push((view, img.to_vec()));
        }
        let tactile = mask.tactile.then(|| {
            let raw = ep.latest_tactile();
            std::array::from_fn(|i| raw[i] - self.baseline[i])
        });
        let proprio = mask.proprio.then(|| ep.latest_proprio());
        Ok(SyncedFrame { t: ep.time(), images, tactile, proprio, action: [0.0; ACTION_WIDTH] })
    }
}

/// Anything that can drive an episode one tick at a time.
pub trait Controller {
    /// Called before the first tick of every episode.
    fn reset(&mut self);
    fn act(&mut self, input: &TickInput<'_>) -> Result<[f32; ACTION_WIDTH], EvalError>;
}

/// A trained policy with chunk ensembling.
pub struct LearnedController {
    policy: Policy,
}

impl LearnedController {
    pub fn new(mut policy: Policy, env: &EnvConfig) -> Result<Self, EvalError> {
        let cfg = policy.config();
        if !cfg.modalities.views().is_empty() && cfg.image_hw != env.image_hw {
            return Err(EvalError::CheckpointMismatch(format!(
                "policy expects {}px images, environment renders {}px",
                cfg.image_hw, env.image_hw
            )));
        }
        if let Some(v) = cfg.modalities.views().into_iter().find(|v| !env.views.contains(v)) {
            return Err(EvalError::CheckpointMismatch(format!("environment does not render view `{v}`")));
        }
        policy.set_action_limit(Some(env.max_tick() as f32));
        Ok(Self { policy })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }
}

impl Controller for LearnedController {
    fn reset(&mut self) {
        self.policy.reset();
    }

    fn act(&mut self, input: &TickInput<'_>) -> Result<[f32; ACTION_WIDTH], EvalError> {
        let frame = input.frame(&self.policy.config().modalities)?;
        Ok(self.policy.act(&frame)?)
    }
}

/// Open-loop playback of a recorded action sequence.
pub struct ReplayController {
    actions: Vec<[f32; ACTION_WIDTH]>,
}

impl ReplayController {
    /// Uses the demonstration's actions after its baseline hold tick.
    pub fn from_demo(demo: &Demonstration) -> Result<Self, EvalError> {
        let s = demo.action_stream()?;
        let actions = (1..s.len()).map(|i| s.values(i).try_into().expect("action width")).collect();
        Ok(Self { actions })
    }
}

impl Controller for ReplayController {
    fn reset(&mut self) {}

    fn act(&mut self, input: &TickInput<'_>) -> Result<[f32; ACTION_WIDTH], EvalError> {
        Ok(self.actions.get(input.tick as usize).copied().unwrap_or([0.0; ACTION_WIDTH]))
    }
}

/// Uniform random velocities within the tick limit.
pub struct RandomController {
    rng: ChaCha8Rng,
    seed: u64,
    limit: f32,
}

impl RandomController {
    pub fn new(seed: u64, env: &EnvConfig) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), seed, limit: env.max_tick() as f32 }
    }
}

impl Controller for RandomController {
    fn reset(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    fn act(&mut self, _: &TickInput<'_>) -> Result<[f32; ACTION_WIDTH], EvalError> {
        let l = self.limit;
        Ok([self.rng.random_range(-l..=l), self.rng.random_range(-l..=l), self.rng.random_range(-l..=l), 0.0])
    }
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub target: TargetConfig,
    pub seed: u64,
    pub success: bool,
    pub duration: f64,
    /// Full sensor recording, replayable like a demonstration.
    pub recording: Demonstration,
}

/// Runs one episode: hold still for a tick so the skin baseline can be
/// averaged from the first `k_baseline` readings, then let the controller
/// act at the policy rate until success or `max_episode_s`.
pub fn rollout(
    controller: &mut dyn Controller,
    env: &EnvConfig,
    target: &TargetConfig,
    episode_seed: u64,
    k_baseline: usize,
    max_episode_s: f64,
) -> Result<EpisodeResult, EvalError> {
    let mut ep = Episode::new(env, target, episode_seed)?;
    let max_ticks = ((max_episode_s * env.policy_rate_hz as f64).round() as u64).max(1);
    ep.tick([0.0; ACTION_WIDTH])?;
    let baseline = visk_core::data::baseline(ep.tactile(), k_baseline)?;
    let baseline: [f32; TACTILE_WIDTH] = baseline.try_into().expect("tactile width");
    controller.reset();
    while !ep.is_success() && ep.ticks() < max_ticks {
        let input = TickInput { episode: &ep, baseline: &baseline, tick: ep.ticks() - 1 };
        let a = controller.act(&input)?;
        ep.tick(a)?;
    }
    let success = ep.is_success();
    let recording = ep.finish(Collector::Rollout, 0.0)?;
    let duration = recording.meta.duration;
    Ok(EpisodeResult { target: *target, seed: episode_seed, success, duration, recording })
}
