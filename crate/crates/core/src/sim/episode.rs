use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{is_success, render, reset, skin_read, step, EnvConfig, SimError, SimState, TargetConfig};
use crate::data::{
    Collector, Demonstration, EpisodeMeta, Stream, StreamKind, ACTION_STREAM, ACTION_WIDTH, PROPRIO_STREAM,
    PROPRIO_WIDTH, TACTILE_STREAM, TACTILE_WIDTH,
};
use crate::modality::View;

/// A running episode that records every sensor at its native rate.
///
/// Physics state `i` lives at `t = i / sim_rate`. Camera frame `j` is
/// stamped `j / camera_rate` and shows the latest state at or before that
/// time; tactile and proprio samples are taken on physics steps.
#[derive(Debug, Clone)]
pub struct Episode {
    cfg: EnvConfig,
    state: SimState,
    seed: u64,
    noise: ChaCha8Rng,
    cams: Vec<(View, Stream)>,
    tactile: Stream,
    proprio: Stream,
    action: Stream,
    next_frame: u64,
    ticks: u64,
}

fn push<T>(r: Result<(), T>)
where
    T: std::fmt::Debug,
{
    r.expect("recorder produces valid samples");
}

impl Episode {
    pub fn new(cfg: &EnvConfig, target: &TargetConfig, seed: u64) -> Result<Self, SimError> {
        cfg.validate()?;
        let state = reset(cfg, target, seed)?;
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(1);
        let hw = cfg.image_hw;
        let cams = cfg
            .views
            .iter()
            .map(|v| (*v, Stream::camera(v.stream_name(), hw, hw, cfg.camera_rate_hz as f64).expect("valid camera")))
            .collect();
        let stream = |name: &str, kind, width, rate: u32| Stream::new(name, kind, width, rate as f64).expect("valid stream");
        let mut ep = Self {
            cfg: cfg.clone(),
            state,
            seed,
            noise,
            cams,
            tactile: stream(TACTILE_STREAM, StreamKind::Tactile, TACTILE_WIDTH, cfg.tactile_rate_hz),
            proprio: stream(PROPRIO_STREAM, StreamKind::Proprio, PROPRIO_WIDTH, cfg.tactile_rate_hz),
            action: stream(ACTION_STREAM, StreamKind::Action, ACTION_WIDTH, cfg.policy_rate_hz),
            next_frame: 0,
            ticks: 0,
        };
        ep.on_state();
        Ok(ep)
    }

    pub fn cfg(&self) -> &EnvConfig {
        &self.cfg
    }
    pub fn state(&self) -> &SimState {
        &self.state
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn ticks(&self) -> u64 {
        self.ticks
    }
    pub fn time(&self) -> f64 {
        self.state.t
    }
    pub fn is_success(&self) -> bool {
        is_success(&self.state, &self.cfg)
    }
    pub fn tactile(&self) -> &Stream {
        &self.tactile
    }

    /// Most recent raw skin sample.
    pub fn latest_tactile(&self) -> [f32; TACTILE_WIDTH] {
        self.tactile.values(self.tactile.len() - 1).try_into().expect("tactile width")
    }

    pub fn latest_proprio(&self) -> [f32; PROPRIO_WIDTH] {
        self.proprio.values(self.proprio.len() - 1).try_into().expect("proprio width")
    }

    /// Most recent frame of `view`, if that view is recorded.
    pub fn latest_frame(&self, view: View) -> Option<&[u8]> {
        let (_, s) = self.cams.iter().find(|(v, _)| *v == view)?;
        Some(s.frame(s.len() - 1))
    }

    fn render_frames_through(&mut self, limit_exclusive: bool, i: u64) {
        let (sim, cam) = (self.cfg.sim_rate_hz as u64, self.cfg.camera_rate_hz as u64);
        loop {
            let j = self.next_frame;
            let due = if limit_exclusive { j * sim < (i + 1) * cam } else { j * sim <= i * cam };
            if !due {
                break;
            }
            let t = j as f64 / cam as f64;
            for (view, s) in self.cams.iter_mut() {
                push(s.push_frame(t, &render(&self.state, *view, &self.cfg)));
            }
            self.next_frame += 1;
        }
    }

    /// Records whatever is due at the current physics state.
    fn on_state(&mut self) {
        let i = self.state.steps;
        if i % self.cfg.tactile_decimation() as u64 == 0 {
            let t = i as f64 / self.cfg.sim_rate_hz as f64;
            let b = skin_read(&self.state, &self.cfg, &mut self.noise);
            push(self.tactile.push_f32(t, &b.b));
            push(self.proprio.push_f32(t, &self.state.proprio()));
        }
        self.render_frames_through(false, i);
    }

    /// Applies one policy-rate action `(dx, dy, dz, dgrip)` given per tick,
    /// spread evenly over the physics steps of the tick. Returns the action
    /// actually executed after clamping.
    pub fn tick(&mut self, action: [f32; ACTION_WIDTH]) -> Result<[f32; ACTION_WIDTH], SimError> {
        let a64 = action.map(|v| v as f64);
        if a64.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteAction(a64));
        }
        let lim = self.cfg.max_tick();
        let sub = self.cfg.substeps();
        let grip_lim = super::GRIP_RATE / self.cfg.policy_rate_hz as f64;
        let exec = [a64[0].clamp(-lim, lim), a64[1].clamp(-lim, lim), a64[2].clamp(-lim, lim), a64[3].clamp(-grip_lim, grip_lim)];
        let executed = exec.map(|v| v as f32);
        let t = self.ticks as f64 / self.cfg.policy_rate_hz as f64;
        push(self.action.push_f32(t, &executed));
        let per_step = exec.map(|v| v / sub as f64);
        for _ in 0..sub {
            self.render_frames_through(true, self.state.steps);
            self.state = step(&self.state, per_step, &self.cfg)?;
            self.on_state();
        }
        self.ticks += 1;
        Ok(executed)
    }

    /// Closes the recording. A final zero action is stamped at the end time
    /// so every stream covers the whole episode.
    pub fn finish(mut self, collector: Collector, noise_max_deg: f64) -> Result<Demonstration, SimError> {
        if self.ticks == 0 {
            return Err(SimError::EmptyEpisode);
        }
        let duration = self.ticks as f64 / self.cfg.policy_rate_hz as f64;
        push(self.action.push_f32(duration, &[0.0; ACTION_WIDTH]));
        let success = self.is_success();
        let mut demo = Demonstration::new(EpisodeMeta {
            target_config: self.state.target,
            seed: self.seed,
            noise_max_deg,
            success,
            duration,
            collector,
        });
        for (_, s) in self.cams {
            demo.insert(s);
        }
        demo.insert(self.tactile);
        demo.insert(self.proprio);
        demo.insert(self.action);
        Ok(demo)
    }
}
