use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvConfig, SimError, TargetConfig};

/// Evaluation seed used when none is given; training collection avoids the
/// held-out set drawn from it.
pub const DEFAULT_EVAL_SEED: u64 = 7;

/// Draws fail after this many rejections.
const MAX_DRAWS: usize = 10_000;

pub fn linf(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
}

/// Uniform slot in the training grid at least `holdout_delta` (L∞) away from
/// every slot in `avoid`.
pub fn sample_train_target<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    rng: &mut R,
    avoid: &[TargetConfig],
) -> Result<TargetConfig, SimError> {
    let g = cfg.train_grid;
    for _ in 0..MAX_DRAWS {
        let xy = [g.origin[0] + rng.random::<f64>() * g.size[0], g.origin[1] + rng.random::<f64>() * g.size[1]];
        if avoid.iter().all(|t| linf(t.slot_xy, xy) >= cfg.holdout_delta) {
            return Ok(TargetConfig { slot_xy: xy, ..cfg.target_defaults });
        }
    }
    Err(SimError::CannotSeparate { n: avoid.len(), delta: cfg.holdout_delta })
}

/// Fixed held-out slots: one jittered point per cell of a `cols × rows`
/// layout over the training grid, kept `holdout_delta / 2` inside each cell
/// so the points are pairwise separated.
pub fn held_out_targets(cfg: &EnvConfig, n: usize, eval_seed: u64) -> Result<Vec<TargetConfig>, SimError> {
    let g = cfg.train_grid;
    let delta = cfg.holdout_delta;
    if n == 0 {
        return Ok(Vec::new());
    }
    let rows = ((n as f64 * g.size[1] / g.size[0]).sqrt().round() as usize).clamp(1, n);
    let cols = n.div_ceil(rows);
    let cell = [g.size[0] / cols as f64, g.size[1] / rows as f64];
    if cell[0] <= delta || cell[1] <= delta {
        return Err(SimError::CannotSeparate { n, delta });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (c, r) = (i % cols, i / cols);
        let lo = [g.origin[0] + c as f64 * cell[0] + delta / 2.0, g.origin[1] + r as f64 * cell[1] + delta / 2.0];
        let span = [cell[0] - delta, cell[1] - delta];
        let xy = [lo[0] + rng.random::<f64>() * span[0], lo[1] + rng.random::<f64>() * span[1]];
        out.push(TargetConfig { slot_xy: xy, ..cfg.target_defaults });
    }
    Ok(out)
}

/// Checks that every held-out slot is at least `delta` from every training slot.
pub fn check_separation(held_out: &[TargetConfig], training: &[[f64; 2]], delta: f64) -> Result<(), SimError> {
    let ok = held_out.iter().all(|h| training.iter().all(|t| linf(h.slot_xy, *t) >= delta));
    if ok {
        Ok(())
    } else {
        Err(SimError::CannotSeparate { n: held_out.len(), delta })
    }
}
