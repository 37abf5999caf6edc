use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use visk_core::data::{save_demo, DatasetIndex};
use visk_core::sim::{check_separation, held_out_targets, EnvConfig, TargetConfig, DEFAULT_EVAL_SEED};
use visk_core::ModalityMask;
use visk_policy::{Policy, PolicyConfig};
use visk_train::{build_samples, loss_curve_path, train_samples, write_loss_curve, TrainConfig};

use crate::report::{CellResult, EpisodeLog, EvalReport, ReportRow, SeedResult};
use crate::rollout::{rollout, Controller, LearnedController};
use crate::EvalError;

/// Appearance change applied to every held-out target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variation {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peg_color: Option<[u8; 3]>,
    /// Multiplies the peg half-width; the slot opening keeps its clearance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peg_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_contrast: Option<f64>,
}

impl Variation {
    pub fn in_domain() -> Self {
        Self { name: "in-domain".into(), peg_color: None, peg_scale: None, slot_contrast: None }
    }

    /// Peg colour change plus ±20 % peg size.
    pub fn standard() -> Vec<Self> {
        vec![
            Self { name: "peg color".into(), peg_color: Some([40, 90, 210]), ..Self::in_domain() },
            Self { name: "peg size +20%".into(), peg_scale: Some(1.2), ..Self::in_domain() },
            Self { name: "peg size -20%".into(), peg_scale: Some(0.8), ..Self::in_domain() },
        ]
    }

    pub fn apply(&self, t: &TargetConfig) -> TargetConfig {
        let mut out = *t;
        if let Some(c) = self.peg_color {
            out.peg_color = c;
        }
        if let Some(s) = self.peg_scale {
            out.peg_half_width *= s;
        }
        if let Some(c) = self.slot_contrast {
            out.slot_contrast = c;
        }
        out
    }
}

/// Evaluation protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_trials_per_seed: usize,
    /// Training seeds; one checkpoint per seed.
    pub seeds: Vec<u64>,
    pub max_episode_s: f64,
    /// Seed of the held-out target layout.
    pub eval_seed: u64,
    /// Base seed for per-target episode noise, shared by every checkpoint so
    /// combinations are compared on identical episodes.
    pub episode_seed: u64,
    /// Explicit targets; when absent the held-out set is derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<TargetConfig>>,
    pub env: EnvConfig,
    /// Worker threads for rollouts.
    pub jobs: usize,
    /// Save every rollout under this directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_dir: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_trials_per_seed: 10,
            seeds: vec![0, 1, 2],
            max_episode_s: 15.0,
            eval_seed: DEFAULT_EVAL_SEED,
            episode_seed: 1000,
            targets: None,
            env: EnvConfig::default(),
            jobs: 1,
            record_dir: None,
        }
    }
}

impl EvalConfig {
    pub fn targets(&self) -> Result<Vec<TargetConfig>, EvalError> {
        match &self.targets {
            Some(t) if t.len() != self.n_trials_per_seed => Err(EvalError::InvalidConfig(format!(
                "{} targets given for {} trials",
                t.len(),
                self.n_trials_per_seed
            ))),
            Some(t) => Ok(t.clone()),
            None => Ok(held_out_targets(&self.env, self.n_trials_per_seed, self.eval_seed)?),
        }
    }

    pub fn episode_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.episode_seed);
        (0..self.n_trials_per_seed).map(|_| rng.next_u64()).collect()
    }
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Runs one rollout per target with fresh controllers from `make`. Results
/// are ordered by target regardless of `jobs`.
pub fn evaluate(
    make: &(dyn Fn() -> Result<Box<dyn Controller + Send>, EvalError> + Sync),
    eval: &EvalConfig,
    variation: &Variation,
    k_baseline: usize,
    record_prefix: &str,
) -> Result<CellResult, EvalError> {
    let targets = eval.targets()?;
    let seeds = eval.episode_seeds();
    let run_one = |i: usize, ctrl: &mut dyn Controller| -> Result<EpisodeLog, EvalError> {
        let target = variation.apply(&targets[i]);
        let r = rollout(ctrl, &eval.env, &target, seeds[i], k_baseline, eval.max_episode_s)?;
        let recording = match &eval.record_dir {
            Some(dir) => {
                let name = format!("{}_t{i:02}", slug(record_prefix));
                save_demo(&r.recording, &dir.join(&name))?;
                Some(name)
            }
            None => None,
        };
        Ok(EpisodeLog { target_index: i, slot_xy: target.slot_xy, episode_seed: seeds[i], success: r.success, duration: r.duration, recording })
    };

    let n = targets.len();
    let jobs = eval.jobs.clamp(1, n.max(1));
    let mut logs: Vec<Option<Result<EpisodeLog, EvalError>>> = (0..n).map(|_| None).collect();
    if jobs == 1 {
        let mut ctrl = make()?;
        for (i, slot) in logs.iter_mut().enumerate() {
            *slot = Some(run_one(i, ctrl.as_mut()));
        }
    } else {
        let results: Vec<Vec<(usize, Result<EpisodeLog, EvalError>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    let run_one = &run_one;
                    s.spawn(move || {
                        let mut ctrl = match make() {
                            Ok(c) => c,
                            Err(e) => return vec![(w, Err(e))],
                        };
                        (w..n).step_by(jobs).map(|i| (i, run_one(i, ctrl.as_mut()))).collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
        });
        for (i, r) in results.into_iter().flatten() {
            logs[i] = Some(r);
        }
    }
    let episodes: Vec<EpisodeLog> = logs.into_iter().map(|r| r.expect("every target ran")).collect::<Result<_, _>>()?;
    let successes = episodes.iter().filter(|e| e.success).count();
    Ok(CellResult { successes, n_trials: n, episodes })
}

/// [`evaluate`] for a trained policy.
pub fn evaluate_policy(policy: &Policy, eval: &EvalConfig, variation: &Variation, record_prefix: &str) -> Result<CellResult, EvalError> {
    LearnedController::new(policy.clone(), &eval.env)?;
    let make = || -> Result<Box<dyn Controller + Send>, EvalError> {
        Ok(Box::new(LearnedController::new(policy.clone(), &eval.env)?))
    };
    evaluate(&make, eval, variation, policy.config().k_baseline, record_prefix)
}

/// Where [`ablation_matrix`] stores the checkpoint of one combination and seed.
pub fn checkpoint_path(out_dir: &Path, mask: &ModalityMask, seed: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("{}_seed{seed}.ckpt", mask.label().replace('+', "-")))
}

/// Trains one policy per combination and seed on the dataset, evaluates each
/// on the held-out targets and tabulates the success counts.
pub fn ablation_matrix(
    dataset_dir: &Path,
    combos: &[ModalityMask],
    base: &PolicyConfig,
    train_cfg: &TrainConfig,
    eval: &EvalConfig,
    out_dir: &Path,
) -> Result<EvalReport, EvalError> {
    if combos.is_empty() || eval.seeds.is_empty() {
        return Err(EvalError::InvalidConfig("need at least one combination and one seed".into()));
    }
    let index = DatasetIndex::load(dataset_dir)?;
    let targets = eval.targets()?;
    check_separation(&targets, &index.training_targets(), eval.env.holdout_delta)?;
    let demos = index.load_demos(dataset_dir)?;

    let mut report = EvalReport::new("Peg insertion", targets.len(), vec![Variation::in_domain().name]);
    for mask in combos {
        let policy_cfg = PolicyConfig { modalities: mask.clone(), ..base.clone() };
        let samples = build_samples(&demos, &policy_cfg)?;
        let mut cell = Vec::with_capacity(eval.seeds.len());
        for &seed in &eval.seeds {
            let cfg = PolicyConfig { init_seed: seed, ..policy_cfg.clone() };
            let tc = TrainConfig { seed, ..train_cfg.clone() };
            let meta = serde_json::json!({ "dataset": dataset_dir.display().to_string(), "demos": demos.len() });
            log::info!("training {} seed {seed}", mask.label());
            let outcome = train_samples(&samples, &cfg, &tc, meta)?;
            let path = checkpoint_path(out_dir, mask, seed);
            outcome.checkpoint.save(&path)?;
            write_loss_curve(&loss_curve_path(&path), &outcome.losses)?;
            let policy = Policy::from_checkpoint(outcome.checkpoint)?;
            let prefix = format!("{}_seed{seed}_in-domain", mask.label());
            let result = evaluate_policy(&policy, eval, &Variation::in_domain(), &prefix)?;
            log::info!("{} seed {seed}: {}/{}", mask.label(), result.successes, result.n_trials);
            cell.push(SeedResult { seed, result });
        }
        report.rows.push(ReportRow { label: mask.label(), modalities: mask.clone(), cells: vec![cell] });
    }
    Ok(report)
}

/// Seed with the most in-domain successes in `row` (lowest seed on ties).
pub fn best_seed(report: &EvalReport, label: &str) -> Option<u64> {
    let row = report.row(label)?;
    let col = report.columns.iter().position(|c| c == &Variation::in_domain().name)?;
    row.cells
        .get(col)?
        .iter()
        .max_by(|a, b| a.result.successes.cmp(&b.result.successes).then(b.seed.cmp(&a.seed)))
        .map(|s| s.seed)
}

/// Evaluates the best checkpoint of each row of an in-domain `report` under
/// every variation. Columns are the in-domain result followed by the
/// variations; each cell holds the single best seed.
pub fn generalization_report(
    report: &EvalReport,
    out_dir: &Path,
    variations: &[Variation],
    eval: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let mut columns = vec![Variation::in_domain().name];
    columns.extend(variations.iter().map(|v| v.name.clone()));
    let mut out = EvalReport::new("Peg insertion, appearance variations", report.n_trials, columns);
    for row in &report.rows {
        let seed = best_seed(report, &row.label)
            .ok_or_else(|| EvalError::IncompleteReport(format!("row `{}` has no in-domain results", row.label)))?;
        let in_domain = row.cells[0].iter().find(|s| s.seed == seed).expect("best seed is present").clone();
        let policy = Policy::load(&checkpoint_path(out_dir, &row.modalities, seed))?;
        let mut cells = vec![vec![in_domain]];
        for v in variations {
            let prefix = format!("{}_seed{seed}_{}", row.label, v.name);
            let result = evaluate_policy(&policy, eval, v, &prefix)?;
            log::info!("{} seed {seed} under {}: {}/{}", row.label, v.name, result.successes, result.n_trials);
            cells.push(vec![SeedResult { seed, result }]);
        }
        out.rows.push(ReportRow { label: row.label.clone(), modalities: row.modalities.clone(), cells });
    }
    out.notes.push("Each row uses the training seed with the most in-domain successes.".into());
    Ok(out)
}
