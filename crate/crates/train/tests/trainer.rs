use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visk_core::data::SyncedFrame;
use visk_core::expert::{collect_scripted, CollectOptions, ExpertParams};
use visk_core::sim::EnvConfig;
use visk_core::{ModalityMask, View};
use visk_policy::{Checkpoint, Policy, PolicyConfig};
use visk_train::{bc_loss, build_samples, loss_curve_path, train, train_samples, Sample, TrainConfig, TrainError};

fn small_policy(modalities: ModalityMask) -> PolicyConfig {
    PolicyConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        ff_dim: 16,
        chunk_h: 3,
        modalities,
        cnn_channels: vec![2, 4],
        stem_stride: 8,
        mlp_hidden: 8,
        head_hidden: 16,
        ..PolicyConfig::default()
    }
}

fn tiny_dataset(dir: &Path) {
    let params = ExpertParams { seed: 3, ..ExpertParams::default() };
    collect_scripted(&EnvConfig::default(), &params, 2, dir, &CollectOptions::default()).unwrap();
}

fn quick(steps: usize) -> TrainConfig {
    TrainConfig { steps, batch: 8, eval_every: 0, ..TrainConfig::default() }
}

/// Proprio-only samples whose chunk is a fixed linear map of the proprio
/// vector, so a perfect fit exists.
fn linear_samples(n: usize, h: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = [[0.5, -0.2, 0.1, 0.0], [0.1, 0.4, 0.0, -0.3], [-0.3, 0.0, 0.2, 0.1], [0.0, 0.1, -0.1, 0.3]];
    (0..n)
        .map(|_| {
            let p: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let action: [f32; 4] = std::array::from_fn(|i| (0..4).map(|j| a[i][j] * p[j]).sum());
            Sample {
                frame: SyncedFrame { t: 0.0, images: Vec::new(), tactile: None, proprio: Some(p), action },
                chunk: vec![action; h],
                mask: vec![true; h],
            }
        })
        .collect()
}

fn proprio_only() -> ModalityMask {
    ModalityMask { third_person_views: Vec::new(), wrist: false, tactile: false, proprio: true }
}

#[test]
fn one_step_run_writes_checkpoint_and_one_row_curve() {
    let data = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    let out = tempfile::tempdir().unwrap();
    let ckpt = out.path().join("p.ckpt");
    train(data.path(), &small_policy(ModalityMask::visuotactile()), &quick(1), &ckpt).unwrap();
    let curve = std::fs::read_to_string(loss_curve_path(&ckpt)).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "step,loss");
    assert!(lines[1].starts_with("1,"));
    let loaded = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(loaded.metadata["demos"], 2);
    assert_eq!(loaded.metadata["train"]["steps"], 1);
}

#[test]
fn identical_runs_write_identical_bytes() {
    let data = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    let out = tempfile::tempdir().unwrap();
    let cfg = small_policy(ModalityMask::all());
    let (a, b) = (out.path().join("a.ckpt"), out.path().join("b.ckpt"));
    train(data.path(), &cfg, &quick(5), &a).unwrap();
    train(data.path(), &cfg, &quick(5), &b).unwrap();
    // the dataset path is identical, so the whole file must be
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(loss_curve_path(&a)).unwrap(), std::fs::read(loss_curve_path(&b)).unwrap());
}

#[test]
fn saved_checkpoint_predicts_like_the_trained_one() {
    let data = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    let cfg = small_policy(ModalityMask::all());
    let demos = visk_core::data::DatasetIndex::load(data.path()).unwrap().load_demos(data.path()).unwrap();
    let samples = build_samples(&demos, &cfg).unwrap();
    let outcome = train_samples(&samples, &cfg, &quick(3), serde_json::json!({})).unwrap();
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("c.ckpt");
    outcome.checkpoint.save(&path).unwrap();
    let live = Policy::from_checkpoint(outcome.checkpoint).unwrap();
    let loaded = Policy::load(&path).unwrap();
    for s in samples.iter().step_by(7) {
        assert_eq!(live.predict_chunk(&s.frame).unwrap(), loaded.predict_chunk(&s.frame).unwrap());
    }
}

#[test]
fn samples_pair_frames_with_chunks() {
    let data = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    let cfg = small_policy(ModalityMask::all());
    let demos = visk_core::data::DatasetIndex::load(data.path()).unwrap().load_demos(data.path()).unwrap();
    let samples = build_samples(&demos, &cfg).unwrap();
    let ticks: usize = demos.iter().map(|d| d.action_stream().unwrap().len()).sum();
    assert_eq!(samples.len(), ticks);
    for w in samples.windows(2) {
        if w[1].frame.t > w[0].frame.t {
            assert_eq!(w[0].chunk[1], w[1].frame.action);
            assert!(w[0].mask[1]);
        }
    }
    for s in &samples {
        assert_eq!(s.chunk[0], s.frame.action);
        assert_eq!(s.frame.images.iter().map(|(v, _)| *v).collect::<Vec<_>>(), [View::Top, View::Side, View::Wrist]);
    }
}

#[test]
fn linear_target_is_fit() {
    let samples = linear_samples(256, 3);
    let cfg = small_policy(proprio_only());
    let tcfg = TrainConfig { steps: 1500, batch: 32, lr: 3e-3, eval_every: 0, ..TrainConfig::default() };
    let out = train_samples(&samples, &cfg, &tcfg, serde_json::json!({})).unwrap();
    let tail = &out.losses[out.losses.len() - 50..];
    let final_loss = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(final_loss < 1e-3, "final loss {final_loss}");
}

#[test]
fn loss_falls_on_a_fixed_batch() {
    let samples = linear_samples(16, 3);
    let cfg = small_policy(proprio_only());
    let tcfg = TrainConfig { steps: 10, batch: 16, lr: 1e-4, warmup_steps: 0, constant_lr: true, eval_every: 0, ..TrainConfig::default() };
    let out = train_samples(&samples, &cfg, &tcfg, serde_json::json!({})).unwrap();
    for w in out.losses.windows(2) {
        assert!(w[1] < w[0], "{:?}", out.losses);
    }
}

#[test]
fn disabled_tactile_cannot_change_predictions() {
    let data = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    let cfg = small_policy(ModalityMask::vision_only());
    let demos = visk_core::data::DatasetIndex::load(data.path()).unwrap().load_demos(data.path()).unwrap();
    let samples = build_samples(&demos, &cfg).unwrap();
    let policy = Policy::from_checkpoint(train_samples(&samples, &cfg, &quick(3), serde_json::json!({})).unwrap().checkpoint).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for s in samples.iter().step_by(5) {
        let mut f = s.frame.clone();
        let base = policy.predict_chunk(&f).unwrap();
        f.tactile = Some(std::array::from_fn(|_| rng.random_range(-100.0..100.0)));
        assert_eq!(policy.predict_chunk(&f).unwrap(), base);
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    let cfg = small_policy(proprio_only());
    assert!(matches!(train_samples(&[], &cfg, &quick(1), serde_json::json!({})), Err(TrainError::EmptyDataset)));
    let mut masked = linear_samples(4, 3);
    for s in &mut masked {
        s.mask = vec![false; 3];
    }
    assert!(matches!(train_samples(&masked, &cfg, &quick(1), serde_json::json!({})), Err(TrainError::AllMasked)));
    let bad = TrainConfig { lr: 0.0, ..quick(1) };
    assert!(matches!(train_samples(&linear_samples(4, 3), &cfg, &bad, serde_json::json!({})), Err(TrainError::InvalidConfig(_))));
}

fn chunk(n: usize) -> impl Strategy<Value = Vec<[f32; 4]>> {
    prop::collection::vec(prop::array::uniform4(-10.0f32..10.0), n)
}

proptest! {
    #[test]
    fn masked_steps_never_matter(
        (p, t, q, mask) in (1usize..8).prop_flat_map(|n| (chunk(n), chunk(n), chunk(n), prop::collection::vec(any::<bool>(), n)))
    ) {
        prop_assume!(mask.iter().any(|&m| m));
        let base = bc_loss(&p, &t, &mask).unwrap();
        let mixed: Vec<[f32; 4]> = p.iter().zip(&q).zip(&mask).map(|((a, b), &m)| if m { *a } else { *b }).collect();
        prop_assert_eq!(bc_loss(&mixed, &t, &mask).unwrap(), base);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn loss_is_mean_over_kept_entries(p in chunk(5), t in chunk(5)) {
        let all = bc_loss(&p, &t, &[true; 5]).unwrap();
        let per_step: f64 = (0..5)
            .map(|i| {
                let mut m = [false; 5];
                m[i] = true;
                bc_loss(&p, &t, &m).unwrap()
            })
            .sum::<f64>() / 5.0;
        prop_assert!((all - per_step).abs() <= 1e-9 * all.max(1.0));
    }
}
