use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use visk_core::data::{baseline, DatasetIndex, ACTION_WIDTH, DEFAULT_K_BASELINE};
use visk_core::expert::{collect_scripted, expert_action, run_expert_episode, CollectOptions, ExpertMemory, ExpertParams, Phase};
use visk_core::sim::{held_out_targets, linf, sample_train_target, EnvConfig, Episode, DEFAULT_EVAL_SEED};

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn collection_is_bit_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let params = ExpertParams { seed: 5, ..ExpertParams::default() };
    let cfg = EnvConfig::default();
    collect_scripted(&cfg, &params, 3, a.path(), &CollectOptions::default()).unwrap();
    collect_scripted(&cfg, &params, 3, b.path(), &CollectOptions::default()).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.len(), tb.len());
    assert!(ta == tb, "collections differ");
}

#[test]
fn collected_demos_are_valid_and_avoid_held_out_slots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EnvConfig::default();
    let index = collect_scripted(&cfg, &ExpertParams::default(), 4, dir.path(), &CollectOptions::default()).unwrap();
    assert_eq!(DatasetIndex::load(dir.path()).unwrap(), index);
    assert!(index.attempts >= 4);
    let held = held_out_targets(&cfg, 10, DEFAULT_EVAL_SEED).unwrap();
    for (entry, demo) in index.demos.iter().zip(index.load_demos(dir.path()).unwrap()) {
        demo.validate().unwrap();
        assert!(demo.meta.success);
        assert_eq!(demo.meta.target_config.slot_xy, entry.slot_xy);
        assert!(held.iter().all(|h| linf(h.slot_xy, entry.slot_xy) >= cfg.holdout_delta));
        assert!(cfg.train_grid.contains(entry.slot_xy));
        let actions = demo.action_stream().unwrap();
        assert_eq!(actions.values(0), [0.0; 4], "first tick holds still");
        assert_eq!(actions.values(actions.len() - 1), [0.0; 4], "final tick is a zero action");
        let lim = cfg.max_tick() as f32 + 1e-6;
        for i in 0..actions.len() {
            assert!(actions.values(i)[..3].iter().all(|v| v.abs() <= lim));
        }
    }
}

#[test]
fn held_out_targets_are_deterministic_and_separated() {
    let cfg = EnvConfig::default();
    let a = held_out_targets(&cfg, 10, 7).unwrap();
    assert_eq!(a, held_out_targets(&cfg, 10, 7).unwrap());
    assert_ne!(a, held_out_targets(&cfg, 10, 8).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let t = sample_train_target(&cfg, &mut rng, &a).unwrap();
        assert!(a.iter().all(|h| linf(h.slot_xy, t.slot_xy) >= cfg.holdout_delta));
    }
}

#[test]
fn expert_usually_succeeds() {
    let cfg = EnvConfig::default();
    let params = ExpertParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 20;
    let mut ok = 0;
    for seed in 0..n {
        let t = sample_train_target(&cfg, &mut rng, &[]).unwrap();
        ok += run_expert_episode(&cfg, &params, &t, seed).unwrap().meta.success as usize;
    }
    assert!(ok >= 18, "expert landed {ok}/{n}");
}

#[test]
fn seeking_produces_shear_on_the_skin() {
    let cfg = EnvConfig::default();
    let params = ExpertParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut shear = Vec::new();
    for seed in 0..10u64 {
        let target = sample_train_target(&cfg, &mut rng, &[]).unwrap();
        let mut ep = Episode::new(&cfg, &target, seed).unwrap();
        let mut erng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mut mem = ExpertMemory::new(&target, &params, &mut erng);
        ep.tick([0.0; ACTION_WIDTH]).unwrap();
        let base = baseline(ep.tactile(), DEFAULT_K_BASELINE).unwrap();
        while !ep.is_success() && ep.ticks() < 150 {
            let (a, next) = expert_action(ep.state(), &target, &mem, &params, &cfg, &mut erng);
            mem = next;
            ep.tick(a).unwrap();
            if mem.phase == Phase::Seek {
                let b = ep.latest_tactile();
                // x and y channels of every magnetometer
                let xy: Vec<f64> = (0..5).flat_map(|m| [3 * m, 3 * m + 1]).map(|i| (b[i] - base[i]).abs() as f64).collect();
                shear.push(xy.iter().sum::<f64>() / xy.len() as f64);
            }
        }
    }
    assert!(!shear.is_empty(), "no seek phase observed");
    let mean = shear.iter().sum::<f64>() / shear.len() as f64;
    assert!(mean > 3.0 * cfg.noise_sigma, "mean shear reading {mean}");
}
