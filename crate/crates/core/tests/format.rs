use std::fs;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visk_core::data::{
    load_demo, save_demo, subtract_baseline, synchronize, tick_count, Collector, DataError, Demonstration, EpisodeMeta,
    Stream, StreamKind, ACTION_STREAM, PROPRIO_STREAM, TACTILE_STREAM,
};
use visk_core::sim::TargetConfig;
use visk_core::{ModalityMask, View};

const HW: usize = 4;

fn meta(duration: f64) -> EpisodeMeta {
    EpisodeMeta {
        target_config: TargetConfig::at([20.0, 10.0]),
        seed: 17,
        noise_max_deg: 15.0,
        success: true,
        duration,
        collector: Collector::Scripted,
    }
}

/// Tactile and proprio at 100 Hz, cameras at 30 Hz, actions at 10 Hz. Every
/// value encodes its own sample index so the oracle can read it back.
fn fixture(duration: f64) -> Demonstration {
    let mut demo = Demonstration::new(meta(duration));
    let count = |rate: f64| (duration * rate + 1e-9).floor() as usize + 1;
    let mut tactile = Stream::new(TACTILE_STREAM, StreamKind::Tactile, 15, 100.0).unwrap();
    let mut proprio = Stream::new(PROPRIO_STREAM, StreamKind::Proprio, 4, 100.0).unwrap();
    for i in 0..count(100.0) {
        let t = i as f64 / 100.0;
        tactile.push_f32(t, &std::array::from_fn::<f32, 15, _>(|c| (i * 100 + c) as f32)).unwrap();
        proprio.push_f32(t, &[i as f32, 0.5, 1.5, 1.0]).unwrap();
    }
    for view in [View::Top, View::Side, View::Wrist] {
        let mut cam = Stream::camera(view.stream_name(), HW, HW, 30.0).unwrap();
        for j in 0..count(30.0) {
            let frame: Vec<u8> = (0..HW * HW * 3).map(|p| ((j * 7 + p + view as usize) % 256) as u8).collect();
            cam.push_frame(j as f64 / 30.0, &frame).unwrap();
        }
        demo.insert(cam);
    }
    let mut action = Stream::new(ACTION_STREAM, StreamKind::Action, 4, 10.0).unwrap();
    for k in 0..count(10.0) {
        action.push_f32(k as f64 / 10.0, &[k as f32, -(k as f32), 0.25, 0.0]).unwrap();
    }
    demo.insert(tactile);
    demo.insert(proprio);
    demo.insert(action);
    demo
}

/// Nearest preceding sample by exhaustive scan.
fn oracle(timestamps: &[f64], t: f64) -> Option<usize> {
    let mut best = None;
    for (i, &ts) in timestamps.iter().enumerate() {
        if ts <= t {
            best = Some(i);
        }
    }
    best
}

#[test]
fn demo_round_trip_is_bit_exact() {
    let demo = fixture(2.0);
    demo.validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    save_demo(&demo, &a).unwrap();
    let back = load_demo(&a).unwrap();
    assert_eq!(back, demo);
    save_demo(&back, &b).unwrap();
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn one_tactile_sample_is_sixty_eight_bytes() {
    let mut demo = Demonstration::new(meta(0.0));
    let mut tactile = Stream::new(TACTILE_STREAM, StreamKind::Tactile, 15, 100.0).unwrap();
    tactile.push_f32(0.0, &[1.0; 15]).unwrap();
    demo.insert(tactile);
    let dir = tempfile::tempdir().unwrap();
    save_demo(&demo, dir.path()).unwrap();
    assert_eq!(fs::metadata(dir.path().join("tactile.bin")).unwrap().len(), 8 + 60);
}

#[test]
fn truncated_stream_file_is_reported() {
    let demo = fixture(1.0);
    let dir = tempfile::tempdir().unwrap();
    save_demo(&demo, dir.path()).unwrap();
    let path = dir.path().join("tactile.bin");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 68]).unwrap();
    match load_demo(dir.path()) {
        Err(DataError::TruncatedStreamFile { expected, actual, .. }) => assert_eq!(expected - actual, 68),
        other => panic!("expected truncation error, got {other:?}"),
    }
}

#[test]
fn corrupt_manifest_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    save_demo(&fixture(0.5), dir.path()).unwrap();
    fs::write(dir.path().join("manifest.json"), "{\"format\": 3").unwrap();
    assert!(matches!(load_demo(dir.path()), Err(DataError::CorruptManifest { .. })));
}

#[test]
fn latest_at_matches_scan_on_random_times() {
    let demo = fixture(2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let t: f64 = rng.random_range(-0.05..2.05);
        for s in demo.streams.values() {
            assert_eq!(s.latest_at(t), oracle(s.timestamps(), t), "{} at {t}", s.name());
        }
    }
}

#[test]
fn synchronize_matches_scan_on_random_ticks() {
    let demo = fixture(2.0);
    let mask = ModalityMask::all();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    // random policy rates give tick times that fall between and on samples
    while checked < 1000 {
        let rate = rng.random_range(1.0..60.0f64);
        let frames = synchronize(&demo, rate, &mask, None).unwrap();
        assert_eq!(frames.len(), tick_count(2.0, rate));
        for (k, f) in frames.iter().enumerate() {
            let t = k as f64 / rate;
            assert_eq!(f.t, t);
            let tac = oracle(demo.stream(TACTILE_STREAM).unwrap().timestamps(), t).unwrap();
            assert_eq!(f.tactile.unwrap()[0], (tac * 100) as f32);
            let pro = oracle(demo.stream(PROPRIO_STREAM).unwrap().timestamps(), t).unwrap();
            assert_eq!(f.proprio.unwrap()[0], pro as f32);
            let act = oracle(demo.stream(ACTION_STREAM).unwrap().timestamps(), t).unwrap();
            assert_eq!(f.action[0], act as f32);
            for (view, img) in &f.images {
                let cam = demo.stream(&view.stream_name()).unwrap();
                assert_eq!(img.as_slice(), cam.frame(oracle(cam.timestamps(), t).unwrap()));
            }
            checked += 1;
        }
    }
}

#[test]
fn policy_ticks_land_on_exact_samples() {
    let frames = synchronize(&fixture(2.0), 10.0, &ModalityMask::all(), None).unwrap();
    assert_eq!(frames.len(), 21);
    assert_eq!(frames[1].tactile.unwrap()[0], 1000.0);
    assert_eq!(frames[1].action[0], 1.0);
    // 0.1 s is camera frame 3 at 30 Hz
    assert_eq!(frames[1].image(View::Top).unwrap(), fixture(2.0).stream("cam_top").unwrap().frame(3));
}

#[test]
fn synchronize_drops_disabled_modalities() {
    let mask = ModalityMask { third_person_views: vec![View::Side], wrist: false, tactile: false, proprio: true };
    let frames = synchronize(&fixture(1.0), 10.0, &mask, None).unwrap();
    for f in frames {
        assert!(f.tactile.is_none() && f.proprio.is_some());
        assert_eq!(f.images.iter().map(|(v, _)| *v).collect::<Vec<_>>(), [View::Side]);
    }
}

#[test]
fn baselined_sync_subtracts_the_first_samples() {
    let demo = fixture(1.0);
    let frames = synchronize(&demo, 10.0, &ModalityMask::all(), Some(5)).unwrap();
    // channel 0 holds 100·i, so the mean of the first five is 200
    assert_eq!(frames[0].tactile.unwrap()[0], -200.0);
    assert_eq!(frames[3].tactile.unwrap()[0], 3000.0 - 200.0);
    let sub = subtract_baseline(demo.stream(TACTILE_STREAM).unwrap(), 1).unwrap();
    assert!(sub.values(0).iter().all(|&v| v == 0.0));
}

#[test]
fn invalid_demos_are_rejected() {
    let mut late = fixture(1.0);
    let mut a = Stream::new(ACTION_STREAM, StreamKind::Action, 4, 10.0).unwrap();
    a.push_f32(0.05, &[0.0; 4]).unwrap();
    late.insert(a);
    assert!(matches!(late.validate(), Err(DataError::StreamStartsLate { .. })));

    let mut no_cam = fixture(1.0);
    no_cam.streams.retain(|n, _| !n.starts_with("cam_"));
    assert!(matches!(no_cam.validate(), Err(DataError::MissingStream(_))));

    let mut s = Stream::new(TACTILE_STREAM, StreamKind::Tactile, 15, 100.0).unwrap();
    s.push_f32(0.0, &[0.0; 15]).unwrap();
    assert!(s.push_f32(0.0, &[0.0; 15]).is_err());
    assert!(s.push_f32(0.01, &[0.0; 14]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn arbitrary_channel_values_survive_disk(values in prop::collection::vec(any::<f32>(), 15..=150), dt in 1e-4f64..0.5) {
        let n = values.len() / 15;
        let mut demo = Demonstration::new(meta(dt * (n - 1) as f64));
        let mut s = Stream::new(TACTILE_STREAM, StreamKind::Tactile, 15, 1.0 / dt).unwrap();
        for i in 0..n {
            s.push_f32(i as f64 * dt, &values[i * 15..(i + 1) * 15]).unwrap();
        }
        demo.insert(s);
        let dir = tempfile::tempdir().unwrap();
        save_demo(&demo, dir.path()).unwrap();
        let back = load_demo(dir.path()).unwrap();
        let (a, b) = (demo.stream(TACTILE_STREAM).unwrap(), back.stream(TACTILE_STREAM).unwrap());
        prop_assert_eq!(a.timestamps(), b.timestamps());
        for i in 0..n {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a.values(i)), bits(b.values(i)));
        }
    }
}
