use visk_core::sim::{render, reset, EnvConfig, SimState, TargetConfig};
use visk_core::View;

fn scene() -> (EnvConfig, SimState) {
    let cfg = EnvConfig::default();
    let state = reset(&cfg, &TargetConfig::at([20.0, 10.0]), 4).unwrap();
    (cfg, state)
}

fn count_color(img: &[u8], c: [u8; 3], tol: i32) -> usize {
    img.chunks_exact(3).filter(|p| (0..3).all(|k| (p[k] as i32 - c[k] as i32).abs() <= tol)).count()
}

#[test]
fn every_view_is_a_full_rgb_frame() {
    let (cfg, state) = scene();
    for v in View::ALL {
        assert_eq!(render(&state, v, &cfg).len(), cfg.image_hw * cfg.image_hw * 3);
    }
}

#[test]
fn renders_are_pure() {
    let (cfg, state) = scene();
    for v in View::ALL {
        assert_eq!(render(&state, v, &cfg), render(&state.clone(), v, &cfg));
    }
}

#[test]
fn peg_colour_follows_the_target_config() {
    let (cfg, mut state) = scene();
    // seen from above the gripper hides the peg; the side view shows it
    let before = render(&state, View::Side, &cfg);
    state.target.peg_color = [40, 90, 210];
    let after = render(&state, View::Side, &cfg);
    assert_ne!(before, after);
    assert!(count_color(&after, [40, 90, 210], 2) > 0);
}

#[test]
fn moving_the_arm_changes_third_person_and_wrist_views() {
    let (cfg, mut state) = scene();
    // the slot sits beside the gripper, inside the wrist window
    state.ee[0] = state.target.slot_xy[0] - 3.0;
    state.ee[1] = state.target.slot_xy[1];
    let mut moved = state.clone();
    moved.ee[0] += 0.8;
    for v in View::ALL {
        assert_ne!(render(&state, v, &cfg), render(&moved, v, &cfg), "{v} did not change");
    }
}

#[test]
fn slot_contrast_controls_hole_visibility() {
    let (cfg, mut state) = scene();
    state.target.slot_contrast = 0.0;
    let faint = render(&state, View::Top, &cfg);
    state.target.slot_contrast = 1.0;
    let dark = render(&state, View::Top, &cfg);
    let darkness = |img: &[u8]| img.iter().map(|&b| 255 - b as u32).sum::<u32>();
    assert!(darkness(&dark) > darkness(&faint));
}

#[test]
fn other_resolutions_render() {
    let cfg = EnvConfig { image_hw: 32, ..EnvConfig::default() };
    let state = reset(&cfg, &TargetConfig::at([20.0, 10.0]), 4).unwrap();
    assert_eq!(render(&state, View::Wrist, &cfg).len(), 32 * 32 * 3);
}
