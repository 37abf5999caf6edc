use super::{EnvConfig, SimState};
use crate::modality::View;

const BOARD: [f32; 3] = [196.0, 170.0, 128.0];
const HOLE_DARK: [f32; 3] = [25.0, 20.0, 15.0];
const FLOOR: [f32; 3] = [70.0, 80.0, 70.0];
const GRIPPER: [f32; 3] = [105.0, 105.0, 115.0];
const SKY: [f32; 3] = [225.0, 228.0, 235.0];
const BOARD_FACE: [f32; 3] = [150.0, 118.0, 80.0];

/// Visible peg length below the gripper (cm).
const PEG_LENGTH: f64 = 1.5;
const GRIPPER_HEIGHT: f64 = 1.5;
/// Vertical extent of the side view (cm).
const SIDE_Z: (f64, f64) = (-2.0, 8.0);

/// Float RGB canvas with coverage-weighted rectangle fills.
struct Canvas {
    h: usize,
    w: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn new(h: usize, w: usize, fill: [f32; 3]) -> Self {
        let mut px = Vec::with_capacity(h * w * 3);
        for _ in 0..h * w {
            px.extend_from_slice(&fill);
        }
        Self { h, w, px }
    }

    /// Fills `[x0, x1) × [y0, y1)` in pixel units, blending partially
    /// covered pixels by their covered area.
    fn fill(&mut self, x0: f64, x1: f64, y0: f64, y1: f64, color: [f32; 3]) {
        let (x0, x1) = (x0.max(0.0), x1.min(self.w as f64));
        let (y0, y1) = (y0.max(0.0), y1.min(self.h as f64));
        if x1 <= x0 || y1 <= y0 {
            return;
        }
        for r in y0.floor() as usize..(y1.ceil() as usize).min(self.h) {
            let cy = (y1.min(r as f64 + 1.0) - y0.max(r as f64)).max(0.0);
            for c in x0.floor() as usize..(x1.ceil() as usize).min(self.w) {
                let cx = (x1.min(c as f64 + 1.0) - x0.max(c as f64)).max(0.0);
                let cov = (cx * cy) as f32;
                if cov <= 0.0 {
                    continue;
                }
                let p = &mut self.px[(r * self.w + c) * 3..(r * self.w + c) * 3 + 3];
                for k in 0..3 {
                    p[k] += (color[k] - p[k]) * cov;
                }
            }
        }
    }

    fn into_bytes(self) -> Vec<u8> {
        self.px.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

/// Maps world rectangles onto a canvas.
struct Projection {
    x0: f64,
    sx: f64,
    v_top: f64,
    sv: f64,
}

impl Projection {
    /// Horizontal world span `[x0, x0 + wx]`, vertical span `[v_top - wv, v_top]`.
    fn new(canvas: &Canvas, x0: f64, wx: f64, v_top: f64, wv: f64) -> Self {
        Self { x0, sx: canvas.w as f64 / wx, v_top, sv: canvas.h as f64 / wv }
    }

    fn rect(&self, canvas: &mut Canvas, cx: f64, hx: f64, v0: f64, v1: f64, color: [f32; 3]) {
        let (px0, px1) = ((cx - hx - self.x0) * self.sx, (cx + hx - self.x0) * self.sx);
        let (py0, py1) = ((self.v_top - v1) * self.sv, (self.v_top - v0) * self.sv);
        canvas.fill(px0, px1, py0, py1, color);
    }

    fn square(&self, canvas: &mut Canvas, c: [f64; 2], half: f64, color: [f32; 3]) {
        self.rect(canvas, c[0], half, c[1] - half, c[1] + half, color);
    }
}

fn to_f32(c: [u8; 3]) -> [f32; 3] {
    [c[0] as f32, c[1] as f32, c[2] as f32]
}

fn hole_color(contrast: f64) -> [f32; 3] {
    let a = contrast as f32;
    [0, 1, 2].map(|k| BOARD[k] + (HOLE_DARK[k] - BOARD[k]) * a)
}

/// Orthographic `H×W×3` render of one view; a pure function of its inputs.
pub fn render(state: &SimState, view: View, cfg: &EnvConfig) -> Vec<u8> {
    let n = cfg.image_hw;
    let tgt = &state.target;
    let ee = state.ee_xy();
    let peg = to_f32(tgt.peg_color);
    let hole = hole_color(tgt.slot_contrast);
    let opening = tgt.opening_half_width();
    match view {
        View::Top => {
            let mut c = Canvas::new(n, n, BOARD);
            let p = Projection::new(&c, 0.0, cfg.workspace[0], cfg.workspace[1], cfg.workspace[1]);
            p.square(&mut c, tgt.slot_xy, opening, hole);
            p.square(&mut c, ee, tgt.peg_half_width, peg);
            p.square(&mut c, ee, cfg.gripper_half_width, GRIPPER);
            c.into_bytes()
        }
        View::Side => {
            let mut c = Canvas::new(n, n, SKY);
            let p = Projection::new(&c, 0.0, cfg.workspace[0], SIDE_Z.1, SIDE_Z.1 - SIDE_Z.0);
            let z = state.ee[2];
            p.rect(&mut c, ee[0], tgt.peg_half_width, z, z + PEG_LENGTH, peg);
            p.rect(&mut c, ee[0], cfg.gripper_half_width, z + PEG_LENGTH, z + PEG_LENGTH + GRIPPER_HEIGHT, GRIPPER);
            // The board's front face hides the slot and the inserted part of the peg.
            p.rect(&mut c, cfg.workspace[0] / 2.0, cfg.workspace[0] / 2.0, SIDE_Z.0, 0.0, BOARD_FACE);
            c.into_bytes()
        }
        View::Wrist => {
            let mut c = Canvas::new(n, n, FLOOR);
            let half = cfg.wrist_window / 2.0;
            let p = Projection::new(&c, ee[0] - half, cfg.wrist_window, ee[1] + half, cfg.wrist_window);
            let ws = cfg.workspace;
            p.rect(&mut c, ws[0] / 2.0, ws[0] / 2.0, 0.0, ws[1], BOARD);
            p.square(&mut c, tgt.slot_xy, opening, hole);
            p.square(&mut c, ee, cfg.gripper_half_width, GRIPPER);
            p.square(&mut c, ee, tgt.peg_half_width, peg);
            c.into_bytes()
        }
    }
}
