use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EnvConfig, SimState, SkinConfig};
use crate::data::TACTILE_WIDTH;

pub const N_MAGNETOMETERS: usize = 5;

/// One 15-channel skin sample: magnetometer-major, axis-minor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkinReading {
    pub b: [f32; TACTILE_WIDTH],
}

/// Magnetometer positions: centre, +x, -x, +y, -y.
pub fn magnetometer_positions(s: f64) -> [[f64; 3]; N_MAGNETOMETERS] {
    [[0.0, 0.0, 0.0], [s, 0.0, 0.0], [-s, 0.0, 0.0], [0.0, s, 0.0], [0.0, -s, 0.0]]
}

/// Field of a point dipole `m` at offset `r` from it (unit prefactor).
pub fn dipole_field(r: [f64; 3], m: [f64; 3]) -> [f64; 3] {
    let d2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let d = d2.sqrt();
    let u = [r[0] / d, r[1] / d, r[2] / d];
    let mu = m[0] * u[0] + m[1] * u[1] + m[2] * u[2];
    let inv3 = 1.0 / (d2 * d);
    [(3.0 * u[0] * mu - m[0]) * inv3, (3.0 * u[1] * mu - m[1]) * inv3, (3.0 * u[2] * mu - m[2]) * inv3]
}

/// Dipole position after the elastomer deforms under `contact`.
pub fn dipole_position(contact: [f64; 3], skin: &SkinConfig) -> [f64; 3] {
    let sink = (skin.c_n * contact[2]).min(0.9 * skin.h0);
    [skin.c_t * contact[0], skin.c_t * contact[1], skin.h0 - sink]
}

/// Noise- and drift-free field at every magnetometer.
pub fn clean_field(contact: [f64; 3], skin: &SkinConfig) -> [f64; TACTILE_WIDTH] {
    let p = dipole_position(contact, skin);
    let m = [0.0, 0.0, skin.m0];
    let mut out = [0.0; TACTILE_WIDTH];
    for (k, pk) in magnetometer_positions(skin.s).iter().enumerate() {
        let b = dipole_field([p[0] - pk[0], p[1] - pk[1], p[2] - pk[2]], m);
        out[3 * k..3 * k + 3].copy_from_slice(&b);
    }
    out
}

/// Field with no contact.
pub fn rest_field(skin: &SkinConfig) -> [f64; TACTILE_WIDTH] {
    clean_field([0.0; 3], skin)
}

/// Reads the skin: clean field plus the state's drift plus white noise.
pub fn skin_read<R: Rng + ?Sized>(state: &SimState, cfg: &EnvConfig, rng: &mut R) -> SkinReading {
    let clean = clean_field(state.contact, &cfg.skin);
    let mut b = [0.0f32; TACTILE_WIDTH];
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("noise_sigma is finite"));
    for i in 0..TACTILE_WIDTH {
        let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
        b[i] = clean[i] as f32 + state.drift[i] + n as f32;
    }
    SkinReading { b }
}
