use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::cell_center;

pub const COEFF_MIN: f64 = 0.3;
pub const COEFF_MAX: f64 = 3.0;
pub const MODE_AMPLITUDE: f64 = 0.5;

/// Wave vectors of the log-coefficient field.
pub const WAVE_VECTORS: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0)];

/// `g(x, y) = Σ_k A_k cos(2π(p_k x + q_k y) + φ_k)` over [`WAVE_VECTORS`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogCoefficient {
    pub amplitudes: [f64; 4],
    pub phases: [f64; 4],
}

impl LogCoefficient {
    pub fn sample(seed: u64) -> Self {
        // stream 1 keeps these draws independent of the polygon sampled from the same seed
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut amplitudes = [0.0; 4];
        let mut phases = [0.0; 4];
        for k in 0..4 {
            amplitudes[k] = rng.gen_range(-MODE_AMPLITUDE..=MODE_AMPLITUDE);
            phases[k] = rng.gen_range(0.0..2.0 * PI);
        }
        Self { amplitudes, phases }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        WAVE_VECTORS
            .iter()
            .zip(self.amplitudes.iter().zip(&self.phases))
            .map(|(&(p, q), (&amp, &phase))| amp * (2.0 * PI * (p * x + q * y) + phase).cos())
            .sum()
    }

    /// `clamp(exp(g), 0.3, 3)` at every cell centre.
    pub fn field(&self, s: usize) -> Vec<f64> {
        let mut a = vec![0.0; s * s];
        for j in 0..s {
            for i in 0..s {
                let g = self.eval(cell_center(i, s), cell_center(j, s));
                a[j * s + i] = g.exp().clamp(COEFF_MIN, COEFF_MAX);
            }
        }
        a
    }
}

pub fn sample_coefficient(seed: u64, s: usize) -> Vec<f64> {
    LogCoefficient::sample(seed).field(s)
}
