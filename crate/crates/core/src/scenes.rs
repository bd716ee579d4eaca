//! Procedural grayscale scenes standing in for a natural-image corpus.
//!
//! Each scene is a smooth illumination ramp, a few octaves of value noise
//! (roughly 1/f), and a handful of soft-edged objects, quantized to 8-bit
//! integer levels. Everything is a pure function of the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Bilinearly interpolated lattice noise with unit amplitude at one octave.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut impl Rng) -> Self {
        let n = cells + 2;
        Self {
            cells,
            lattice: (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// `u, v` in `[0, 1]`.
    fn at(&self, u: f64, v: f64) -> f64 {
        let n = self.cells + 2;
        let (fu, fv) = (u * self.cells as f64, v * self.cells as f64);
        let (i, j) = (fu.floor() as usize, fv.floor() as usize);
        let (tu, tv) = (fu - i as f64, fv - j as f64);
        // smoothstep weights avoid visible lattice creases
        let (su, sv) = (tu * tu * (3.0 - 2.0 * tu), tv * tv * (3.0 - 2.0 * tv));
        let l = |a: usize, b: usize| self.lattice[a.min(n - 1) * n + b.min(n - 1)];
        let top = l(j, i) * (1.0 - su) + l(j, i + 1) * su;
        let bot = l(j + 1, i) * (1.0 - su) + l(j + 1, i + 1) * su;
        top * (1.0 - sv) + bot * sv
    }
}

/// A `height x width` synthetic scene with 8-bit integer values.
pub fn natural_scene(height: usize, width: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rng.random_range(70.0..110.0);
    let ramp = (rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0));
    let octaves: Vec<(ValueNoise, f64)> = (0..5)
        .map(|o| {
            let cells = 2usize << o;
            (ValueNoise::new(cells, &mut rng), 28.0 * 0.5f64.powi(o))
        })
        .collect();

    struct Blob {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        level: f64,
        square: bool,
    }
    let blobs: Vec<Blob> = (0..rng.random_range(3..7))
        .map(|_| Blob {
            cy: rng.random_range(0.0..1.0),
            cx: rng.random_range(0.0..1.0),
            ry: rng.random_range(0.06..0.25),
            rx: rng.random_range(0.06..0.25),
            level: rng.random_range(-45.0..60.0),
            square: rng.random_bool(0.4),
        })
        .collect();

    let edge = 1.2 / height.max(width) as f64;
    Image::from_fn(height, width, |y, x| {
        let v = y as f64 / height.max(2).saturating_sub(1) as f64;
        let u = x as f64 / width.max(2).saturating_sub(1) as f64;
        let mut s = base + ramp.0 * (u - 0.5) + ramp.1 * (v - 0.5);
        for (noise, amp) in &octaves {
            s += amp * noise.at(u, v);
        }
        for b in &blobs {
            let (dy, dx) = ((v - b.cy) / b.ry, (u - b.cx) / b.rx);
            let d = if b.square {
                dy.abs().max(dx.abs())
            } else {
                (dy * dy + dx * dx).sqrt()
            };
            // signed distance in normalized units, softened over about a pixel
            let dist = (d - 1.0) * b.ry.min(b.rx);
            s += b.level / (1.0 + (dist / edge).exp());
        }
        s.clamp(0.0, 255.0).round()
    })
}

/// Seeds of the bundled scene set.
pub const BUNDLED_SEEDS: [u64; 8] = [11, 23, 37, 41, 53, 67, 79, 97];

/// Edge length of each bundled scene.
pub const BUNDLED_SIZE: usize = 128;

/// The bundled training corpus: eight 128x128 scenes.
pub fn bundled_images() -> Vec<Image<f64>> {
    BUNDLED_SEEDS
        .iter()
        .map(|&s| natural_scene(BUNDLED_SIZE, BUNDLED_SIZE, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_8bit() {
        let a = natural_scene(64, 80, 5);
        assert_eq!(a, natural_scene(64, 80, 5));
        assert_ne!(a, natural_scene(64, 80, 6));
        assert!(a
            .data()
            .iter()
            .all(|&v| v == v.round() && (0.0..=255.0).contains(&v)));
        let (lo, hi) = a.min_max();
        assert!(hi - lo > 40.0, "scene has too little contrast: {lo}..{hi}");
    }
}
