//! Procedural "flood" scenes: textured land with smooth muddy-water blobs, so
//! training and evaluation can run without any external dataset.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImagePair, Raster};
use crate::error::{Error, Result};

/// Seed of the bundled 20-image set.
pub const BUNDLED_SEED: u64 = 20_240_607;
pub const BUNDLED_COUNT: usize = 20;
pub const BUNDLED_SIZE: usize = 64;

/// Sum of a few random plane waves, roughly in `[-1, 1]`.
struct WaveField {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl WaveField {
    fn new<R: Rng>(rng: &mut R, count: usize, max_freq: f64) -> Self {
        let waves = (0..count)
            .map(|_| {
                let angle = rng.gen_range(0.0..2.0 * PI);
                let freq = rng.gen_range(0.5..max_freq);
                (
                    angle.cos() * freq,
                    angle.sin() * freq,
                    rng.gen_range(0.0..2.0 * PI),
                    rng.gen_range(0.3..1.0),
                )
            })
            .collect();
        WaveField { waves }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        let total: f64 = self.waves.iter().map(|w| w.3).sum();
        self.waves
            .iter()
            .map(|&(fx, fy, phase, amp)| amp * (2.0 * PI * (fx * u + fy * v) + phase).sin())
            .sum::<f64>()
            / total
    }
}

/// Rotated ellipse with a wavy boundary.
struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    lobes: f64,
    wobble: f64,
    phase: f64,
}

impl Blob {
    fn new<R: Rng>(rng: &mut R) -> Self {
        Blob {
            cy: rng.gen_range(0.1..0.9),
            cx: rng.gen_range(0.1..0.9),
            ry: rng.gen_range(0.12..0.35),
            rx: rng.gen_range(0.12..0.35),
            angle: rng.gen_range(0.0..PI),
            lobes: f64::from(rng.gen_range(2..6)),
            wobble: rng.gen_range(0.0..0.2),
            phase: rng.gen_range(0.0..2.0 * PI),
        }
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        let (dy, dx) = (u - self.cy, v - self.cx);
        let (s, c) = self.angle.sin_cos();
        let a = (c * dx + s * dy) / self.rx;
        let b = (-s * dx + c * dy) / self.ry;
        let theta = b.atan2(a);
        a * a + b * b <= (1.0 + self.wobble * (self.lobes * theta + self.phase).sin()).powi(2)
    }
}

/// One scene of `size×size` pixels.
pub fn flood_pair<R: Rng>(size: usize, rng: &mut R, id: impl Into<String>) -> ImagePair {
    let texture = WaveField::new(rng, 6, 8.0);
    let patches = WaveField::new(rng, 3, 2.0);
    let ripples = WaveField::new(rng, 4, 12.0);
    let blobs: Vec<Blob> = (0..rng.gen_range(1..4)).map(|_| Blob::new(rng)).collect();
    let roofs: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(0..3))
        .map(|_| {
            let (y, x) = (rng.gen_range(0.0..0.85), rng.gen_range(0.0..0.85));
            (
                y,
                x,
                y + rng.gen_range(0.06..0.15),
                x + rng.gen_range(0.06..0.15),
            )
        })
        .collect();
    let tint: f64 = rng.gen_range(-0.05..0.05);

    let mut image = Raster::filled(size, size, 3, 0.0);
    let mut mask = Raster::filled(size, size, 1, 0.0);
    let scale = (size.max(2) - 1) as f64;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (y as f64 / scale, x as f64 / scale);
            let water = blobs.iter().any(|b| b.contains(u, v));
            let rgb = if water {
                let r = 0.04 * ripples.at(u, v);
                [0.55 + r + tint, 0.46 + r + tint, 0.33 + r]
            } else if roofs
                .iter()
                .any(|&(y0, x0, y1, x1)| u >= y0 && u < y1 && v >= x0 && v < x1)
            {
                let r = 0.05 * texture.at(u, v);
                [0.62 + r, 0.60 + r, 0.58 + r]
            } else {
                let t = 0.12 * texture.at(u, v);
                let p = patches.at(u, v);
                let dry = 0.5 + 0.5 * p;
                [
                    0.22 + 0.25 * dry + t,
                    0.42 + 0.05 * dry + t,
                    0.18 + 0.08 * dry + 0.5 * t,
                ]
            };
            for (ch, &val) in rgb.iter().enumerate() {
                image.set(y, x, ch, val.clamp(0.0, 1.0));
            }
            mask.set(y, x, 0, if water { 1.0 } else { 0.0 });
        }
    }
    ImagePair::new(image, mask, id).expect("generated dims agree")
}

/// `n` scenes named `flood_000`, `flood_001`, …; a pure function of `(n, size, seed)`.
pub fn flood_set(n: usize, size: usize, seed: u64) -> Vec<ImagePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| flood_pair(size, &mut rng, format!("flood_{i:03}")))
        .collect()
}

/// The 20-image 64×64 set used by the acceptance runs.
pub fn bundled_flood_set() -> Vec<ImagePair> {
    flood_set(BUNDLED_COUNT, BUNDLED_SIZE, BUNDLED_SEED)
}

/// Writes `<id>.ppm` / `<id>.pgm` for every pair into `dir` and returns the paths.
pub fn write_pairs(dir: &Path, pairs: &[ImagePair]) -> Result<Vec<(PathBuf, PathBuf)>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    pairs
        .iter()
        .map(|p| {
            let img = dir.join(format!("{}.ppm", p.source_id));
            let mask = dir.join(format!("{}.pgm", p.source_id));
            p.save(&img, &mask)?;
            Ok((img, mask))
        })
        .collect()
}

/// Multi-channel targets for the reprogramming base task: channel `k` marks pixels
/// whose mean intensity falls in the `k`-th of `channels` equal brightness bands.
pub fn brightness_bands(image: &Raster, channels: usize) -> Raster {
    let (h, w) = (image.height(), image.width());
    let mut out = Raster::filled(h, w, channels, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mean = (0..image.channels())
                .map(|c| image.get(y, x, c))
                .sum::<f64>()
                / image.channels() as f64;
            let band = ((mean * channels as f64) as usize).min(channels - 1);
            out.set(y, x, band, 1.0);
        }
    }
    out
}
