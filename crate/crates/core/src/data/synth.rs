//! Procedural class-conditioned images.
//!
//! Class `k` is an oriented sinusoidal grating with its own spatial
//! frequency, orientation and per-channel phase. Each sample jitters the
//! amplitude and phase slightly and adds Gaussian pixel noise (σ = 0.05), so
//! classes overlap a little but remain easy to separate.

use std::f64::consts::PI;

use super::Dataset;
use crate::model::{Image, ModelConfig, Sample};
use crate::numerics::{Rng, Seed};

const NOISE_SIGMA: f64 = 0.05;

struct ClassPattern {
    freq: f64,
    cos: f64,
    sin: f64,
    phase: [f64; 3],
}

fn class_pattern(k: usize, classes: usize) -> ClassPattern {
    // Orientations spread over a half turn; frequencies cycle through 1..=3.
    let theta = PI * k as f64 / classes as f64;
    let freq = 1.0 + (k % 3) as f64;
    let phase = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0].map(|p| p + 0.7 * k as f64);
    ClassPattern { freq, cos: theta.cos(), sin: theta.sin(), phase }
}

/// `n` samples with labels assigned round-robin over `k` classes.
pub fn synth_generate(seed: &Seed, n: usize, cfg: &ModelConfig, k: usize) -> Dataset {
    assert!(k >= 2, "synthetic data needs at least two classes");
    let mut rng = Rng::stream(seed, "data/synthetic");
    let patterns: Vec<ClassPattern> = (0..k).map(|c| class_pattern(c, k)).collect();
    let (h, w, ch) = (cfg.image_h, cfg.image_w, cfg.channels);
    let scale = h.max(w) as f64;

    let samples = (0..n)
        .map(|i| {
            let label = i % k;
            let pat = &patterns[label];
            let amplitude = 0.3 + 0.1 * rng.uniform01();
            let jitter = 0.3 * (rng.uniform01() - 0.5);
            let mut pixels = Vec::with_capacity(h * w * ch);
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 * pat.cos + y as f64 * pat.sin) / scale;
                    for c in 0..ch {
                        let v = 0.5
                            + amplitude * (2.0 * PI * pat.freq * u + pat.phase[c % 3] + jitter).sin()
                            + NOISE_SIGMA * rng.standard_normal();
                        pixels.push(v.clamp(0.0, 1.0));
                    }
                }
            }
            Sample { image: Image::new(h, w, ch, pixels), label }
        })
        .collect();
    Dataset { samples, num_classes: k, name: "synthetic".into() }
}
