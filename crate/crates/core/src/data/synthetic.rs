//! Seeded synthetic event frames.
//!
//! Class `c` of `K` is a bar oriented at `π·c/K` through the frame centre that
//! moves perpendicular to itself: channels are {positive, negative polarity} ×
//! {first, second half of the window}, with positive events on the bar's
//! leading edge and negative ones on its trailing edge. Gaussian pixel noise
//! is added and values are clamped to `[0, 1]` and rounded to `f32`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Per-class training counts; its length is the class count.
    pub train_counts: Vec<usize>,
    pub eval_counts: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_counts: vec![40, 40, 40, 20, 20, 20, 20],
            eval_counts: vec![20, 20, 20, 10, 10, 10, 10],
            channels: 4,
            height: 32,
            width: 32,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_classes(&self) -> usize {
        self.train_counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_counts.is_empty() || self.eval_counts.len() != self.train_counts.len() {
            return Err(Error::Config(format!(
                "synthetic: {} train and {} eval class counts",
                self.train_counts.len(),
                self.eval_counts.len()
            )));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("synthetic frame dimensions must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("synthetic noise {}", self.noise)));
        }
        Ok(())
    }
}

/// Noise-free frame of one class.
pub fn class_pattern(class: usize, classes: usize, channels: usize, height: usize, width: usize) -> Tensor {
    let theta = std::f64::consts::PI * class as f64 / classes as f64;
    let (ux, uy) = (theta.cos(), theta.sin());
    let (nx, ny) = (-uy, ux);
    let size = height.min(width) as f64;
    let (sigma_along, sigma_across) = (0.3 * size, 0.06 * size);
    let step = 0.1 * size;
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    Tensor::from_fn(&[channels, height, width], |i| {
        let ch = i / (height * width);
        let (y, x) = ((i / width) % height, i % width);
        let half = if (ch / 2).is_multiple_of(2) { -0.5 } else { 0.5 };
        let (edge, amp) = if ch.is_multiple_of(2) { (1.0 / 3.0, 0.85) } else { (-1.0 / 3.0, 0.6) };
        let shift = (half + edge) * step;
        let dx = x as f64 - (cx + shift * nx);
        let dy = y as f64 - (cy + shift * ny);
        let along = dx * ux + dy * uy;
        let across = dx * nx + dy * ny;
        amp * (-0.5 * ((along / sigma_along).powi(2) + (across / sigma_across).powi(2))).exp()
    })
}

/// Deterministic under `spec.seed`. Samples of each split are interleaved by class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let k = spec.num_classes();
    let patterns: Vec<Tensor> = (0..k)
        .map(|c| class_pattern(c, k, spec.channels, spec.height, spec.width))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid σ");
    let mut samples = Vec::new();
    for (split, counts) in [(Split::Train, &spec.train_counts), (Split::Eval, &spec.eval_counts)] {
        let rounds = counts.iter().copied().max().unwrap_or(0);
        for i in 0..rounds {
            for (c, &n) in counts.iter().enumerate() {
                if i >= n {
                    continue;
                }
                let data = patterns[c]
                    .data()
                    .iter()
                    .map(|&v| {
                        let noisy = if spec.noise > 0.0 { v + normal.sample(&mut rng) } else { v };
                        noisy.clamp(0.0, 1.0) as f32 as f64
                    })
                    .collect();
                let frame = Tensor::new(patterns[c].shape().to_vec(), data)?;
                samples.push(Sample {
                    frame,
                    label: c,
                    split,
                    condition: None,
                });
            }
        }
    }
    Ok(Dataset {
        shape: [spec.channels, spec.height, spec.width],
        num_classes: k,
        samples,
    })
}
