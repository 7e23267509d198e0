//! Event-frame datasets: file formats, the synthetic generator, splits and batches.

pub mod frame;
pub mod manifest;
pub mod synthetic;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use manifest::{load_dataset, write_dataset, LoadOptions, Loaded, ManifestEntry};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Calib,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Calib => "calib",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Split::Train, Split::Eval, Split::Calib]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?} (train, eval, calib)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[C, H, W]`, values in `[0, 1]`.
    pub frame: Tensor,
    pub label: usize,
    pub split: Split,
    pub condition: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub shape: [usize; 3],
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn empty(shape: [usize; 3], num_classes: usize) -> Self {
        Dataset {
            shape,
            num_classes,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Dataset {
        Dataset {
            shape: self.shape,
            num_classes: self.num_classes,
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Stacks the given samples into `[B, C, H, W]` plus labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let frames: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].frame).collect();
        if frames.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        Ok((Tensor::stack(&frames)?, indices.iter().map(|&i| self.samples[i].label).collect()))
    }

    /// All samples as one batch.
    pub fn all(&self) -> Result<(Tensor, Vec<usize>)> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Moves every `stride`-th training sample into the calibration split.
    /// Does nothing if a calibration split already exists.
    pub fn carve_calibration(&mut self, fraction: f64) {
        if self.samples.iter().any(|s| s.split == Split::Calib) || fraction <= 0.0 {
            return;
        }
        let stride = (1.0 / fraction).round().max(1.0) as usize;
        let train = self.samples.iter_mut().filter(|s| s.split == Split::Train);
        for (k, s) in train.enumerate() {
            if k % stride == stride - 1 {
                s.split = Split::Calib;
            }
        }
    }
}

/// Shuffled mini-batches of `0..n`; the last batch may be short.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batches_cover_every_index_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = epoch_batches(23, 5, &mut rng);
        assert_eq!(b.len(), 5);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn calibration_is_carved_from_train() {
        let spec = SyntheticSpec {
            train_counts: vec![10; 3],
            eval_counts: vec![2; 3],
            height: 4,
            width: 4,
            ..SyntheticSpec::default()
        };
        let mut d = generate_synthetic(&spec).unwrap();
        d.carve_calibration(0.1);
        assert_eq!(d.split(Split::Calib).len(), 3);
        assert_eq!(d.split(Split::Train).len(), 27);
        assert_eq!(d.split(Split::Eval).len(), 6);
    }
}
