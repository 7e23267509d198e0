//! Pipeline configuration, presets and JSON overlays.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::search::SearchConfig;
use crate::space::MacroConfig;
use crate::ttfs::QuantDescriptor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub train_counts: Vec<usize>,
    pub eval_counts: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest CSV; when absent the synthetic set is generated instead.
    pub manifest: Option<PathBuf>,
    pub synthetic: SyntheticData,
    /// Share of the training split moved to calibration when the data has none.
    pub calib_fraction: f64,
    pub calib_from_train: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub random_search_samples: usize,
    pub random_sampling_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    #[serde(rename = "macro")]
    pub macro_config: MacroConfig,
    pub lr_supernet: f64,
    pub lr_retrain: f64,
    pub lr_finetune: f64,
    pub epochs_supernet: usize,
    pub epochs_retrain: usize,
    pub epochs_finetune: usize,
    pub batch_size: usize,
    pub search: SearchConfig,
    pub tau_c: f64,
    pub margin: f64,
    pub quant: QuantDescriptor,
    pub baselines: BaselineConfig,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Hyperparameters of the original experiments (GPU-scale budgets).
    Paper,
    /// CPU-sized budgets and widths.
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        let paper = PipelineConfig {
            data: DataConfig {
                manifest: None,
                synthetic: SyntheticData {
                    train_counts: vec![200, 200, 200, 100, 100, 100, 100],
                    eval_counts: vec![60, 60, 60, 30, 30, 30, 30],
                    noise: 0.6,
                    seed: 0,
                },
                calib_fraction: 0.1,
                calib_from_train: false,
            },
            macro_config: MacroConfig::default(),
            lr_supernet: 5e-3,
            lr_retrain: 5e-4,
            lr_finetune: 5e-5,
            epochs_supernet: 600,
            epochs_retrain: 600,
            epochs_finetune: 100,
            batch_size: 96,
            search: SearchConfig::default(),
            tau_c: 1.0,
            margin: 1.2,
            quant: QuantDescriptor::default(),
            baselines: BaselineConfig {
                random_search_samples: 100,
                random_sampling_k: 10,
            },
            seed: 0,
        };
        match preset {
            Preset::Paper => paper,
            Preset::Desk => PipelineConfig {
                data: DataConfig {
                    synthetic: SyntheticData {
                        train_counts: vec![60, 60, 60, 30, 30, 30, 30],
                        eval_counts: vec![30, 30, 30, 15, 15, 15, 15],
                        ..paper.data.synthetic
                    },
                    ..paper.data
                },
                macro_config: MacroConfig {
                    stem_channels: 8,
                    ..MacroConfig::default()
                },
                lr_retrain: 5e-3,
                lr_finetune: 2e-4,
                epochs_supernet: 30,
                epochs_retrain: 30,
                epochs_finetune: 10,
                batch_size: 16,
                ..paper
            },
        }
    }

    /// Preset values overlaid with a (possibly partial) JSON config.
    pub fn from_overlay(preset: Preset, overlay: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(Self::preset(preset))?;
        merge(&mut base, overlay);
        let cfg: PipelineConfig = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(preset: Preset, path: Option<&Path>) -> Result<Self> {
        let overlay = match path {
            None => Value::Object(Default::default()),
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingArtifact(p.to_path_buf()));
                }
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
        };
        Self::from_overlay(preset, &overlay)
    }

    pub fn validate(&self) -> Result<()> {
        self.macro_config.validate()?;
        self.search.validate()?;
        let rates = [
            ("lr_supernet", self.lr_supernet),
            ("lr_retrain", self.lr_retrain),
            ("lr_finetune", self.lr_finetune),
            ("tau_c", self.tau_c),
            ("margin", self.margin),
        ];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.data.calib_fraction) {
            return Err(Error::Config(format!("calib_fraction {} outside [0, 1)", self.data.calib_fraction)));
        }
        if !(2..=32).contains(&self.quant.weight_bits) || self.quant.time_steps < 2 {
            return Err(Error::Config("quant needs 2..=32 weight bits and at least 2 time steps".into()));
        }
        if self.data.manifest.is_none() {
            self.synthetic_spec().validate()?;
            if self.data.synthetic.train_counts.len() != self.macro_config.num_classes {
                return Err(Error::Config(format!(
                    "synthetic data has {} classes, macro.num_classes is {}",
                    self.data.synthetic.train_counts.len(),
                    self.macro_config.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        let s = &self.data.synthetic;
        SyntheticSpec {
            train_counts: s.train_counts.clone(),
            eval_counts: s.eval_counts.clone(),
            channels: self.macro_config.input_channels,
            height: self.macro_config.height,
            width: self.macro_config.width,
            noise: s.noise,
            seed: s.seed,
        }
    }
}

/// Recursive object merge; non-object values in `overlay` replace those in `base`.
fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn paper_defaults() {
        let c = PipelineConfig::preset(Preset::Paper);
        assert_eq!((c.lr_supernet, c.lr_retrain, c.lr_finetune), (5e-3, 5e-4, 5e-5));
        assert_eq!((c.epochs_retrain, c.epochs_finetune, c.batch_size), (600, 100, 96));
        assert_eq!((c.search.rounds, c.search.n_eval, c.search.n_top), (18, 12, 12));
        assert_eq!((c.quant.weight_bits, c.quant.time_steps), (8, 16));
        assert_eq!(c.macro_config.stem_channels, 32);
        c.validate().unwrap();
        PipelineConfig::preset(Preset::Desk).validate().unwrap();
    }

    #[test]
    fn overlay_is_partial() {
        let c = PipelineConfig::from_overlay(Preset::Desk, &json!({"seed": 4, "macro": {"height": 16}})).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.macro_config.height, 16);
        assert_eq!(c.macro_config.stem_channels, 8);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for bad in [
            json!({"lr_retrain": 0.0}),
            json!({"unknown": 1}),
            json!({"macro": {"num_classes": 3}}),
            json!({"search": {"p_mut": 2.0}}),
            json!({"batch_size": "x"}),
        ] {
            assert!(matches!(PipelineConfig::from_overlay(Preset::Desk, &bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
