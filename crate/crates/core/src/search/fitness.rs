//! Fitness of supernet subnets in either domain.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::evolve::FitnessFn;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{predictions, ConfusionMatrix, Scores};
use crate::network::Network;
use crate::space::{Genome, Supernet};
use crate::tensor::Tensor;
use crate::ttfs::{map_ann_to_snn, TtfsNetwork};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Ann,
    Snn,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Ann => "ann",
            Domain::Snn => "snn",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ann" => Ok(Domain::Ann),
            "snn" => Ok(Domain::Snn),
            other => Err(Error::Config(format!("unknown domain {other:?} (expected ann or snn)"))),
        }
    }
}

const CHUNK: usize = 64;

/// Eval-mode class predictions, computed in chunks.
pub fn predict_ann(net: &Network, x: &Tensor) -> Result<Vec<usize>> {
    let (b, ..) = x.dims4()?;
    let mut out = Vec::with_capacity(b);
    for start in (0..b).step_by(CHUNK) {
        let items: Vec<Tensor> = (start..(start + CHUNK).min(b))
            .map(|i| x.sample(i).reshape(&x.shape()[1..]))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = items.iter().collect();
        let logits = net.forward(&Tensor::stack(&refs)?)?;
        if !logits.is_finite() {
            return Err(Error::Numerical("non-finite logits".into()));
        }
        out.extend(predictions(&logits)?);
    }
    Ok(out)
}

/// Predictions from decoded SNN outputs, plus the number of early firings.
pub fn predict_snn(snn: &TtfsNetwork, x: &Tensor) -> Result<(Vec<usize>, usize)> {
    let (logits, early) = snn.forward_batch(x)?;
    if !logits.is_finite() {
        return Err(Error::Numerical("non-finite SNN outputs".into()));
    }
    Ok((predictions(&logits)?, early))
}

pub fn confusion(labels: &[usize], preds: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if labels.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    ConfusionMatrix::from_predictions(labels, preds, classes)
}

/// Scores subnets of a trained supernet on a held-out split. Never mutates the supernet.
pub struct SupernetFitness<'a> {
    supernet: &'a Supernet,
    eval_x: Tensor,
    eval_y: Vec<usize>,
    calib_x: Option<Tensor>,
    pub domain: Domain,
    pub tau_c: f64,
    pub margin: f64,
    /// Early firings seen across all SNN evaluations.
    pub early_firings: usize,
}

impl<'a> SupernetFitness<'a> {
    pub fn new(supernet: &'a Supernet, eval: &Dataset, calib: &Dataset, domain: Domain, tau_c: f64, margin: f64) -> Result<Self> {
        if eval.is_empty() {
            return Err(Error::Empty("evaluation split".into()));
        }
        if domain == Domain::Snn && calib.is_empty() {
            return Err(Error::Empty("calibration split".into()));
        }
        let (eval_x, eval_y) = eval.all()?;
        let calib_x = match domain {
            Domain::Snn => Some(calib.all()?.0),
            Domain::Ann => None,
        };
        Ok(SupernetFitness {
            supernet,
            eval_x,
            eval_y,
            calib_x,
            domain,
            tau_c,
            margin,
            early_firings: 0,
        })
    }

    pub fn predictions(&mut self, genome: &Genome) -> Result<Vec<usize>> {
        let net = self.supernet.build_subnet(genome, true)?;
        match &self.calib_x {
            None => predict_ann(&net, &self.eval_x),
            Some(calib) => {
                let snn = map_ann_to_snn(&net, calib, self.tau_c, self.margin)?;
                let (p, early) = predict_snn(&snn, &self.eval_x)?;
                self.early_firings += early;
                Ok(p)
            }
        }
    }
}

impl FitnessFn for SupernetFitness<'_> {
    fn evaluate(&mut self, genome: &Genome) -> Result<Scores> {
        let preds = self.predictions(genome)?;
        confusion(&self.eval_y, &preds, self.supernet.config.num_classes)?.scores()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_fitness() {
        let m = confusion(&[0, 0, 0, 1], &[0, 0, 1, 1], 2).unwrap();
        let s = m.scores().unwrap();
        assert!((s.war - 0.75).abs() < 1e-15);
        assert!((s.uar - 5.0 / 6.0).abs() < 1e-15);
        assert!((s.fitness - 19.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        let labels: Vec<usize> = (0..70).map(|i| i % 7).collect();
        let s = confusion(&labels, &[3; 70], 7).unwrap().scores().unwrap();
        for v in [s.war, s.uar, s.fitness] {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_split_is_rejected() {
        assert!(matches!(confusion(&[], &[], 7), Err(Error::Empty(_))));
    }

    #[test]
    fn domain_parses() {
        assert_eq!("SNN".parse::<Domain>().unwrap(), Domain::Snn);
        assert!("cnn".parse::<Domain>().is_err());
    }
}
