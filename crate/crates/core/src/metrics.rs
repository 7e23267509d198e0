//! Classification metrics: WAR, UAR and the search fitness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Row-wise argmax of `[B, classes]` logits.
pub fn predictions(logits: &Tensor) -> Result<Vec<usize>> {
    let (b, c) = logits.dims2()?;
    if c == 0 {
        return Err(Error::Shape("logits with zero classes".into()));
    }
    Ok((0..b).map(|i| argmax(&logits.data()[i * c..(i + 1) * c])).collect())
}

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Shape(format!("{} labels vs {} predictions", y_true.len(), y_pred.len())));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in y_true.iter().zip(y_pred) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.classes {
                return Err(Error::Label {
                    label,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    /// Overall accuracy.
    pub fn war(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Empty("confusion matrix".into())),
            n => Ok(self.trace() as f64 / n as f64),
        }
    }

    /// Mean recall over the classes that occur in the ground truth.
    pub fn uar(&self) -> Result<f64> {
        let recalls: Vec<f64> = self
            .counts
            .iter()
            .enumerate()
            .filter_map(|(i, row)| {
                let support: u64 = row.iter().sum();
                (support > 0).then(|| row[i] as f64 / support as f64)
            })
            .collect();
        if recalls.is_empty() {
            return Err(Error::Empty("confusion matrix".into()));
        }
        Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }

    pub fn fitness(&self) -> Result<f64> {
        Ok((self.war()? + self.uar()?) / 2.0)
    }

    pub fn scores(&self) -> Result<Scores> {
        let war = self.war()?;
        let uar = self.uar()?;
        Ok(Scores {
            war,
            uar,
            fitness: (war + uar) / 2.0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub war: f64,
    pub uar: f64,
    pub fitness: f64,
}

pub fn war(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<f64> {
    ConfusionMatrix::from_predictions(y_true, y_pred, classes)?.war()
}

pub fn uar(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<f64> {
    ConfusionMatrix::from_predictions(y_true, y_pred, classes)?.uar()
}

pub fn fitness(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<f64> {
    ConfusionMatrix::from_predictions(y_true, y_pred, classes)?.fitness()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn imbalanced_example() {
        let mut t = vec![0; 90];
        t.extend([1; 10]);
        let p = vec![0; 100];
        assert!((war(&t, &p, 2).unwrap() - 0.9).abs() < 1e-15);
        assert!((uar(&t, &p, 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((fitness(&t, &p, 2).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn classes_without_support_are_skipped() {
        let m = ConfusionMatrix::from_predictions(&[0, 0, 2], &[0, 1, 2], 3).unwrap();
        assert!((m.uar().unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_and_bad_labels() {
        assert!(matches!(war(&[], &[], 3), Err(Error::Empty(_))));
        assert!(matches!(uar(&[], &[], 3), Err(Error::Empty(_))));
        assert!(matches!(war(&[3], &[0], 3), Err(Error::Label { label: 3, .. })));
        assert!(matches!(war(&[0, 1], &[0], 3), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        let l = Tensor::new(vec![2, 2], vec![0.0, 1.0, 5.0, -1.0]).unwrap();
        assert_eq!(predictions(&l).unwrap(), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn perfect_predictions_score_one(labels in proptest::collection::vec(0usize..7, 1..50)) {
            let m = ConfusionMatrix::from_predictions(&labels, &labels, 7).unwrap();
            prop_assert_eq!(m.war().unwrap(), 1.0);
            prop_assert_eq!(m.uar().unwrap(), 1.0);
        }

        #[test]
        fn scores_are_bounded(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..60)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let s = ConfusionMatrix::from_predictions(&t, &p, 5).unwrap().scores().unwrap();
            for v in [s.war, s.uar, s.fitness] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
