//! Spike records, input encoding and activation decoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A layer's integration/firing window `(t_min, t_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_min: f64,
    pub t_max: f64,
}

impl Window {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite() && t_min < t_max) {
            return Err(Error::InvalidValue(format!("window ({t_min}, {t_max})")));
        }
        Ok(Window { t_min, t_max })
    }

    pub fn len(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }
}

/// Spike times of one layer for one sample. `None` means the neuron never fired.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeRecord {
    /// Per-sample shape, e.g. `[C, H, W]` or `[N]`.
    pub shape: Vec<usize>,
    pub times: Vec<Option<f64>>,
    pub window: Window,
    /// Neurons whose threshold was reached at or before `t_min` (clamped).
    pub early: usize,
}

impl SpikeRecord {
    pub fn silent(shape: &[usize], window: Window) -> Self {
        SpikeRecord {
            shape: shape.to_vec(),
            times: vec![None; shape.iter().product()],
            window,
            early: 0,
        }
    }

    pub fn spike_count(&self) -> usize {
        self.times.iter().filter(|t| t.is_some()).count()
    }

    /// Spikes strictly before `t_max`. A spike landing on `t_max` reaches the
    /// next layer after its input phase has closed and drives no synapse.
    pub fn is_effective(&self, index: usize) -> bool {
        matches!(self.times[index], Some(t) if t < self.window.t_max)
    }

    pub fn effective_count(&self) -> usize {
        (0..self.times.len()).filter(|&i| self.is_effective(i)).count()
    }
}

/// Linear time coding `t = t_max − τ·x`; `x = 0` fires exactly at `t_max`.
pub fn encode_input(x: &Tensor, window: Window, tau_c: f64, time_steps: Option<u32>) -> Result<SpikeRecord> {
    if let Some(bad) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidValue(format!("input value {bad} outside [0, 1]")));
    }
    if window.len() < tau_c * x.max() {
        return Err(Error::InvalidValue(format!(
            "input window of length {} cannot hold τ·max(x) = {}",
            window.len(),
            tau_c * x.max()
        )));
    }
    let shape = match x.shape() {
        [1, rest @ ..] if x.ndim() == 4 => rest.to_vec(),
        s => s.to_vec(),
    };
    let times = x
        .data()
        .iter()
        .map(|&v| {
            let offset = window.len() - tau_c * v;
            let offset = match time_steps {
                Some(steps) => super::quantize::snap_offset(offset, window.len(), steps),
                None => offset,
            };
            Some(window.t_min + offset)
        })
        .collect();
    Ok(SpikeRecord {
        shape,
        times,
        window,
        early: 0,
    })
}

/// `a = (t_max − t)/τ`; no spike decodes to 0.
pub fn decode(record: &SpikeRecord, tau_c: f64) -> Tensor {
    let data = record
        .times
        .iter()
        .map(|t| t.map_or(0.0, |t| (record.window.t_max - t) / tau_c))
        .collect();
    Tensor::new(record.shape.clone(), data).expect("record shape matches its length")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn win(a: f64, b: f64) -> Window {
        Window::new(a, b).unwrap()
    }

    fn one(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn largest_value_spikes_first() {
        let r = encode_input(&one(1.0), win(0.0, 1.0), 1.0, None).unwrap();
        assert_eq!(r.times[0], Some(0.0));
    }

    #[test]
    fn zero_spikes_at_window_end_and_decodes_to_zero() {
        let r = encode_input(&one(0.0), win(0.0, 1.0), 1.0, None).unwrap();
        assert_eq!(r.times[0], Some(1.0));
        assert_eq!(decode(&r, 1.0).data()[0], 0.0);
        assert_eq!(r.effective_count(), 0);
    }

    #[test]
    fn linear_encoding_arithmetic() {
        let r = encode_input(&one(0.25), win(0.0, 2.0), 1.0, None).unwrap();
        assert_eq!(r.times[0], Some(1.75));
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(encode_input(&one(1.2), win(0.0, 2.0), 1.0, None).is_err());
        assert!(encode_input(&one(-0.1), win(0.0, 2.0), 1.0, None).is_err());
        assert!(encode_input(&one(1.0), win(0.0, 0.5), 1.0, None).is_err());
    }

    #[test]
    fn decode_edges() {
        let w = win(1.0, 3.0);
        let rec = SpikeRecord {
            shape: vec![3],
            times: vec![Some(3.0), None, Some(1.0 + 1e-9)],
            window: w,
            early: 0,
        };
        let a = decode(&rec, 1.0);
        assert_eq!(a.data()[0], 0.0);
        assert_eq!(a.data()[1], 0.0);
        assert!((a.data()[2] - 2.0).abs() < 1e-8);
    }
}
