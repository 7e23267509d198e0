//! Symmetric per-layer weight quantization and spike-time discretization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::network::{SnnLayer, TtfsNetwork};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantDescriptor {
    pub weight_bits: u32,
    pub time_steps: u32,
}

impl Default for QuantDescriptor {
    fn default() -> Self {
        QuantDescriptor {
            weight_bits: 8,
            time_steps: 16,
        }
    }
}

/// Integer grid `v ≈ q · max_abs / levels`, `levels = 2^(bits−1) − 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightGrid {
    max_abs: f64,
    levels: f64,
}

impl WeightGrid {
    /// An all-zero tensor gets scale 1.
    pub fn for_tensor(w: &Tensor, bits: u32) -> Self {
        let levels = ((1u64 << (bits - 1)) - 1) as f64;
        let max_abs = w.max_abs();
        WeightGrid {
            max_abs: if max_abs > 0.0 { max_abs } else { levels },
            levels,
        }
    }

    pub fn scale(&self) -> f64 {
        self.max_abs / self.levels
    }

    pub fn snap(&self, v: f64) -> f64 {
        (v * self.levels / self.max_abs).round() * self.max_abs / self.levels
    }
}

pub fn quantize_symmetric(w: &Tensor, bits: u32) -> (Tensor, WeightGrid) {
    let grid = WeightGrid::for_tensor(w, bits);
    (w.map(|v| grid.snap(v)), grid)
}

/// Snaps an offset from `t_min` onto `steps` uniformly spaced points spanning `[0, window]`.
pub fn snap_offset(offset: f64, window: f64, steps: u32) -> f64 {
    let intervals = (steps - 1) as f64;
    let k = (offset * intervals / window).round().clamp(0.0, intervals);
    k * window / intervals
}

/// Activation of a neuron with pre-activation `z` after its spike time is
/// snapped; also reports whether a straight-through gradient passes
/// (`0 < z < window/τ`).
pub fn snapped_activation(z: f64, window: f64, tau_c: f64, steps: u32) -> (f64, bool) {
    if z <= 0.0 {
        return (0.0, false);
    }
    let offset = window - tau_c * z;
    if offset <= 0.0 {
        return (window / tau_c, false);
    }
    ((window - snap_offset(offset, window, steps)) / tau_c, true)
}

/// Quantizes every weighted layer's weights and thresholds onto that layer's
/// weight grid and attaches the time-step descriptor used by the forward pass.
pub fn quantize(net: &TtfsNetwork, weight_bits: u32, time_steps: u32) -> Result<TtfsNetwork> {
    if !(2..=32).contains(&weight_bits) || time_steps < 2 {
        return Err(Error::Config(format!(
            "quantization needs 2..=32 weight bits and ≥2 time steps, got {weight_bits}/{time_steps}"
        )));
    }
    net.validate()?;
    let mut out = net.clone();
    for layer in &mut out.layers {
        if let SnnLayer::Weighted(l) = layer {
            let (wq, grid) = quantize_symmetric(&l.weights, weight_bits);
            l.weights = wq;
            l.thresholds = l.thresholds.map(|v| grid.snap(v));
        }
    }
    out.quant = Some(QuantDescriptor {
        weight_bits,
        time_steps,
    });
    Ok(out)
}
