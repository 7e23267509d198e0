//! One layer of two-phase (B1) TTFS neurons.
//!
//! Phase 1 (`t < t_min`): `τ·dV/dt = Σ_j W_ij·H(t − t_j)`, driven by input spikes.
//! Phase 2 (`t_min ≤ t ≤ t_max`): `τ·dV/dt = 1`. A neuron spikes once, when `V`
//! reaches its threshold. Integrating phase 1 up to `t_min = t_max` of the
//! previous layer gives `V(t_min) = Σ_j W_ij·a_j` with `a_j = (t_min − t_j)/τ`,
//! so the spike time is `t_min + τ·(ϑ_i − V(t_min))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv2d_forward;
use crate::tensor::Tensor;

use super::quantize::snap_offset;
use super::spikes::{decode, SpikeRecord, Window};

/// How a layer's synapses connect it to its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynapseKind {
    /// Same-padded convolution, weights `[out, in, k, k]`.
    Conv,
    /// Fully connected over the flattened input, weights `[out, in]`.
    Dense,
    /// Fully connected over the spatial mean of each input channel, weights
    /// `[out, C]`; each input neuron's synapse carries `W[o, c] / (H·W)`.
    ChannelMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtfsLayer {
    pub kind: SynapseKind,
    pub weights: Tensor,
    /// One per output neuron (`[out]`); conv layers share one per channel.
    pub thresholds: Tensor,
    pub window: Window,
    pub tau_c: f64,
    /// Output layer: its neurons keep ramping past `t_max` so every one fires,
    /// and decoded values may be negative.
    pub readout: bool,
}

/// Result of the event-driven reference simulation.
#[derive(Clone, Debug)]
pub struct ExactOutput {
    /// Spike times; early (phase-1) firings are recorded at their true crossing time.
    pub record: SpikeRecord,
    pub early: Vec<bool>,
}

impl TtfsLayer {
    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_c > 0.0) {
            return Err(Error::InvalidValue(format!("tau_c = {}", self.tau_c)));
        }
        Window::new(self.window.t_min, self.window.t_max)?;
        let expect_rank = if self.kind == SynapseKind::Conv { 4 } else { 2 };
        if self.weights.ndim() != expect_rank || self.thresholds.shape() != [self.out_features()] {
            return Err(Error::Shape(format!(
                "{:?} layer with weights {:?} and thresholds {:?}",
                self.kind,
                self.weights.shape(),
                self.thresholds.shape()
            )));
        }
        Ok(())
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || Error::Shape(format!("{:?} layer {:?} fed {in_shape:?}", self.kind, self.weights.shape()));
        match self.kind {
            SynapseKind::Conv => match in_shape {
                [c, h, w] if *c == self.weights.shape()[1] => Ok(vec![self.out_features(), *h, *w]),
                _ => Err(mismatch()),
            },
            SynapseKind::Dense => {
                if in_shape.iter().product::<usize>() == self.weights.shape()[1] {
                    Ok(vec![self.out_features()])
                } else {
                    Err(mismatch())
                }
            }
            SynapseKind::ChannelMean => match in_shape {
                [c, _, _] if *c == self.weights.shape()[1] => Ok(vec![self.out_features()]),
                _ => Err(mismatch()),
            },
        }
    }

    fn threshold_of(&self, neuron: usize, out_shape: &[usize]) -> f64 {
        let per = out_shape.iter().product::<usize>() / self.out_features();
        self.thresholds.data()[neuron / per]
    }

    /// `V(t_min) = Σ_j W_ij·a_j` for decoded presynaptic activations `a`.
    pub fn membrane_at_t_min(&self, a: &Tensor, in_shape: &[usize]) -> Result<Tensor> {
        let out_shape = self.out_shape(in_shape)?;
        match self.kind {
            SynapseKind::Conv => {
                let mut shape = vec![1];
                shape.extend_from_slice(in_shape);
                let x = a.clone().reshape(&shape)?;
                let (v, _) = conv2d_forward(&x, &self.weights)?;
                v.reshape(&out_shape)
            }
            SynapseKind::Dense => {
                let n_in = self.weights.shape()[1];
                let v = (0..self.out_features())
                    .map(|o| {
                        self.weights.data()[o * n_in..(o + 1) * n_in]
                            .iter()
                            .zip(a.data())
                            .map(|(w, x)| w * x)
                            .sum()
                    })
                    .collect();
                Tensor::new(out_shape, v)
            }
            SynapseKind::ChannelMean => {
                let c = in_shape[0];
                let hw = in_shape[1] * in_shape[2];
                let means: Vec<f64> = a
                    .data()
                    .chunks_exact(hw)
                    .map(|p| p.iter().sum::<f64>() / hw as f64)
                    .collect();
                let v = (0..self.out_features())
                    .map(|o| {
                        self.weights.data()[o * c..(o + 1) * c]
                            .iter()
                            .zip(&means)
                            .map(|(w, m)| w * m)
                            .sum()
                    })
                    .collect();
                Tensor::new(out_shape, v)
            }
        }
    }

    /// Presynaptic `(input index, weight)` pairs of one output neuron.
    pub fn synapses_of(&self, neuron: usize, in_shape: &[usize]) -> Vec<(usize, f64)> {
        let w = self.weights.data();
        match self.kind {
            SynapseKind::Dense => {
                let n_in = self.weights.shape()[1];
                (0..n_in).map(|j| (j, w[neuron * n_in + j])).collect()
            }
            SynapseKind::ChannelMean => {
                let (c, hw) = (in_shape[0], in_shape[1] * in_shape[2]);
                (0..c * hw).map(|j| (j, w[neuron * c + j / hw] / hw as f64)).collect()
            }
            SynapseKind::Conv => {
                let (cin, h, wd) = (in_shape[0], in_shape[1], in_shape[2]);
                let k = self.weights.shape()[2];
                let p = (k / 2) as isize;
                let co = neuron / (h * wd);
                let (y, x) = ((neuron / wd) % h, neuron % wd);
                let mut out = Vec::with_capacity(cin * k * k);
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - p;
                            let sx = x as isize + kx as isize - p;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            let j = (ci * h + sy as usize) * wd + sx as usize;
                            out.push((j, w[((co * cin + ci) * k + ky) * k + kx]));
                        }
                    }
                }
                out
            }
        }
    }
}

fn check_chaining(input: &SpikeRecord, layer: &TtfsLayer) -> Result<()> {
    if input.window.t_max != layer.window.t_min {
        return Err(Error::InvalidValue(format!(
            "window chaining broken: input ends at {}, layer starts at {}",
            input.window.t_max, layer.window.t_min
        )));
    }
    Ok(())
}

/// Spike times from the closed-form solution of the neuron dynamics.
///
/// A neuron whose threshold would be reached at or before `t_min` is clamped
/// to the first representable instant after `t_min` and counted in `early`.
/// With `time_steps`, non-readout spike times are snapped onto the layer's grid.
pub fn layer_forward_closed_form(input: &SpikeRecord, layer: &TtfsLayer, time_steps: Option<u32>) -> Result<SpikeRecord> {
    check_chaining(input, layer)?;
    let out_shape = layer.out_shape(&input.shape)?;
    let a = decode(input, layer.tau_c);
    let v = layer.membrane_at_t_min(&a, &input.shape)?;
    let win = layer.window;
    let mut early = 0;
    let times = v
        .data()
        .iter()
        .enumerate()
        .map(|(i, &vi)| {
            let offset = layer.tau_c * (layer.threshold_of(i, &out_shape) - vi);
            if offset <= 0.0 {
                early += 1;
                return Some(match time_steps {
                    Some(_) if !layer.readout => win.t_min,
                    _ => win.t_min.next_up(),
                });
            }
            if !layer.readout && offset > win.len() {
                return None;
            }
            Some(match time_steps {
                Some(steps) if !layer.readout => win.t_min + snap_offset(offset, win.len(), steps),
                _ => win.t_min + offset,
            })
        })
        .collect();
    Ok(SpikeRecord {
        shape: out_shape,
        times,
        window: win,
        early,
    })
}

/// Event-driven integration of the neuron ODE over sorted input spikes, with
/// exact (piecewise-linear) threshold-crossing detection in both phases.
pub fn layer_forward_exact(input: &SpikeRecord, layer: &TtfsLayer) -> Result<ExactOutput> {
    check_chaining(input, layer)?;
    let out_shape = layer.out_shape(&input.shape)?;
    let n_out: usize = out_shape.iter().product();
    let (t_min, t_max, tau) = (layer.window.t_min, layer.window.t_max, layer.tau_c);
    let mut times = Vec::with_capacity(n_out);
    let mut early = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let theta = layer.threshold_of(i, &out_shape);
        let mut events: Vec<(f64, f64)> = layer
            .synapses_of(i, &input.shape)
            .into_iter()
            .filter_map(|(j, w)| input.times[j].filter(|&t| t < t_min).map(|t| (t, w)))
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut crossing = None;
        let (mut v, mut slope) = (0.0, 0.0);
        let mut now = events.first().map_or(t_min, |e| e.0);
        if theta <= 0.0 {
            crossing = Some(now);
        }
        let mut k = 0;
        while crossing.is_none() && now < t_min {
            // absorb every spike arriving at `now`
            while k < events.len() && events[k].0 <= now {
                slope += events[k].1;
                k += 1;
            }
            let next = events.get(k).map_or(t_min, |e| e.0.min(t_min));
            let v_next = v + slope * (next - now) / tau;
            if slope > 0.0 && v_next >= theta {
                crossing = Some(now + (theta - v) * tau / slope);
            }
            v = v_next;
            now = next;
        }
        match crossing {
            Some(t) => {
                times.push(Some(t.min(t_min)));
                early.push(true);
            }
            None => {
                let t = t_min + tau * (theta - v);
                early.push(false);
                times.push(if layer.readout || t <= t_max { Some(t) } else { None });
            }
        }
    }
    let n_early = early.iter().filter(|&&e| e).count();
    Ok(ExactOutput {
        record: SpikeRecord {
            shape: out_shape,
            times,
            window: layer.window,
            early: n_early,
        },
        early,
    })
}

/// `a_i = (t_max − t_i)/τ`; no spike → 0.
pub fn decode_output(spikes: &SpikeRecord, layer: &TtfsLayer) -> Tensor {
    decode(spikes, layer.tau_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(weights: &[f64], n_in: usize, thresholds: &[f64], window: (f64, f64)) -> TtfsLayer {
        TtfsLayer {
            kind: SynapseKind::Dense,
            weights: Tensor::new(vec![thresholds.len(), n_in], weights.to_vec()).unwrap(),
            thresholds: Tensor::new(vec![thresholds.len()], thresholds.to_vec()).unwrap(),
            window: Window::new(window.0, window.1).unwrap(),
            tau_c: 1.0,
            readout: false,
        }
    }

    fn spikes(times: &[Option<f64>], window: (f64, f64)) -> SpikeRecord {
        SpikeRecord {
            shape: vec![times.len()],
            times: times.to_vec(),
            window: Window::new(window.0, window.1).unwrap(),
            early: 0,
        }
    }

    #[test]
    fn single_input_closed_form() {
        let input = spikes(&[Some(0.0)], (0.0, 1.0));
        for (theta, t, a) in [(1.5, 1.5, 1.5), (2.5, 2.5, 0.5)] {
            let layer = dense(&[1.0], 1, &[theta], (1.0, 3.0));
            let out = layer_forward_closed_form(&input, &layer, None).unwrap();
            assert_eq!(out.times[0], Some(t));
            assert_eq!(decode_output(&out, &layer).data()[0], a);
        }
    }

    #[test]
    fn high_threshold_never_fires() {
        let input = spikes(&[Some(0.0)], (0.0, 1.0));
        let layer = dense(&[1.0], 1, &[10.0], (1.0, 3.0));
        let out = layer_forward_closed_form(&input, &layer, None).unwrap();
        assert_eq!(out.times[0], None);
        assert_eq!(decode_output(&out, &layer).data()[0], 0.0);
        let exact = layer_forward_exact(&input, &layer).unwrap();
        assert_eq!(exact.record.times[0], None);
    }

    #[test]
    fn phase_one_crossing_is_found_exactly() {
        let input = spikes(&[Some(0.0), Some(0.5)], (0.0, 1.0));
        let layer = dense(&[2.0, -1.0], 2, &[0.8], (1.0, 3.0));
        let out = layer_forward_exact(&input, &layer).unwrap();
        assert!(out.early[0]);
        assert!((out.record.times[0].unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn closed_form_clamps_and_counts_early_firing() {
        // V(t_min) = 2·1 − 1·0.5 = 1.5 > ϑ
        let input = spikes(&[Some(0.0), Some(0.5)], (0.0, 1.0));
        let layer = dense(&[2.0, -1.0], 2, &[0.8], (1.0, 3.0));
        let out = layer_forward_closed_form(&input, &layer, None).unwrap();
        assert_eq!(out.early, 1);
        assert_eq!(out.times[0], Some(1.0f64.next_up()));
    }

    #[test]
    fn transient_phase_one_crossing_is_reported() {
        // rises to 1.0 at t=0.5, then falls to 0 by t_min: closed form sees nothing
        let input = spikes(&[Some(0.0), Some(0.5)], (0.0, 1.0));
        let layer = dense(&[2.0, -4.0], 2, &[0.9], (1.0, 3.0));
        assert_eq!(layer_forward_closed_form(&input, &layer, None).unwrap().early, 0);
        let exact = layer_forward_exact(&input, &layer).unwrap();
        assert!(exact.early[0]);
        assert!((exact.record.times[0].unwrap() - 0.45).abs() < 1e-15);
    }

    #[test]
    fn pure_ramp_with_zero_weights() {
        let input = spikes(&[Some(0.2), Some(0.7)], (0.0, 1.0));
        for theta in [0.5, 1.7, 2.5] {
            let layer = dense(&[0.0, 0.0], 2, &[theta], (1.0, 3.0));
            let out = layer_forward_exact(&input, &layer).unwrap();
            let expect = 1.0 + theta;
            assert_eq!(out.record.times[0], (expect <= 3.0).then_some(expect));
        }
    }

    #[test]
    fn readout_fires_past_t_max_with_negative_value() {
        let input = spikes(&[Some(0.5)], (0.0, 1.0));
        let mut layer = dense(&[-1.0], 1, &[1.0], (1.0, 3.0));
        layer.readout = true;
        let out = layer_forward_closed_form(&input, &layer, None).unwrap();
        // V(t_min) = −0.5, spike at 1 + 1.5 → decodes to 2 − 1.5 = 0.5 = z
        assert_eq!(out.times[0], Some(2.5));
        let mut layer = dense(&[-1.0], 1, &[3.0], (1.0, 3.0));
        layer.readout = true;
        let out = layer_forward_closed_form(&input, &layer, None).unwrap();
        assert!((decode_output(&out, &layer).data()[0] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn conv_synapses_match_membrane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = TtfsLayer {
            kind: SynapseKind::Conv,
            weights: Tensor::from_fn(&[2, 2, 3, 3], |_| rng.random_range(-1.0..1.0)),
            thresholds: Tensor::new(vec![2], vec![0.3, 0.7]).unwrap(),
            window: Window::new(1.0, 4.0).unwrap(),
            tau_c: 1.0,
            readout: false,
        };
        let a = Tensor::from_fn(&[2, 4, 5], |_| rng.random_range(0.0..1.0));
        let v = layer.membrane_at_t_min(&a, &[2, 4, 5]).unwrap();
        for i in 0..v.len() {
            let direct: f64 = layer.synapses_of(i, &[2, 4, 5]).iter().map(|&(j, w)| w * a.data()[j]).sum();
            assert!((direct - v.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_broken_chaining() {
        let input = spikes(&[Some(0.0)], (0.0, 1.0));
        let layer = dense(&[1.0], 1, &[1.0], (1.5, 3.0));
        assert!(layer_forward_closed_form(&input, &layer, None).is_err());
    }
}
