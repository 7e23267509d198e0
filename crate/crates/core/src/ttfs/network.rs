//! Whole TTFS networks and the identity mapping to/from ReLU networks.
//!
//! Under the mapping `w = W`, `b = −ϑ + (t_max − t_min)/τ` every decoded
//! spiking activation equals the corresponding ReLU activation, as long as
//! no neuron reaches threshold before its `t_min`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ConvLayerParams, Layer, Network};
use crate::nn::Linear;
use crate::tensor::Tensor;

use super::layer::{layer_forward_closed_form, SynapseKind, TtfsLayer};
use super::quantize::QuantDescriptor;
use super::spikes::{decode, encode_input, SpikeRecord, Window};

pub const DEFAULT_TAU_C: f64 = 1.0;
pub const DEFAULT_MARGIN: f64 = 1.2;
/// Calibration floor on a layer's maximum activation.
pub const ACTIVATION_FLOOR: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SnnLayer {
    Weighted(TtfsLayer),
    /// 2×2 pooling that forwards the earliest spike of each window.
    Pool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtfsNetwork {
    pub input_shape: [usize; 3],
    pub input_window: Window,
    pub tau_c: f64,
    pub layers: Vec<SnnLayer>,
    pub quant: Option<QuantDescriptor>,
}

/// Per-layer spike records of one sample (input encoding first) and the decoded output.
#[derive(Clone, Debug)]
pub struct SnnOutput {
    pub records: Vec<SpikeRecord>,
    pub logits: Tensor,
}

impl SnnOutput {
    pub fn early_firings(&self) -> usize {
        self.records.iter().map(|r| r.early).sum()
    }
}

/// The input window used for a given time constant: length τ, so `x ∈ [0, 1]` fits.
pub fn input_window_for(tau_c: f64) -> Window {
    Window {
        t_min: 0.0,
        t_max: tau_c,
    }
}

impl TtfsNetwork {
    pub fn weighted_layers(&self) -> impl Iterator<Item = &TtfsLayer> {
        self.layers.iter().filter_map(|l| match l {
            SnnLayer::Weighted(t) => Some(t),
            SnnLayer::Pool => None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weighted_layers().last().map_or(0, |l| l.out_features())
    }

    /// Checks shapes, window chaining and that only the last layer is a readout.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_c > 0.0) {
            return Err(Error::InvalidValue(format!("tau_c = {}", self.tau_c)));
        }
        let mut prev = self.input_window;
        let mut shape = self.input_shape.to_vec();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                SnnLayer::Weighted(l) => {
                    l.validate()?;
                    if l.window.t_min != prev.t_max {
                        return Err(Error::InvalidValue(format!(
                            "layer {i}: t_min {} differs from previous t_max {}",
                            l.window.t_min, prev.t_max
                        )));
                    }
                    if l.tau_c != self.tau_c {
                        return Err(Error::InvalidValue(format!("layer {i}: tau_c differs from network")));
                    }
                    if l.readout != (i + 1 == n) {
                        return Err(Error::InvalidValue(format!("layer {i}: readout must be exactly the last layer")));
                    }
                    shape = l.out_shape(&shape)?;
                    prev = l.window;
                }
                SnnLayer::Pool => match shape[..] {
                    [c, h, w] if h >= 2 && w >= 2 => shape = vec![c, h / 2, w / 2],
                    _ => return Err(Error::Shape(format!("layer {i}: pool on {shape:?}"))),
                },
            }
        }
        if !matches!(self.layers.last(), Some(SnnLayer::Weighted(l)) if l.readout) {
            return Err(Error::InvalidValue("network has no readout layer".into()));
        }
        Ok(())
    }

    /// Closed-form forward of one sample `[C, H, W]` (or `[1, C, H, W]`).
    pub fn forward(&self, x: &Tensor) -> Result<SnnOutput> {
        let steps = self.quant.map(|q| q.time_steps);
        let mut rec = encode_input(x, self.input_window, self.tau_c, steps)?;
        if rec.shape != self.input_shape {
            return Err(Error::Shape(format!("sample {:?} for network input {:?}", rec.shape, self.input_shape)));
        }
        let mut records = Vec::with_capacity(self.layers.len() + 1);
        for layer in &self.layers {
            let next = match layer {
                SnnLayer::Weighted(l) => layer_forward_closed_form(&rec, l, steps)?,
                SnnLayer::Pool => pool_spikes(&rec)?,
            };
            records.push(std::mem::replace(&mut rec, next));
        }
        let logits = decode(&rec, self.tau_c);
        records.push(rec);
        Ok(SnnOutput { records, logits })
    }

    /// Decoded outputs `[B, classes]` for a batch `[B, C, H, W]`, plus the total early-firing count.
    pub fn forward_batch(&self, x: &Tensor) -> Result<(Tensor, usize)> {
        let (b, ..) = x.dims4()?;
        let classes = self.num_classes();
        let mut out = Vec::with_capacity(b * classes);
        let mut early = 0;
        for i in 0..b {
            let o = self.forward(&x.sample(i))?;
            early += o.early_firings();
            out.extend_from_slice(o.logits.data());
        }
        Ok((Tensor::new(vec![b, classes], out)?, early))
    }
}

/// Earliest spike in each 2×2 window wins; an all-silent window stays silent.
pub fn pool_spikes(rec: &SpikeRecord) -> Result<SpikeRecord> {
    let [c, h, w] = rec.shape[..] else {
        return Err(Error::Shape(format!("spike pool on {:?}", rec.shape)));
    };
    let (oh, ow) = crate::nn::pool::pooled_size(h, w)?;
    let mut times = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<f64> = None;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    if let Some(t) = rec.times[(ch * h + 2 * oy + dy) * w + 2 * ox + dx] {
                        if best.is_none_or(|b| t < b) {
                            best = Some(t);
                        }
                    }
                }
                times.push(best);
            }
        }
    }
    Ok(SpikeRecord {
        shape: vec![c, oh, ow],
        times,
        window: rec.window,
        early: 0,
    })
}

/// Maximum activation of every weighted layer (ReLU output, or logits for the head)
/// over a calibration batch.
pub fn activation_maxima(net: &Network, calib: &Tensor) -> Result<Vec<f64>> {
    let (b, ..) = calib.dims4()?;
    if b == 0 {
        return Err(Error::Empty("calibration set".into()));
    }
    let weighted: Vec<usize> = (0..net.layers.len()).filter(|&i| net.layers[i].is_weighted()).collect();
    let mut maxima = vec![f64::NEG_INFINITY; weighted.len()];
    const CHUNK: usize = 32;
    for start in (0..b).step_by(CHUNK) {
        let items: Vec<Tensor> = (start..(start + CHUNK).min(b))
            .map(|i| calib.sample(i).reshape(&calib.shape()[1..]).expect("sample reshape"))
            .collect();
        let refs: Vec<&Tensor> = items.iter().collect();
        let chunk = Tensor::stack(&refs)?;
        net.forward_observed(&chunk, |i, out| {
            let slot = weighted.iter().position(|&w| w == i).expect("weighted layer");
            maxima[slot] = maxima[slot].max(out.max());
        })?;
    }
    Ok(maxima)
}

/// Chained windows: `t_max = t_min + τ·α·max(max activation, 1)`.
pub fn calibrate_windows(net: &Network, calib: &Tensor, tau_c: f64, margin: f64) -> Result<Vec<Window>> {
    if !(margin > 0.0 && tau_c > 0.0) {
        return Err(Error::Config(format!("calibration needs τ > 0 and α > 0, got {tau_c}, {margin}")));
    }
    let maxima = activation_maxima(net, calib)?;
    let mut t_min = input_window_for(tau_c).t_max;
    Ok(maxima
        .into_iter()
        .map(|m| {
            let len = tau_c * margin * m.max(ACTIVATION_FLOOR);
            let w = Window {
                t_min,
                t_max: t_min + len,
            };
            t_min = w.t_max;
            w
        })
        .collect())
}

/// ReLU → TTFS with windows fitted to `calib`. Rejects networks that still carry BN.
pub fn map_ann_to_snn(net: &Network, calib: &Tensor, tau_c: f64, margin: f64) -> Result<TtfsNetwork> {
    reject_bn(net)?;
    let windows = calibrate_windows(net, calib, tau_c, margin)?;
    map_ann_to_snn_with_windows(net, &windows, tau_c)
}

fn reject_bn(net: &Network) -> Result<()> {
    match net.layers.iter().position(|l| matches!(l, Layer::Conv(p) if p.bn.is_some())) {
        Some(i) => Err(Error::UnfusedBatchNorm(i)),
        None => Ok(()),
    }
}

/// ReLU → TTFS on fixed windows: `W = w`, `ϑ = −b + (t_max − t_min)/τ`.
pub fn map_ann_to_snn_with_windows(net: &Network, windows: &[Window], tau_c: f64) -> Result<TtfsNetwork> {
    reject_bn(net)?;
    net.validate()?;
    let n_weighted = net.layers.iter().filter(|l| l.is_weighted()).count();
    if windows.len() != n_weighted {
        return Err(Error::Shape(format!("{} windows for {n_weighted} weighted layers", windows.len())));
    }
    let mut windows = windows.iter();
    let mut layers = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let snn = match layer {
            Layer::MaxPool => SnnLayer::Pool,
            Layer::Conv(p) => {
                let window = *windows.next().expect("counted");
                let bias = p.bias.clone().unwrap_or_else(|| Tensor::zeros(&[p.out_channels()]));
                SnnLayer::Weighted(TtfsLayer {
                    kind: SynapseKind::Conv,
                    weights: p.kernel.clone(),
                    thresholds: bias.map(|b| -b + window.len() / tau_c),
                    window,
                    tau_c,
                    readout: false,
                })
            }
            Layer::Head(lin) => {
                let window = *windows.next().expect("counted");
                SnnLayer::Weighted(TtfsLayer {
                    kind: SynapseKind::ChannelMean,
                    weights: lin.weight.clone(),
                    thresholds: lin.bias.map(|b| -b + window.len() / tau_c),
                    window,
                    tau_c,
                    readout: true,
                })
            }
        };
        layers.push(snn);
    }
    let out = TtfsNetwork {
        input_shape: net.input_shape,
        input_window: input_window_for(tau_c),
        tau_c,
        layers,
        quant: None,
    };
    out.validate()?;
    Ok(out)
}

/// TTFS → ReLU: `w = W`, `b = −ϑ + (t_max − t_min)/τ`.
pub fn map_snn_to_ann(snn: &TtfsNetwork) -> Result<Network> {
    snn.validate()?;
    let layers = snn
        .layers
        .iter()
        .map(|l| match l {
            SnnLayer::Pool => Ok(Layer::MaxPool),
            SnnLayer::Weighted(t) => {
                let bias = t.thresholds.map(|th| -th + t.window.len() / t.tau_c);
                match t.kind {
                    SynapseKind::Conv => Ok(Layer::Conv(ConvLayerParams {
                        kernel: t.weights.clone(),
                        bias: Some(bias),
                        bn: None,
                    })),
                    SynapseKind::ChannelMean => Ok(Layer::Head(Linear {
                        weight: t.weights.clone(),
                        bias,
                    })),
                    SynapseKind::Dense => Err(Error::InvalidValue(
                        "dense hidden layers have no ReLU-network counterpart here".into(),
                    )),
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let net = Network {
        input_shape: snn.input_shape,
        layers,
    };
    net.validate()?;
    Ok(net)
}

pub fn windows_of(snn: &TtfsNetwork) -> Vec<Window> {
    snn.weighted_layers().map(|l| l.window).collect()
}
