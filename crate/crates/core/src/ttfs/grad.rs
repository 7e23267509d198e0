//! Gradients of the classification loss with respect to SNN parameters,
//! computed in spike-time coordinates.
//!
//! For a neuron firing at `t = t_min + τ(ϑ − V)` inside its window,
//! `∂t/∂ϑ = τ` and `∂t/∂V = −τ`; a presynaptic spike enters `V` through
//! `a_j = (t_min − t_j)/τ`, so `∂a_j/∂t_j = −1/τ`. Neurons that stay silent (or
//! fire exactly at `t_max`) pass no gradient.

use crate::error::{Error, Result};
use crate::nn::{adam_step, conv2d_backward, conv2d_forward, softmax_cross_entropy, Adam, AdamState};
use crate::tensor::Tensor;

use super::layer::{SynapseKind, TtfsLayer};
use super::network::{SnnLayer, SnnOutput, TtfsNetwork};
use super::spikes::{decode, SpikeRecord};

/// Per weighted layer: `[∂L/∂W, ∂L/∂ϑ]`.
pub type SnnGrads = Vec<[Tensor; 2]>;

/// Mean cross-entropy over the batch and its gradients.
pub fn loss_and_grads(net: &TtfsNetwork, x: &Tensor, labels: &[usize]) -> Result<(f64, SnnGrads)> {
    if net.quant.is_some() {
        return Err(Error::InvalidValue("spike-time gradients need an unquantized network".into()));
    }
    let (b, ..) = x.dims4()?;
    let outs = (0..b).map(|i| net.forward(&x.sample(i))).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = outs.iter().map(|o| &o.logits).collect();
    let logits = Tensor::stack(&refs)?;
    let (loss, grad_logits) = softmax_cross_entropy(&logits, labels)?;

    let mut grads: SnnGrads = net
        .weighted_layers()
        .map(|l| [Tensor::zeros(l.weights.shape()), Tensor::zeros(l.thresholds.shape())])
        .collect();
    let classes = net.num_classes();
    for (i, out) in outs.iter().enumerate() {
        let dz = &grad_logits.data()[i * classes..(i + 1) * classes];
        sample_backward(net, out, dz, &mut grads)?;
    }
    Ok((loss, grads))
}

fn sample_backward(net: &TtfsNetwork, out: &SnnOutput, dz: &[f64], grads: &mut SnnGrads) -> Result<()> {
    // Readout: z = (t_max − t)/τ, so ∂L/∂t = −∂L/∂z / τ.
    let tau = net.tau_c;
    let mut dt: Vec<f64> = dz.iter().map(|g| -g / tau).collect();
    let mut slot = grads.len();
    for (n, layer) in net.layers.iter().enumerate().rev() {
        let input = &out.records[n];
        let output = &out.records[n + 1];
        dt = match layer {
            SnnLayer::Pool => pool_backward(input, output, &dt),
            SnnLayer::Weighted(l) => {
                slot -= 1;
                let dv = threshold_and_membrane_grads(l, output, &dt, &mut grads[slot][1]);
                let da = synapse_backward(l, input, &dv, &mut grads[slot][0])?;
                da.iter().map(|g| -g / tau).collect()
            }
        };
    }
    Ok(())
}

/// Accumulates `∂L/∂ϑ` and returns `∂L/∂V(t_min)` per output neuron.
fn threshold_and_membrane_grads(l: &TtfsLayer, output: &SpikeRecord, dt: &[f64], dtheta: &mut Tensor) -> Vec<f64> {
    let per = output.times.len() / l.out_features();
    let tau = l.tau_c;
    let mut dv = vec![0.0; dt.len()];
    for (i, &g) in dt.iter().enumerate() {
        if l.readout || output.is_effective(i) {
            dtheta.data_mut()[i / per] += tau * g;
            dv[i] = -tau * g;
        }
    }
    dv
}

/// Accumulates `∂L/∂W` and returns `∂L/∂a` for the presynaptic activations.
fn synapse_backward(l: &TtfsLayer, input: &SpikeRecord, dv: &[f64], dw: &mut Tensor) -> Result<Vec<f64>> {
    let a = decode(input, l.tau_c);
    match l.kind {
        SynapseKind::Conv => {
            let mut shape = vec![1];
            shape.extend_from_slice(&input.shape);
            let x = a.reshape(&shape)?;
            let mut out_shape = vec![1, l.out_features()];
            out_shape.extend_from_slice(&input.shape[1..]);
            let g = Tensor::new(out_shape, dv.to_vec())?;
            let (_, cache) = conv2d_forward(&x, &l.weights)?;
            let (gx, gw) = conv2d_backward(&g, &cache, &l.weights)?;
            dw.add_scaled(&gw, 1.0);
            Ok(gx.into_data())
        }
        SynapseKind::Dense | SynapseKind::ChannelMean => {
            let n_in = input.times.len();
            let mut da = vec![0.0; n_in];
            for (o, &g) in dv.iter().enumerate() {
                for (j, w) in l.synapses_of(o, &input.shape) {
                    da[j] += w * g;
                }
            }
            let cols = l.weights.shape()[1];
            let group = n_in / cols;
            let inputs = a.data();
            for (o, &g) in dv.iter().enumerate() {
                for c in 0..cols {
                    let s: f64 = inputs[c * group..(c + 1) * group].iter().sum();
                    dw.data_mut()[o * cols + c] += g * s / group as f64;
                }
            }
            Ok(da)
        }
    }
}

/// Routes the gradient to the earliest spike of each window (lowest index on ties).
fn pool_backward(input: &SpikeRecord, output: &SpikeRecord, dt: &[f64]) -> Vec<f64> {
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (oh, ow) = (output.shape[1], output.shape[2]);
    let mut grad = vec![0.0; input.times.len()];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = (ch * oh + oy) * ow + ox;
                let Some(t) = output.times[o] else { continue };
                let winner = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| (ch * h + 2 * oy + dy) * w + 2 * ox + dx)
                    .find(|&j| input.times[j] == Some(t))
                    .expect("pooled spike comes from its window");
                grad[winner] += dt[o];
            }
        }
    }
    grad
}

/// One Adam step on `(W, ϑ)` of every weighted layer. Windows stay fixed.
pub fn train_step(
    net: &mut TtfsNetwork,
    x: &Tensor,
    labels: &[usize],
    opt: &Adam,
    states: &mut [AdamState],
) -> Result<f64> {
    let (loss, grads) = loss_and_grads(net, x, labels)?;
    let mut slot = 0;
    for layer in &mut net.layers {
        if let SnnLayer::Weighted(l) = layer {
            let [gw, gt] = &grads[slot];
            adam_step(
                opt,
                &mut [&mut l.weights, &mut l.thresholds],
                &[gw.clone(), gt.clone()],
                &mut states[slot],
            )?;
            slot += 1;
        }
    }
    Ok(loss)
}

pub fn new_adam_states(net: &TtfsNetwork) -> Vec<AdamState> {
    net.weighted_layers()
        .map(|l| AdamState::for_params(&[&l.weights, &l.thresholds]))
        .collect()
}
