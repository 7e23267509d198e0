//! Synaptic-operation accounting.
//!
//! Each effective presynaptic spike (one arriving before the receiving layer's
//! `t_min`) traverses every synapse it has into the next weighted layer.

use super::layer::{SynapseKind, TtfsLayer};
use super::network::{SnnLayer, SnnOutput, TtfsNetwork};
use super::spikes::SpikeRecord;

/// Number of output neurons that input neuron `j` connects to.
pub fn fanout(layer: &TtfsLayer, in_shape: &[usize], j: usize) -> u64 {
    let n_out = layer.out_features() as u64;
    match layer.kind {
        SynapseKind::Dense | SynapseKind::ChannelMean => n_out,
        SynapseKind::Conv => {
            let (h, w) = (in_shape[1], in_shape[2]);
            let k = layer.weights.shape()[2];
            let (y, x) = ((j / w) % h, j % w);
            n_out * covered(y, h, k) * covered(x, w, k)
        }
    }
}

/// Output positions along one axis whose same-padded `k`-window contains `pos`.
fn covered(pos: usize, len: usize, k: usize) -> u64 {
    let p = k / 2;
    let lo = pos.saturating_sub(p);
    let hi = (pos + p).min(len - 1);
    (hi - lo + 1) as u64
}

fn layer_synops(layer: &TtfsLayer, input: &SpikeRecord) -> u64 {
    (0..input.times.len())
        .filter(|&j| input.is_effective(j))
        .map(|j| fanout(layer, &input.shape, j))
        .sum()
}

/// SynOps of one forward pass, from the records returned by [`TtfsNetwork::forward`].
pub fn count_synops(net: &TtfsNetwork, out: &SnnOutput) -> u64 {
    net.layers
        .iter()
        .zip(&out.records)
        .map(|(layer, input)| match layer {
            SnnLayer::Weighted(l) => layer_synops(l, input),
            SnnLayer::Pool => 0,
        })
        .sum()
}

/// Total synapse count: the SynOps of a pass in which every neuron fires effectively.
pub fn synapse_count(net: &TtfsNetwork) -> u64 {
    let mut shape = net.input_shape.to_vec();
    let mut total = 0;
    for layer in &net.layers {
        match layer {
            SnnLayer::Weighted(l) => {
                let n: usize = shape.iter().product();
                total += (0..n).map(|j| fanout(l, &shape, j)).sum::<u64>();
                shape = l.out_shape(&shape).expect("validated network");
            }
            SnnLayer::Pool => shape = vec![shape[0], shape[1] / 2, shape[2] / 2],
        }
    }
    total
}
