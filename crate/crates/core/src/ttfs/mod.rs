//! Time-to-first-spike networks: simulation, mapping, quantization and costs.

pub mod grad;
pub mod layer;
pub mod network;
pub mod quantize;
pub mod spikes;
pub mod synops;

pub use layer::{layer_forward_closed_form, layer_forward_exact, SynapseKind, TtfsLayer};
pub use network::{
    calibrate_windows, map_ann_to_snn, map_ann_to_snn_with_windows, map_snn_to_ann, pool_spikes, SnnLayer, SnnOutput,
    TtfsNetwork, DEFAULT_MARGIN, DEFAULT_TAU_C,
};
pub use quantize::{quantize, QuantDescriptor};
pub use spikes::{decode, encode_input, SpikeRecord, Window};
pub use synops::{count_synops, synapse_count};
