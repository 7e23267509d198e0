//! Parameter and FLOP accounting for subnets in their deployed (BN-fused) form.
//!
//! Conventions: a conv layer costs `H·W·Cout·Cin·k²` MACs at its (same-padded)
//! resolution; pooling and activations are free; the head is counted with the
//! global average pool folded into it, i.e. `C·H·W·classes` MACs. FLOPs = 2·MACs.
//! Parameters are conv kernels, one fused bias per conv channel, and the head.

use crate::error::Result;
use crate::network::{Layer, Network};
use crate::space::{Genome, MacroConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
}

impl Cost {
    pub fn flops(&self) -> u64 {
        2 * self.macs
    }
}

fn conv(cin: usize, cout: usize, k: usize, h: usize, w: usize) -> Cost {
    let (cin, cout, k, hw) = (cin as u64, cout as u64, k as u64, (h * w) as u64);
    Cost {
        params: cout * cin * k * k + cout,
        macs: hw * cout * cin * k * k,
    }
}

fn add(a: Cost, b: Cost) -> Cost {
    Cost {
        params: a.params + b.params,
        macs: a.macs + b.macs,
    }
}

/// Cost of the subnet a genome selects, from the macro configuration alone.
pub fn genome_cost(genome: &Genome, config: &MacroConfig) -> Result<Cost> {
    config.check_genome(genome)?;
    let (mut h, mut w) = (config.height, config.width);
    let c0 = config.stem_channels;
    let mut total = add(conv(config.input_channels, c0, 3, h, w), conv(c0, c0, 3, h, w));
    for g in 0..config.n_groups {
        let c = config.group_channels(g);
        for b in 0..config.blocks_per_group {
            if let Some(k) = genome.0[g * config.blocks_per_group + b].kernel_size() {
                total = add(total, conv(c, c, k, h, w));
                total = add(total, conv(c, c, k, h, w));
            }
        }
        h /= 2;
        w /= 2;
        if g + 1 < config.n_groups {
            total = add(total, conv(c, config.group_channels(g + 1), 1, h, w));
        }
    }
    let c = config.group_channels(config.n_groups - 1) as u64;
    let classes = config.num_classes as u64;
    Ok(add(
        total,
        Cost {
            params: c * classes + classes,
            macs: c * (h * w) as u64 * classes,
        },
    ))
}

pub fn param_count(genome: &Genome, config: &MacroConfig) -> Result<u64> {
    Ok(genome_cost(genome, config)?.params)
}

pub fn flops(genome: &Genome, config: &MacroConfig) -> Result<u64> {
    Ok(genome_cost(genome, config)?.flops())
}

/// Same accounting read off a built network (BN counted as fused bias).
pub fn network_cost(net: &Network) -> Result<Cost> {
    net.validate()?;
    let [mut c, mut h, mut w] = net.input_shape;
    let mut total = Cost::default();
    for layer in &net.layers {
        match layer {
            Layer::Conv(p) => {
                total = add(total, conv(p.in_channels(), p.out_channels(), p.kernel_size(), h, w));
                c = p.out_channels();
            }
            Layer::MaxPool => {
                h /= 2;
                w /= 2;
            }
            Layer::Head(lin) => {
                let classes = lin.weight.shape()[0] as u64;
                total = add(
                    total,
                    Cost {
                        params: (lin.weight.len() + lin.bias.len()) as u64,
                        macs: (c * h * w) as u64 * classes,
                    },
                );
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Supernet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_conv_macs() {
        assert_eq!(conv(4, 32, 3, 32, 32).macs, 1_179_648);
    }

    #[test]
    fn agrees_with_built_networks() {
        let cfg = MacroConfig {
            stem_channels: 4,
            height: 12,
            width: 12,
            ..MacroConfig::default()
        };
        let s = Supernet::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for g in Genome::enumerate(4) {
            let net = s.build_subnet(&g, true).unwrap();
            let c = network_cost(&net).unwrap();
            assert_eq!(c, genome_cost(&g, &cfg).unwrap(), "{g}");
            assert_eq!(c.params, net.param_count() as u64);
        }
    }

    #[test]
    fn all_skip_is_stem_transition_head() {
        let cfg = MacroConfig::default();
        let p = param_count(&"S,S,S,S".parse().unwrap(), &cfg).unwrap();
        assert_eq!(p, (4 * 32 * 9 + 32) + (32 * 32 * 9 + 32) + (32 * 64 + 64) + (64 * 7 + 7));
    }
}
