//! Macro backbone and the one-shot weight-sharing supernet.
//!
//! Layout: stem (two 3×3 units), then per group its searchable blocks and a
//! 2×2 max-pool, with a 1×1 transition unit doubling the width between groups,
//! then global average pooling and a fully connected head. A Conv-k choice is
//! two k×k units; a unit is conv + BN + ReLU. Skip is the identity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{new_head, ConvLayerParams, Layer, Network};
use crate::nn::{Adam, AdamState, Linear};
use crate::tensor::Tensor;

use super::genome::{sample_uniform_genome, Choice, Genome};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacroConfig {
    pub n_groups: usize,
    pub blocks_per_group: usize,
    pub stem_channels: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            n_groups: 2,
            blocks_per_group: 2,
            stem_channels: 32,
            input_channels: 4,
            num_classes: 7,
            height: 32,
            width: 32,
        }
    }
}

impl MacroConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_groups", self.n_groups),
            ("blocks_per_group", self.blocks_per_group),
            ("stem_channels", self.stem_channels),
            ("input_channels", self.input_channels),
            ("num_classes", self.num_classes),
            ("height", self.height),
            ("width", self.width),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("macro.{name} must be positive")));
        }
        if self.n_groups >= usize::BITS as usize || (self.height >> self.n_groups) == 0 || (self.width >> self.n_groups) == 0 {
            return Err(Error::Config(format!(
                "{}×{} input is too small for {} pooling stages",
                self.height, self.width, self.n_groups
            )));
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.n_groups * self.blocks_per_group
    }

    pub fn group_channels(&self, group: usize) -> usize {
        self.stem_channels << group
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_channels, self.height, self.width]
    }

    pub fn check_genome(&self, genome: &Genome) -> Result<()> {
        if genome.len() != self.num_blocks() {
            return Err(Error::Genome(format!(
                "{genome} has {} blocks, the space has {}",
                genome.len(),
                self.num_blocks()
            )));
        }
        Ok(())
    }

    fn stem_unit(&self, i: usize) -> usize {
        debug_assert!(i < 2);
        i
    }

    /// Index of unit `j ∈ {0, 1}` of `choice` in block `block`.
    fn block_unit(&self, block: usize, choice: Choice, j: usize) -> Option<usize> {
        let slot = match choice {
            Choice::Conv3 => 0,
            Choice::Conv5 => 2,
            Choice::Skip => return None,
        };
        Some(2 + 4 * block + slot + j)
    }

    fn transition_unit(&self, group: usize) -> usize {
        2 + 4 * self.num_blocks() + group
    }

    fn num_units(&self) -> usize {
        2 + 4 * self.num_blocks() + self.n_groups - 1
    }

    /// `(in_channels, out_channels, kernel)` of a unit.
    fn unit_dims(&self, u: usize) -> (usize, usize, usize) {
        let c0 = self.stem_channels;
        let blocks_end = 2 + 4 * self.num_blocks();
        if u < 2 {
            (if u == 0 { self.input_channels } else { c0 }, c0, 3)
        } else if u < blocks_end {
            let block = (u - 2) / 4;
            let c = self.group_channels(block / self.blocks_per_group);
            (c, c, if (u - 2) % 4 < 2 { 3 } else { 5 })
        } else {
            let g = u - blocks_end;
            (self.group_channels(g), self.group_channels(g + 1), 1)
        }
    }
}

/// One step of a subnet path through the supernet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathStep {
    Unit(usize),
    Pool,
    Head,
}

/// The layer sequence a genome selects.
pub fn path(config: &MacroConfig, genome: &Genome) -> Result<Vec<PathStep>> {
    config.check_genome(genome)?;
    let mut steps = vec![PathStep::Unit(config.stem_unit(0)), PathStep::Unit(config.stem_unit(1))];
    for g in 0..config.n_groups {
        for b in 0..config.blocks_per_group {
            let block = g * config.blocks_per_group + b;
            for j in 0..2 {
                if let Some(u) = config.block_unit(block, genome.0[block], j) {
                    steps.push(PathStep::Unit(u));
                }
            }
        }
        steps.push(PathStep::Pool);
        if g + 1 < config.n_groups {
            steps.push(PathStep::Unit(config.transition_unit(g)));
        }
    }
    steps.push(PathStep::Head);
    Ok(steps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Supernet {
    pub config: MacroConfig,
    /// Every candidate conv unit (stem, both choices of every block, transitions).
    pub units: Vec<ConvLayerParams>,
    pub head: Linear,
}

/// Adam moments for every supernet parameter group.
#[derive(Clone, Debug)]
pub struct SupernetOptimizer {
    pub adam: Adam,
    units: Vec<AdamState>,
    head: AdamState,
}

impl SupernetOptimizer {
    pub fn new(net: &Supernet, lr: f64) -> Self {
        let unit_state = |u: &ConvLayerParams| {
            let bn = u.bn.as_ref().expect("supernet units carry BN");
            AdamState::for_params(&[&u.kernel, &bn.gamma, &bn.beta])
        };
        SupernetOptimizer {
            adam: Adam::new(lr),
            units: net.units.iter().map(unit_state).collect(),
            head: AdamState::for_params(&[&net.head.weight, &net.head.bias]),
        }
    }
}

impl Supernet {
    pub fn new(config: MacroConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let units = (0..config.num_units())
            .map(|u| {
                let (i, o, k) = config.unit_dims(u);
                ConvLayerParams::with_bn(rng, i, o, k)
            })
            .collect();
        let head = new_head(rng, config.group_channels(config.n_groups - 1), config.num_classes);
        Ok(Supernet { config, units, head })
    }

    /// Extracts the subnet a genome selects; with `fuse_bn` every BN is folded into its conv.
    pub fn build_subnet(&self, genome: &Genome, fuse_bn: bool) -> Result<Network> {
        let layers = path(&self.config, genome)?
            .into_iter()
            .map(|s| match s {
                PathStep::Unit(u) if fuse_bn => Layer::Conv(self.units[u].fused()),
                PathStep::Unit(u) => Layer::Conv(self.units[u].clone()),
                PathStep::Pool => Layer::MaxPool,
                PathStep::Head => Layer::Head(self.head.clone()),
            })
            .collect();
        let net = Network {
            input_shape: self.config.input_shape(),
            layers,
        };
        net.validate()?;
        Ok(net)
    }

    /// Trains the path of `genome` for one batch and writes the updated
    /// weights, BN statistics and optimizer moments back into the supernet.
    pub fn train_path(&mut self, genome: &Genome, opt: &mut SupernetOptimizer, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let steps = path(&self.config, genome)?;
        let mut net = self.build_subnet(genome, false)?;
        let mut states: Vec<AdamState> = steps
            .iter()
            .map(|s| match *s {
                PathStep::Unit(u) => std::mem::take(&mut opt.units[u]),
                PathStep::Pool => AdamState::default(),
                PathStep::Head => std::mem::take(&mut opt.head),
            })
            .collect();
        let result = net.train_step(x, labels, &opt.adam, &mut states, None);
        for ((step, layer), state) in steps.iter().zip(net.layers).zip(states) {
            match (*step, layer) {
                (PathStep::Unit(u), Layer::Conv(p)) => {
                    self.units[u] = p;
                    opt.units[u] = state;
                }
                (PathStep::Head, Layer::Head(h)) => {
                    self.head = h;
                    opt.head = state;
                }
                _ => {}
            }
        }
        result
    }

    /// Single-path uniform sampling: one random genome per batch.
    pub fn train_step(
        &mut self,
        opt: &mut SupernetOptimizer,
        x: &Tensor,
        labels: &[usize],
        rng: &mut impl Rng,
    ) -> Result<(Genome, f64)> {
        let genome = sample_uniform_genome(rng, self.config.num_blocks());
        let loss = self.train_path(&genome, opt, x, labels)?;
        Ok((genome, loss))
    }
}

/// A freshly initialized standalone subnet: conv + BN units, or conv + bias
/// units when `with_bn` is false (the form that maps directly to an SNN).
pub fn fresh_subnet(config: &MacroConfig, genome: &Genome, with_bn: bool, rng: &mut impl Rng) -> Result<Network> {
    config.validate()?;
    let layers = path(config, genome)?
        .into_iter()
        .map(|s| match s {
            PathStep::Unit(u) => {
                let (i, o, k) = config.unit_dims(u);
                Layer::Conv(if with_bn {
                    ConvLayerParams::with_bn(rng, i, o, k)
                } else {
                    ConvLayerParams::with_bias(rng, i, o, k)
                })
            }
            PathStep::Pool => Layer::MaxPool,
            PathStep::Head => Layer::Head(new_head(rng, config.group_channels(config.n_groups - 1), config.num_classes)),
        })
        .collect();
    let net = Network {
        input_shape: config.input_shape(),
        layers,
    };
    net.validate()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> MacroConfig {
        MacroConfig {
            stem_channels: 4,
            height: 8,
            width: 8,
            ..MacroConfig::default()
        }
    }

    fn batch(rng: &mut ChaCha8Rng, cfg: &MacroConfig, n: usize) -> (Tensor, Vec<usize>) {
        let x = Tensor::from_fn(&[n, cfg.input_channels, cfg.height, cfg.width], |_| rng.random_range(0.0..1.0));
        let y = (0..n).map(|i| i % cfg.num_classes).collect();
        (x, y)
    }

    #[test]
    fn all_skip_is_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Supernet::new(small(), &mut rng).unwrap();
        let net = s.build_subnet(&"S,S,S,S".parse().unwrap(), true).unwrap();
        let kinds: Vec<String> = net
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(p) => format!("c{}", p.kernel_size()),
                Layer::MaxPool => "p".into(),
                Layer::Head(_) => "h".into(),
            })
            .collect();
        assert_eq!(kinds, ["c3", "c3", "p", "c1", "p", "h"]);
    }

    #[test]
    fn fused_subnet_matches_eval_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = small();
        let mut s = Supernet::new(cfg.clone(), &mut rng).unwrap();
        let mut opt = SupernetOptimizer::new(&s, 5e-3);
        for _ in 0..3 {
            let (x, y) = batch(&mut rng, &cfg, 4);
            s.train_step(&mut opt, &x, &y, &mut rng).unwrap();
        }
        let (x, _) = batch(&mut rng, &cfg, 5);
        for g in ["3,5,S,3", "5,5,5,5", "S,3,5,S"] {
            let g: Genome = g.parse().unwrap();
            let a = s.build_subnet(&g, false).unwrap().forward(&x).unwrap();
            let b = s.build_subnet(&g, true).unwrap().forward(&x).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-10);
        }
    }

    #[test]
    fn training_touches_only_the_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = small();
        let mut s = Supernet::new(cfg.clone(), &mut rng).unwrap();
        let before = s.clone();
        let mut opt = SupernetOptimizer::new(&s, 5e-3);
        let (x, y) = batch(&mut rng, &cfg, 4);
        let g: Genome = "3,3,3,3".parse().unwrap();
        s.train_path(&g, &mut opt, &x, &y).unwrap();
        let on_path: Vec<usize> = path(&cfg, &g)
            .unwrap()
            .into_iter()
            .filter_map(|p| match p {
                PathStep::Unit(u) => Some(u),
                _ => None,
            })
            .collect();
        for (u, (a, b)) in before.units.iter().zip(&s.units).enumerate() {
            assert_eq!(a != b, on_path.contains(&u), "unit {u}");
        }
        assert_ne!(before.head, s.head);
    }

    #[test]
    fn fixed_genome_loss_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = small();
        let mut s = Supernet::new(cfg.clone(), &mut rng).unwrap();
        let mut opt = SupernetOptimizer::new(&s, 5e-3);
        let (x, y) = batch(&mut rng, &cfg, 14);
        let g: Genome = "3,5,3,5".parse().unwrap();
        let first = s.train_path(&g, &mut opt, &x, &y).unwrap();
        let mut last = first;
        for _ in 0..49 {
            last = s.train_path(&g, &mut opt, &x, &y).unwrap();
        }
        assert!(last < first * 0.5, "{first} -> {last}");
    }

    #[test]
    fn equal_seeds_equal_weights() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let cfg = small();
            let mut s = Supernet::new(cfg.clone(), &mut rng).unwrap();
            let mut opt = SupernetOptimizer::new(&s, 5e-3);
            for _ in 0..3 {
                let (x, y) = batch(&mut rng, &cfg, 4);
                s.train_step(&mut opt, &x, &y, &mut rng).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fresh_subnets_match_supernet_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = small();
        let s = Supernet::new(cfg.clone(), &mut rng).unwrap();
        for g in ["3,5,S,3", "S,S,S,S"] {
            let g: Genome = g.parse().unwrap();
            let a = s.build_subnet(&g, true).unwrap();
            let b = fresh_subnet(&cfg, &g, false, &mut rng).unwrap();
            assert_eq!(a.param_count(), b.param_count());
            assert!(!b.has_bn());
            assert!(fresh_subnet(&cfg, &g, true, &mut rng).unwrap().has_bn());
        }
    }

    #[test]
    fn genome_length_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Supernet::new(small(), &mut rng).unwrap();
        assert!(matches!(s.build_subnet(&"3,3".parse().unwrap(), true), Err(Error::Genome(_))));
    }
}
