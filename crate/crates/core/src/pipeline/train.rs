//! Training loops shared by the pipeline commands and the experiments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{epoch_batches, Dataset};
use crate::error::{Error, Result};
use crate::network::{FakeQuant, Network};
use crate::nn::Adam;
use crate::space::{fresh_subnet, Genome, MacroConfig, Supernet, SupernetOptimizer};
use crate::tensor::Tensor;
use crate::ttfs::{calibrate_windows, map_ann_to_snn_with_windows, quantize, QuantDescriptor, TtfsNetwork, Window};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub epoch: usize,
    pub genome: String,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

fn check_train(train: &Dataset, budget: &Budget) -> Result<()> {
    if train.is_empty() && budget.epochs > 0 {
        return Err(Error::Empty("training split".into()));
    }
    Ok(())
}

fn finite(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numerical(format!("{what} loss became {loss}")))
    }
}

/// Single-path uniform sampling over full passes of the training split.
pub fn train_supernet(
    config: &MacroConfig,
    train: &Dataset,
    budget: &Budget,
    rng: &mut impl Rng,
) -> Result<(Supernet, Vec<LossRow>)> {
    check_train(train, budget)?;
    let mut net = Supernet::new(config.clone(), rng)?;
    let mut opt = SupernetOptimizer::new(&net, budget.lr);
    let mut log = Vec::new();
    for epoch in 0..budget.epochs {
        for batch in epoch_batches(train.len(), budget.batch_size, rng) {
            let (x, y) = train.batch(&batch)?;
            let (genome, loss) = net.train_step(&mut opt, &x, &y, rng)?;
            log.push(LossRow {
                step: log.len(),
                epoch,
                genome: genome.to_string(),
                loss: finite(loss, "supernet")?,
            });
        }
    }
    Ok((net, log))
}

/// Plain supervised training of a fixed network (BN nets in train mode).
pub fn train_network(
    net: &mut Network,
    train: &Dataset,
    budget: &Budget,
    rng: &mut impl Rng,
    tag: &str,
) -> Result<Vec<LossRow>> {
    check_train(train, budget)?;
    let opt = Adam::new(budget.lr);
    let mut states = net.new_adam_states();
    let mut log = Vec::new();
    for epoch in 0..budget.epochs {
        for batch in epoch_batches(train.len(), budget.batch_size, rng) {
            let (x, y) = train.batch(&batch)?;
            let loss = net.train_step(&x, &y, &opt, &mut states, None)?;
            log.push(LossRow {
                step: log.len(),
                epoch,
                genome: tag.to_string(),
                loss: finite(loss, tag)?,
            });
        }
    }
    Ok(log)
}

/// A freshly initialized subnet trained from scratch.
pub fn train_from_scratch(
    config: &MacroConfig,
    genome: &Genome,
    with_bn: bool,
    train: &Dataset,
    budget: &Budget,
    rng: &mut impl Rng,
) -> Result<(Network, Vec<LossRow>)> {
    let mut net = fresh_subnet(config, genome, with_bn, rng)?;
    let log = train_network(&mut net, train, budget, rng, &genome.to_string())?;
    Ok((net, log))
}

fn fake_quant(q: QuantDescriptor, windows: &[Window], tau_c: f64) -> FakeQuant {
    FakeQuant {
        weight_bits: q.weight_bits,
        time_steps: q.time_steps,
        tau_c,
        input_window: tau_c,
        windows: windows.iter().map(Window::len).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnnSettings {
    pub tau_c: f64,
    pub margin: f64,
}

/// Continued training of an SNN through its BN-free ReLU counterpart.
///
/// Windows are recalibrated at the start of every epoch and once more at the
/// end; with `quant`, the forward pass applies the weight and spike-time
/// quantizers and the result is quantized again after mapping.
pub fn finetune(
    snn: &TtfsNetwork,
    train: &Dataset,
    calib: &Dataset,
    budget: &Budget,
    settings: SnnSettings,
    rng: &mut impl Rng,
) -> Result<(TtfsNetwork, Vec<LossRow>)> {
    check_train(train, budget)?;
    let quant = snn.quant;
    let mut net = crate::ttfs::map_snn_to_ann(snn)?;
    let (calib_x, _) = calib.all()?;
    let opt = Adam::new(budget.lr);
    let mut states = net.new_adam_states();
    let mut log = Vec::new();
    for epoch in 0..budget.epochs {
        let windows = calibrate_windows(&net, &calib_x, settings.tau_c, settings.margin)?;
        let fq = quant.map(|q| fake_quant(q, &windows, settings.tau_c));
        for batch in epoch_batches(train.len(), budget.batch_size, rng) {
            let (x, y) = train.batch(&batch)?;
            let loss = net.train_step(&x, &y, &opt, &mut states, fq.as_ref())?;
            log.push(LossRow {
                step: log.len(),
                epoch,
                genome: "finetune".into(),
                loss: finite(loss, "finetune")?,
            });
        }
    }
    let windows = calibrate_windows(&net, &calib_x, settings.tau_c, settings.margin)?;
    let mut out = map_ann_to_snn_with_windows(&net, &windows, settings.tau_c)?;
    if let Some(q) = quant {
        out = quantize(&out, q.weight_bits, q.time_steps)?;
    }
    Ok((out, log))
}

/// Logits of the fake-quantized forward pass (for checking it against the quantized SNN).
pub fn fake_quant_logits(net: &Network, x: &Tensor, windows: &[Window], q: QuantDescriptor, tau_c: f64) -> Result<Tensor> {
    let mut net = net.clone();
    Ok(net.forward_train(x, Some(&fake_quant(q, windows, tau_c)))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Split, SyntheticSpec};
    use crate::ttfs::map_ann_to_snn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data() -> Dataset {
        let mut d = generate_synthetic(&SyntheticSpec {
            train_counts: vec![8; 7],
            eval_counts: vec![2; 7],
            height: 8,
            width: 8,
            noise: 0.2,
            ..SyntheticSpec::default()
        })
        .unwrap();
        d.carve_calibration(0.1);
        d
    }

    fn small() -> MacroConfig {
        MacroConfig {
            stem_channels: 4,
            height: 8,
            width: 8,
            ..MacroConfig::default()
        }
    }

    #[test]
    fn zero_epochs_is_a_valid_no_op() {
        let d = data();
        let budget = Budget { epochs: 0, lr: 1e-3, batch_size: 8 };
        let (_, log) = train_supernet(&small(), &d.split(Split::Train), &budget, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(log.is_empty());
    }

    #[test]
    fn one_row_per_step() {
        let d = data().split(Split::Train);
        let budget = Budget { epochs: 2, lr: 1e-3, batch_size: 16 };
        let (_, log) = train_supernet(&small(), &d, &budget, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(log.len(), 2 * d.len().div_ceil(16));
    }

    #[test]
    fn fake_quant_forward_equals_quantized_snn() {
        let d = data();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let budget = Budget { epochs: 2, lr: 2e-3, batch_size: 8 };
        let g: Genome = "3,5,S,3".parse().unwrap();
        let (net, _) = train_from_scratch(&small(), &g, false, &d.split(Split::Train), &budget, &mut rng).unwrap();
        let (calib, _) = d.split(Split::Calib).all().unwrap();
        let snn = map_ann_to_snn(&net, &calib, 1.0, 1.2).unwrap();
        let q = QuantDescriptor::default();
        let qsnn = quantize(&snn, q.weight_bits, q.time_steps).unwrap();
        let (x, _) = d.split(Split::Eval).all().unwrap();
        let windows: Vec<Window> = snn.weighted_layers().map(|l| l.window).collect();
        let fq = fake_quant_logits(&net, &x, &windows, q, 1.0).unwrap();
        let (decoded, early) = qsnn.forward_batch(&x).unwrap();
        assert_eq!(early, 0);
        assert!(fq.max_abs_diff(&decoded) < 1e-9, "{}", fq.max_abs_diff(&decoded));
    }

    #[test]
    fn finetune_keeps_quantization() {
        let d = data();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let budget = Budget { epochs: 1, lr: 1e-3, batch_size: 8 };
        let g: Genome = "3,S,S,3".parse().unwrap();
        let (net, _) = train_from_scratch(&small(), &g, false, &d.split(Split::Train), &budget, &mut rng).unwrap();
        let (calib, _) = d.split(Split::Calib).all().unwrap();
        let snn = quantize(&map_ann_to_snn(&net, &calib, 1.0, 1.2).unwrap(), 8, 16).unwrap();
        let settings = SnnSettings { tau_c: 1.0, margin: 1.2 };
        let (out, log) = finetune(&snn, &d.split(Split::Train), &d.split(Split::Calib), &budget, settings, &mut rng).unwrap();
        assert_eq!(out.quant, snn.quant);
        assert!(!log.is_empty());
    }
}
