//! The ReLU network: a pure chain of conv units, 2×2 max-pools and a
//! global-average-pool + fully-connected head.
//!
//! A conv unit is `conv → (BN | bias) → ReLU`. Before fusion units carry BN
//! and no bias; after fusion (or when trained BN-free) they carry a bias only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::batchnorm::BnCache;
use crate::nn::conv::ConvCache;
use crate::nn::init::{kaiming_kernel, normal_tensor};
use crate::nn::pool::PoolCache;
use crate::nn::{
    adam_step, conv2d_backward, conv2d_forward, global_avg_pool, global_avg_pool_backward,
    maxpool2x2_backward, maxpool2x2_forward, softmax_cross_entropy, Adam, AdamState, BatchNorm,
    Linear,
};
use crate::tensor::Tensor;
use crate::ttfs::quantize::{quantize_symmetric, snapped_activation, WeightGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerParams {
    /// `[out_ch, in_ch, k, k]`
    pub kernel: Tensor,
    pub bias: Option<Tensor>,
    pub bn: Option<BatchNorm>,
}

impl ConvLayerParams {
    pub fn with_bn(rng: &mut impl Rng, in_ch: usize, out_ch: usize, k: usize) -> Self {
        ConvLayerParams {
            kernel: kaiming_kernel(rng, out_ch, in_ch, k),
            bias: None,
            bn: Some(BatchNorm::new(out_ch)),
        }
    }

    pub fn with_bias(rng: &mut impl Rng, in_ch: usize, out_ch: usize, k: usize) -> Self {
        ConvLayerParams {
            kernel: kaiming_kernel(rng, out_ch, in_ch, k),
            bias: Some(Tensor::zeros(&[out_ch])),
            bn: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let (o, _, kh, kw) = self.kernel.dims4()?;
        if kh != kw || ![1, 3, 5].contains(&kh) {
            return Err(Error::Shape(format!("unsupported kernel {kh}x{kw}")));
        }
        match (&self.bias, &self.bn) {
            (Some(_), Some(_)) => Err(Error::InvalidValue("conv carries both BN and a bias".into())),
            (Some(b), None) if b.shape() != [o] => Err(Error::Shape(format!("bias {:?} for {o} channels", b.shape()))),
            (None, Some(bn)) if bn.channels() != o => Err(Error::Shape(format!("BN over {} channels for {o}", bn.channels()))),
            (None, Some(bn)) if bn.running_var.data().iter().any(|&v| v <= 0.0) => {
                Err(Error::InvalidValue("non-positive BN running variance".into()))
            }
            _ => Ok(()),
        }
    }

    /// Folds eval-mode BN into the kernel and a bias: `w′ = w·γ/√(var+ε)`,
    /// `b′ = −mean·γ/√(var+ε) + β`.
    pub fn fused(&self) -> ConvLayerParams {
        let Some(bn) = &self.bn else {
            return self.clone();
        };
        let out = self.out_channels();
        let per = self.kernel.len() / out;
        let mut kernel = self.kernel.clone();
        let mut bias = Tensor::zeros(&[out]);
        for c in 0..out {
            let s = bn.gamma.data()[c] / (bn.running_var.data()[c] + bn.eps).sqrt();
            for w in &mut kernel.data_mut()[c * per..(c + 1) * per] {
                *w *= s;
            }
            bias.data_mut()[c] = -bn.running_mean.data()[c] * s + bn.beta.data()[c];
        }
        ConvLayerParams {
            kernel,
            bias: Some(bias),
            bn: None,
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.kernel];
        if let Some(bn) = &self.bn {
            v.push(&bn.gamma);
            v.push(&bn.beta);
        }
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.kernel];
        if let Some(bn) = &mut self.bn {
            v.push(&mut bn.gamma);
            v.push(&mut bn.beta);
        }
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// Conv unit with ReLU.
    Conv(ConvLayerParams),
    MaxPool,
    /// Global average pool followed by a linear classifier.
    Head(Linear),
}

impl Layer {
    pub fn is_weighted(&self) -> bool {
        !matches!(self, Layer::MaxPool)
    }
}

pub fn new_head(rng: &mut impl Rng, in_features: usize, classes: usize) -> Linear {
    Linear {
        weight: normal_tensor(rng, &[classes, in_features], (1.0 / in_features as f64).sqrt()),
        bias: Tensor::zeros(&[classes]),
    }
}

/// Weight/time quantizers applied in the forward pass of quantization-aware
/// training. Gradients pass straight through.
#[derive(Clone, Debug, PartialEq)]
pub struct FakeQuant {
    pub weight_bits: u32,
    pub time_steps: u32,
    pub tau_c: f64,
    pub input_window: f64,
    /// Window length per weighted layer, head included.
    pub windows: Vec<f64>,
}

impl FakeQuant {
    fn activation(&self, z: f64, window: f64) -> (f64, bool) {
        snapped_activation(z, window, self.tau_c, self.time_steps)
    }
}

enum LayerTrace {
    Conv {
        conv: ConvCache,
        bn: Option<BnCache>,
        /// 1 where the gradient passes the activation, else 0.
        pass: Vec<bool>,
        kernel_used: Option<Tensor>,
    },
    Pool(PoolCache),
    Head {
        input_shape: Vec<usize>,
        pooled: Tensor,
        weight_used: Option<Tensor>,
    },
}

/// Forward-pass record consumed by [`Network::backward`].
pub struct Trace {
    layers: Vec<LayerTrace>,
}

/// Per-layer parameter gradients, ordered like [`Network::params`].
pub type Grads = Vec<Vec<Tensor>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// `[C, H, W]` of one input sample.
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn validate(&self) -> Result<()> {
        let [mut c, mut h, mut w] = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(p) => {
                    p.validate()?;
                    if p.in_channels() != c {
                        return Err(Error::Shape(format!(
                            "layer {i}: conv expects {} channels, gets {c}",
                            p.in_channels()
                        )));
                    }
                    c = p.out_channels();
                }
                Layer::MaxPool => {
                    (h, w) = crate::nn::pool::pooled_size(h, w)?;
                }
                Layer::Head(lin) => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::Shape("head must be the last layer".into()));
                    }
                    if lin.in_features() != c || lin.bias.len() != lin.out_features() {
                        return Err(Error::Shape(format!("head {:?} after {c} channels", lin.weight.shape())));
                    }
                }
            }
        }
        if !matches!(self.layers.last(), Some(Layer::Head(_))) {
            return Err(Error::Shape("network has no head".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Head(lin)) => lin.out_features(),
            _ => 0,
        }
    }

    pub fn has_bn(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Conv(p) if p.bn.is_some()))
    }

    pub fn fuse_bn(&self) -> Network {
        Network {
            input_shape: self.input_shape,
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(p) => Layer::Conv(p.fused()),
                    other => other.clone(),
                })
                .collect(),
        }
    }

    pub fn params(&self) -> Vec<Vec<&Tensor>> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(p) => p.params(),
                Layer::MaxPool => vec![],
                Layer::Head(lin) => vec![&lin.weight, &lin.bias],
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<Vec<&mut Tensor>> {
        self.layers
            .iter_mut()
            .map(|l| match l {
                Layer::Conv(p) => p.params_mut(),
                Layer::MaxPool => vec![],
                Layer::Head(lin) => vec![&mut lin.weight, &mut lin.bias],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().flatten().map(|t| t.len()).sum()
    }

    pub fn new_adam_states(&self) -> Vec<AdamState> {
        self.params().iter().map(|p| AdamState::for_params(p)).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if [c, h, w] != self.input_shape {
            return Err(Error::Shape(format!(
                "network expects [B, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Eval-mode forward; `observe(i, out)` sees every weighted layer's output
    /// (post-ReLU for conv units, logits for the head).
    pub fn forward_observed(&self, x: &Tensor, mut observe: impl FnMut(usize, &Tensor)) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Conv(p) => {
                    let (mut z, _) = conv2d_forward(&h, &p.kernel)?;
                    if let Some(bn) = &p.bn {
                        z = bn.forward_eval(&z)?;
                    }
                    if let Some(b) = &p.bias {
                        add_channel_bias(&mut z, b);
                    }
                    let a = z.map(|v| v.max(0.0));
                    observe(i, &a);
                    a
                }
                Layer::MaxPool => maxpool2x2_forward(&h)?.0,
                Layer::Head(lin) => {
                    let y = lin.forward(&global_avg_pool(&h)?)?;
                    observe(i, &y);
                    y
                }
            };
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_observed(x, |_, _| {})
    }

    /// Train-mode forward (BN uses batch statistics and updates running ones).
    pub fn forward_train(&mut self, x: &Tensor, fq: Option<&FakeQuant>) -> Result<(Tensor, Trace)> {
        self.check_input(x)?;
        if fq.is_some() && self.has_bn() {
            return Err(Error::UnfusedBatchNorm(
                self.layers.iter().position(|l| matches!(l, Layer::Conv(p) if p.bn.is_some())).unwrap_or(0),
            ));
        }
        let mut h = match fq {
            Some(q) => x.map(|v| q.activation(v, q.input_window).0),
            None => x.clone(),
        };
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut weighted = 0;
        for layer in self.layers.iter_mut() {
            match layer {
                Layer::Conv(p) => {
                    let (kernel_used, bias_used) = match fq {
                        Some(q) => {
                            let window = q.windows[weighted];
                            let (kq, grid) = quantize_symmetric(&p.kernel, q.weight_bits);
                            let bias = p.bias.as_ref().map(|b| quantized_bias(b, grid, window, q.tau_c));
                            (Some(kq), bias)
                        }
                        None => (None, p.bias.clone()),
                    };
                    let (mut z, conv) = conv2d_forward(&h, kernel_used.as_ref().unwrap_or(&p.kernel))?;
                    let mut bn_cache = None;
                    if let Some(bn) = &mut p.bn {
                        let (y, c) = bn.forward_train(&z)?;
                        z = y;
                        bn_cache = Some(c);
                    }
                    if let Some(b) = &bias_used {
                        add_channel_bias(&mut z, b);
                    }
                    let mut pass = Vec::with_capacity(z.len());
                    let a = match fq {
                        Some(q) => {
                            let window = q.windows[weighted];
                            let mut a = z.clone();
                            for v in a.data_mut() {
                                let (av, inside) = q.activation(*v, window);
                                pass.push(inside);
                                *v = av;
                            }
                            a
                        }
                        None => {
                            pass.extend(z.data().iter().map(|&v| v > 0.0));
                            z.map(|v| v.max(0.0))
                        }
                    };
                    traces.push(LayerTrace::Conv {
                        conv,
                        bn: bn_cache,
                        pass,
                        kernel_used,
                    });
                    weighted += 1;
                    h = a;
                }
                Layer::MaxPool => {
                    let (y, c) = maxpool2x2_forward(&h)?;
                    traces.push(LayerTrace::Pool(c));
                    h = y;
                }
                Layer::Head(lin) => {
                    let pooled = global_avg_pool(&h)?;
                    let (y, weight_used) = match fq {
                        Some(q) => {
                            let (wq, grid) = quantize_symmetric(&lin.weight, q.weight_bits);
                            let bq = quantized_bias(&lin.bias, grid, q.windows[weighted], q.tau_c);
                            let l = Linear { weight: wq.clone(), bias: bq };
                            (l.forward(&pooled)?, Some(wq))
                        }
                        None => (lin.forward(&pooled)?, None),
                    };
                    traces.push(LayerTrace::Head {
                        input_shape: h.shape().to_vec(),
                        pooled,
                        weight_used,
                    });
                    weighted += 1;
                    h = y;
                }
            }
        }
        Ok((h, Trace { layers: traces }))
    }

    pub fn backward(&self, trace: &Trace, grad_logits: &Tensor) -> Result<Grads> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::MissingCache("network (trace from a different network)"));
        }
        let mut grads: Grads = vec![Vec::new(); self.layers.len()];
        let mut g = grad_logits.clone();
        for (i, (layer, tr)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            g = match (layer, tr) {
                (Layer::Head(lin), LayerTrace::Head { input_shape, pooled, weight_used }) => {
                    let used = Linear {
                        weight: weight_used.clone().unwrap_or_else(|| lin.weight.clone()),
                        bias: lin.bias.clone(),
                    };
                    let (gx, gw, gb) = used.backward(pooled, &g)?;
                    grads[i] = vec![gw, gb];
                    global_avg_pool_backward(&gx, input_shape)?
                }
                (Layer::MaxPool, LayerTrace::Pool(c)) => maxpool2x2_backward(&g, c)?,
                (Layer::Conv(p), LayerTrace::Conv { conv, bn, pass, kernel_used }) => {
                    for (gv, &ok) in g.data_mut().iter_mut().zip(pass) {
                        if !ok {
                            *gv = 0.0;
                        }
                    }
                    let mut layer_grads = Vec::with_capacity(3);
                    let mut bias_grad = None;
                    if p.bias.is_some() {
                        bias_grad = Some(channel_sum(&g)?);
                    }
                    let mut bn_grads = None;
                    if let (Some(bnp), Some(bc)) = (&p.bn, bn) {
                        let (gx, gg, gb) = bnp.backward(&g, bc)?;
                        g = gx;
                        bn_grads = Some((gg, gb));
                    } else if p.bn.is_some() {
                        return Err(Error::MissingCache("batchnorm"));
                    }
                    let kernel = kernel_used.as_ref().unwrap_or(&p.kernel);
                    let (gx, gk) = conv2d_backward(&g, conv, kernel)?;
                    layer_grads.push(gk);
                    if let Some((gg, gb)) = bn_grads {
                        layer_grads.push(gg);
                        layer_grads.push(gb);
                    }
                    if let Some(gb) = bias_grad {
                        layer_grads.push(gb);
                    }
                    grads[i] = layer_grads;
                    gx
                }
                _ => return Err(Error::MissingCache("network (layer kind mismatch)")),
            };
        }
        Ok(grads)
    }

    /// Loss and gradients for a labelled batch (train mode).
    pub fn loss_and_grads(&mut self, x: &Tensor, labels: &[usize], fq: Option<&FakeQuant>) -> Result<(f64, Grads)> {
        let (logits, trace) = self.forward_train(x, fq)?;
        let (loss, g) = softmax_cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss became {loss}")));
        }
        let grads = self.backward(&trace, &g)?;
        Ok((loss, grads))
    }

    pub fn apply_adam(&mut self, opt: &Adam, grads: &Grads, states: &mut [AdamState]) -> Result<()> {
        for ((mut params, g), st) in self.params_mut().into_iter().zip(grads).zip(states.iter_mut()) {
            if params.is_empty() {
                continue;
            }
            adam_step(opt, &mut params, g, st)?;
        }
        Ok(())
    }

    pub fn train_step(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        opt: &Adam,
        states: &mut [AdamState],
        fq: Option<&FakeQuant>,
    ) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(x, labels, fq)?;
        if grads.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        self.apply_adam(opt, &grads, states)?;
        Ok(loss)
    }
}

pub(crate) fn add_channel_bias(z: &mut Tensor, bias: &Tensor) {
    let c = bias.len();
    let plane = z.len() / z.shape()[0] / c;
    for (i, chunk) in z.data_mut().chunks_exact_mut(plane).enumerate() {
        let b = bias.data()[i % c];
        for v in chunk {
            *v += b;
        }
    }
}

fn channel_sum(g: &Tensor) -> Result<Tensor> {
    let (_, c, h, w) = g.dims4()?;
    let mut out = vec![0.0; c];
    for (i, chunk) in g.data().chunks_exact(h * w).enumerate() {
        out[i % c] += chunk.iter().sum::<f64>();
    }
    Tensor::new(vec![c], out)
}

/// Bias implied by a threshold snapped onto the layer's weight grid.
fn quantized_bias(bias: &Tensor, grid: WeightGrid, window: f64, tau_c: f64) -> Tensor {
    let span = window / tau_c;
    bias.map(|b| span - grid.snap(span - b))
}
