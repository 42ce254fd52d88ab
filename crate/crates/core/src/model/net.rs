//! Layer plan and forward/backward passes of the encoder and decoder.
//!
//! Every convolution is followed by a leaky rectifier. A dense block keeps
//! one growing feature buffer: layer `i` reads the first `k0 + i * growth`
//! channels and appends `growth` new ones. Transitions halve the channel
//! count; in the encoder they are 3x3 with the configured stride, in the
//! decoder 1x1 with stride 1.

use super::nn::{leaky_relu_backward, leaky_relu_inplace, sigmoid, softplus, Conv, Tensor3};
use super::{ArchConfig, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Set for weights (He initialization); `None` for biases.
    pub fan_in: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DenseBlock {
    pub in_channels: usize,
    pub layers: Vec<Conv>,
}

impl DenseBlock {
    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(self.in_channels, |l| l.cin + l.cout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Stack {
    pub blocks: Vec<DenseBlock>,
    pub transitions: Vec<Conv>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NetPlan {
    pub specs: Vec<TensorSpec>,
    pub encoder: Stack,
    pub encoder_head_weight: usize,
    pub encoder_head_bias: usize,
    pub encoder_features: usize,
    pub decoder_stereo: Conv,
    pub decoder: Stack,
    pub decoder_head: Conv,
    pub latent_dim: usize,
    pub bins: usize,
    pub frames: usize,
}

struct Builder {
    specs: Vec<TensorSpec>,
}

impl Builder {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        let weight = self.specs.len();
        self.specs.push(TensorSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, k, k],
            fan_in: Some(cin * k * k),
        });
        self.specs.push(TensorSpec { name: format!("{name}.bias"), shape: vec![cout], fan_in: None });
        Conv { cin, cout, k, stride, weight, bias: weight + 1 }
    }

    fn stack(&mut self, prefix: &str, cfg: &ArchConfig, in_channels: usize, trans_k: usize, trans_stride: usize) -> Stack {
        let mut ch = in_channels;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for b in 0..cfg.dense_blocks {
            let layers = (0..cfg.layers_per_block)
                .map(|i| self.conv(&format!("{prefix}.block{b}.layer{i}"), ch + i * cfg.growth, cfg.growth, 3, 1))
                .collect();
            let block = DenseBlock { in_channels: ch, layers };
            ch = block.out_channels();
            blocks.push(block);
            if b + 1 < cfg.dense_blocks {
                let out = (ch / 2).max(1);
                transitions.push(self.conv(&format!("{prefix}.transition{b}"), ch, out, trans_k, trans_stride));
                ch = out;
            }
        }
        Stack { blocks, transitions }
    }
}

impl NetPlan {
    pub fn new(cfg: &ArchConfig) -> Self {
        let mut b = Builder { specs: Vec::new() };
        let encoder = b.stack("encoder", cfg, 5, 3, cfg.encoder_stride);
        let encoder_features = encoder.blocks.last().expect("at least one block").out_channels();
        let encoder_head_weight = b.specs.len();
        b.specs.push(TensorSpec {
            name: "encoder.head.weight".into(),
            shape: vec![2 * cfg.latent_dim, encoder_features],
            fan_in: Some(encoder_features),
        });
        b.specs.push(TensorSpec { name: "encoder.head.bias".into(), shape: vec![2 * cfg.latent_dim], fan_in: None });
        let decoder_stereo = b.conv("decoder.stereo_transition", 2, 2, 1, 1);
        let decoder = b.stack("decoder", cfg, 2 + cfg.latent_dim, 1, 1);
        let dec_features = decoder.blocks.last().expect("at least one block").out_channels();
        let decoder_head = b.conv("decoder.head", dec_features, 5, 1, 1);
        Self {
            specs: b.specs,
            encoder,
            encoder_head_weight,
            encoder_head_bias: encoder_head_weight + 1,
            encoder_features,
            decoder_stereo,
            decoder,
            decoder_head,
            latent_dim: cfg.latent_dim,
            bins: cfg.bins(),
            frames: cfg.frames(),
        }
    }
}

fn block_forward(block: &DenseBlock, params: &[&[f64]], x: Tensor3) -> Tensor3 {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let mut buf = Tensor3::zeros(block.out_channels(), h, w);
    buf.data[..x.data.len()].copy_from_slice(&x.data);
    for conv in &block.layers {
        let mut y = conv.forward(params, buf.prefix(conv.cin), h, w);
        leaky_relu_inplace(&mut y.data);
        buf.data[conv.cin * hw..(conv.cin + conv.cout) * hw].copy_from_slice(&y.data);
    }
    buf
}

/// Gradient of the block input given the gradient of its output buffer.
fn block_backward(
    block: &DenseBlock,
    params: &[&[f64]],
    grads: &mut [Vec<f64>],
    buf: &Tensor3,
    mut dbuf: Vec<f64>,
) -> Vec<f64> {
    let (h, w) = (buf.h, buf.w);
    let hw = h * w;
    for conv in block.layers.iter().rev() {
        let out = conv.cin * hw..(conv.cin + conv.cout) * hw;
        let mut dy = dbuf[out.clone()].to_vec();
        leaky_relu_backward(&buf.data[out], &mut dy);
        let dx = conv.backward(params, grads, buf.prefix(conv.cin), h, w, &dy, true).expect("requested");
        for (d, g) in dbuf.iter_mut().zip(&dx) {
            *d += g;
        }
    }
    dbuf.truncate(block.in_channels * hw);
    dbuf
}

fn transition_forward(conv: &Conv, params: &[&[f64]], buf: &Tensor3) -> Tensor3 {
    let mut y = conv.forward(params, &buf.data, buf.h, buf.w);
    leaky_relu_inplace(&mut y.data);
    y
}

/// Feature buffers of every dense block, in order.
pub(crate) struct StackCache {
    buffers: Vec<Tensor3>,
}

fn stack_forward(stack: &Stack, params: &[&[f64]], input: Tensor3) -> StackCache {
    let mut buffers = Vec::with_capacity(stack.blocks.len());
    let mut x = input;
    for (i, block) in stack.blocks.iter().enumerate() {
        let buf = block_forward(block, params, x);
        x = match stack.transitions.get(i) {
            Some(t) => transition_forward(t, params, &buf),
            None => Tensor3::zeros(0, 0, 0),
        };
        buffers.push(buf);
    }
    StackCache { buffers }
}

/// Returns the gradient of the stack input.
fn stack_backward(
    stack: &Stack,
    params: &[&[f64]],
    grads: &mut [Vec<f64>],
    cache: &StackCache,
    dlast: Vec<f64>,
) -> Vec<f64> {
    let mut dbuf = dlast;
    for b in (0..stack.blocks.len()).rev() {
        let buf = &cache.buffers[b];
        let mut dx = block_backward(&stack.blocks[b], params, grads, buf, dbuf);
        if b == 0 {
            return dx;
        }
        // dx is the gradient of the previous transition's activated output,
        // which is the prefix of this block's buffer.
        leaky_relu_backward(buf.prefix(stack.blocks[b].in_channels), &mut dx);
        let prev = &cache.buffers[b - 1];
        dbuf = stack.transitions[b - 1]
            .backward(params, grads, &prev.data, prev.h, prev.w, &dx, true)
            .expect("requested");
    }
    unreachable!("stack has at least one block")
}

pub(crate) struct EncoderOutput {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    cache: StackCache,
    pooled: Vec<f64>,
}

/// Encoder forward pass on compressed five-channel magnitudes.
pub(crate) fn encoder_forward(model: &ModelParams, input: &[f64]) -> EncoderOutput {
    let plan = model.plan();
    let params = model.data();
    let x = Tensor3 { c: 5, h: plan.bins, w: plan.frames, data: input.to_vec() };
    let cache = stack_forward(&plan.encoder, &params, x);
    let last = cache.buffers.last().expect("at least one block");
    let hw = last.plane_len() as f64;
    let pooled: Vec<f64> = last.data.chunks_exact(last.plane_len()).map(|p| p.iter().sum::<f64>() / hw).collect();
    let weight = params[plan.encoder_head_weight];
    let bias = params[plan.encoder_head_bias];
    let nf = plan.encoder_features;
    let out: Vec<f64> = (0..2 * plan.latent_dim)
        .map(|j| bias[j] + weight[j * nf..(j + 1) * nf].iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let (mu, logvar) = out.split_at(plan.latent_dim);
    EncoderOutput { mu: mu.to_vec(), logvar: logvar.to_vec(), cache, pooled }
}

pub(crate) fn encoder_backward(
    model: &ModelParams,
    grads: &mut [Vec<f64>],
    out: &EncoderOutput,
    dmu: &[f64],
    dlogvar: &[f64],
) {
    let plan = model.plan();
    let params = model.data();
    let nf = plan.encoder_features;
    let dout: Vec<f64> = dmu.iter().chain(dlogvar).copied().collect();
    let weight = params[plan.encoder_head_weight];
    let mut dpooled = vec![0.0; nf];
    for (j, &d) in dout.iter().enumerate() {
        grads[plan.encoder_head_bias][j] += d;
        let gw = &mut grads[plan.encoder_head_weight][j * nf..(j + 1) * nf];
        for c in 0..nf {
            gw[c] += d * out.pooled[c];
            dpooled[c] += d * weight[j * nf + c];
        }
    }
    let last = out.cache.buffers.last().expect("at least one block");
    let hw = last.plane_len();
    let mut dlast = vec![0.0; last.data.len()];
    for (plane, &d) in dlast.chunks_exact_mut(hw).zip(&dpooled) {
        plane.fill(d / hw as f64);
    }
    stack_backward(&plan.encoder, &params, grads, &out.cache, dlast);
}

pub(crate) struct DecoderOutput {
    /// Compressed five-channel magnitudes.
    pub output: Vec<f64>,
    stereo: Vec<f64>,
    stereo_features: Vec<f64>,
    cache: StackCache,
    logits: Tensor3,
}

/// Decoder forward pass on compressed stereo magnitudes and latent `h`.
pub(crate) fn decoder_forward(model: &ModelParams, stereo: &[f64], h: &[f64]) -> DecoderOutput {
    let plan = model.plan();
    let params = model.data();
    let (bins, frames) = (plan.bins, plan.frames);
    let hw = bins * frames;
    let mut t0 = plan.decoder_stereo.forward(&params, stereo, bins, frames);
    leaky_relu_inplace(&mut t0.data);
    let mut input = Tensor3::zeros(2 + plan.latent_dim, bins, frames);
    input.data[..2 * hw].copy_from_slice(&t0.data);
    for (j, &v) in h.iter().enumerate() {
        input.data[(2 + j) * hw..(3 + j) * hw].fill(v);
    }
    let cache = stack_forward(&plan.decoder, &params, input);
    let last = cache.buffers.last().expect("at least one block");
    let logits = plan.decoder_head.forward(&params, &last.data, bins, frames);
    let output = logits.data.iter().map(|&z| softplus(z)).collect();
    DecoderOutput { output, stereo: stereo.to_vec(), stereo_features: t0.data, cache, logits }
}

/// Accumulates parameter gradients and returns the gradient of `h`.
pub(crate) fn decoder_backward(
    model: &ModelParams,
    grads: &mut [Vec<f64>],
    out: &DecoderOutput,
    doutput: &[f64],
) -> Vec<f64> {
    let plan = model.plan();
    let params = model.data();
    let (bins, frames) = (plan.bins, plan.frames);
    let hw = bins * frames;
    let dlogits: Vec<f64> = doutput.iter().zip(&out.logits.data).map(|(&g, &z)| g * sigmoid(z)).collect();
    let last = out.cache.buffers.last().expect("at least one block");
    let dlast = plan.decoder_head.backward(&params, grads, &last.data, bins, frames, &dlogits, true).expect("requested");
    let dinput = stack_backward(&plan.decoder, &params, grads, &out.cache, dlast);
    let dh = (0..plan.latent_dim).map(|j| dinput[(2 + j) * hw..(3 + j) * hw].iter().sum()).collect();
    let mut dt0 = dinput[..2 * hw].to_vec();
    leaky_relu_backward(&out.stereo_features, &mut dt0);
    plan.decoder_stereo.backward(&params, grads, &out.stereo, bins, frames, &dt0, false);
    dh
}
