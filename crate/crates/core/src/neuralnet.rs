//! A small real-valued convolutional network written from scratch.
//!
//! Layers are stored in a flat [`Network`]; [`forward`] caches every
//! intermediate activation and [`backward`] walks the cache in reverse to
//! produce exact gradients of the fused softmax cross-entropy loss.
//!
//! Convolution is cross-correlation over the valid region (no kernel flip,
//! no padding). Pooling ties go to the lowest linear index.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::format::{format_checkpoint, parse_checkpoint, Section};
use crate::optim::{MomentumState, Optimizer};
use crate::{Error, Result};

/// Tolerance on `sum p = 1` for probability vectors.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// `channels x height x width` feature maps, width fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape("feature tensor dimensions must be at least 1"));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Shared-weight convolution: one kernel per `(out, in)` channel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    /// `out_ch x in_ch x kh x kw`, kw fastest.
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(
        out_ch: usize,
        in_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        kernels: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::param(format!("kernel sides must be odd, got {kh}x{kw}")));
        }
        if out_ch == 0 || in_ch == 0 || stride == 0 {
            return Err(Error::param("channels and stride must be at least 1"));
        }
        if kernels.len() != out_ch * in_ch * kh * kw || bias.len() != out_ch {
            return Err(Error::shape("conv parameter lengths do not match the layer shape"));
        }
        if let Some(index) = kernels.iter().chain(&bias).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            out_ch,
            in_ch,
            kh,
            kw,
            stride,
            kernels,
            bias,
        })
    }

    fn k(&self, o: usize, i: usize, y: usize, x: usize) -> usize {
        ((o * self.in_ch + i) * self.kh + y) * self.kw + x
    }

    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (c, h, w) = input;
        if c != self.in_ch {
            return Err(Error::shape(format!("conv expects {} channels, got {c}", self.in_ch)));
        }
        if h < self.kh || w < self.kw {
            return Err(Error::shape(format!(
                "{h}x{w} input is smaller than the {}x{} kernel",
                self.kh, self.kw
            )));
        }
        Ok((self.out_ch, (h - self.kh) / self.stride + 1, (w - self.kw) / self.stride + 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::shape("dense parameter lengths do not match the layer shape"));
        }
        if let Some(index) = weights.iter().chain(&bias).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax with max subtraction.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// `q_i = exp(z_i / T) / sum_j exp(z_j / T)`.
pub fn softmax_temperature(z: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::param(format!("temperature must be positive, got {temperature}")));
    }
    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
    Ok(softmax(&scaled))
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::param(format!("{name} is empty")));
    }
    if let Some(i) = p.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::domain(format!("{name}[{i}] = {} is not a probability", p[i])));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::domain(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p, "p")?;
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
}

/// `-sum p log q` in nats.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(-p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * qi.ln())
        .sum::<f64>())
}

/// `sum p log(p / q)`, i.e. cross entropy minus entropy.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum())
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    if let Some(i) = p.iter().zip(q).position(|(&pi, &qi)| pi > 0.0 && qi == 0.0) {
        return Err(Error::domain(format!("q[{i}] = 0 where p[{i}] > 0")));
    }
    Ok(())
}

/// Valid-region cross-correlation plus per-channel bias.
pub fn conv2d(input: &FeatureTensor, layer: &ConvLayer) -> Result<FeatureTensor> {
    let (oc, oh, ow) = layer.output_shape(input.shape())?;
    let s = layer.stride;
    let mut out = FeatureTensor::zeros(oc, oh, ow);
    for o in 0..oc {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = layer.bias[o];
                for i in 0..layer.in_ch {
                    for ky in 0..layer.kh {
                        for kx in 0..layer.kw {
                            acc += layer.kernels[layer.k(o, i, ky, kx)] * input.get(i, y * s + ky, x * s + kx);
                        }
                    }
                }
                let idx = out.index(o, y, x);
                out.data[idx] = acc;
            }
        }
    }
    Ok(out)
}

/// Per-window maximum. Returns the pooled tensor and, for every output
/// element, the linear index of the winning input element.
pub fn max_pool(input: &FeatureTensor, window: usize, stride: usize) -> Result<(FeatureTensor, Vec<usize>)> {
    let (c, h, w) = input.shape();
    if window == 0 || stride == 0 {
        return Err(Error::param("pool window and stride must be at least 1"));
    }
    if window > h || window > w {
        return Err(Error::shape(format!("pool window {window} exceeds the {h}x{w} input")));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = FeatureTensor::zeros(c, oh, ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = input.index(ch, y * stride, x * stride);
                for wy in 0..window {
                    for wx in 0..window {
                        let i = input.index(ch, y * stride + wy, x * stride + wx);
                        if input.data[i] > input.data[best] {
                            best = i;
                        }
                    }
                }
                let o = out.index(ch, y, x);
                out.data[o] = input.data[best];
                argmax.push(best);
            }
        }
    }
    Ok((out, argmax))
}

fn dense_forward(input: &[f64], layer: &DenseLayer) -> Result<Vec<f64>> {
    if input.len() != layer.inputs {
        return Err(Error::shape(format!(
            "dense layer expects {} inputs, got {}",
            layer.inputs,
            input.len()
        )));
    }
    Ok((0..layer.outputs)
        .map(|j| {
            let row = &layer.weights[j * layer.inputs..(j + 1) * layer.inputs];
            layer.bias[j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    Sigmoid,
    MaxPool { window: usize, stride: usize },
    /// Flattens its input before the affine map.
    Dense(DenseLayer),
}

impl Layer {
    fn param_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.kernels.len() + c.bias.len(),
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            _ => 0,
        }
    }
}

/// Layer stack applied to one input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: (usize, usize, usize),
    layers: Vec<Layer>,
}

impl Network {
    /// Checks that shapes chain through every layer.
    pub fn new(input_shape: (usize, usize, usize), layers: Vec<Layer>) -> Result<Self> {
        let net = Self { input_shape, layers };
        net.output_len()?;
        Ok(net)
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Number of logits.
    pub fn output_len(&self) -> Result<usize> {
        let mut shape = self.input_shape;
        for layer in &self.layers {
            shape = match layer {
                Layer::Conv(c) => c.output_shape(shape)?,
                Layer::Relu | Layer::Sigmoid => shape,
                Layer::MaxPool { window, stride } => {
                    let (c, h, w) = shape;
                    if *window == 0 || *stride == 0 || *window > h || *window > w {
                        return Err(Error::shape(format!("pool window {window} does not fit {h}x{w}")));
                    }
                    (c, (h - window) / stride + 1, (w - window) / stride + 1)
                }
                Layer::Dense(d) => {
                    let n = shape.0 * shape.1 * shape.2;
                    if n != d.inputs {
                        return Err(Error::shape(format!("dense layer expects {} inputs, got {n}", d.inputs)));
                    }
                    (d.outputs, 1, 1)
                }
            };
        }
        Ok(shape.0 * shape.1 * shape.2)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All parameters in layer order (kernels or weights, then bias).
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.extend_from_slice(&c.kernels);
                    out.extend_from_slice(&c.bias);
                }
                Layer::Dense(d) => {
                    out.extend_from_slice(&d.weights);
                    out.extend_from_slice(&d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    take(&mut c.kernels);
                    take(&mut c.bias);
                }
                Layer::Dense(d) => {
                    take(&mut d.weights);
                    take(&mut d.bias);
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> String {
        let (c, h, w) = self.input_shape;
        let mut sections = vec![Section::new("input", vec![0], vec![]).with_attr("dims", format!("{c},{h},{w}"))];
        for layer in &self.layers {
            sections.push(match layer {
                Layer::Conv(l) => {
                    let mut values = l.kernels.clone();
                    values.extend_from_slice(&l.bias);
                    Section::new("conv", vec![l.out_ch, l.in_ch, l.kh, l.kw], values)
                        .with_attr("bias", l.out_ch)
                        .with_attr("stride", l.stride)
                }
                Layer::Dense(l) => {
                    let mut values = l.weights.clone();
                    values.extend_from_slice(&l.bias);
                    Section::new("dense", vec![l.outputs, l.inputs], values).with_attr("bias", l.outputs)
                }
                Layer::Relu => Section::new("relu", vec![0], vec![]),
                Layer::Sigmoid => Section::new("sigmoid", vec![0], vec![]),
                Layer::MaxPool { window, stride } => Section::new("maxpool", vec![0], vec![])
                    .with_attr("window", window)
                    .with_attr("stride", stride),
            });
        }
        format_checkpoint(&sections)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let sections = parse_checkpoint(text)?;
        let bad = |msg: String| Error::Parse { line: 0, msg };
        let attr = |s: &Section, key: &str| -> Result<usize> {
            s.attr(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("{} section lacks a numeric {key}=", s.kind)))
        };
        let (first, rest) = sections.split_first().ok_or_else(|| bad("no sections".into()))?;
        let dims: Vec<usize> = first
            .attr("dims")
            .filter(|_| first.kind == "input")
            .ok_or_else(|| bad("first section must be the input".into()))?
            .split(',')
            .map(|d| d.parse().map_err(|_| bad("bad input dims".into())))
            .collect::<Result<_>>()?;
        let [c, h, w] = dims[..] else {
            return Err(bad("input dims must have three entries".into()));
        };
        let mut layers = Vec::new();
        for s in rest {
            layers.push(match s.kind.as_str() {
                "conv" => {
                    let [o, i, kh, kw] = s.shape[..] else {
                        return Err(bad("conv shape must have four entries".into()));
                    };
                    let split = o * i * kh * kw;
                    Layer::Conv(ConvLayer::new(
                        o,
                        i,
                        kh,
                        kw,
                        attr(s, "stride")?,
                        s.values[..split].to_vec(),
                        s.values[split..].to_vec(),
                    )?)
                }
                "dense" => {
                    let [o, i] = s.shape[..] else {
                        return Err(bad("dense shape must have two entries".into()));
                    };
                    Layer::Dense(DenseLayer::new(i, o, s.values[..o * i].to_vec(), s.values[o * i..].to_vec())?)
                }
                "relu" => Layer::Relu,
                "sigmoid" => Layer::Sigmoid,
                "maxpool" => Layer::MaxPool {
                    window: attr(s, "window")?,
                    stride: attr(s, "stride")?,
                },
                other => return Err(bad(format!("unknown layer type {other}"))),
            });
        }
        Self::new((c, h, w), layers)
    }

    /// Index of the largest logit.
    pub fn predict(&self, input: &FeatureTensor) -> Result<usize> {
        let (logits, _) = forward(self, input)?;
        Ok(argmax(&logits))
    }
}

pub fn argmax(z: &[f64]) -> usize {
    z.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Builds a network with seeded Glorot-uniform initialisation and zero biases.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    input_shape: (usize, usize, usize),
    shape: (usize, usize, usize),
    plan: Vec<Plan>,
}

#[derive(Debug, Clone)]
enum Plan {
    Conv { out_ch: usize, kernel: usize, stride: usize },
    Relu,
    Sigmoid,
    MaxPool { window: usize, stride: usize },
    Dense { outputs: usize },
}

impl NetworkBuilder {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            input_shape: (channels, height, width),
            shape: (channels, height, width),
            plan: Vec::new(),
        }
    }

    pub fn conv(mut self, out_ch: usize, kernel: usize, stride: usize) -> Self {
        self.plan.push(Plan::Conv { out_ch, kernel, stride });
        self
    }

    pub fn relu(mut self) -> Self {
        self.plan.push(Plan::Relu);
        self
    }

    pub fn sigmoid(mut self) -> Self {
        self.plan.push(Plan::Sigmoid);
        self
    }

    pub fn max_pool(mut self, window: usize, stride: usize) -> Self {
        self.plan.push(Plan::MaxPool { window, stride });
        self
    }

    pub fn dense(mut self, outputs: usize) -> Self {
        self.plan.push(Plan::Dense { outputs });
        self
    }

    pub fn build(mut self, seed: u64) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize, fan_out: usize| -> Vec<f64> {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-s..=s)).collect()
        };
        let mut layers = Vec::new();
        for step in std::mem::take(&mut self.plan) {
            let (c, h, w) = self.shape;
            let layer = match step {
                Plan::Conv { out_ch, kernel, stride } => {
                    let n = out_ch * c * kernel * kernel;
                    let kernels = uniform(n, c * kernel * kernel, out_ch * kernel * kernel);
                    let l = ConvLayer::new(out_ch, c, kernel, kernel, stride, kernels, vec![0.0; out_ch])?;
                    self.shape = l.output_shape(self.shape)?;
                    Layer::Conv(l)
                }
                Plan::Relu => Layer::Relu,
                Plan::Sigmoid => Layer::Sigmoid,
                Plan::MaxPool { window, stride } => {
                    if window == 0 || stride == 0 || window > h || window > w {
                        return Err(Error::shape(format!("pool window {window} does not fit {h}x{w}")));
                    }
                    self.shape = (c, (h - window) / stride + 1, (w - window) / stride + 1);
                    Layer::MaxPool { window, stride }
                }
                Plan::Dense { outputs } => {
                    let inputs = c * h * w;
                    let weights = uniform(inputs * outputs, inputs, outputs);
                    self.shape = (outputs, 1, 1);
                    Layer::Dense(DenseLayer::new(inputs, outputs, weights, vec![0.0; outputs])?)
                }
            };
            layers.push(layer);
        }
        Network::new(self.input_shape, layers)
    }
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; the last entry is the logits tensor.
    activations: Vec<FeatureTensor>,
    /// Argmax routing for each pooling layer, indexed like `activations`.
    pool_routes: Vec<Option<Vec<usize>>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().map(|t| t.data()).unwrap_or_default()
    }

    /// Which piece of the piecewise-smooth network this pass landed on: the
    /// sign of every ReLU input and the routing of every pooling window. Two
    /// passes with equal patterns are related by a smooth function.
    pub fn activation_pattern(&self, net: &Network) -> Vec<usize> {
        let mut pattern = Vec::new();
        for (i, layer) in net.layers.iter().enumerate() {
            match layer {
                Layer::Relu => pattern.extend(self.activations[i].data().iter().map(|&x| (x > 0.0) as usize)),
                Layer::MaxPool { .. } => pattern.extend(self.pool_routes[i].iter().flatten().copied()),
                _ => {}
            }
        }
        pattern
    }
}

pub fn forward(net: &Network, input: &FeatureTensor) -> Result<(Vec<f64>, ForwardCache)> {
    if input.shape() != net.input_shape {
        return Err(Error::shape(format!(
            "network expects input {:?}, got {:?}",
            net.input_shape,
            input.shape()
        )));
    }
    let mut activations = vec![input.clone()];
    let mut pool_routes = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let x = activations.last().expect("input is always present");
        let (next, route) = match layer {
            Layer::Conv(c) => (conv2d(x, c)?, None),
            Layer::Relu => (x.map(relu), None),
            Layer::Sigmoid => (x.map(sigmoid), None),
            Layer::MaxPool { window, stride } => {
                let (y, arg) = max_pool(x, *window, *stride)?;
                (y, Some(arg))
            }
            Layer::Dense(d) => {
                let out = dense_forward(x.data(), d)?;
                (FeatureTensor::new(d.outputs, 1, 1, out)?, None)
            }
        };
        activations.push(next);
        pool_routes.push(route);
    }
    let logits = activations.last().expect("non-empty").data().to_vec();
    Ok((logits, ForwardCache { activations, pool_routes }))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Distribution(Vec<f64>),
}

impl Target {
    fn distribution(&self, classes: usize) -> Result<Vec<f64>> {
        match self {
            Target::Class(c) if *c < classes => {
                let mut p = vec![0.0; classes];
                p[*c] = 1.0;
                Ok(p)
            }
            Target::Class(c) => Err(Error::shape(format!("class {c} out of range for {classes} logits"))),
            Target::Distribution(p) if p.len() == classes => {
                check_distribution(p, "target")?;
                Ok(p.clone())
            }
            Target::Distribution(p) => Err(Error::shape(format!(
                "target has {} entries for {classes} logits",
                p.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Cross entropy in nats.
    pub loss: f64,
    pub probabilities: Vec<f64>,
    /// `q - p` at the logits.
    pub grad_logits: Vec<f64>,
}

/// Fused softmax and cross entropy.
pub fn softmax_cross_entropy(logits: &[f64], target: &Target) -> Result<LossReport> {
    let p = target.distribution(logits.len())?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss = -p
        .iter()
        .zip(logits)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(pi, z)| pi * (z - log_norm))
        .sum::<f64>();
    let q = softmax(logits);
    let grad_logits = q.iter().zip(&p).map(|(qi, pi)| qi - pi).collect();
    Ok(LossReport {
        loss,
        probabilities: q,
        grad_logits,
    })
}

/// Gradient of the loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    None,
    Conv { kernels: Vec<f64>, bias: Vec<f64> },
    Dense { weights: Vec<f64>, bias: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    /// Same ordering as [`Network::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Conv { kernels, bias } => {
                    out.extend_from_slice(kernels);
                    out.extend_from_slice(bias);
                }
                LayerGrad::Dense { weights, bias } => {
                    out.extend_from_slice(weights);
                    out.extend_from_slice(bias);
                }
                LayerGrad::None => {}
            }
        }
        out
    }
}

/// Backpropagates the softmax cross-entropy loss through the cached pass.
pub fn backward(net: &Network, cache: &ForwardCache, target: &Target) -> Result<(LossReport, Gradients)> {
    if cache.activations.len() != net.layers.len() + 1 {
        return Err(Error::shape("cache does not belong to this network"));
    }
    let report = softmax_cross_entropy(cache.logits(), target)?;
    let mut delta = report.grad_logits.clone();
    let mut grads = vec![LayerGrad::None; net.layers.len()];

    for (li, layer) in net.layers.iter().enumerate().rev() {
        let input = &cache.activations[li];
        let output = &cache.activations[li + 1];
        delta = match layer {
            Layer::Relu => input
                .data()
                .iter()
                .zip(&delta)
                .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
                .collect(),
            Layer::Sigmoid => output.data().iter().zip(&delta).map(|(&s, &d)| d * s * (1.0 - s)).collect(),
            Layer::MaxPool { .. } => {
                let route = cache.pool_routes[li].as_ref().expect("pool layers cache their routes");
                let mut back = vec![0.0; input.data().len()];
                for (&src, &d) in route.iter().zip(&delta) {
                    back[src] += d;
                }
                back
            }
            Layer::Dense(d) => {
                let x = input.data();
                let mut weights = vec![0.0; d.weights.len()];
                let mut back = vec![0.0; d.inputs];
                for j in 0..d.outputs {
                    let row = j * d.inputs;
                    for i in 0..d.inputs {
                        weights[row + i] = delta[j] * x[i];
                        back[i] += d.weights[row + i] * delta[j];
                    }
                }
                grads[li] = LayerGrad::Dense {
                    weights,
                    bias: delta.clone(),
                };
                back
            }
            Layer::Conv(c) => {
                let (_, oh, ow) = output.shape();
                let s = c.stride;
                let mut kernels = vec![0.0; c.kernels.len()];
                let mut bias = vec![0.0; c.out_ch];
                let mut back = vec![0.0; input.data().len()];
                for o in 0..c.out_ch {
                    for y in 0..oh {
                        for x in 0..ow {
                            let d = delta[output.index(o, y, x)];
                            bias[o] += d;
                            for i in 0..c.in_ch {
                                for ky in 0..c.kh {
                                    for kx in 0..c.kw {
                                        let src = input.index(i, y * s + ky, x * s + kx);
                                        let k = c.k(o, i, ky, kx);
                                        kernels[k] += d * input.data()[src];
                                        back[src] += d * c.kernels[k];
                                    }
                                }
                            }
                        }
                    }
                }
                grads[li] = LayerGrad::Conv { kernels, bias };
                back
            }
        };
    }
    Ok((report, Gradients { layers: grads }))
}

/// Loss and flat parameter gradient for one example.
pub fn loss_and_gradient(net: &Network, input: &FeatureTensor, target: &Target) -> Result<(f64, Vec<f64>)> {
    let (_, cache) = forward(net, input)?;
    let (report, grads) = backward(net, &cache, target)?;
    Ok((report.loss, grads.flatten()))
}

/// Denominator floor for gradient-check relative errors. Parameters whose
/// true gradient is essentially zero (dead ReLU paths, unused pooling
/// inputs) would otherwise be judged on finite-difference round-off alone.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-8;

/// Analytic gradient next to its central finite-difference estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Parameters whose `±step` stencil changed the activation pattern
    /// (crossed a ReLU or pooling kink); the difference quotient there does
    /// not estimate the derivative.
    pub kinked: Vec<bool>,
}

impl GradientCheck {
    /// `|a - n| / max(|a|, |n|, GRADIENT_CHECK_FLOOR)` for one parameter.
    pub fn relative_error(&self, i: usize) -> f64 {
        let (a, n) = (self.analytic[i], self.numeric[i]);
        (a - n).abs() / a.abs().max(n.abs()).max(GRADIENT_CHECK_FLOOR)
    }

    /// Largest relative error and the parameter where it occurs.
    pub fn worst(&self) -> (usize, f64) {
        (0..self.analytic.len())
            .map(|i| (i, self.relative_error(i)))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    pub fn kink_count(&self) -> usize {
        self.kinked.iter().filter(|&&k| k).count()
    }
}

/// Compares [`backward`] against `(L(θ + h e_i) - L(θ - h e_i)) / 2h` for
/// every parameter.
pub fn gradient_check(net: &Network, input: &FeatureTensor, target: &Target, step: f64) -> Result<GradientCheck> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param(format!("finite-difference step must be positive, got {step}")));
    }
    let (_, cache) = forward(net, input)?;
    let base_pattern = cache.activation_pattern(net);
    let (_, grads) = backward(net, &cache, target)?;
    let analytic = grads.flatten();
    let theta = net.parameters();
    let mut probe = net.clone();
    let mut shifted = theta.clone();
    let mut loss_at = |i: usize, v: f64| -> Result<(f64, bool)> {
        shifted[i] = v;
        probe.set_parameters(&shifted)?;
        let (logits, cache) = forward(&probe, input)?;
        shifted[i] = theta[i];
        let same_piece = cache.activation_pattern(&probe) == base_pattern;
        Ok((softmax_cross_entropy(&logits, target)?.loss, same_piece))
    };
    let mut numeric = Vec::with_capacity(theta.len());
    let mut kinked = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let (plus, smooth_plus) = loss_at(i, theta[i] + step)?;
        let (minus, smooth_minus) = loss_at(i, theta[i] - step)?;
        numeric.push((plus - minus) / (2.0 * step));
        kinked.push(!(smooth_plus && smooth_minus));
    }
    Ok(GradientCheck { analytic, numeric, kinked })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Momentum coefficient; 0 gives plain minibatch gradient descent.
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Accuracy on the evaluation set (or the training set if none given).
    pub accuracy: f64,
}

pub fn accuracy(net: &Network, inputs: &[FeatureTensor], labels: &[usize]) -> Result<f64> {
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::shape("inputs and labels must be non-empty and equally long"));
    }
    let mut correct = 0;
    for (x, &y) in inputs.iter().zip(labels) {
        if net.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / inputs.len() as f64)
}

/// Supervised minibatch training from the network's current parameters.
///
/// Examples are shuffled each epoch with a generator seeded from
/// `cfg.seed`. There is no pre-training stage: every layer is updated from
/// the first batch.
pub fn train(
    net: &mut Network,
    inputs: &[FeatureTensor],
    labels: &[usize],
    cfg: &TrainConfig,
    eval: Option<(&[FeatureTensor], &[usize])>,
) -> Result<Vec<EpochMetrics>> {
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::shape("inputs and labels must be non-empty and equally long"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    let mut params = net.parameters();
    let mut optimizer = if cfg.momentum == 0.0 {
        Optimizer::Sgd { lr: cfg.lr }
    } else {
        Optimizer::Momentum(MomentumState::new(params.len(), cfg.momentum, cfg.lr)?)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; params.len()];
            for &i in batch {
                let (loss, g) = loss_and_gradient(net, &inputs[i], &Target::Class(labels[i]))?;
                total_loss += loss;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            optimizer.step(&mut params, &grad)?;
            net.set_parameters(&params)?;
        }
        let acc = match eval {
            Some((x, y)) => accuracy(net, x, y)?,
            None => accuracy(net, inputs, labels)?,
        };
        history.push(EpochMetrics {
            epoch,
            loss: total_loss / inputs.len() as f64,
            accuracy: acc,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tensor(c: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> FeatureTensor {
        FeatureTensor::new(c, h, w, (0..c * h * w).map(f).collect()).unwrap()
    }

    #[test]
    fn delta_kernel_reproduces_interior() {
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let layer = ConvLayer::new(1, 1, 3, 3, 1, k, vec![0.0]).unwrap();
        let x = tensor(1, 5, 6, |i| (i as f64 * 0.37).sin());
        let y = conv2d(&x, &layer).unwrap();
        assert_eq!(y.shape(), (1, 3, 4));
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(y.get(0, r, c), x.get(0, r + 1, c + 1));
            }
        }
    }

    #[test]
    fn one_by_one_conv() {
        let layer = ConvLayer::new(1, 1, 1, 1, 1, vec![2.5], vec![-1.0]).unwrap();
        let y = conv2d(&tensor(1, 1, 1, |_| 3.0), &layer).unwrap();
        assert_eq!(y.data(), &[6.5]);
    }

    #[test]
    fn two_tap_kernel_doubles_constant() {
        // K(0) = K(1) = 1 embedded in a 1x3 window
        let layer = ConvLayer::new(1, 1, 1, 3, 1, vec![0.0, 1.0, 1.0], vec![0.0]).unwrap();
        let y = conv2d(&tensor(1, 3, 7, |_| 1.25), &layer).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn conv_output_dims_with_stride() {
        let layer = ConvLayer::new(2, 1, 3, 3, 2, vec![0.1; 18], vec![0.0; 2]).unwrap();
        let y = conv2d(&tensor(1, 8, 9, |_| 1.0), &layer).unwrap();
        assert_eq!(y.shape(), (2, 3, 4));
    }

    #[test]
    fn conv_rejects_mismatches() {
        let layer = ConvLayer::new(1, 2, 3, 3, 1, vec![0.0; 18], vec![0.0]).unwrap();
        assert!(conv2d(&tensor(1, 5, 5, |_| 0.0), &layer).is_err());
        assert!(conv2d(&tensor(2, 2, 5, |_| 0.0), &layer).is_err());
        assert!(ConvLayer::new(1, 1, 2, 3, 1, vec![0.0; 6], vec![0.0]).is_err());
    }

    #[test]
    fn pool_shapes_and_constants() {
        let x = tensor(1, 4, 4, |i| i as f64);
        let (y, arg) = max_pool(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), (1, 2, 2));
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
        assert_eq!(arg, vec![5, 7, 13, 15]);
        let (c, _) = max_pool(&tensor(2, 4, 4, |_| -0.5), 2, 2).unwrap();
        assert!(c.data().iter().all(|&v| v == -0.5));
        assert!(max_pool(&x, 5, 1).is_err());
    }

    #[test]
    fn pool_ties_pick_lowest_index() {
        let x = tensor(1, 2, 2, |_| 1.0);
        let (_, arg) = max_pool(&x, 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn activations() {
        assert_eq!(relu(-3.2), 0.0);
        assert_eq!(relu(3.2), 3.2);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(softmax(&[0.7, 0.7, 0.7]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn temperature_softmax_examples() {
        let z = [0.3, -1.2, 2.0, 0.0];
        assert_eq!(softmax_temperature(&z, 1.0).unwrap(), softmax(&z));
        let q = softmax_temperature(&[1.0, 0.0], 1.0).unwrap();
        assert!((q[0] - 0.731059).abs() < 1e-6 && (q[1] - 0.268941).abs() < 1e-6);
        let q = softmax_temperature(&[1.0, -1.0, 0.5], 1e6).unwrap();
        assert!(q.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-5));
        assert!(softmax_temperature(&z, 0.0).is_err());
        assert!(softmax_temperature(&z, -2.0).is_err());
    }

    #[test]
    fn entropy_family_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((entropy(&[0.5, 0.5]).unwrap() - 0.693147).abs() < 1e-6);
        assert!((cross_entropy(&[0.25; 4], &[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        let ce = cross_entropy(&[0.0, 0.0, 1.0], &[0.0010, 0.0001, 0.9989]).unwrap();
        assert!((ce - 0.001101).abs() < 1e-6);
        assert!((cross_entropy(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(kl_divergence(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn entropy_family_errors() {
        assert!(entropy(&[-0.1, 1.1]).is_err());
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(matches!(cross_entropy(&[0.5, 0.5], &[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).is_err());
        assert!(cross_entropy(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn dense_logit_gradient_is_q_minus_p() {
        let layer = DenseLayer::new(2, 3, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5], vec![0.1, 0.2, 0.3]).unwrap();
        let net = Network::new((2, 1, 1), vec![Layer::Dense(layer)]).unwrap();
        let x = tensor(2, 1, 1, |i| [0.4, -0.9][i]);
        let (logits, cache) = forward(&net, &x).unwrap();
        let (report, grads) = backward(&net, &cache, &Target::Class(1)).unwrap();
        let q = softmax(&logits);
        let want: Vec<f64> = q.iter().enumerate().map(|(i, v)| v - if i == 1 { 1.0 } else { 0.0 }).collect();
        assert_eq!(report.grad_logits, want);
        let LayerGrad::Dense { bias, .. } = &grads.layers[0] else {
            panic!("dense layer should have dense gradients")
        };
        assert_eq!(bias, &want);
    }

    #[test]
    fn zero_network_only_final_bias_has_gradient() {
        let mut net = NetworkBuilder::new(1, 8, 8)
            .conv(2, 3, 1)
            .relu()
            .conv(2, 3, 1)
            .relu()
            .max_pool(2, 2)
            .dense(3)
            .build(1)
            .unwrap();
        let zeros = vec![0.0; net.param_count()];
        net.set_parameters(&zeros).unwrap();
        let (_, g) = loss_and_gradient(&net, &FeatureTensor::zeros(1, 8, 8), &Target::Class(0)).unwrap();
        let n = g.len();
        assert!(g[..n - 3].iter().all(|&v| v == 0.0));
        assert!(g[n - 3..].iter().all(|&v| v != 0.0));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let net = NetworkBuilder::new(1, 6, 6)
            .conv(2, 3, 1)
            .sigmoid()
            .max_pool(2, 2)
            .dense(2)
            .build(9)
            .unwrap();
        let text = net.to_checkpoint();
        assert!(text.starts_with("scatternet-checkpoint v1\n[layer 0] type=input"));
        assert!(text.contains("[layer 1] type=conv shape=2,1,3,3 bias=2 stride=1"));
        assert_eq!(Network::from_checkpoint(&text).unwrap(), net);
    }

    #[test]
    fn builder_is_seeded() {
        let a = NetworkBuilder::new(1, 6, 6).conv(2, 3, 1).dense(2).build(4).unwrap();
        let b = NetworkBuilder::new(1, 6, 6).conv(2, 3, 1).dense(2).build(4).unwrap();
        let c = NetworkBuilder::new(1, 6, 6).conv(2, 3, 1).dense(2).build(5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s = (6.0f64 / (9.0 + 18.0)).sqrt();
        let Layer::Conv(conv) = &a.layers()[0] else { unreachable!() };
        assert!(conv.kernels.iter().all(|k| k.abs() <= s));
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(z in prop::collection::vec(-20.0f64..20.0, 1..8), shift in -50.0f64..50.0, t in 0.05f64..20.0) {
            let q = softmax_temperature(&z, t).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let qs = softmax_temperature(&shifted, t).unwrap();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in q.iter().zip(&qs) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn conv_translation_covariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let layer = ConvLayer::new(1, 1, 3, 3, 1, k, vec![0.3]).unwrap();
            let base: Vec<f64> = (0..8 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = FeatureTensor::new(1, 8, 9, base.clone()).unwrap();
            // shift one pixel right: column c of the shifted image is column c-1 of x
            let shifted: Vec<f64> = (0..8 * 9).map(|i| if i % 9 == 0 { 0.0 } else { base[i - 1] }).collect();
            let xs = FeatureTensor::new(1, 8, 9, shifted).unwrap();
            let y = conv2d(&x, &layer).unwrap();
            let ys = conv2d(&xs, &layer).unwrap();
            for r in 0..6 {
                for c in 1..7 {
                    prop_assert_eq!(ys.get(0, r, c).to_bits(), y.get(0, r, c - 1).to_bits());
                }
            }
        }
    }
}
