//! Sequential networks: construction, forward pass with activation caching,
//! and exact reverse-mode gradients.

use rand::Rng;

use super::activation::Activation;
use super::gemm::gemm;
use super::grads::GradientSet;
use super::layer::{BatchNorm, Conv2d, Dense, Layer, BN_EPS, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm layers normalise with batch statistics.
    Train,
    /// Batch-norm layers use their running statistics.
    Eval,
}

/// Per-channel values a batch-norm layer used during one forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    /// Batch mean (train) or running mean (eval).
    pub mean: Vec<f64>,
    /// Biased batch variance (train) or running variance (eval).
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub x_hat: Tensor,
    /// Elements per channel that contributed to the statistics.
    pub count: usize,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub mode: Mode,
    revision: u64,
    pub input: Tensor,
    /// `outputs[i]` is the output of layer `i`.
    pub outputs: Vec<Tensor>,
    pub batch_norm: Vec<Option<BnCache>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Input seen by layer `i`.
    pub fn layer_input(&self, i: usize) -> &Tensor {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }
}

/// Where the activations of one prunable layer's units can be read in a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitProbe {
    pub layer: usize,
    /// Trace index holding the pre-activation values.
    pub pre_activation: usize,
    /// Trace index holding the post-activation values.
    pub post_activation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    revision: u64,
}

impl Network {
    /// Assembles a network from explicit layers, checking that shapes compose.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let net = Self {
            input_shape,
            layers,
            revision: 0,
        };
        net.output_shapes()?;
        for (i, l) in net.layers.iter().enumerate() {
            for p in l.params() {
                p.ensure_finite(&format!("layer {i} parameter"))?;
            }
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn replace_layers(&mut self, layers: Vec<Layer>) -> Result<()> {
        let old = std::mem::replace(&mut self.layers, layers);
        if let Err(e) = self.output_shapes() {
            self.layers = old;
            return Err(e);
        }
        self.revision += 1;
        Ok(())
    }

    /// Bumped on every structural change; traces from an older revision are stale.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub(crate) fn set_revision(&mut self, revision: u64) {
        self.revision = revision;
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Per-example output shape of every layer.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                Layer::Dense(d) => {
                    let features: usize = shape.iter().product();
                    if features != d.inputs() {
                        return Err(Error::Shape(format!(
                            "layer {i}: dense expects {} inputs, previous layer gives {shape:?}",
                            d.inputs()
                        )));
                    }
                    vec![d.outputs()]
                }
                Layer::Conv2d(c) => {
                    if shape.len() != 3 || shape[0] != c.in_channels() {
                        return Err(Error::Shape(format!(
                            "layer {i}: conv expects ({}, H, W), previous layer gives {shape:?}",
                            c.in_channels()
                        )));
                    }
                    let (oh, ow) = c.output_hw(shape[1], shape[2]).ok_or_else(|| {
                        Error::Shape(format!("layer {i}: kernel larger than padded input {shape:?}"))
                    })?;
                    vec![c.out_channels(), oh, ow]
                }
                Layer::BatchNorm(b) => {
                    if (shape.len() != 1 && shape.len() != 3) || shape[0] != b.channels() {
                        return Err(Error::Shape(format!(
                            "layer {i}: batch norm over {} channels, input {shape:?}",
                            b.channels()
                        )));
                    }
                    shape
                }
                Layer::Activation(_) => shape,
            };
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.output_shapes()
            .ok()
            .and_then(|s| s.last().cloned())
            .unwrap_or_else(|| self.input_shape.clone())
    }

    pub fn parametric_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_parametric())
            .collect()
    }

    /// Dense/conv layers whose units can be removed: every parametric layer
    /// except the last, which produces the network output.
    pub fn prunable_layers(&self) -> Vec<usize> {
        let mut p = self.parametric_layers();
        p.pop();
        p
    }

    pub fn next_parametric(&self, layer: usize) -> Option<usize> {
        (layer + 1..self.layers.len()).find(|&i| self.layers[i].is_parametric())
    }

    /// Number of units (dense outputs or conv output channels) of a parametric layer.
    pub fn units(&self, layer: usize) -> usize {
        match &self.layers[layer] {
            Layer::Dense(d) => d.outputs(),
            Layer::Conv2d(c) => c.out_channels(),
            _ => 0,
        }
    }

    /// `(layer index, width)` for every prunable layer.
    pub fn neuron_units(&self) -> Vec<(usize, usize)> {
        self.prunable_layers()
            .into_iter()
            .map(|l| (l, self.units(l)))
            .collect()
    }

    pub fn unit_probe(&self, layer: usize) -> Option<UnitProbe> {
        let next = self.next_parametric(layer)?;
        let post = next - 1;
        let pre = match self.layers[post] {
            Layer::Activation(_) if post > layer => post - 1,
            _ => post,
        };
        Some(UnitProbe {
            layer,
            pre_activation: pre,
            post_activation: post,
        })
    }

    /// Multiply-accumulate count of one forward pass for a single example.
    pub fn mac_count(&self) -> u64 {
        let Ok(shapes) = self.output_shapes() else {
            return 0;
        };
        self.layers
            .iter()
            .zip(&shapes)
            .map(|(l, out)| match l {
                Layer::Dense(d) => (d.inputs() * d.outputs()) as u64,
                Layer::Conv2d(c) => {
                    let (kh, kw) = c.kernel();
                    let per_pos = c.in_channels() * kh * kw;
                    (out.iter().product::<usize>() * per_pos) as u64
                }
                _ => 0,
            })
            .sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.ndim() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "batch shape {:?} does not match network input {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Runs the network on `batch` (leading dimension = examples).
    ///
    /// The network is not modified; in train mode call
    /// [`Network::update_running_stats`] with the returned trace to advance the
    /// batch-norm running statistics.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<(Tensor, ForwardTrace)> {
        self.check_batch(batch)?;
        let n = batch.rows();
        if n == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        if mode == Mode::Train && n < 2 {
            return Err(Error::Precondition(
                "train mode needs at least 2 examples per batch".into(),
            ));
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut bn = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { batch } else { &outputs[i - 1] };
            let (y, cache) = match layer {
                Layer::Dense(d) => (dense_forward(d, x), None),
                Layer::Conv2d(c) => (conv_forward(c, x), None),
                Layer::BatchNorm(b) => {
                    let (y, cache) = bn_forward(b, x, mode);
                    (y, Some(cache))
                }
                Layer::Activation(a) => {
                    let mut y = x.clone();
                    y.data_mut().iter_mut().for_each(|v| *v = a.apply(*v));
                    (y, None)
                }
            };
            outputs.push(y);
            bn.push(cache);
        }
        let output = outputs
            .last()
            .cloned()
            .unwrap_or_else(|| batch.clone());
        Ok((
            output,
            ForwardTrace {
                mode,
                revision: self.revision,
                input: batch.clone(),
                outputs,
                batch_norm: bn,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode trace into the running
    /// statistics: `running = 0.9 * running + 0.1 * batch` (unbiased variance).
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) -> Result<()> {
        if trace.mode != Mode::Train || trace.revision != self.revision {
            return Err(Error::Precondition(
                "running statistics need a current train-mode trace".into(),
            ));
        }
        for (layer, cache) in self.layers.iter_mut().zip(&trace.batch_norm) {
            if let (Layer::BatchNorm(b), Some(c)) = (layer, cache) {
                let correction = if c.count > 1 {
                    c.count as f64 / (c.count - 1) as f64
                } else {
                    1.0
                };
                for ch in 0..b.channels() {
                    let rm = &mut b.running_mean.data_mut()[ch];
                    *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * c.mean[ch];
                    let rv = &mut b.running_var.data_mut()[ch];
                    *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * c.var[ch] * correction;
                }
            }
        }
        Ok(())
    }

    /// Reverse-mode gradients of a scalar loss given `d loss / d output`.
    pub fn backward(&self, trace: &ForwardTrace, loss_grad: &Tensor) -> Result<GradientSet> {
        if trace.revision != self.revision || trace.outputs.len() != self.layers.len() {
            return Err(Error::Precondition(
                "trace was produced by a different network structure".into(),
            ));
        }
        let out_shape = trace
            .outputs
            .last()
            .map(|t| t.shape().to_vec())
            .unwrap_or_else(|| trace.input.shape().to_vec());
        if loss_grad.shape() != out_shape.as_slice() {
            return Err(Error::Shape(format!(
                "loss gradient {:?} does not match output {:?}",
                loss_grad.shape(),
                out_shape
            )));
        }
        let mut grads = GradientSet::zeros_like(self);
        let mut upstream = loss_grad.clone();
        for i in (0..self.layers.len()).rev() {
            let x = trace.layer_input(i);
            let need_input_grad = i > 0;
            upstream = match &self.layers[i] {
                Layer::Dense(d) => {
                    dense_backward(d, x, &upstream, &mut grads.layers[i], need_input_grad)
                }
                Layer::Conv2d(c) => {
                    conv_backward(c, x, &upstream, &mut grads.layers[i], need_input_grad)
                }
                Layer::BatchNorm(b) => {
                    let cache = trace.batch_norm[i]
                        .as_ref()
                        .ok_or_else(|| Error::Precondition("missing batch-norm cache".into()))?;
                    bn_backward(b, cache, trace.mode, &upstream, &mut grads.layers[i])
                }
                Layer::Activation(a) => {
                    let mut g = upstream;
                    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
                        *gv *= a.derivative(*xv);
                    }
                    g
                }
            };
        }
        Ok(grads)
    }
}

fn dense_forward(d: &Dense, x: &Tensor) -> Tensor {
    let n = x.rows();
    let (inp, out) = (d.inputs(), d.outputs());
    let mut y = vec![0.0; n * out];
    gemm(n, inp, out, x.data(), false, d.weight.data(), true, 0.0, &mut y);
    for row in y.chunks_exact_mut(out) {
        row.iter_mut().zip(d.bias.data()).for_each(|(v, b)| *v += b);
    }
    Tensor::new(vec![n, out], y).expect("dense output shape")
}

fn dense_backward(
    d: &Dense,
    x: &Tensor,
    dy: &Tensor,
    grads: &mut [Tensor],
    need_input_grad: bool,
) -> Tensor {
    let n = x.rows();
    let (inp, out) = (d.inputs(), d.outputs());
    gemm(out, n, inp, dy.data(), true, x.data(), false, 0.0, grads[0].data_mut());
    let db = grads[1].data_mut();
    for row in dy.data().chunks_exact(out) {
        db.iter_mut().zip(row).for_each(|(b, g)| *b += g);
    }
    if !need_input_grad {
        return Tensor::zeros(&[0]);
    }
    let mut dx = vec![0.0; n * inp];
    gemm(n, out, inp, dy.data(), false, d.weight.data(), false, 0.0, &mut dx);
    Tensor::new(x.shape().to_vec(), dx).expect("dense input grad shape")
}

struct ConvGeometry {
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn new(c: &Conv2d, x: &Tensor) -> Self {
        let s = x.shape();
        let (kh, kw) = c.kernel();
        let (oh, ow) = c.output_hw(s[2], s[3]).expect("validated conv geometry");
        Self {
            in_c: s[1],
            h: s[2],
            w: s[3],
            kh,
            kw,
            oh,
            ow,
            stride: c.stride,
            padding: c.padding,
        }
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Input coordinate read by kernel offset `k` at output position `o`.
    #[inline]
    fn source(&self, k: usize, o: usize) -> Option<usize> {
        let (ch, rem) = (k / (self.kh * self.kw), k % (self.kh * self.kw));
        let (ki, kj) = (rem / self.kw, rem % self.kw);
        let (oy, ox) = (o / self.ow, o % self.ow);
        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
        let ix = (ox * self.stride + kj) as isize - self.padding as isize;
        if iy < 0 || ix < 0 || iy as usize >= self.h || ix as usize >= self.w {
            return None;
        }
        Some((ch * self.h + iy as usize) * self.w + ix as usize)
    }

    fn im2col(&self, sample: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for k in 0..self.patch() {
            for o in 0..p {
                cols[k * p + o] = self.source(k, o).map_or(0.0, |s| sample[s]);
            }
        }
    }

    fn col2im(&self, cols: &[f64], sample_grad: &mut [f64]) {
        let p = self.positions();
        for k in 0..self.patch() {
            for o in 0..p {
                if let Some(s) = self.source(k, o) {
                    sample_grad[s] += cols[k * p + o];
                }
            }
        }
    }
}

fn conv_forward(c: &Conv2d, x: &Tensor) -> Tensor {
    let g = ConvGeometry::new(c, x);
    let n = x.rows();
    let out_c = c.out_channels();
    let (k, p) = (g.patch(), g.positions());
    let in_len = x.row_len();
    let mut cols = vec![0.0; k * p];
    let mut y = vec![0.0; n * out_c * p];
    for (sample, out) in x.data().chunks_exact(in_len).zip(y.chunks_exact_mut(out_c * p)) {
        g.im2col(sample, &mut cols);
        gemm(out_c, k, p, c.weight.data(), false, &cols, false, 0.0, out);
        for (row, b) in out.chunks_exact_mut(p).zip(c.bias.data()) {
            row.iter_mut().for_each(|v| *v += b);
        }
    }
    Tensor::new(vec![n, out_c, g.oh, g.ow], y).expect("conv output shape")
}

fn conv_backward(
    c: &Conv2d,
    x: &Tensor,
    dy: &Tensor,
    grads: &mut [Tensor],
    need_input_grad: bool,
) -> Tensor {
    let g = ConvGeometry::new(c, x);
    let out_c = c.out_channels();
    let (k, p) = (g.patch(), g.positions());
    let in_len = x.row_len();
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    let mut dx = if need_input_grad {
        vec![0.0; x.len()]
    } else {
        Vec::new()
    };
    let (dw, db) = grads.split_at_mut(1);
    for (n, (sample, dy_n)) in x
        .data()
        .chunks_exact(in_len)
        .zip(dy.data().chunks_exact(out_c * p))
        .enumerate()
    {
        g.im2col(sample, &mut cols);
        gemm(out_c, p, k, dy_n, false, &cols, true, 1.0, dw[0].data_mut());
        for (b, row) in db[0].data_mut().iter_mut().zip(dy_n.chunks_exact(p)) {
            *b += row.iter().sum::<f64>();
        }
        if need_input_grad {
            gemm(k, out_c, p, c.weight.data(), true, dy_n, false, 0.0, &mut dcols);
            g.col2im(&dcols, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    if !need_input_grad {
        return Tensor::zeros(&[0]);
    }
    Tensor::new(x.shape().to_vec(), dx).expect("conv input grad shape")
}

/// `(channels, elements per channel per example)` for a batch-norm input.
fn bn_layout(x: &Tensor) -> (usize, usize) {
    let c = x.shape()[1];
    (c, x.row_len() / c)
}

fn bn_forward(b: &BatchNorm, x: &Tensor, mode: Mode) -> (Tensor, BnCache) {
    let n = x.rows();
    let (c, hw) = bn_layout(x);
    let count = n * hw;
    let idx = |s: usize, ch: usize, k: usize| (s * c + ch) * hw + k;
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut sum = 0.0;
                for s in 0..n {
                    for k in 0..hw {
                        sum += x.data()[idx(s, ch, k)];
                    }
                }
                let m = sum / count as f64;
                let mut sq = 0.0;
                for s in 0..n {
                    for k in 0..hw {
                        let d = x.data()[idx(s, ch, k)] - m;
                        sq += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = sq / count as f64;
            }
            (mean, var)
        }
        Mode::Eval => (
            b.running_mean.data().to_vec(),
            b.running_var.data().to_vec(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = x.clone();
    let mut y = x.clone();
    for s in 0..n {
        for ch in 0..c {
            let (g, be) = (b.gamma.data()[ch], b.beta.data()[ch]);
            for k in 0..hw {
                let i = idx(s, ch, k);
                let xh = (x.data()[i] - mean[ch]) * inv_std[ch];
                x_hat.data_mut()[i] = xh;
                y.data_mut()[i] = g * xh + be;
            }
        }
    }
    (
        y,
        BnCache {
            mean,
            var,
            inv_std,
            x_hat,
            count,
        },
    )
}

fn bn_backward(
    b: &BatchNorm,
    cache: &BnCache,
    mode: Mode,
    dy: &Tensor,
    grads: &mut [Tensor],
) -> Tensor {
    let n = dy.rows();
    let (c, hw) = bn_layout(dy);
    let idx = |s: usize, ch: usize, k: usize| (s * c + ch) * hw + k;
    let xh = cache.x_hat.data();
    let mut dx = Tensor::zeros(dy.shape());
    for ch in 0..c {
        let gamma = b.gamma.data()[ch];
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for s in 0..n {
            for k in 0..hw {
                let i = idx(s, ch, k);
                sum_dy += dy.data()[i];
                sum_dy_xh += dy.data()[i] * xh[i];
            }
        }
        grads[0].data_mut()[ch] = sum_dy_xh;
        grads[1].data_mut()[ch] = sum_dy;
        let inv_std = cache.inv_std[ch];
        match mode {
            Mode::Train => {
                let m = cache.count as f64;
                // d x_hat = dy * gamma; the two sums above give the projections.
                let scale = gamma * inv_std / m;
                for s in 0..n {
                    for k in 0..hw {
                        let i = idx(s, ch, k);
                        dx.data_mut()[i] =
                            scale * (m * dy.data()[i] - sum_dy - xh[i] * sum_dy_xh);
                    }
                }
            }
            Mode::Eval => {
                for s in 0..n {
                    for k in 0..hw {
                        let i = idx(s, ch, k);
                        dx.data_mut()[i] = dy.data()[i] * gamma * inv_std;
                    }
                }
            }
        }
    }
    dx
}

/// Incremental construction of a [`Network`] with freshly initialised weights.
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    current: Vec<usize>,
    layers: Vec<Layer>,
    error: Option<Error>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            current: input_shape.to_vec(),
            layers: Vec::new(),
            error: None,
        }
    }

    fn fail(&mut self, msg: String) {
        if self.error.is_none() {
            self.error = Some(Error::Shape(msg));
        }
    }

    pub fn dense<R: Rng + ?Sized>(mut self, outputs: usize, rng: &mut R) -> Self {
        if outputs == 0 {
            self.fail("dense layer needs at least one output".into());
            return self;
        }
        let inputs = self.current.iter().product();
        self.layers.push(Layer::Dense(Dense::init(inputs, outputs, rng)));
        self.current = vec![outputs];
        self
    }

    pub fn conv2d<R: Rng + ?Sized>(
        mut self,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        if self.current.len() != 3 || out_channels == 0 || stride == 0 {
            self.fail(format!("conv2d cannot follow shape {:?}", self.current));
            return self;
        }
        let conv = Conv2d::init(self.current[0], out_channels, kernel, stride, padding, rng);
        match conv.output_hw(self.current[1], self.current[2]) {
            Some((oh, ow)) => {
                self.current = vec![out_channels, oh, ow];
                self.layers.push(Layer::Conv2d(conv));
            }
            None => self.fail(format!("kernel {kernel:?} too large for {:?}", self.current)),
        }
        self
    }

    pub fn batch_norm(mut self) -> Self {
        let channels = self.current[0];
        self.layers.push(Layer::BatchNorm(BatchNorm::new(channels)));
        self
    }

    pub fn activation(mut self, act: Activation) -> Self {
        self.layers.push(Layer::Activation(act));
        self
    }

    pub fn build(self) -> Result<Network> {
        if let Some(e) = self.error {
            return Err(e);
        }
        Network::from_layers(self.input_shape, self.layers)
    }
}

/// `inputs -> [dense -> (bn) -> act]* -> dense(outputs)`.
pub fn mlp<R: Rng + ?Sized>(
    inputs: &[usize],
    hidden: &[usize],
    outputs: usize,
    activation: Activation,
    batch_norm: bool,
    rng: &mut R,
) -> Result<Network> {
    let mut b = NetworkBuilder::new(inputs);
    for &h in hidden {
        b = b.dense(h, rng);
        if batch_norm {
            b = b.batch_norm();
        }
        b = b.activation(activation);
    }
    b.dense(outputs, rng).build()
}
