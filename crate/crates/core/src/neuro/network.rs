//! Sequential networks over `(frames x channels)` inputs.
//!
//! Convolutions are 1-D along time with "valid" padding, so every output
//! frame sees only input frames. Each activation carries a `valid` frame
//! count; global average pooling averages over valid frames only, which is
//! how padded frames are kept out of pooled statistics.

use rand::Rng;

use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::seed;

use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out][kernel][in]`, so one output is a dot product with a contiguous
    /// `kernel * in` slice of the input.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    Relu,
    MaxPool { size: usize },
    /// Applied per frame, or once after pooling.
    Dense(Dense),
    GlobalAvgPool,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Dense(_) => "dense",
            Layer::GlobalAvgPool => "global_avg_pool",
        }
    }

    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Conv1d(c) => Some((&c.weight, &c.bias)),
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut [f64], &mut [f64])> {
        match self {
            Layer::Conv1d(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }
}

/// Architecture description used to build a freshly initialized network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv1d { out_channels: usize, kernel: usize, stride: usize },
    Relu,
    MaxPool { size: usize },
    Dense { outputs: usize },
    GlobalAvgPool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub data: Vec<f64>,
    pub frames: usize,
    pub channels: usize,
    pub valid: usize,
    pub pooled: bool,
}

impl Activation {
    pub fn from_features(f: &FeatureMatrix, valid: usize) -> Self {
        Self {
            data: f.values().to_vec(),
            frames: f.frames(),
            channels: f.bands(),
            valid: valid.clamp(1, f.frames().max(1)),
            pooled: false,
        }
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.channels..(frame + 1) * self.channels]
    }
}

/// Per-layer inputs kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Activation>,
    argmax: Vec<Vec<usize>>,
}

/// Parameter gradients aligned with `Network::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| l.params().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in self.layers.iter_mut().flatten() {
            w.iter_mut().chain(b.iter_mut()).for_each(|g| *g *= factor);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input_channels: usize,
    pub layers: Vec<Layer>,
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

impl Network {
    /// Builds and initializes weights uniformly in `±sqrt(6 / (fan_in + fan_out))`,
    /// biases at zero.
    pub fn new(input_channels: usize, specs: &[LayerSpec], init_seed: u64) -> Result<Self> {
        if input_channels == 0 {
            return Err(Error::InvalidArgument("input channels must be positive".into()));
        }
        let mut channels = input_channels;
        let mut pooled = false;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let mut rng = seed::rng_for(init_seed, &format!("init/{i}"));
            let layer = match *spec {
                LayerSpec::Conv1d {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if pooled {
                        return Err(shape_err(i, "conv1d", "convolution after pooling"));
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(shape_err(i, "conv1d", "zero-sized convolution"));
                    }
                    let n = out_channels * kernel * channels;
                    let layer = Layer::Conv1d(Conv1d {
                        in_channels: channels,
                        out_channels,
                        kernel,
                        stride,
                        weight: glorot(&mut rng, channels * kernel, out_channels * kernel, n),
                        bias: vec![0.0; out_channels],
                    });
                    channels = out_channels;
                    layer
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { size } => {
                    if pooled || size == 0 {
                        return Err(shape_err(i, "maxpool", "invalid pooling"));
                    }
                    Layer::MaxPool { size }
                }
                LayerSpec::Dense { outputs } => {
                    if outputs == 0 {
                        return Err(shape_err(i, "dense", "zero outputs"));
                    }
                    let layer = Layer::Dense(Dense {
                        inputs: channels,
                        outputs,
                        weight: glorot(&mut rng, channels, outputs, outputs * channels),
                        bias: vec![0.0; outputs],
                    });
                    channels = outputs;
                    layer
                }
                LayerSpec::GlobalAvgPool => {
                    if pooled {
                        return Err(shape_err(i, "global_avg_pool", "already pooled"));
                    }
                    pooled = true;
                    Layer::GlobalAvgPool
                }
            };
            layers.push(layer);
        }
        Ok(Self {
            input_channels,
            layers,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn output_channels(&self) -> usize {
        let mut c = self.input_channels;
        for l in &self.layers {
            match l {
                Layer::Conv1d(conv) => c = conv.out_channels,
                Layer::Dense(d) => c = d.outputs,
                _ => {}
            }
        }
        c
    }

    pub fn is_pooled(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::GlobalAvgPool))
    }

    /// `(frames, valid frames)` of the output for an input of `frames`.
    pub fn output_frames(&self, frames: usize, valid: usize) -> Result<(usize, usize)> {
        let mut f = frames;
        let mut v = valid;
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Conv1d(c) => {
                    if f < c.kernel {
                        return Err(shape_err(i, "conv1d", &format!("{f} frames < kernel {}", c.kernel)));
                    }
                    f = (f - c.kernel) / c.stride + 1;
                    v = valid_after(v, c.kernel, c.stride, f);
                }
                Layer::MaxPool { size } => {
                    if f < *size {
                        return Err(shape_err(i, "maxpool", &format!("{f} frames < pool {size}")));
                    }
                    f /= size;
                    v = (v / size).clamp(1, f);
                }
                Layer::GlobalAvgPool => {
                    f = 1;
                    v = 1;
                }
                _ => {}
            }
        }
        Ok((f, v))
    }

    /// Rounds every parameter to the nearest `f32`, matching what a
    /// checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for (w, b) in self.layers.iter_mut().filter_map(Layer::params_mut) {
            w.iter_mut()
                .chain(b.iter_mut())
                .for_each(|p| *p = *p as f32 as f64);
        }
    }

    pub fn forward_activation(&self, input: Activation) -> Result<Activation> {
        let mut x = input;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer_forward(i, layer, &x)?.0;
        }
        Ok(x)
    }

    pub fn forward_sample(&self, f: &FeatureMatrix, valid: usize) -> Result<Activation> {
        self.check_input(f)?;
        self.forward_activation(Activation::from_features(f, valid))
    }

    pub fn forward_traced(&self, f: &FeatureMatrix, valid: usize) -> Result<(Activation, Trace)> {
        self.check_input(f)?;
        let mut x = Activation::from_features(f, valid);
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            argmax: Vec::with_capacity(self.layers.len()),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, argmax) = layer_forward(i, layer, &x)?;
            trace.inputs.push(x);
            trace.argmax.push(argmax);
            x = y;
        }
        Ok((x, trace))
    }

    /// Back-propagates `grad_out` (shaped like the output activation) and
    /// adds parameter gradients into `grads`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut Gradients) {
        let mut g = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            g = layer_backward(layer, x, &trace.argmax[i], &g, grads.layers[i].as_mut());
        }
    }

    /// Batched forward: `[batch, channels]` when pooled, else
    /// `[batch, frames, channels]`.
    pub fn forward(&self, batch: &crate::audio::Batch) -> Result<Tensor> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut data = Vec::new();
        let mut shape = Vec::new();
        for (item, &len) in batch.items.iter().zip(&batch.lengths) {
            let y = self.forward_sample(item, len)?;
            if shape.is_empty() {
                shape = if y.pooled {
                    vec![batch.len(), y.channels]
                } else {
                    vec![batch.len(), y.frames, y.channels]
                };
            }
            data.extend_from_slice(&y.data);
        }
        Tensor::new(shape, data)
    }

    fn check_input(&self, f: &FeatureMatrix) -> Result<()> {
        if f.bands() != self.input_channels {
            return Err(Error::Shape {
                layer: "input".into(),
                message: format!(
                    "expected {} channels, got {}",
                    self.input_channels,
                    f.bands()
                ),
            });
        }
        Ok(())
    }
}

fn shape_err(index: usize, kind: &str, message: &str) -> Error {
    Error::Shape {
        layer: format!("{kind}#{index}"),
        message: message.to_string(),
    }
}

/// Output frames whose receptive field lies inside the valid input prefix
/// (at least one).
fn valid_after(valid: usize, kernel: usize, stride: usize, out_frames: usize) -> usize {
    let v = if valid >= kernel {
        (valid - kernel) / stride + 1
    } else {
        1
    };
    v.clamp(1, out_frames)
}

fn layer_forward(index: usize, layer: &Layer, x: &Activation) -> Result<(Activation, Vec<usize>)> {
    match layer {
        Layer::Conv1d(c) => {
            if x.pooled || x.channels != c.in_channels {
                return Err(shape_err(
                    index,
                    "conv1d",
                    &format!("expected {} channels, got {}", c.in_channels, x.channels),
                ));
            }
            if x.frames < c.kernel {
                return Err(shape_err(
                    index,
                    "conv1d",
                    &format!("{} frames < kernel {}", x.frames, c.kernel),
                ));
            }
            let out_frames = (x.frames - c.kernel) / c.stride + 1;
            let span = c.kernel * c.in_channels;
            let mut data = Vec::with_capacity(out_frames * c.out_channels);
            for t in 0..out_frames {
                let start = t * c.stride * c.in_channels;
                let window = &x.data[start..start + span];
                for o in 0..c.out_channels {
                    let w = &c.weight[o * span..(o + 1) * span];
                    data.push(c.bias[o] + dot(w, window));
                }
            }
            Ok((
                Activation {
                    data,
                    frames: out_frames,
                    channels: c.out_channels,
                    valid: valid_after(x.valid, c.kernel, c.stride, out_frames),
                    pooled: false,
                },
                Vec::new(),
            ))
        }
        Layer::Relu => Ok((
            Activation {
                data: x.data.iter().map(|&v| v.max(0.0)).collect(),
                ..x.clone()
            },
            Vec::new(),
        )),
        Layer::MaxPool { size } => {
            if x.pooled || x.frames < *size {
                return Err(shape_err(index, "maxpool", &format!("{} frames < pool {size}", x.frames)));
            }
            let out_frames = x.frames / size;
            let mut data = Vec::with_capacity(out_frames * x.channels);
            let mut argmax = Vec::with_capacity(out_frames * x.channels);
            for t in 0..out_frames {
                for ch in 0..x.channels {
                    let mut best = t * size * x.channels + ch;
                    for k in 1..*size {
                        let idx = (t * size + k) * x.channels + ch;
                        if x.data[idx] > x.data[best] {
                            best = idx;
                        }
                    }
                    data.push(x.data[best]);
                    argmax.push(best);
                }
            }
            Ok((
                Activation {
                    data,
                    frames: out_frames,
                    channels: x.channels,
                    valid: (x.valid / size).clamp(1, out_frames),
                    pooled: false,
                },
                argmax,
            ))
        }
        Layer::Dense(d) => {
            if x.channels != d.inputs {
                return Err(shape_err(
                    index,
                    "dense",
                    &format!("expected {} inputs, got {}", d.inputs, x.channels),
                ));
            }
            let mut data = Vec::with_capacity(x.frames * d.outputs);
            for t in 0..x.frames {
                let row = x.row(t);
                for o in 0..d.outputs {
                    data.push(d.bias[o] + dot(&d.weight[o * d.inputs..(o + 1) * d.inputs], row));
                }
            }
            Ok((
                Activation {
                    data,
                    channels: d.outputs,
                    ..x.clone_shape()
                },
                Vec::new(),
            ))
        }
        Layer::GlobalAvgPool => {
            if x.pooled {
                return Err(shape_err(index, "global_avg_pool", "already pooled"));
            }
            let mut data = vec![0.0; x.channels];
            for t in 0..x.valid {
                for (acc, v) in data.iter_mut().zip(x.row(t)) {
                    *acc += v;
                }
            }
            let inv = 1.0 / x.valid as f64;
            data.iter_mut().for_each(|v| *v *= inv);
            Ok((
                Activation {
                    data,
                    frames: 1,
                    channels: x.channels,
                    valid: 1,
                    pooled: true,
                },
                Vec::new(),
            ))
        }
    }
}

impl Activation {
    fn clone_shape(&self) -> Activation {
        Activation {
            data: Vec::new(),
            frames: self.frames,
            channels: self.channels,
            valid: self.valid,
            pooled: self.pooled,
        }
    }
}

fn layer_backward(
    layer: &Layer,
    x: &Activation,
    argmax: &[usize],
    g: &[f64],
    grads: Option<&mut (Vec<f64>, Vec<f64>)>,
) -> Vec<f64> {
    match layer {
        Layer::Conv1d(c) => {
            let (gw, gb) = grads.expect("conv gradients allocated");
            let span = c.kernel * c.in_channels;
            let out_frames = g.len() / c.out_channels;
            let mut gx = vec![0.0; x.data.len()];
            for t in 0..out_frames {
                let start = t * c.stride * c.in_channels;
                let window = &x.data[start..start + span];
                for o in 0..c.out_channels {
                    let go = g[t * c.out_channels + o];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    axpy(go, window, &mut gw[o * span..(o + 1) * span]);
                    axpy(go, &c.weight[o * span..(o + 1) * span], &mut gx[start..start + span]);
                }
            }
            gx
        }
        Layer::Relu => g
            .iter()
            .zip(&x.data)
            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
            .collect(),
        Layer::MaxPool { .. } => {
            let mut gx = vec![0.0; x.data.len()];
            for (&idx, &gv) in argmax.iter().zip(g) {
                gx[idx] += gv;
            }
            gx
        }
        Layer::Dense(d) => {
            let (gw, gb) = grads.expect("dense gradients allocated");
            let mut gx = vec![0.0; x.data.len()];
            for t in 0..x.frames {
                let row = x.row(t);
                for o in 0..d.outputs {
                    let go = g[t * d.outputs + o];
                    if go == 0.0 {
                        continue;
                    }
                    gb[o] += go;
                    axpy(go, row, &mut gw[o * d.inputs..(o + 1) * d.inputs]);
                    axpy(
                        go,
                        &d.weight[o * d.inputs..(o + 1) * d.inputs],
                        &mut gx[t * d.inputs..(t + 1) * d.inputs],
                    );
                }
            }
            gx
        }
        Layer::GlobalAvgPool => {
            let mut gx = vec![0.0; x.data.len()];
            let inv = 1.0 / x.valid as f64;
            for t in 0..x.valid {
                for (dst, &gv) in gx[t * x.channels..(t + 1) * x.channels].iter_mut().zip(g) {
                    *dst = gv * inv;
                }
            }
            gx
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating a single sum.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::pad_batch;

    fn features(frames: usize, bands: usize, seed: u64) -> FeatureMatrix {
        let mut rng = seed::rng(seed);
        let v = (0..frames * bands).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureMatrix::new(v, frames, bands).unwrap()
    }

    fn small_net(seed: u64) -> Network {
        Network::new(
            4,
            &[
                LayerSpec::Conv1d { out_channels: 5, kernel: 3, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { outputs: 3 },
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut net = small_net(1);
        for (w, b) in net.layers.iter_mut().filter_map(Layer::params_mut) {
            w.fill(0.0);
            b.fill(0.0);
        }
        let y = net.forward_sample(&features(12, 4, 2), 12).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_are_independent() {
        let net = small_net(3);
        let a = features(12, 4, 5);
        let b = features(12, 4, 6);
        let dup = net.forward(&pad_batch(vec![a.clone(), a.clone()]).unwrap()).unwrap();
        assert_eq!(dup.row(0), dup.row(1));
        let ab = net.forward(&pad_batch(vec![a.clone(), b.clone()]).unwrap()).unwrap();
        let ba = net.forward(&pad_batch(vec![b, a]).unwrap()).unwrap();
        assert_eq!(ab.row(0), ba.row(1));
        assert_eq!(ab.row(1), ba.row(0));
    }

    #[test]
    fn padded_frames_do_not_reach_pooled_output() {
        let net = small_net(4);
        let short = features(9, 4, 7);
        let long = features(15, 4, 8);
        let batch = pad_batch(vec![short.clone(), long]).unwrap();
        let y = net.forward(&batch).unwrap();
        let alone = net.forward_sample(&short, 9).unwrap();
        assert_eq!(y.row(0), &alone.data[..]);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let net = small_net(1);
        let err = net.forward_sample(&features(12, 5, 1), 12).unwrap_err();
        assert!(err.to_string().contains("input"), "{err}");
        let err = net.forward_sample(&features(2, 4, 1), 2).unwrap_err();
        assert!(err.to_string().contains("conv1d#0"), "{err}");
        assert!(Network::new(4, &[LayerSpec::GlobalAvgPool, LayerSpec::Conv1d { out_channels: 1, kernel: 1, stride: 1 }], 0).is_err());
    }

    #[test]
    fn output_geometry() {
        let net = Network::new(
            40,
            &[
                LayerSpec::Conv1d { out_channels: 8, kernel: 5, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dense { outputs: 7 },
            ],
            0,
        )
        .unwrap();
        assert_eq!(net.output_frames(98, 98).unwrap(), (23, 23));
        let y = net.forward_sample(&features(98, 40, 1), 98).unwrap();
        assert_eq!((y.frames, y.channels), (23, 7));
        assert_eq!(net.param_count(), 8 * 5 * 40 + 8 + 7 * 8 + 7);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        assert_eq!(small_net(9), small_net(9));
        assert_ne!(small_net(9), small_net(10));
        if let Layer::Conv1d(c) = &small_net(9).layers[0] {
            let limit = (6.0f64 / (4 * 3 + 5 * 3) as f64).sqrt();
            assert!(c.weight.iter().all(|w| w.abs() <= limit));
            assert!(c.bias.iter().all(|&b| b == 0.0));
        }
    }
}
