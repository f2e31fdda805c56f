//! 1-D convolution network kernels with exact backward passes.
//!
//! Tensors are `channels x frames`, channel-major. Parameters of a whole
//! network live in one flat `f64` vector; layers hold offsets into it, which
//! keeps optimizer state, checkpointing and gradient checks uniform.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensor {
    channels: usize,
    frames: usize,
    data: Vec<f64>,
}

impl SequenceTensor {
    pub fn zeros(channels: usize, frames: usize) -> Self {
        Self {
            channels,
            frames,
            data: vec![0.0; channels * frames],
        }
    }

    pub fn from_vec(channels: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * frames {
            return Err(Error::Shape(format!(
                "{} values for {channels} channels x {frames} frames",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            frames,
            data,
        })
    }

    /// Transpose a `frames x channels` matrix.
    pub fn from_matrix(m: &Matrix) -> Self {
        let mut t = Self::zeros(m.cols(), m.rows());
        for f in 0..m.rows() {
            for (c, &v) in m.row(f).iter().enumerate() {
                t.data[c * m.rows() + f] = v;
            }
        }
        t
    }

    /// Back to `frames x channels`.
    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.frames, self.channels);
        for c in 0..self.channels {
            for (f, &v) in self.channel(c).iter().enumerate() {
                m.set(f, c, v);
            }
        }
        m
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.frames..(c + 1) * self.frames]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.frames..(c + 1) * self.frames]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Stack channels of `self` and `other` (same frame count).
    pub fn concat_channels(&self, other: &SequenceTensor) -> Result<SequenceTensor> {
        if self.frames != other.frames {
            return Err(Error::Shape(format!(
                "cannot stack {} frames with {} frames",
                self.frames, other.frames
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(SequenceTensor {
            channels: self.channels + other.channels,
            frames: self.frames,
            data,
        })
    }

    /// Channels `start..end`.
    pub fn channel_range(&self, start: usize, end: usize) -> SequenceTensor {
        SequenceTensor {
            channels: end - start,
            frames: self.frames,
            data: self.data[start * self.frames..end * self.frames].to_vec(),
        }
    }

    /// Frames `start..end` of every channel.
    pub fn frame_range(&self, start: usize, end: usize) -> SequenceTensor {
        let mut out = SequenceTensor::zeros(self.channels, end - start);
        for c in 0..self.channels {
            out.channel_mut(c).copy_from_slice(&self.channel(c)[start..end]);
        }
        out
    }

    /// Frames `start..end`, extending past the end by repeating the last frame.
    pub fn frame_range_padded(&self, start: usize, end: usize) -> SequenceTensor {
        let mut out = SequenceTensor::zeros(self.channels, end - start);
        for c in 0..self.channels {
            let src = self.channel(c);
            let last = src[self.frames - 1];
            for (k, v) in out.channel_mut(c).iter_mut().enumerate() {
                *v = src.get(start + k).copied().unwrap_or(last);
            }
        }
        out
    }

    fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("tensor value".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ConvMode {
    /// Stride 1, zero padding, output length = input length.
    Same,
    /// Stride 2, output length = input length / 2 (input length must be even).
    Down2,
    /// Transposed stride 2, output length = 2 x input length.
    Up2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    HeUniform,
    XavierUniform,
    /// All weights zero; the closing conv of a residual branch, so every
    /// block starts as the identity.
    Zero,
    /// He-scaled channel mixing times a triangular tap profile
    /// (`[0.5, 1, 0.5]` for `k = 3`): an up2 conv so initialized is linear
    /// interpolation followed by a 1x1 conv, free of checkerboard patterns.
    Interpolating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub mode: ConvMode,
    pub init: Init,
    weight: usize,
    bias: usize,
}

/// Hands out consecutive ranges of the flat parameter vector.
#[derive(Debug, Default)]
pub struct ParamAllocator {
    len: usize,
}

impl ParamAllocator {
    pub fn alloc(&mut self, n: usize) -> usize {
        let at = self.len;
        self.len += n;
        at
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Index pairs touched by one kernel tap: for `k in 0..count`,
/// `out = out0 + k * out_step` and `inp = in0 + k * in_step`.
#[derive(Debug, Clone, Copy)]
struct TapSpan {
    count: usize,
    out0: usize,
    out_step: usize,
    in0: usize,
    in_step: usize,
}

fn div_ceil_i(a: isize, b: isize) -> isize {
    -((-a).div_euclid(b))
}

impl Conv1d {
    pub fn new(
        alloc: &mut ParamAllocator,
        cin: usize,
        cout: usize,
        kernel: usize,
        mode: ConvMode,
        init: Init,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size {kernel} must be odd")));
        }
        if cin == 0 || cout == 0 {
            return Err(Error::Config("convolution with zero channels".into()));
        }
        let weight = alloc.alloc(cout * cin * kernel);
        let bias = alloc.alloc(cout);
        Ok(Self {
            cin,
            cout,
            kernel,
            mode,
            init,
            weight,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        self.cout * self.cin * self.kernel + self.cout
    }

    pub fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.weight..self.weight + self.cout * self.cin * self.kernel]
    }

    pub fn weights_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.weight..self.weight + self.cout * self.cin * self.kernel]
    }

    pub fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.bias..self.bias + self.cout]
    }

    pub fn bias_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.bias..self.bias + self.cout]
    }

    pub fn output_frames(&self, input_frames: usize) -> usize {
        match self.mode {
            ConvMode::Same => input_frames,
            ConvMode::Down2 => input_frames / 2,
            ConvMode::Up2 => input_frames * 2,
        }
    }

    /// Multiply-accumulates for one forward pass: `cin * cout * k` per
    /// computed output frame (same, down2) or per input frame (up2).
    pub fn macs(&self, input_frames: usize) -> u64 {
        let frames = match self.mode {
            ConvMode::Same | ConvMode::Up2 => input_frames,
            ConvMode::Down2 => input_frames / 2,
        };
        (self.cin * self.cout * self.kernel * frames) as u64
    }

    fn span(&self, tap: usize, t_in: usize, t_out: usize) -> TapSpan {
        let s = tap as isize - (self.kernel / 2) as isize;
        let (ti, to) = (t_in as isize, t_out as isize);
        let empty = TapSpan {
            count: 0,
            out0: 0,
            out_step: 1,
            in0: 0,
            in_step: 1,
        };
        match self.mode {
            ConvMode::Same => {
                // inp = out + s
                let lo = (-s).max(0);
                let hi = to.min(ti - s);
                if hi <= lo {
                    return empty;
                }
                TapSpan {
                    count: (hi - lo) as usize,
                    out0: lo as usize,
                    out_step: 1,
                    in0: (lo + s) as usize,
                    in_step: 1,
                }
            }
            ConvMode::Down2 => {
                // inp = 2 out + s
                let lo = div_ceil_i(-s, 2).max(0);
                let hi = to.min((ti - 1 - s).div_euclid(2) + 1);
                if hi <= lo {
                    return empty;
                }
                TapSpan {
                    count: (hi - lo) as usize,
                    out0: lo as usize,
                    out_step: 1,
                    in0: (2 * lo + s) as usize,
                    in_step: 2,
                }
            }
            ConvMode::Up2 => {
                // out = 2 inp + s
                let lo = div_ceil_i(-s, 2).max(0);
                let hi = ti.min((to - 1 - s).div_euclid(2) + 1);
                if hi <= lo {
                    return empty;
                }
                TapSpan {
                    count: (hi - lo) as usize,
                    out0: (2 * lo + s) as usize,
                    out_step: 2,
                    in0: lo as usize,
                    in_step: 1,
                }
            }
        }
    }

    fn check_input(&self, x: &SequenceTensor) -> Result<()> {
        if x.channels != self.cin {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.cin, x.channels
            )));
        }
        if self.mode == ConvMode::Down2 && !x.frames.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "stride-2 down-sampling needs an even frame count, got {}",
                x.frames
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], x: &SequenceTensor) -> Result<SequenceTensor> {
        self.check_input(x)?;
        let t_in = x.frames;
        let t_out = self.output_frames(t_in);
        let w = self.weights(params);
        let b = self.bias(params);
        let mut y = SequenceTensor::zeros(self.cout, t_out);
        let spans: Vec<TapSpan> = (0..self.kernel).map(|j| self.span(j, t_in, t_out)).collect();
        for o in 0..self.cout {
            let yo = y.channel_mut(o);
            yo.fill(b[o]);
            for i in 0..self.cin {
                let xi = x.channel(i);
                for (j, sp) in spans.iter().enumerate() {
                    let wv = w[(o * self.cin + i) * self.kernel + j];
                    if wv == 0.0 || sp.count == 0 {
                        continue;
                    }
                    if sp.out_step == 1 && sp.in_step == 1 {
                        let dst = &mut yo[sp.out0..sp.out0 + sp.count];
                        let src = &xi[sp.in0..sp.in0 + sp.count];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    } else {
                        for k in 0..sp.count {
                            yo[sp.out0 + k * sp.out_step] += wv * xi[sp.in0 + k * sp.in_step];
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// Gradient w.r.t. the input; parameter gradients are added into `grad`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &SequenceTensor,
        dy: &SequenceTensor,
        grad: &mut [f64],
    ) -> Result<SequenceTensor> {
        self.check_input(x)?;
        let t_in = x.frames;
        let t_out = self.output_frames(t_in);
        if dy.channels != self.cout || dy.frames != t_out {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{t_out}",
                dy.channels, dy.frames, self.cout
            )));
        }
        let w = self.weights(params);
        let mut dx = SequenceTensor::zeros(self.cin, t_in);
        let spans: Vec<TapSpan> = (0..self.kernel).map(|j| self.span(j, t_in, t_out)).collect();
        for o in 0..self.cout {
            let dyo = dy.channel(o);
            grad[self.bias + o] += dyo.iter().sum::<f64>();
            for i in 0..self.cin {
                let xi = x.channel(i);
                let dxi = dx.channel_mut(i);
                for (j, sp) in spans.iter().enumerate() {
                    let widx = (o * self.cin + i) * self.kernel + j;
                    let wv = w[widx];
                    let mut gw = 0.0;
                    if sp.out_step == 1 && sp.in_step == 1 {
                        let g = &dyo[sp.out0..sp.out0 + sp.count];
                        let src = &xi[sp.in0..sp.in0 + sp.count];
                        for (gv, s) in g.iter().zip(src) {
                            gw += gv * s;
                        }
                        for (d, gv) in dxi[sp.in0..sp.in0 + sp.count].iter_mut().zip(g) {
                            *d += wv * gv;
                        }
                    } else {
                        for k in 0..sp.count {
                            let (oi, ii) = (sp.out0 + k * sp.out_step, sp.in0 + k * sp.in_step);
                            gw += dyo[oi] * xi[ii];
                            dxi[ii] += wv * dyo[oi];
                        }
                    }
                    grad[self.weight + widx] += gw;
                }
            }
        }
        Ok(dx)
    }

    fn initialize(&self, params: &mut [f64], rng: &mut dyn RngCore) {
        if self.init == Init::Interpolating {
            let limit = libm::sqrt(6.0 / self.cin as f64);
            let centre = (self.kernel / 2) as f64;
            let k = self.kernel;
            for pair in self.weights_mut(params).chunks_mut(k) {
                let base = rng.gen_range(-limit..limit);
                for (j, w) in pair.iter_mut().enumerate() {
                    *w = base * (1.0 - (j as f64 - centre).abs() / 2.0).max(0.0);
                }
            }
            self.bias_mut(params).fill(0.0);
            return;
        }
        let fan_in = (self.cin * self.kernel) as f64;
        let fan_out = (self.cout * self.kernel) as f64;
        let limit = match self.init {
            Init::HeUniform => libm::sqrt(6.0 / fan_in),
            Init::XavierUniform => libm::sqrt(6.0 / (fan_in + fan_out)),
            Init::Zero | Init::Interpolating => 0.0,
        };
        for w in self.weights_mut(params) {
            *w = if limit > 0.0 { rng.gen_range(-limit..limit) } else { 0.0 };
        }
        self.bias_mut(params).fill(0.0);
    }
}

pub fn conv1d_forward(layer: &Conv1d, params: &[f64], x: &SequenceTensor) -> Result<SequenceTensor> {
    layer.forward(params, x)
}

pub fn conv1d_backward(
    layer: &Conv1d,
    params: &[f64],
    x: &SequenceTensor,
    dy: &SequenceTensor,
    grad: &mut [f64],
) -> Result<SequenceTensor> {
    layer.backward(params, x, dy, grad)
}

pub fn relu_forward(x: &SequenceTensor) -> SequenceTensor {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Uses the forward output; the subgradient at 0 is 0.
pub fn relu_backward(y: &SequenceTensor, dy: &SequenceTensor) -> SequenceTensor {
    let mut dx = dy.clone();
    for (g, &v) in dx.data.iter_mut().zip(&y.data) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-v))
}

pub fn sigmoid_forward(x: &SequenceTensor) -> SequenceTensor {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = sigmoid(*v));
    y
}

pub fn sigmoid_backward(y: &SequenceTensor, dy: &SequenceTensor) -> SequenceTensor {
    let mut dx = dy.clone();
    for (g, &v) in dx.data.iter_mut().zip(&y.data) {
        *g *= v * (1.0 - v);
    }
    dx
}

pub fn check_dropout(p: f64) -> Result<f64> {
    if (0.0..1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::DropoutProbability(p))
    }
}

/// Inverted dropout. With `rng = None` (inference) this is the identity and
/// no mask is returned.
pub fn dropout_forward<R: RngCore + ?Sized>(
    x: &SequenceTensor,
    p: f64,
    rng: Option<&mut R>,
) -> Result<(SequenceTensor, Option<Vec<f64>>)> {
    check_dropout(p)?;
    let Some(rng) = rng else {
        return Ok((x.clone(), None));
    };
    if p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.data.len())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mut y = x.clone();
    y.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
    Ok((y, Some(mask)))
}

pub fn dropout_backward(dy: &SequenceTensor, mask: Option<&[f64]>) -> SequenceTensor {
    let mut dx = dy.clone();
    if let Some(mask) = mask {
        dx.data.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
    }
    dx
}

/// `x + conv_b(relu(conv_a(x)))`; both convolutions keep channels and length.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub a: Conv1d,
    pub b: Conv1d,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv1d),
    Relu,
    Sigmoid,
    Dropout(f64),
    Residual(ResidualBlock),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1x1,
    ConvK,
    Down2,
    Up2,
    Relu,
    Sigmoid,
    Dropout,
    Residual,
}

/// Shape description of a layer, as recorded in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dropout: f64,
}

impl Layer {
    pub fn spec(&self, channels: usize) -> LayerSpec {
        let base = LayerSpec {
            kind: LayerKind::Relu,
            cin: channels,
            cout: channels,
            kernel: 0,
            stride: 1,
            dropout: 0.0,
        };
        match self {
            Layer::Conv(c) => LayerSpec {
                kind: match (c.mode, c.kernel) {
                    (ConvMode::Same, 1) => LayerKind::Conv1x1,
                    (ConvMode::Same, _) => LayerKind::ConvK,
                    (ConvMode::Down2, _) => LayerKind::Down2,
                    (ConvMode::Up2, _) => LayerKind::Up2,
                },
                cin: c.cin,
                cout: c.cout,
                kernel: c.kernel,
                stride: if c.mode == ConvMode::Same { 1 } else { 2 },
                dropout: 0.0,
            },
            Layer::Relu => base,
            Layer::Sigmoid => LayerSpec {
                kind: LayerKind::Sigmoid,
                ..base
            },
            Layer::Dropout(p) => LayerSpec {
                kind: LayerKind::Dropout,
                dropout: *p,
                ..base
            },
            Layer::Residual(r) => LayerSpec {
                kind: LayerKind::Residual,
                kernel: r.a.kernel,
                ..base
            },
        }
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Conv(SequenceTensor),
    Activation(SequenceTensor),
    Dropout(Option<Vec<f64>>),
    Residual {
        input: SequenceTensor,
        hidden: SequenceTensor,
    },
}

/// Per-layer activations recorded by [`Stack::forward_train`].
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

/// A sequential network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stack {
    pub layers: Vec<Layer>,
}

impl Stack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv1d> {
        self.layers.iter().flat_map(|l| match l {
            Layer::Conv(c) => vec![c],
            Layer::Residual(r) => vec![&r.a, &r.b],
            _ => vec![],
        })
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(Conv1d::param_count).sum()
    }

    pub fn input_channels(&self) -> Option<usize> {
        self.convs().next().map(|c| c.cin)
    }

    pub fn output_channels(&self) -> Option<usize> {
        self.convs().last().map(|c| c.cout)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        let mut ch = self.input_channels().unwrap_or(0);
        self.layers
            .iter()
            .map(|l| {
                let s = l.spec(ch);
                ch = s.cout;
                s
            })
            .collect()
    }

    pub fn initialize(&self, params: &mut [f64], rng: &mut dyn RngCore) {
        for c in self.convs() {
            c.initialize(params, rng);
        }
    }

    /// Multiply-accumulates for an input of `frames` frames.
    pub fn macs(&self, frames: usize) -> u64 {
        let mut t = frames;
        let mut total = 0;
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    total += c.macs(t);
                    t = c.output_frames(t);
                }
                Layer::Residual(r) => total += r.a.macs(t) + r.b.macs(t),
                _ => {}
            }
        }
        total
    }

    pub fn forward(
        &self,
        params: &[f64],
        x: &SequenceTensor,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<SequenceTensor> {
        self.run(params, x, rng, false).map(|(y, _)| y)
    }

    pub fn forward_train(
        &self,
        params: &[f64],
        x: &SequenceTensor,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(SequenceTensor, Tape)> {
        self.run(params, x, rng, true)
    }

    fn run(
        &self,
        params: &[f64],
        x: &SequenceTensor,
        mut rng: Option<&mut dyn RngCore>,
        record: bool,
    ) -> Result<(SequenceTensor, Tape)> {
        let mut caches = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        let mut cur = x.clone();
        for l in &self.layers {
            let (next, cache) = match l {
                Layer::Conv(c) => (c.forward(params, &cur)?, None),
                Layer::Relu => {
                    let y = relu_forward(&cur);
                    let c = record.then(|| Cache::Activation(y.clone()));
                    (y, c)
                }
                Layer::Sigmoid => {
                    let y = sigmoid_forward(&cur);
                    let c = record.then(|| Cache::Activation(y.clone()));
                    (y, c)
                }
                Layer::Dropout(p) => {
                    let (y, mask) = dropout_forward(&cur, *p, rng.as_deref_mut())?;
                    (y, Some(Cache::Dropout(mask)))
                }
                Layer::Residual(r) => {
                    let hidden = relu_forward(&r.a.forward(params, &cur)?);
                    let mut y = r.b.forward(params, &hidden)?;
                    y.data.iter_mut().zip(&cur.data).for_each(|(v, s)| *v += s);
                    let c = record.then(|| Cache::Residual {
                        input: cur.clone(),
                        hidden,
                    });
                    (y, c)
                }
            };
            if record {
                caches.push(match (l, cache) {
                    (Layer::Conv(_), _) => Cache::Conv(cur),
                    (_, Some(c)) => c,
                    (_, None) => unreachable!("every non-conv layer records a cache"),
                });
            }
            cur = next;
        }
        cur.check_finite()?;
        Ok((cur, Tape { caches }))
    }

    /// Backpropagate `dy` through the recorded tape, accumulating parameter
    /// gradients into `grad`; returns the input gradient.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        dy: &SequenceTensor,
        grad: &mut [f64],
    ) -> Result<SequenceTensor> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::Shape("tape does not match network".into()));
        }
        let mut g = dy.clone();
        for (l, cache) in self.layers.iter().zip(&tape.caches).rev() {
            g = match (l, cache) {
                (Layer::Conv(c), Cache::Conv(x)) => c.backward(params, x, &g, grad)?,
                (Layer::Relu, Cache::Activation(y)) => relu_backward(y, &g),
                (Layer::Sigmoid, Cache::Activation(y)) => sigmoid_backward(y, &g),
                (Layer::Dropout(_), Cache::Dropout(mask)) => dropout_backward(&g, mask.as_deref()),
                (Layer::Residual(r), Cache::Residual { input, hidden }) => {
                    let dh = r.b.backward(params, hidden, &g, grad)?;
                    let dh = relu_backward(hidden, &dh);
                    let mut dx = r.a.backward(params, input, &dh, grad)?;
                    dx.data.iter_mut().zip(&g.data).for_each(|(v, s)| *v += s);
                    dx
                }
                _ => return Err(Error::Shape("tape does not match network".into())),
            };
        }
        Ok(g)
    }
}

/// Total multiply-accumulates of `layers` over a `frames`-frame input.
pub fn mac_count(layers: &[Layer], frames: usize) -> u64 {
    Stack::new(layers.to_vec()).macs(frames)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Parameters with Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl ParameterStore {
    pub fn new(params: Vec<f64>) -> Self {
        let n = params.len();
        Self {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(store: &mut ParameterStore, grads: &[f64], hyper: &AdamConfig) -> Result<()> {
    if grads.len() != store.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    store.step += 1;
    let t = store.step as f64;
    let c1 = 1.0 - libm::pow(hyper.beta1, t);
    let c2 = 1.0 - libm::pow(hyper.beta2, t);
    for i in 0..grads.len() {
        let g = grads[i];
        store.m[i] = hyper.beta1 * store.m[i] + (1.0 - hyper.beta1) * g;
        store.v[i] = hyper.beta2 * store.v[i] + (1.0 - hyper.beta2) * g * g;
        let mhat = store.m[i] / c1;
        let vhat = store.v[i] / c2;
        store.params[i] -= hyper.lr * mhat / (libm::sqrt(vhat) + hyper.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use rand_chacha::ChaCha8Rng;

    fn tensor(channels: usize, data: &[f64]) -> SequenceTensor {
        SequenceTensor::from_vec(channels, data.len() / channels, data.to_vec()).unwrap()
    }

    fn conv(cin: usize, cout: usize, k: usize, mode: ConvMode) -> (Conv1d, usize) {
        let mut a = ParamAllocator::default();
        let c = Conv1d::new(&mut a, cin, cout, k, mode, Init::HeUniform).unwrap();
        (c, a.len())
    }

    /// Direct nested-loop convolution straight from the index definitions.
    fn naive(c: &Conv1d, params: &[f64], x: &SequenceTensor) -> SequenceTensor {
        let t_in = x.frames() as isize;
        let t_out = c.output_frames(x.frames());
        let h = (c.kernel / 2) as isize;
        let w = c.weights(params);
        let b = c.bias(params);
        let mut y = SequenceTensor::zeros(c.cout, t_out);
        for o in 0..c.cout {
            for t in 0..t_out {
                let mut acc = b[o];
                for i in 0..c.cin {
                    for j in 0..c.kernel {
                        let wv = w[(o * c.cin + i) * c.kernel + j];
                        match c.mode {
                            ConvMode::Same | ConvMode::Down2 => {
                                let stride = if c.mode == ConvMode::Same { 1 } else { 2 };
                                let src = stride * t as isize + j as isize - h;
                                if (0..t_in).contains(&src) {
                                    acc += wv * x.channel(i)[src as usize];
                                }
                            }
                            ConvMode::Up2 => {
                                // contributions from inputs s with 2s + j - h = t
                                let num = t as isize - j as isize + h;
                                if num % 2 == 0 && (0..t_in).contains(&(num / 2)) {
                                    acc += wv * x.channel(i)[(num / 2) as usize];
                                }
                            }
                        }
                    }
                }
                y.channel_mut(o)[t] = acc;
            }
        }
        y
    }

    #[test]
    fn identity_kernel() {
        let (c, n) = conv(1, 1, 3, ConvMode::Same);
        let mut p = vec![0.0; n];
        c.weights_mut(&mut p).copy_from_slice(&[0.0, 1.0, 0.0]);
        let x = tensor(1, &[3.0, -1.0, 2.0, 5.0]);
        assert_eq!(c.forward(&p, &x).unwrap(), x);
    }

    #[test]
    fn box_kernel_with_zero_padding() {
        let (c, n) = conv(1, 1, 3, ConvMode::Same);
        let mut p = vec![0.0; n];
        c.weights_mut(&mut p).fill(1.0);
        let y = c.forward(&p, &tensor(1, &[1.0; 4])).unwrap();
        assert_eq!(y.as_slice(), &[2.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn down_and_up_sampling_shapes() {
        let (d, nd) = conv(2, 3, 3, ConvMode::Down2);
        let (u, nu) = conv(3, 2, 3, ConvMode::Up2);
        let x = SequenceTensor::zeros(2, 8);
        let y = d.forward(&vec![0.1; nd], &x).unwrap();
        assert_eq!((y.channels(), y.frames()), (3, 4));
        let z = u.forward(&vec![0.1; nu], &y).unwrap();
        assert_eq!((z.channels(), z.frames()), (2, 8));
        assert!(matches!(
            d.forward(&vec![0.1; nd], &SequenceTensor::zeros(2, 7)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn averaging_down_sample() {
        let (c, n) = conv(1, 1, 3, ConvMode::Down2);
        let mut p = vec![0.0; n];
        c.weights_mut(&mut p).copy_from_slice(&[0.0, 0.5, 0.5]);
        let x = tensor(1, &[1.0, 1.0, 2.0, 2.0]);
        let y = c.forward(&p, &x).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0]);
        assert_eq!(naive(&c, &p, &x), y);
    }

    #[test]
    fn channel_mismatch() {
        let (c, n) = conv(2, 1, 3, ConvMode::Same);
        assert!(c.forward(&vec![0.0; n], &SequenceTensor::zeros(3, 4)).is_err());
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut r = rng(1);
        for mode in [ConvMode::Same, ConvMode::Down2, ConvMode::Up2] {
            for k in [1, 3, 5] {
                let (c, n) = conv(3, 2, k, mode);
                let p = uniform_vec(&mut r, n, -1.0, 1.0);
                let frames = if mode == ConvMode::Down2 { 8 } else { 7 };
                let x = SequenceTensor::from_vec(3, frames, uniform_vec(&mut r, 3 * frames, -1.0, 1.0))
                    .unwrap();
                let y = c.forward(&p, &x).unwrap();
                let want = naive(&c, &p, &x);
                for (a, b) in y.as_slice().iter().zip(want.as_slice()) {
                    assert_close(*a, *b, 1e-12);
                }
            }
        }
    }

    /// Gradient check of `sum(r ⊙ f(x))` for random `r`.
    fn check_layer_gradients(stack: &Stack, n_params: usize, cin: usize, frames: usize, seed: u64) {
        let mut r = rng(seed);
        let params = uniform_vec(&mut r, n_params, -0.5, 0.5);
        let x = SequenceTensor::from_vec(cin, frames, uniform_vec(&mut r, cin * frames, -1.0, 1.0))
            .unwrap();
        let y = stack.forward(&params, &x, None).unwrap();
        let probe = uniform_vec(&mut r, y.as_slice().len(), -1.0, 1.0);
        let objective = |p: &[f64], x: &SequenceTensor| -> f64 {
            let y = stack.forward(p, x, None).unwrap();
            y.as_slice().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = stack.forward_train(&params, &x, None).unwrap();
        let mut grad = vec![0.0; n_params];
        let dy = SequenceTensor::from_vec(y.channels(), y.frames(), probe.clone()).unwrap();
        let dx = stack.backward(&params, &tape, &dy, &mut grad).unwrap();

        let num_p = numeric_gradient(&params, 1e-5, |p| objective(p, &x));
        assert!(max_rel_err(&grad, &num_p, 1e-3) <= 1e-4, "parameter gradient");
        let num_x = numeric_gradient(x.as_slice(), 1e-5, |xs| {
            objective(&params, &SequenceTensor::from_vec(cin, frames, xs.to_vec()).unwrap())
        });
        assert!(max_rel_err(dx.as_slice(), &num_x, 1e-3) <= 1e-4, "input gradient");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            for mode in [ConvMode::Same, ConvMode::Down2, ConvMode::Up2] {
                let (c, n) = conv(3, 2, 3, mode);
                let stack = Stack::new(vec![Layer::Conv(c)]);
                check_layer_gradients(&stack, n, 3, 8, seed);
            }
            let mut a = ParamAllocator::default();
            let block = ResidualBlock {
                a: Conv1d::new(&mut a, 2, 2, 3, ConvMode::Same, Init::HeUniform).unwrap(),
                b: Conv1d::new(&mut a, 2, 2, 3, ConvMode::Same, Init::HeUniform).unwrap(),
            };
            let head = Conv1d::new(&mut a, 2, 2, 1, ConvMode::Same, Init::XavierUniform).unwrap();
            let stack = Stack::new(vec![
                Layer::Residual(block),
                Layer::Relu,
                Layer::Conv(head),
                Layer::Sigmoid,
            ]);
            check_layer_gradients(&stack, a.len(), 2, 6, 100 + seed);
        }
    }

    #[test]
    fn activations() {
        let x = tensor(1, &[-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        let y = sigmoid_forward(&x);
        let g = sigmoid_backward(&y, &tensor(1, &[1.0, 1.0, 1.0]));
        assert_close(g.as_slice()[1], 0.25, 1e-15);
    }

    #[test]
    fn dropout_contract() {
        let x = tensor(1, &[1.0; 16]);
        let (y, mask) = dropout_forward::<ChaCha8Rng>(&x, 0.5, None).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
        assert!(dropout_forward::<ChaCha8Rng>(&x, 1.0, None).is_err());
        assert!(dropout_forward::<ChaCha8Rng>(&x, -0.1, None).is_err());

        let mut r = rng(9);
        let n = 100_000;
        let x = tensor(1, &vec![1.0; n]);
        let (y, _) = dropout_forward(&x, 0.2, Some(&mut r)).unwrap();
        let mean = y.as_slice().iter().sum::<f64>() / n as f64;
        // survivors are 1.25, so the per-sample std is 0.5 and 4 sigma is 0.0063
        assert!((mean - 1.0).abs() < 0.0065, "{mean}");
        let zeros = y.as_slice().iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
        assert!((zeros - 0.2).abs() < 0.01);
    }

    #[test]
    fn inference_never_draws_random_numbers() {
        struct Panics;
        impl RngCore for Panics {
            fn next_u32(&mut self) -> u32 {
                panic!("rng used")
            }
            fn next_u64(&mut self) -> u64 {
                panic!("rng used")
            }
            fn fill_bytes(&mut self, _: &mut [u8]) {
                panic!("rng used")
            }
            fn try_fill_bytes(&mut self, _: &mut [u8]) -> core::result::Result<(), rand::Error> {
                panic!("rng used")
            }
        }
        let mut a = ParamAllocator::default();
        let c = Conv1d::new(&mut a, 1, 1, 1, ConvMode::Same, Init::HeUniform).unwrap();
        let stack = Stack::new(vec![Layer::Conv(c), Layer::Dropout(0.5)]);
        let x = tensor(1, &[1.0, 2.0]);
        let params = vec![1.0, 0.0];
        stack.forward(&params, &x, None).unwrap();
        let mut rng = rng(0);
        stack
            .forward(&params, &x, Some(&mut rng as &mut dyn RngCore))
            .unwrap();
        // ... and the training path does draw
        assert!(std::panic::catch_unwind(|| {
            let mut p = Panics;
            stack.forward(&params, &x, Some(&mut p as &mut dyn RngCore))
        })
        .is_err());
    }

    #[test]
    fn conv_is_linear_in_input() {
        let mut r = rng(4);
        let (c, n) = conv(2, 3, 3, ConvMode::Same);
        let mut p = uniform_vec(&mut r, n, -1.0, 1.0);
        c.bias_mut(&mut p).fill(0.0);
        let a = SequenceTensor::from_vec(2, 5, uniform_vec(&mut r, 10, -1.0, 1.0)).unwrap();
        let b = SequenceTensor::from_vec(2, 5, uniform_vec(&mut r, 10, -1.0, 1.0)).unwrap();
        let mut sum = a.clone();
        sum.as_mut_slice()
            .iter_mut()
            .zip(b.as_slice())
            .for_each(|(x, y)| *x = 2.0 * *x - 3.0 * y);
        let (ya, yb, ys) = (
            c.forward(&p, &a).unwrap(),
            c.forward(&p, &b).unwrap(),
            c.forward(&p, &sum).unwrap(),
        );
        for i in 0..ys.as_slice().len() {
            assert_close(ys.as_slice()[i], 2.0 * ya.as_slice()[i] - 3.0 * yb.as_slice()[i], 1e-12);
        }
    }

    #[test]
    fn adam_examples() {
        let mut s = ParameterStore::new(vec![1.0, -2.0]);
        adam_step(&mut s, &[0.0, 0.0], &AdamConfig::default()).unwrap();
        assert_eq!(s.params, [1.0, -2.0]);

        let mut s = ParameterStore::new(vec![0.0, 0.0]);
        adam_step(&mut s, &[1e3, -1e3], &AdamConfig::default()).unwrap();
        assert_close(s.params[0], -1e-3, 1e-9);
        assert_close(s.params[1], 1e-3, 1e-9);

        let hyper = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut s = ParameterStore::new(vec![1.0]);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = 2.0 * s.params[0];
            adam_step(&mut s, &[g], &hyper).unwrap();
            assert!(s.params[0].abs() < prev.abs());
            prev = s.params[0];
        }
    }

    #[test]
    fn mac_counts() {
        let (c, _) = conv(2, 3, 1, ConvMode::Same);
        assert_eq!(mac_count(&[Layer::Conv(c.clone())], 10), 60);
        let (c2, _) = conv(3, 4, 3, ConvMode::Same);
        assert_eq!(
            mac_count(&[Layer::Conv(c.clone()), Layer::Relu, Layer::Conv(c2.clone())], 10),
            60 + 3 * 4 * 3 * 10
        );
        let (d, _) = conv(2, 3, 3, ConvMode::Down2);
        assert_eq!(
            mac_count(&[Layer::Conv(d), Layer::Conv(c2)], 10),
            2 * 3 * 3 * 5 + 3 * 4 * 3 * 5
        );
    }

    #[test]
    fn initialization_ranges() {
        let mut a = ParamAllocator::default();
        let he = Conv1d::new(&mut a, 8, 4, 3, ConvMode::Same, Init::HeUniform).unwrap();
        let xa = Conv1d::new(&mut a, 4, 2, 3, ConvMode::Same, Init::XavierUniform).unwrap();
        let stack = Stack::new(vec![Layer::Conv(he.clone()), Layer::Conv(xa.clone())]);
        let mut p = vec![1.0; a.len()];
        let mut r: ChaCha8Rng = rng(2);
        stack.initialize(&mut p, &mut r);
        let lim = libm::sqrt(6.0 / 24.0);
        assert!(he.weights(&p).iter().all(|w| w.abs() <= lim));
        assert!(he.bias(&p).iter().all(|b| *b == 0.0));
        let lim = libm::sqrt(6.0 / (12.0 + 6.0));
        assert!(xa.weights(&p).iter().all(|w| w.abs() <= lim));
    }
}
