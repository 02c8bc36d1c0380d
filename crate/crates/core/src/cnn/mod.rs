//! A small differentiable convolutional network.
//!
//! Activations reuse [`Image`] as an `H×W×C` tensor; dense layers produce a
//! `1×1×N` image. Reverse-mode differentiation is exact for every layer kind,
//! with ReLU taking derivative 0 at 0 and max-pooling routing the gradient to
//! the first maximal element in row-major window order.

mod container;
mod data;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Image;

pub use container::{load_model, load_model_bytes, model_manifest, save_model, save_model_bytes, MAGIC};
pub use data::{
    synth_dataset, Dataset, CANVAS_SIDE, NUM_CLASSES, REFERENCE_DATASET_SIZE, REFERENCE_TRAIN_SIZE,
};
pub use train::{
    accuracy, cross_entropy, parameter_gradients, predict, train, EpochMetrics, TrainOptions,
    TrainReport,
};

/// Height, width and channel count of an activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn of(image: &Image) -> Self {
        let (h, w, c) = image.shape();
        Shape::new(h, w, c)
    }
}

/// One layer of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Square convolution with replicate padding; output size `ceil(dim / stride)`.
    Conv {
        out_channels: usize,
        kernel_side: usize,
        stride: usize,
    },
    Relu,
    /// 2×2 window, stride 2; odd trailing rows/columns are dropped.
    MaxPool,
    /// Mean over all spatial positions, one value per channel.
    AvgPoolGlobal,
    /// Fully connected layer on the flattened input.
    Dense { out_features: usize },
    /// Per-channel learned scale and shift.
    AffineNorm,
}

impl LayerSpec {
    pub fn conv(out_channels: usize, kernel_side: usize) -> Self {
        LayerSpec::Conv {
            out_channels,
            kernel_side,
            stride: 1,
        }
    }

    pub fn dense(out_features: usize) -> Self {
        LayerSpec::Dense { out_features }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. })
    }

    /// Output shape for a given input shape, or a description of the mismatch.
    pub fn output_shape(&self, input: Shape) -> std::result::Result<Shape, String> {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel_side,
                stride,
            } => {
                if kernel_side == 0 || kernel_side % 2 == 0 {
                    return Err(format!("conv kernel side {kernel_side} must be odd"));
                }
                if stride == 0 {
                    return Err("conv stride must be at least 1".into());
                }
                if out_channels == 0 {
                    return Err("conv needs at least one output channel".into());
                }
                Ok(Shape::new(
                    input.height.div_ceil(stride),
                    input.width.div_ceil(stride),
                    out_channels,
                ))
            }
            LayerSpec::Relu | LayerSpec::AffineNorm => Ok(input),
            LayerSpec::MaxPool => {
                if input.height < 2 || input.width < 2 {
                    return Err(format!(
                        "maxpool needs at least 2x2 input, got {}x{}",
                        input.height, input.width
                    ));
                }
                Ok(Shape::new(input.height / 2, input.width / 2, input.channels))
            }
            LayerSpec::AvgPoolGlobal => Ok(Shape::new(1, 1, input.channels)),
            LayerSpec::Dense { out_features } => {
                if out_features == 0 {
                    return Err("dense needs at least one output".into());
                }
                Ok(Shape::new(1, 1, out_features))
            }
        }
    }

    /// Names and shapes of the learned tensors, in storage order.
    fn param_layout(&self, input: Shape) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                out_channels,
                kernel_side,
                ..
            } => vec![
                (
                    "weight",
                    vec![out_channels, kernel_side, kernel_side, input.channels],
                ),
                ("bias", vec![out_channels]),
            ],
            LayerSpec::Dense { out_features } => vec![
                ("weight", vec![out_features, input.len()]),
                ("bias", vec![out_features]),
            ],
            LayerSpec::AffineNorm => vec![
                ("scale", vec![input.channels]),
                ("shift", vec![input.channels]),
            ],
            LayerSpec::Relu | LayerSpec::MaxPool | LayerSpec::AvgPoolGlobal => Vec::new(),
        }
    }
}

/// A named learned tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// A flattened activation taken at a given layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureCode {
    pub values: Vec<f64>,
    pub origin_layer: usize,
}

impl FeatureCode {
    pub fn new(values: Vec<f64>, origin_layer: usize) -> Self {
        FeatureCode {
            values,
            origin_layer,
        }
    }

    pub fn zeros(len: usize, origin_layer: usize) -> Self {
        FeatureCode::new(vec![0.0; len], origin_layer)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Intermediate state of one forward pass, sufficient for reverse mode.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Image>,
    /// For max-pool layers: flat input index selected for every output sample.
    pub argmax: Vec<Option<Vec<usize>>>,
}

impl ForwardTrace {
    /// Discrete state that determines which smooth piece of the network is
    /// active: ReLU sign pattern and max-pool selections. Two inputs with the
    /// same pattern lie in the same differentiable region.
    pub fn activation_pattern(&self, net: &Network) -> Vec<u64> {
        let mut bits = Vec::new();
        for (l, spec) in net.layers.iter().enumerate().take(self.argmax.len()) {
            match spec {
                LayerSpec::Relu => bits.extend(
                    self.activations[l]
                        .as_slice()
                        .iter()
                        .map(|&v| u64::from(v > 0.0)),
                ),
                LayerSpec::MaxPool => {
                    bits.extend(self.argmax[l].iter().flatten().map(|&i| i as u64))
                }
                _ => {}
            }
        }
        bits
    }
}

/// An ordered stack of layers with parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    params: Vec<Vec<ParamTensor>>,
    shapes: Vec<Shape>,
    seed: u64,
}

fn layer_shapes(input_shape: Shape, layers: &[LayerSpec]) -> Result<Vec<Shape>> {
    if input_shape.is_empty() {
        return Err(Error::Dimension("network input shape must be non-empty".into()));
    }
    if layers.is_empty() {
        return Err(Error::Dimension("network needs at least one layer".into()));
    }
    let mut shapes = Vec::with_capacity(layers.len());
    let mut current = input_shape;
    for (l, spec) in layers.iter().enumerate() {
        current = spec
            .output_shape(current)
            .map_err(|m| Error::Dimension(format!("layer {l} ({spec:?}): {m}")))?;
        shapes.push(current);
    }
    Ok(shapes)
}

impl Network {
    /// Builds a network and draws initial weights from `seed`: weights
    /// uniform in `±sqrt(6 / (fan_in + fan_out))`, biases and shifts 0,
    /// scales 1.
    pub fn new(input_shape: Shape, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let shapes = layer_shapes(input_shape, &layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(layers.len());
        for (l, spec) in layers.iter().enumerate() {
            let in_shape = if l == 0 { input_shape } else { shapes[l - 1] };
            let (fan_in, fan_out) = match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel_side,
                    ..
                } => {
                    let k2 = kernel_side * kernel_side;
                    (k2 * in_shape.channels, k2 * out_channels)
                }
                LayerSpec::Dense { out_features } => (in_shape.len(), out_features),
                _ => (1, 1),
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let tensors = spec
                .param_layout(in_shape)
                .into_iter()
                .map(|(name, shape)| {
                    let n: usize = shape.iter().product();
                    let data = match name {
                        "weight" => (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
                        "scale" => vec![1.0; n],
                        _ => vec![0.0; n],
                    };
                    ParamTensor {
                        name: name.to_string(),
                        shape,
                        data,
                    }
                })
                .collect();
            params.push(tensors);
        }
        Ok(Network {
            input_shape,
            layers,
            params,
            shapes,
            seed,
        })
    }

    /// Builds a network from explicit parameters, checked against the layout.
    pub fn with_params(
        input_shape: Shape,
        layers: Vec<LayerSpec>,
        seed: u64,
        params: Vec<Vec<ParamTensor>>,
    ) -> Result<Self> {
        let mut net = Network::new(input_shape, layers, seed)?;
        if params.len() != net.layers.len() {
            return Err(Error::Dimension(format!(
                "expected parameters for {} layers, got {}",
                net.layers.len(),
                params.len()
            )));
        }
        for (l, (have, want)) in params.iter().zip(&net.params).enumerate() {
            let have_layout: Vec<_> = have.iter().map(|t| (&t.name, &t.shape)).collect();
            let want_layout: Vec<_> = want.iter().map(|t| (&t.name, &t.shape)).collect();
            if have_layout != want_layout {
                return Err(Error::Dimension(format!(
                    "layer {l}: parameter layout {have_layout:?} does not match {want_layout:?}"
                )));
            }
            for t in have {
                if t.data.len() != t.shape.iter().product::<usize>() {
                    return Err(Error::Dimension(format!(
                        "layer {l} tensor {}: {} values for shape {:?}",
                        t.name,
                        t.data.len(),
                        t.shape
                    )));
                }
                if t.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("layer {l} tensor {} not finite", t.name)));
                }
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Index of the final layer (the logits for a classifier).
    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer_shape(&self, layer: usize) -> Result<Shape> {
        self.shapes.get(layer).copied().ok_or_else(|| {
            Error::Dimension(format!(
                "layer {layer} out of range for {} layers",
                self.layers.len()
            ))
        })
    }

    pub fn params(&self) -> &[Vec<ParamTensor>] {
        &self.params
    }

    /// Mutable access to one tensor's values; shape is fixed.
    pub fn param_mut(&mut self, layer: usize, name: &str) -> Option<&mut [f64]> {
        self.params
            .get_mut(layer)?
            .iter_mut()
            .find(|t| t.name == name)
            .map(|t| t.data.as_mut_slice())
    }

    /// Total number of learned scalars.
    pub fn num_params(&self) -> usize {
        self.params.iter().flatten().map(|t| t.data.len()).sum()
    }

    /// Deepest convolution layer index.
    pub fn deepest_conv(&self) -> Option<usize> {
        self.layers.iter().rposition(LayerSpec::is_conv)
    }

    /// Layer directly preceding the first dense layer, or the output layer
    /// when there is no dense layer.
    pub fn deepest_pre_dense(&self) -> usize {
        match self
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Dense { .. }))
        {
            Some(0) | None => self.output_layer(),
            Some(d) => d - 1,
        }
    }

    fn check_input(&self, input: &Image) -> Result<()> {
        if Shape::of(input) != self.input_shape {
            return Err(Error::Dimension(format!(
                "input shape {:?} does not match network input {:?}",
                input.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.layers.len() {
            return Err(Error::Dimension(format!(
                "layer {layer} out of range for {} layers",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Runs layers `0..=upto` and keeps every intermediate activation.
    pub fn forward_trace(&self, input: &Image, upto: usize) -> Result<ForwardTrace> {
        self.check_input(input)?;
        self.check_layer(upto)?;
        let mut activations = Vec::with_capacity(upto + 2);
        let mut argmax = Vec::with_capacity(upto + 1);
        activations.push(input.clone());
        for l in 0..=upto {
            let x = &activations[l];
            let (y, am) = self.layer_forward(l, x);
            activations.push(y);
            argmax.push(am);
        }
        Ok(ForwardTrace {
            activations,
            argmax,
        })
    }

    /// Flattened activation of layer `upto` (inclusive).
    pub fn forward(&self, input: &Image, upto: usize) -> Result<FeatureCode> {
        self.check_input(input)?;
        self.check_layer(upto)?;
        let mut x = input.clone();
        for l in 0..=upto {
            x = self.layer_forward(l, &x).0;
        }
        x.check_finite()
            .map_err(|e| Error::Numerical(format!("forward pass: {e}")))?;
        Ok(FeatureCode::new(x.into_vec(), upto))
    }

    /// Logits of the final layer.
    pub fn logits(&self, input: &Image) -> Result<Vec<f64>> {
        Ok(self.forward(input, self.output_layer())?.values)
    }

    /// Gradient of `⟨forward(input, upto), cotangent⟩` with respect to the input.
    pub fn backward_input(
        &self,
        input: &Image,
        upto: usize,
        cotangent: &FeatureCode,
    ) -> Result<Image> {
        let trace = self.forward_trace(input, upto)?;
        self.backward_from_trace(&trace, upto, cotangent, None)
    }

    /// Reverse pass over a recorded trace. When `param_grads` is supplied,
    /// parameter gradients are accumulated into it (same layout as `params`).
    pub(crate) fn backward_from_trace(
        &self,
        trace: &ForwardTrace,
        upto: usize,
        cotangent: &FeatureCode,
        mut param_grads: Option<&mut [Vec<Vec<f64>>]>,
    ) -> Result<Image> {
        let out_shape = self.shapes[upto];
        if cotangent.len() != out_shape.len() {
            return Err(Error::Dimension(format!(
                "cotangent has {} entries, layer {upto} outputs {}",
                cotangent.len(),
                out_shape.len()
            )));
        }
        let mut grad = Image::from_parts(
            out_shape.height,
            out_shape.width,
            out_shape.channels,
            cotangent.values.clone(),
        );
        for l in (0..=upto).rev() {
            let pg = param_grads.as_deref_mut().map(|g| g[l].as_mut_slice());
            grad = self.layer_backward(l, &trace.activations[l], &trace.argmax[l], &grad, pg);
        }
        grad.check_finite()
            .map_err(|e| Error::Numerical(format!("backward pass: {e}")))?;
        Ok(grad)
    }

    fn layer_forward(&self, l: usize, x: &Image) -> (Image, Option<Vec<usize>>) {
        let p = &self.params[l];
        let out = self.shapes[l];
        match self.layers[l] {
            LayerSpec::Conv {
                kernel_side,
                stride,
                ..
            } => (
                conv_forward(x, &p[0].data, &p[1].data, kernel_side, stride, out),
                None,
            ),
            LayerSpec::Relu => (x.map(|v| v.max(0.0)), None),
            LayerSpec::MaxPool => {
                let (y, am) = maxpool_forward(x, out);
                (y, Some(am))
            }
            LayerSpec::AvgPoolGlobal => {
                let (h, w, c) = x.shape();
                let mut sums = vec![0.0; c];
                for (i, v) in x.as_slice().iter().enumerate() {
                    sums[i % c] += v;
                }
                let n = (h * w) as f64;
                (
                    Image::from_parts(1, 1, c, sums.into_iter().map(|s| s / n).collect()),
                    None,
                )
            }
            LayerSpec::Dense { out_features } => {
                let xs = x.as_slice();
                let n = xs.len();
                let (w, b) = (&p[0].data, &p[1].data);
                let y = (0..out_features)
                    .map(|o| b[o] + dot(&w[o * n..(o + 1) * n], xs))
                    .collect();
                (Image::from_parts(1, 1, out_features, y), None)
            }
            LayerSpec::AffineNorm => {
                let c = x.channels();
                let (scale, shift) = (&p[0].data, &p[1].data);
                let y = x
                    .as_slice()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| scale[i % c] * v + shift[i % c])
                    .collect();
                (Image::from_parts(out.height, out.width, out.channels, y), None)
            }
        }
    }

    fn layer_backward(
        &self,
        l: usize,
        x: &Image,
        argmax: &Option<Vec<usize>>,
        dy: &Image,
        param_grads: Option<&mut [Vec<f64>]>,
    ) -> Image {
        let p = &self.params[l];
        match self.layers[l] {
            LayerSpec::Conv {
                kernel_side,
                stride,
                ..
            } => conv_backward(x, &p[0].data, kernel_side, stride, dy, param_grads),
            LayerSpec::Relu => {
                let g = x
                    .as_slice()
                    .iter()
                    .zip(dy.as_slice())
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                let (h, w, c) = x.shape();
                Image::from_parts(h, w, c, g)
            }
            LayerSpec::MaxPool => {
                let mut g = x.zeros_like();
                let am = argmax.as_ref().expect("maxpool trace records argmax");
                for (&src, &d) in am.iter().zip(dy.as_slice()) {
                    g.as_mut_slice()[src] += d;
                }
                g
            }
            LayerSpec::AvgPoolGlobal => {
                let (h, w, c) = x.shape();
                let n = (h * w) as f64;
                let d = dy.as_slice();
                let g = (0..h * w * c).map(|i| d[i % c] / n).collect();
                Image::from_parts(h, w, c, g)
            }
            LayerSpec::Dense { out_features } => {
                let xs = x.as_slice();
                let n = xs.len();
                let w = &p[0].data;
                let d = dy.as_slice();
                let mut g = vec![0.0; n];
                for o in 0..out_features {
                    let row = &w[o * n..(o + 1) * n];
                    for (gk, wk) in g.iter_mut().zip(row) {
                        *gk += d[o] * wk;
                    }
                }
                if let Some(pg) = param_grads {
                    let (gw, rest) = pg.split_at_mut(1);
                    for o in 0..out_features {
                        for (k, xk) in xs.iter().enumerate() {
                            gw[0][o * n + k] += d[o] * xk;
                        }
                        rest[0][o] += d[o];
                    }
                }
                let (h, wd, c) = x.shape();
                Image::from_parts(h, wd, c, g)
            }
            LayerSpec::AffineNorm => {
                let c = x.channels();
                let scale = &p[0].data;
                let d = dy.as_slice();
                let g = d
                    .iter()
                    .enumerate()
                    .map(|(i, v)| scale[i % c] * v)
                    .collect();
                if let Some(pg) = param_grads {
                    let (gs, gb) = pg.split_at_mut(1);
                    for (i, (v, xv)) in d.iter().zip(x.as_slice()).enumerate() {
                        gs[0][i % c] += v * xv;
                        gb[0][i % c] += v;
                    }
                }
                let (h, w, c) = x.shape();
                Image::from_parts(h, w, c, g)
            }
        }
    }

    /// Zero-initialized buffers matching the parameter layout.
    pub(crate) fn zero_param_grads(&self) -> Vec<Vec<Vec<f64>>> {
        self.params
            .iter()
            .map(|ts| ts.iter().map(|t| vec![0.0; t.data.len()]).collect())
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Vec<ParamTensor>] {
        &mut self.params
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gathers the replicate-padded `k×k×C` patch feeding output `(yo, xo)`.
fn gather_patch(x: &Image, yo: usize, xo: usize, k: usize, stride: usize, patch: &mut [f64]) {
    let (h, w, c) = x.shape();
    let r = (k / 2) as isize;
    let data = x.as_slice();
    let mut p = 0;
    for ky in 0..k {
        let iy = (yo as isize * stride as isize + ky as isize - r).clamp(0, h as isize - 1) as usize;
        for kx in 0..k {
            let ix =
                (xo as isize * stride as isize + kx as isize - r).clamp(0, w as isize - 1) as usize;
            let base = (iy * w + ix) * c;
            patch[p..p + c].copy_from_slice(&data[base..base + c]);
            p += c;
        }
    }
}

fn conv_forward(
    x: &Image,
    weight: &[f64],
    bias: &[f64],
    k: usize,
    stride: usize,
    out: Shape,
) -> Image {
    let plen = k * k * x.channels();
    let mut patch = vec![0.0; plen];
    let mut y = Vec::with_capacity(out.len());
    for yo in 0..out.height {
        for xo in 0..out.width {
            gather_patch(x, yo, xo, k, stride, &mut patch);
            for (o, b) in bias.iter().enumerate() {
                y.push(b + dot(&weight[o * plen..(o + 1) * plen], &patch));
            }
        }
    }
    Image::from_parts(out.height, out.width, out.channels, y)
}

fn conv_backward(
    x: &Image,
    weight: &[f64],
    k: usize,
    stride: usize,
    dy: &Image,
    mut param_grads: Option<&mut [Vec<f64>]>,
) -> Image {
    let (h, w, c) = x.shape();
    let (ho, wo, co) = dy.shape();
    let plen = k * k * c;
    let r = (k / 2) as isize;
    let mut dx = vec![0.0; x.len()];
    let mut patch = vec![0.0; plen];
    let mut dpatch = vec![0.0; plen];
    let d = dy.as_slice();
    for yo in 0..ho {
        for xo in 0..wo {
            let dout = &d[(yo * wo + xo) * co..(yo * wo + xo + 1) * co];
            dpatch.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in dout.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (dp, wv) in dpatch.iter_mut().zip(&weight[o * plen..(o + 1) * plen]) {
                    *dp += g * wv;
                }
            }
            if let Some(pg) = param_grads.as_deref_mut() {
                gather_patch(x, yo, xo, k, stride, &mut patch);
                let (gw, gb) = pg.split_at_mut(1);
                for (o, &g) in dout.iter().enumerate() {
                    for (gwv, pv) in gw[0][o * plen..(o + 1) * plen].iter_mut().zip(&patch) {
                        *gwv += g * pv;
                    }
                    gb[0][o] += g;
                }
            }
            // Scatter back through the clamped gather.
            let mut p = 0;
            for ky in 0..k {
                let iy = (yo as isize * stride as isize + ky as isize - r).clamp(0, h as isize - 1)
                    as usize;
                for kx in 0..k {
                    let ix = (xo as isize * stride as isize + kx as isize - r)
                        .clamp(0, w as isize - 1) as usize;
                    let base = (iy * w + ix) * c;
                    for ci in 0..c {
                        dx[base + ci] += dpatch[p + ci];
                    }
                    p += c;
                }
            }
        }
    }
    Image::from_parts(h, w, c, dx)
}

fn maxpool_forward(x: &Image, out: Shape) -> (Image, Vec<usize>) {
    let c = x.channels();
    let data = x.as_slice();
    let mut y = Vec::with_capacity(out.len());
    let mut am = Vec::with_capacity(out.len());
    for yo in 0..out.height {
        for xo in 0..out.width {
            for ci in 0..c {
                let mut best = x.index(2 * yo, 2 * xo, ci);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = x.index(2 * yo + dy, 2 * xo + dx, ci);
                    // Strict comparison keeps the first maximum in row-major order.
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                y.push(data[best]);
                am.push(best);
            }
        }
    }
    (Image::from_parts(out.height, out.width, out.channels, y), am)
}

/// Built-in reference architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// conv(8)-relu-maxpool-conv(16)-relu-maxpool-dense(3)
    Vggish,
    /// conv(6)-relu-conv(12)-relu-maxpool-avgpool_global-dense(3)
    Densish,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Vggish => "vggish",
            Architecture::Densish => "densish",
        }
    }

    pub fn layers(self) -> Vec<LayerSpec> {
        match self {
            Architecture::Vggish => vec![
                LayerSpec::conv(8, 3),
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::conv(16, 3),
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::dense(NUM_CLASSES),
            ],
            Architecture::Densish => vec![
                LayerSpec::conv(6, 3),
                LayerSpec::Relu,
                LayerSpec::conv(12, 3),
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::AvgPoolGlobal,
                LayerSpec::dense(NUM_CLASSES),
            ],
        }
    }

    /// SGD settings used for the reference training runs. The global-average
    /// head of `densish` feeds small activations to its dense layer and needs
    /// a larger step.
    pub fn train_options(self) -> TrainOptions {
        let learning_rate = match self {
            Architecture::Vggish => 0.05,
            Architecture::Densish => 0.2,
        };
        TrainOptions {
            learning_rate,
            ..TrainOptions::default()
        }
    }

    /// Untrained network on the synthetic canvas shape.
    pub fn build(self, seed: u64) -> Result<Network> {
        Network::new(
            Shape::new(CANVAS_SIDE, CANVAS_SIDE, 1),
            self.layers(),
            seed,
        )
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
