//! Layer definitions with per-sample forward and backward passes.

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayViewMutD, Ix1, Ix3, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::scalar::Scalar;

/// Declarative layer description; channel/feature sizes of inputs are
/// inferred during network construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    AvgPool {
        size: usize,
    },
    GlobalAvgPool,
    Linear {
        out_features: usize,
    },
    /// `x + body(x)`, with an automatic 1x1 projection when the body changes
    /// the channel count or spatial size.
    Residual {
        body: Vec<LayerSpec>,
    },
}

/// Shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeInfo {
    Spatial { channels: usize, height: usize, width: usize },
    Vector { features: usize },
}

impl ShapeInfo {
    pub fn describe(&self) -> String {
        match self {
            ShapeInfo::Spatial {
                channels,
                height,
                width,
            } => format!("({channels}, {height}, {width})"),
            ShapeInfo::Vector { features } => format!("({features},)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvParams<F> {
    /// (out_channels, in_channels * kernel * kernel)
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct LinearParams<F> {
    /// (out_features, in_features)
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone)]
pub enum Layer<F> {
    Conv(ConvParams<F>),
    Relu,
    AvgPool { size: usize },
    GlobalAvgPool,
    Linear(LinearParams<F>),
    Residual {
        body: Vec<Layer<F>>,
        projection: Option<ConvParams<F>>,
    },
}

/// Per-layer cache recorded during a taped forward pass.
#[derive(Debug, Clone)]
pub enum TapeEntry<F> {
    Conv { input: Array3<F> },
    Relu { input: ArrayD<F> },
    AvgPool { input_dim: [usize; 3] },
    GlobalAvgPool { input_dim: [usize; 3] },
    Linear { input: Array1<F> },
    Residual {
        input: Array3<F>,
        body: Vec<TapeEntry<F>>,
    },
}

fn kaiming_uniform<F: Scalar>(rng: &mut ChaCha12Rng, fan_in: usize, shape: (usize, usize)) -> Array2<F> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Array2::from_shape_fn(shape, |_| F::cast(rng.random_range(-bound..bound)))
}

impl<F: Scalar> ConvParams<F> {
    fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: kaiming_uniform(rng, fan_in, (out_channels, fan_in)),
            bias: Array1::zeros(out_channels),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn pad(&self, x: &Array3<F>) -> Array3<F> {
        if self.padding == 0 {
            return x.clone();
        }
        let (c, h, w) = x.dim();
        let p = self.padding;
        let mut out = Array3::zeros((c, h + 2 * p, w + 2 * p));
        out.slice_mut(ndarray::s![.., p..p + h, p..p + w]).assign(x);
        out
    }

    fn im2col(&self, padded: &Array3<F>, oh: usize, ow: usize) -> Array2<F> {
        let k = self.kernel;
        let s = self.stride;
        let mut col = Array2::<F>::zeros((self.in_channels * k * k, oh * ow));
        for c in 0..self.in_channels {
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * k + kh) * k + kw;
                    for out_h in 0..oh {
                        let ih = out_h * s + kh;
                        let src = padded.slice(ndarray::s![c, ih, kw..kw + (ow - 1) * s + 1; s]);
                        let mut dst = col.slice_mut(ndarray::s![row, out_h * ow..(out_h + 1) * ow]);
                        dst.assign(&src);
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &Array2<F>, h: usize, w: usize, oh: usize, ow: usize) -> Array3<F> {
        let k = self.kernel;
        let s = self.stride;
        let p = self.padding;
        let mut padded = Array3::<F>::zeros((self.in_channels, h + 2 * p, w + 2 * p));
        for c in 0..self.in_channels {
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * k + kh) * k + kw;
                    for out_h in 0..oh {
                        let ih = out_h * s + kh;
                        let src = dcol.slice(ndarray::s![row, out_h * ow..(out_h + 1) * ow]);
                        let mut dst =
                            padded.slice_mut(ndarray::s![c, ih, kw..kw + (ow - 1) * s + 1; s]);
                        dst += &src;
                    }
                }
            }
        }
        if p == 0 {
            padded
        } else {
            padded.slice(ndarray::s![.., p..p + h, p..p + w]).to_owned()
        }
    }

    fn forward(&self, x: &Array3<F>) -> Array3<F> {
        let (_, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let padded = self.pad(x);
        let col = self.im2col(&padded, oh, ow);
        let mut y = self.weight.dot(&col);
        for (mut row, &b) in y.rows_mut().into_iter().zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        y.into_shape_with_order((self.out_channels, oh, ow))
            .expect("conv output reshapes")
    }

    /// Returns `(dx, dweight, dbias)`; weight gradients are skipped when
    /// `want_param_grads` is false.
    fn backward(
        &self,
        input: &Array3<F>,
        dy: &Array3<F>,
        want_param_grads: bool,
    ) -> (Array3<F>, Option<(Array2<F>, Array1<F>)>) {
        let (_, h, w) = input.dim();
        let (oc, oh, ow) = dy.dim();
        let dy_mat = dy
            .view()
            .into_shape_with_order((oc, oh * ow))
            .expect("contiguous gradient");
        let padded = self.pad(input);
        let col = self.im2col(&padded, oh, ow);

        let param_grads = if want_param_grads {
            let dw = dy_mat.dot(&col.t());
            let db = dy_mat.sum_axis(ndarray::Axis(1));
            Some((dw, db))
        } else {
            None
        };

        let dcol = self.weight.t().dot(&dy_mat);
        let dx = self.col2im(&dcol, h, w, oh, ow);
        (dx, param_grads)
    }
}

impl<F: Scalar> LinearParams<F> {
    fn init(in_features: usize, out_features: usize, rng: &mut ChaCha12Rng) -> Self {
        Self {
            weight: kaiming_uniform(rng, in_features, (out_features, in_features)),
            bias: Array1::zeros(out_features),
        }
    }
}

fn as_spatial<F: Scalar>(x: &ArrayD<F>, layer: &str) -> Result<Array3<F>, NnError> {
    x.view()
        .into_dimensionality::<Ix3>()
        .map(|v| v.to_owned())
        .map_err(|_| NnError::ShapeMismatch {
            layer: layer.to_string(),
            expected: "3-d (C, H, W)".into(),
            got: format!("{:?}", x.shape()),
        })
}

fn as_vector<F: Scalar>(x: &ArrayD<F>, layer: &str) -> Result<Array1<F>, NnError> {
    x.view()
        .into_dimensionality::<Ix1>()
        .map(|v| v.to_owned())
        .map_err(|_| NnError::ShapeMismatch {
            layer: layer.to_string(),
            expected: "1-d feature vector".into(),
            got: format!("{:?}", x.shape()),
        })
}

impl<F: Scalar> Layer<F> {
    /// Build a layer from its spec, inferring input sizes from `shape` and
    /// returning the output shape.
    pub fn build(
        spec: &LayerSpec,
        shape: ShapeInfo,
        rng: &mut ChaCha12Rng,
        label: &str,
    ) -> Result<(Self, ShapeInfo), NnError> {
        match spec {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let ShapeInfo::Spatial {
                    channels,
                    height,
                    width,
                } = shape
                else {
                    return Err(NnError::BadSpec(format!(
                        "{label}: conv needs spatial input, got {}",
                        shape.describe()
                    )));
                };
                if *kernel == 0 || *stride == 0 {
                    return Err(NnError::BadSpec(format!(
                        "{label}: kernel and stride must be positive"
                    )));
                }
                if height + 2 * padding < *kernel || width + 2 * padding < *kernel {
                    return Err(NnError::BadSpec(format!(
                        "{label}: kernel {kernel} exceeds padded input {height}x{width}"
                    )));
                }
                let conv = ConvParams::init(channels, *out_channels, *kernel, *stride, *padding, rng);
                let (oh, ow) = conv.out_hw(height, width);
                Ok((
                    Layer::Conv(conv),
                    ShapeInfo::Spatial {
                        channels: *out_channels,
                        height: oh,
                        width: ow,
                    },
                ))
            }
            LayerSpec::Relu => Ok((Layer::Relu, shape)),
            LayerSpec::AvgPool { size } => {
                let ShapeInfo::Spatial {
                    channels,
                    height,
                    width,
                } = shape
                else {
                    return Err(NnError::BadSpec(format!(
                        "{label}: avg pool needs spatial input"
                    )));
                };
                if *size == 0 || height / size == 0 || width / size == 0 {
                    return Err(NnError::BadSpec(format!(
                        "{label}: pool size {size} too large for {height}x{width}"
                    )));
                }
                Ok((
                    Layer::AvgPool { size: *size },
                    ShapeInfo::Spatial {
                        channels,
                        height: height / size,
                        width: width / size,
                    },
                ))
            }
            LayerSpec::GlobalAvgPool => {
                let ShapeInfo::Spatial { channels, .. } = shape else {
                    return Err(NnError::BadSpec(format!(
                        "{label}: global pool needs spatial input"
                    )));
                };
                Ok((Layer::GlobalAvgPool, ShapeInfo::Vector { features: channels }))
            }
            LayerSpec::Linear { out_features } => {
                let ShapeInfo::Vector { features } = shape else {
                    return Err(NnError::BadSpec(format!(
                        "{label}: linear needs vector input, got {}",
                        shape.describe()
                    )));
                };
                Ok((
                    Layer::Linear(LinearParams::init(features, *out_features, rng)),
                    ShapeInfo::Vector {
                        features: *out_features,
                    },
                ))
            }
            LayerSpec::Residual { body } => {
                let ShapeInfo::Spatial {
                    channels,
                    height,
                    width,
                } = shape
                else {
                    return Err(NnError::BadSpec(format!(
                        "{label}: residual needs spatial input"
                    )));
                };
                let mut layers = Vec::with_capacity(body.len());
                let mut inner = shape;
                for (i, spec) in body.iter().enumerate() {
                    let (layer, next) =
                        Layer::build(spec, inner, rng, &format!("{label}.body{i}"))?;
                    layers.push(layer);
                    inner = next;
                }
                let ShapeInfo::Spatial {
                    channels: oc,
                    height: oh,
                    width: ow,
                } = inner
                else {
                    return Err(NnError::BadSpec(format!(
                        "{label}: residual body must stay spatial"
                    )));
                };
                let projection = if (oc, oh, ow) != (channels, height, width) {
                    if height % oh != 0 || width % ow != 0 || height / oh != width / ow {
                        return Err(NnError::BadSpec(format!(
                            "{label}: cannot project {height}x{width} onto {oh}x{ow}"
                        )));
                    }
                    Some(ConvParams::init(channels, oc, 1, height / oh, 0, rng))
                } else {
                    None
                };
                Ok((
                    Layer::Residual {
                        body: layers,
                        projection,
                    },
                    inner,
                ))
            }
        }
    }

    pub fn forward(&self, x: &ArrayD<F>, tape: Option<&mut Vec<TapeEntry<F>>>) -> Result<ArrayD<F>, NnError> {
        match self {
            Layer::Conv(conv) => {
                let input = as_spatial(x, "conv")?;
                let y = conv.forward(&input);
                if let Some(tape) = tape {
                    tape.push(TapeEntry::Conv { input });
                }
                Ok(y.into_dyn())
            }
            Layer::Relu => {
                let y = x.mapv(|v| if v > F::zero() { v } else { F::zero() });
                if let Some(tape) = tape {
                    tape.push(TapeEntry::Relu { input: x.clone() });
                }
                Ok(y)
            }
            Layer::AvgPool { size } => {
                let input = as_spatial(x, "avg_pool")?;
                let (c, h, w) = input.dim();
                let (oh, ow) = (h / size, w / size);
                let norm = F::cast_usize(size * size);
                let mut y = Array3::<F>::zeros((c, oh, ow));
                for ci in 0..c {
                    for out_h in 0..oh {
                        for out_w in 0..ow {
                            let mut acc = F::zero();
                            for dh in 0..*size {
                                for dw in 0..*size {
                                    acc += input[[ci, out_h * size + dh, out_w * size + dw]];
                                }
                            }
                            y[[ci, out_h, out_w]] = acc / norm;
                        }
                    }
                }
                if let Some(tape) = tape {
                    tape.push(TapeEntry::AvgPool {
                        input_dim: [c, h, w],
                    });
                }
                Ok(y.into_dyn())
            }
            Layer::GlobalAvgPool => {
                let input = as_spatial(x, "global_avg_pool")?;
                let (c, h, w) = input.dim();
                let norm = F::cast_usize(h * w);
                let mut y = Array1::<F>::zeros(c);
                for ci in 0..c {
                    y[ci] = input.index_axis(ndarray::Axis(0), ci).sum() / norm;
                }
                if let Some(tape) = tape {
                    tape.push(TapeEntry::GlobalAvgPool {
                        input_dim: [c, h, w],
                    });
                }
                Ok(y.into_dyn())
            }
            Layer::Linear(linear) => {
                let input = as_vector(x, "linear")?;
                if input.len() != linear.weight.dim().1 {
                    return Err(NnError::ShapeMismatch {
                        layer: "linear".into(),
                        expected: format!("{} features", linear.weight.dim().1),
                        got: format!("{} features", input.len()),
                    });
                }
                let y = linear.weight.dot(&input) + &linear.bias;
                if let Some(tape) = tape {
                    tape.push(TapeEntry::Linear { input });
                }
                Ok(y.into_dyn())
            }
            Layer::Residual { body, projection } => {
                let input = as_spatial(x, "residual")?;
                let mut inner_tape = tape.as_ref().map(|_| Vec::new());
                let mut value = x.clone();
                for layer in body {
                    value = layer.forward(&value, inner_tape.as_mut())?;
                }
                let shortcut = match projection {
                    Some(proj) => proj.forward(&input).into_dyn(),
                    None => x.clone(),
                };
                let y = value + shortcut;
                if let Some(tape) = tape {
                    tape.push(TapeEntry::Residual {
                        input,
                        body: inner_tape.expect("tape allocated"),
                    });
                }
                Ok(y)
            }
        }
    }

    /// Backward pass for one layer. `grads`, when present, receives this
    /// layer's parameter gradients in visit order via `sink`.
    pub fn backward(
        &self,
        entry: &TapeEntry<F>,
        dy: &ArrayD<F>,
        sink: Option<&mut dyn FnMut(ArrayD<F>)>,
    ) -> Result<ArrayD<F>, NnError> {
        match (self, entry) {
            (Layer::Conv(conv), TapeEntry::Conv { input }) => {
                let dy3 = as_spatial(dy, "conv-backward")?;
                let want = sink.is_some();
                let (dx, pg) = conv.backward(input, &dy3, want);
                if let Some(sink) = sink {
                    let (dw, db) = pg.expect("param grads requested");
                    sink(dw.into_dyn());
                    sink(db.into_dyn());
                }
                Ok(dx.into_dyn())
            }
            (Layer::Relu, TapeEntry::Relu { input }) => {
                let mut dx = dy.clone();
                ndarray::Zip::from(&mut dx).and(input).for_each(|g, &v| {
                    if v <= F::zero() {
                        *g = F::zero();
                    }
                });
                Ok(dx)
            }
            (Layer::AvgPool { size }, TapeEntry::AvgPool { input_dim }) => {
                let dy3 = as_spatial(dy, "avg_pool-backward")?;
                let [c, h, w] = *input_dim;
                let (_, oh, ow) = dy3.dim();
                let norm = F::cast_usize(size * size);
                let mut dx = Array3::<F>::zeros((c, h, w));
                for ci in 0..c {
                    for out_h in 0..oh {
                        for out_w in 0..ow {
                            let g = dy3[[ci, out_h, out_w]] / norm;
                            for dh in 0..*size {
                                for dw in 0..*size {
                                    dx[[ci, out_h * size + dh, out_w * size + dw]] = g;
                                }
                            }
                        }
                    }
                }
                Ok(dx.into_dyn())
            }
            (Layer::GlobalAvgPool, TapeEntry::GlobalAvgPool { input_dim }) => {
                let dy1 = as_vector(dy, "global_avg_pool-backward")?;
                let [c, h, w] = *input_dim;
                let norm = F::cast_usize(h * w);
                let mut dx = Array3::<F>::zeros((c, h, w));
                for ci in 0..c {
                    let g = dy1[ci] / norm;
                    dx.index_axis_mut(ndarray::Axis(0), ci).fill(g);
                }
                Ok(dx.into_dyn())
            }
            (Layer::Linear(linear), TapeEntry::Linear { input }) => {
                let dy1 = as_vector(dy, "linear-backward")?;
                if let Some(sink) = sink {
                    let dw = Array2::from_shape_fn(linear.weight.dim(), |(o, i)| {
                        dy1[o] * input[i]
                    });
                    sink(dw.into_dyn());
                    sink(dy1.clone().into_dyn());
                }
                let dx = linear.weight.t().dot(&dy1);
                Ok(dx.into_dyn())
            }
            (
                Layer::Residual { body, projection },
                TapeEntry::Residual { input, body: body_tape },
            ) => {
                // shortcut branch
                let mut shortcut_grads: Vec<ArrayD<F>> = Vec::new();
                let d_shortcut = match projection {
                    Some(proj) => {
                        let dy3 = as_spatial(dy, "residual-backward")?;
                        let want = sink.is_some();
                        let (dx, pg) = proj.backward(input, &dy3, want);
                        if want {
                            let (dw, db) = pg.expect("param grads requested");
                            shortcut_grads.push(dw.into_dyn());
                            shortcut_grads.push(db.into_dyn());
                        }
                        dx.into_dyn()
                    }
                    None => dy.clone(),
                };
                // body branch, reverse order; grads re-assembled in forward order
                let mut per_layer: Vec<Vec<ArrayD<F>>> = Vec::with_capacity(body.len());
                let mut grad = dy.clone();
                let want = sink.is_some();
                for (layer, entry) in body.iter().zip(body_tape.iter()).rev() {
                    let mut collected: Vec<ArrayD<F>> = Vec::new();
                    let mut collect = |g: ArrayD<F>| collected.push(g);
                    grad = layer.backward(
                        entry,
                        &grad,
                        if want { Some(&mut collect) } else { None },
                    )?;
                    per_layer.push(collected);
                }
                if let Some(sink) = sink {
                    per_layer.reverse();
                    for grads in per_layer {
                        for g in grads {
                            sink(g);
                        }
                    }
                    for g in shortcut_grads {
                        sink(g);
                    }
                }
                Ok(grad + d_shortcut)
            }
            _ => Err(NnError::ShapeMismatch {
                layer: "backward".into(),
                expected: "matching tape entry".into(),
                got: "mismatched tape entry".into(),
            }),
        }
    }

    /// Visit parameters immutably in a stable order (conv/linear weight then
    /// bias; residual body layers in order, then the projection).
    pub fn visit_params(&self, label: &str, f: &mut dyn FnMut(String, ndarray::ArrayViewD<'_, F>)) {
        match self {
            Layer::Conv(conv) => {
                f(format!("{label}.weight"), conv.weight.view().into_dyn());
                f(format!("{label}.bias"), conv.bias.view().into_dyn());
            }
            Layer::Linear(linear) => {
                f(format!("{label}.weight"), linear.weight.view().into_dyn());
                f(format!("{label}.bias"), linear.bias.view().into_dyn());
            }
            Layer::Residual { body, projection } => {
                for (i, layer) in body.iter().enumerate() {
                    layer.visit_params(&format!("{label}.body{i}"), f);
                }
                if let Some(proj) = projection {
                    f(format!("{label}.proj.weight"), proj.weight.view().into_dyn());
                    f(format!("{label}.proj.bias"), proj.bias.view().into_dyn());
                }
            }
            _ => {}
        }
    }

    /// Visit parameters mutably, same order as [`Layer::visit_params`].
    pub fn visit_params_mut(
        &mut self,
        label: &str,
        f: &mut dyn FnMut(String, ArrayViewMutD<'_, F>),
    ) {
        match self {
            Layer::Conv(conv) => {
                f(format!("{label}.weight"), conv.weight.view_mut().into_dyn());
                f(format!("{label}.bias"), conv.bias.view_mut().into_dyn());
            }
            Layer::Linear(linear) => {
                f(format!("{label}.weight"), linear.weight.view_mut().into_dyn());
                f(format!("{label}.bias"), linear.bias.view_mut().into_dyn());
            }
            Layer::Residual { body, projection } => {
                for (i, layer) in body.iter_mut().enumerate() {
                    layer.visit_params_mut(&format!("{label}.body{i}"), f);
                }
                if let Some(proj) = projection {
                    f(format!("{label}.proj.weight"), proj.weight.view_mut().into_dyn());
                    f(format!("{label}.proj.bias"), proj.bias.view_mut().into_dyn());
                }
            }
            _ => {}
        }
    }

    /// True when the layer's output keeps a spatial (C, H, W) layout.
    pub fn is_spatial_output(&self, input_spatial: bool) -> bool {
        match self {
            Layer::Conv(_) | Layer::AvgPool { .. } | Layer::Residual { .. } => true,
            Layer::Relu => input_spatial,
            Layer::GlobalAvgPool | Layer::Linear(_) => false,
        }
    }
}

/// Zero-filled gradient buffers matching a layer's parameters.
pub fn zero_like_params<F: Scalar>(layer: &Layer<F>) -> Vec<ArrayD<F>> {
    let mut out = Vec::new();
    layer.visit_params("p", &mut |_, p| out.push(ArrayD::zeros(IxDyn(p.shape()))));
    out
}
