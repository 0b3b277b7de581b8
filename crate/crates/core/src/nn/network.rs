//! Networks: ordered layer stacks with taped forward and reverse passes.

use ndarray::{ArrayD, ArrayViewMutD, IxDyn};
use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerSpec, ShapeInfo, TapeEntry};
use super::NnError;
use crate::rng::seeded_rng;
use crate::scalar::Scalar;

/// Architecture description: input shape plus the layer stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    Image { channels: usize, height: usize, width: usize },
    Features { features: usize },
}

impl InputSpec {
    fn shape_info(&self) -> ShapeInfo {
        match *self {
            InputSpec::Image {
                channels,
                height,
                width,
            } => ShapeInfo::Spatial {
                channels,
                height,
                width,
            },
            InputSpec::Features { features } => ShapeInfo::Vector { features },
        }
    }
}

/// Recorded activations of one forward pass, consumed by `backward`.
pub struct Tape<F> {
    entries: Vec<TapeEntry<F>>,
}

/// Parameter gradients in the network's visit order.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub tensors: Vec<ArrayD<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn add_assign(&mut self, other: &Gradients<F>) {
        assert_eq!(self.tensors.len(), other.tensors.len(), "gradient layouts differ");
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: F) {
        for t in self.tensors.iter_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// A stack of layers operating on one sample at a time.
#[derive(Debug, Clone)]
pub struct Network<F> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<F>>,
    output_shape: ShapeInfo,
}

impl<F: Scalar> Network<F> {
    /// Build a network with fresh parameters; deterministic per seed.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let mut shape = spec.input.shape_info();
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut rng = seeded_rng(seed, "net-init", 0);
        for (i, layer_spec) in spec.layers.iter().enumerate() {
            let (layer, next) = Layer::build(layer_spec, shape, &mut rng, &format!("layer{i}"))?;
            layers.push(layer);
            shape = next;
        }
        Ok(Self {
            spec,
            layers,
            output_shape: shape,
        })
    }

    pub fn output_features(&self) -> Result<usize, NnError> {
        match self.output_shape {
            ShapeInfo::Vector { features } => Ok(features),
            ShapeInfo::Spatial { .. } => Err(NnError::BadSpec(
                "network output is spatial, expected features".into(),
            )),
        }
    }

    /// Adapt an input to the expected channel count: grayscale inputs are
    /// replicated across channels when the stem expects more than one.
    pub fn adapt_input(&self, x: &ArrayD<F>) -> Result<ArrayD<F>, NnError> {
        let InputSpec::Image { channels, height, width } = self.spec.input else {
            return Ok(x.clone());
        };
        let shape = x.shape();
        let (c_in, h, w) = match shape.len() {
            2 => (1, shape[0], shape[1]),
            3 => (shape[0], shape[1], shape[2]),
            _ => {
                return Err(NnError::ShapeMismatch {
                    layer: "input".into(),
                    expected: format!("({channels}, {height}, {width})"),
                    got: format!("{shape:?}"),
                })
            }
        };
        if (h, w) != (height, width) {
            return Err(NnError::ShapeMismatch {
                layer: "input".into(),
                expected: format!("({channels}, {height}, {width})"),
                got: format!("{shape:?}"),
            });
        }
        let flat = x
            .view()
            .into_shape_with_order((c_in, h, w))
            .expect("contiguous input");
        if c_in == channels {
            return Ok(flat.to_owned().into_dyn());
        }
        if c_in == 1 {
            let mut out = ndarray::Array3::<F>::zeros((channels, h, w));
            for c in 0..channels {
                out.index_axis_mut(ndarray::Axis(0), c)
                    .assign(&flat.index_axis(ndarray::Axis(0), 0));
            }
            return Ok(out.into_dyn());
        }
        Err(NnError::ShapeMismatch {
            layer: "input".into(),
            expected: format!("{channels} channels"),
            got: format!("{c_in} channels"),
        })
    }

    pub fn forward(&self, x: &ArrayD<F>) -> Result<ArrayD<F>, NnError> {
        let mut value = self.adapt_input(x)?;
        for layer in &self.layers {
            value = layer.forward(&value, None)?;
        }
        Ok(value)
    }

    pub fn forward_tape(&self, x: &ArrayD<F>) -> Result<(ArrayD<F>, Tape<F>), NnError> {
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut value = self.adapt_input(x)?;
        for layer in &self.layers {
            value = layer.forward(&value, Some(&mut entries))?;
        }
        Ok((value, Tape { entries }))
    }

    /// Forward pass returning the output of every layer (post-adaptation
    /// input excluded).
    pub fn forward_collect(&self, x: &ArrayD<F>) -> Result<Vec<ArrayD<F>>, NnError> {
        let mut value = self.adapt_input(x)?;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            value = layer.forward(&value, None)?;
            outputs.push(value.clone());
        }
        Ok(outputs)
    }

    /// Reverse pass. Accumulates parameter gradients into `grads` when
    /// provided and returns the gradient with respect to the (adapted)
    /// network input.
    pub fn backward(
        &self,
        tape: &Tape<F>,
        dy: &ArrayD<F>,
        grads: Option<&mut Gradients<F>>,
    ) -> Result<ArrayD<F>, NnError> {
        self.backward_capture(tape, dy, grads, None).map(|(dx, _)| dx)
    }

    /// Reverse pass that additionally captures the gradient flowing into the
    /// output of layer `capture_after` (by index).
    pub fn backward_capture(
        &self,
        tape: &Tape<F>,
        dy: &ArrayD<F>,
        grads: Option<&mut Gradients<F>>,
        capture_after: Option<usize>,
    ) -> Result<(ArrayD<F>, Option<ArrayD<F>>), NnError> {
        assert_eq!(tape.entries.len(), self.layers.len(), "tape mismatch");
        let want = grads.is_some();
        let mut per_layer: Vec<Vec<ArrayD<F>>> = Vec::with_capacity(self.layers.len());
        let mut grad = dy.clone();
        let mut captured = None;
        for (idx, (layer, entry)) in self.layers.iter().zip(tape.entries.iter()).enumerate().rev() {
            if capture_after == Some(idx) {
                captured = Some(grad.clone());
            }
            let mut collected: Vec<ArrayD<F>> = Vec::new();
            let mut sink = |g: ArrayD<F>| collected.push(g);
            grad = layer.backward(entry, &grad, if want { Some(&mut sink) } else { None })?;
            per_layer.push(collected);
        }
        if let Some(grads) = grads {
            per_layer.reverse();
            let mut cursor = 0usize;
            for collected in per_layer {
                for g in collected {
                    assert_eq!(
                        grads.tensors[cursor].shape(),
                        g.shape(),
                        "gradient layout mismatch at tensor {cursor}"
                    );
                    grads.tensors[cursor] += &g;
                    cursor += 1;
                }
            }
            assert_eq!(cursor, grads.tensors.len(), "gradient layout incomplete");
        }
        Ok((grad, captured))
    }

    /// Zero gradient buffers matching this network's parameters.
    pub fn zero_grads(&self) -> Gradients<F> {
        let mut tensors = Vec::new();
        self.visit_params(&mut |_, p| tensors.push(ArrayD::zeros(IxDyn(p.shape()))));
        Gradients { tensors }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(String, ndarray::ArrayViewD<'_, F>)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit_params(&format!("layer{i}"), f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, ArrayViewMutD<'_, F>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params_mut(&format!("layer{i}"), f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, p| count += p.len());
        count
    }

    /// Copy all parameters out in visit order.
    pub fn export_params(&self) -> Vec<ArrayD<F>> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, p| out.push(p.to_owned()));
        out
    }

    /// Load parameters in visit order; shapes must match exactly. The error
    /// names the first mismatching parameter.
    pub fn import_params(&mut self, params: &[ArrayD<F>]) -> Result<(), NnError> {
        let mut expected = Vec::new();
        self.visit_params(&mut |label, p| expected.push((label, p.shape().to_vec())));
        if expected.len() != params.len() {
            return Err(NnError::ShapeMismatch {
                layer: "network".into(),
                expected: format!("{} parameter tensors", expected.len()),
                got: format!("{} parameter tensors", params.len()),
            });
        }
        for ((label, shape), incoming) in expected.iter().zip(params) {
            if shape.as_slice() != incoming.shape() {
                return Err(NnError::ShapeMismatch {
                    layer: label.clone(),
                    expected: format!("{shape:?}"),
                    got: format!("{:?}", incoming.shape()),
                });
            }
        }
        let mut cursor = 0usize;
        self.visit_params_mut(&mut |_, mut view| {
            view.assign(&params[cursor]);
            cursor += 1;
        });
        Ok(())
    }

    /// Indices of layers whose output is spatial, in order.
    pub fn spatial_layer_indices(&self) -> Vec<usize> {
        let mut spatial = matches!(self.spec.input, InputSpec::Image { .. });
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            spatial = layer.is_spatial_output(spatial);
            if spatial {
                out.push(i);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_image_net(seed: u64) -> Network<f64> {
        Network::build(
            NetworkSpec {
                input: InputSpec::Image {
                    channels: 1,
                    height: 16,
                    width: 16,
                },
                layers: vec![
                    LayerSpec::Conv {
                        out_channels: 4,
                        kernel: 3,
                        stride: 2,
                        padding: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::AvgPool { size: 2 },
                    LayerSpec::Conv {
                        out_channels: 6,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::GlobalAvgPool,
                    LayerSpec::Linear { out_features: 3 },
                ],
            },
            seed,
        )
        .unwrap()
    }

    fn random_image(seed: u64, h: usize, w: usize) -> ArrayD<f64> {
        let mut rng = crate::rng::seeded_rng(seed, "test-img", 0);
        use rand::Rng;
        ndarray::Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0)).into_dyn()
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = toy_image_net(3);
        let b = toy_image_net(3);
        let c = toy_image_net(4);
        let pa = a.export_params();
        let pb = b.export_params();
        let pc = c.export_params();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x, y);
        }
        assert!(pa.iter().zip(&pc).any(|(x, y)| x != y));
    }

    #[test]
    fn forward_shapes() {
        let net = toy_image_net(1);
        let y = net.forward(&random_image(0, 16, 16)).unwrap();
        assert_eq!(y.shape(), &[3]);
        assert_eq!(net.output_features().unwrap(), 3);
    }

    #[test]
    fn channel_replication_adapter() {
        let net = Network::<f64>::build(
            NetworkSpec {
                input: InputSpec::Image {
                    channels: 3,
                    height: 8,
                    width: 8,
                },
                layers: vec![
                    LayerSpec::Conv {
                        out_channels: 2,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                    },
                    LayerSpec::GlobalAvgPool,
                ],
            },
            7,
        )
        .unwrap();
        let gray = random_image(1, 8, 8);
        // adapter output equals the network applied to manually replicated input
        let mut replicated = ndarray::Array3::<f64>::zeros((3, 8, 8));
        let g2 = gray.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        for c in 0..3 {
            replicated.index_axis_mut(ndarray::Axis(0), c).assign(&g2);
        }
        let via_adapter = net.forward(&gray).unwrap();
        let direct = net.forward(&replicated.into_dyn()).unwrap();
        assert_abs_diff_eq!(
            via_adapter.as_slice().unwrap(),
            direct.as_slice().unwrap(),
            epsilon = 0.0
        );
    }

    #[test]
    fn import_rejects_wrong_shapes_naming_layer() {
        let mut net = toy_image_net(1);
        let mut params = net.export_params();
        params[2] = ArrayD::zeros(IxDyn(&[6, 40]));
        let err = net.import_params(&params).unwrap_err();
        match err {
            NnError::ShapeMismatch { layer, .. } => assert_eq!(layer, "layer3.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn import_export_roundtrip() {
        let net = toy_image_net(5);
        let mut other = toy_image_net(6);
        let x = random_image(2, 16, 16);
        assert_ne!(
            net.forward(&x).unwrap().as_slice().unwrap(),
            other.forward(&x).unwrap().as_slice().unwrap()
        );
        other.import_params(&net.export_params()).unwrap();
        assert_eq!(
            net.forward(&x).unwrap().as_slice().unwrap(),
            other.forward(&x).unwrap().as_slice().unwrap()
        );
    }

    #[test]
    fn spatial_indices_stop_at_global_pool() {
        let net = toy_image_net(1);
        assert_eq!(net.spatial_layer_indices(), vec![0, 1, 2, 3, 4]);
    }

    // central finite differences over every parameter of a small network
    #[test]
    fn network_gradients_match_finite_differences() {
        let mut net = toy_image_net(11);
        let x = random_image(3, 16, 16);
        let target = ndarray::arr1(&[0.3, -0.7, 1.1]).into_dyn();

        let loss_of = |net: &Network<f64>| -> f64 {
            let y = net.forward(&x).unwrap();
            y.iter()
                .zip(target.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };

        let (y, tape) = net.forward_tape(&x).unwrap();
        let dy = y
            .iter()
            .zip(target.iter())
            .map(|(a, b)| 2.0 * (a - b))
            .collect::<ndarray::Array1<f64>>()
            .into_dyn();
        let mut grads = net.zero_grads();
        net.backward(&tape, &dy, Some(&mut grads)).unwrap();

        let h = 1e-5;
        // probe a few entries of every parameter tensor
        let mut tensor_idx = 0usize;
        let mut failures = Vec::new();
        let n_tensors = grads.tensors.len();
        for t in 0..n_tensors {
            let len = grads.tensors[t].len();
            for probe in [0, len / 2, len - 1] {
                let mut plus = f64::NAN;
                let mut minus = f64::NAN;
                for (sign, out) in [(1.0, &mut plus), (-1.0, &mut minus)] {
                    let mut cursor = 0usize;
                    net.visit_params_mut(&mut |_, mut view| {
                        if cursor == t {
                            let slice = view.as_slice_mut().unwrap();
                            slice[probe] += sign * h;
                        }
                        cursor += 1;
                    });
                    *out = loss_of(&net);
                    let mut cursor = 0usize;
                    net.visit_params_mut(&mut |_, mut view| {
                        if cursor == t {
                            let slice = view.as_slice_mut().unwrap();
                            slice[probe] -= sign * h;
                        }
                        cursor += 1;
                    });
                }
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.tensors[t].as_slice().unwrap()[probe];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                if ((numeric - analytic).abs() / denom) > 1e-5 {
                    failures.push((t, probe, numeric, analytic));
                }
            }
            tensor_idx += 1;
        }
        assert_eq!(tensor_idx, n_tensors);
        assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
    }

    #[test]
    fn residual_block_gradients_match_finite_differences() {
        let spec = NetworkSpec {
            input: InputSpec::Image {
                channels: 2,
                height: 8,
                width: 8,
            },
            layers: vec![
                LayerSpec::Residual {
                    body: vec![
                        LayerSpec::Conv {
                            out_channels: 4,
                            kernel: 3,
                            stride: 2,
                            padding: 1,
                        },
                        LayerSpec::Relu,
                        LayerSpec::Conv {
                            out_channels: 4,
                            kernel: 3,
                            stride: 1,
                            padding: 1,
                        },
                    ],
                },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear { out_features: 1 },
            ],
        };
        let mut net = Network::<f64>::build(spec, 21).unwrap();
        let mut rng = crate::rng::seeded_rng(9, "res-img", 0);
        use rand::Rng;
        let x = ndarray::Array3::from_shape_fn((2, 8, 8), |_| rng.random_range(-1.0..1.0)).into_dyn();

        let (y, tape) = net.forward_tape(&x).unwrap();
        assert_eq!(y.shape(), &[1]);
        let dy = ndarray::arr1(&[1.0]).into_dyn();
        let mut grads = net.zero_grads();
        let dx = net.backward(&tape, &dy, Some(&mut grads)).unwrap();
        assert_eq!(dx.shape(), x.shape());

        let h = 1e-5;
        let loss_of = |net: &Network<f64>| net.forward(&x).unwrap()[0];
        for t in 0..grads.tensors.len() {
            let len = grads.tensors[t].len();
            let probe = len / 2;
            let mut plus = 0.0;
            let mut minus = 0.0;
            for (sign, out) in [(1.0, &mut plus), (-1.0f64, &mut minus)] {
                let mut cursor = 0usize;
                net.visit_params_mut(&mut |_, mut view| {
                    if cursor == t {
                        view.as_slice_mut().unwrap()[probe] += sign * h;
                    }
                    cursor += 1;
                });
                *out = loss_of(&net);
                let mut cursor = 0usize;
                net.visit_params_mut(&mut |_, mut view| {
                    if cursor == t {
                        view.as_slice_mut().unwrap()[probe] -= sign * h;
                    }
                    cursor += 1;
                });
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.tensors[t].as_slice().unwrap()[probe];
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (numeric - analytic).abs() / denom < 1e-5,
                "tensor {t}: numeric {numeric} vs analytic {analytic}"
            );
        }
    }

    // input gradient check through the full stack
    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = toy_image_net(31);
        let x = random_image(5, 16, 16);
        let (y, tape) = net.forward_tape(&x).unwrap();
        let dy = ndarray::Array1::from_elem(y.len(), 1.0).into_dyn();
        let dx = net.backward(&tape, &dy, None).unwrap();

        let h = 1e-6;
        let mut x_mut = x.clone();
        for probe in [0usize, 40, 128, 255] {
            let base = x_mut.as_slice().unwrap()[probe];
            x_mut.as_slice_mut().unwrap()[probe] = base + h;
            let plus: f64 = net.forward(&x_mut).unwrap().sum();
            x_mut.as_slice_mut().unwrap()[probe] = base - h;
            let minus: f64 = net.forward(&x_mut).unwrap().sum();
            x_mut.as_slice_mut().unwrap()[probe] = base;
            let numeric = (plus - minus) / (2.0 * h);
            // dx is on the adapted (1, 16, 16) input; same linear order
            let analytic = dx.as_slice().unwrap()[probe];
            assert!(
                (numeric - analytic).abs() < 1e-6 * numeric.abs().max(1.0),
                "probe {probe}: numeric {numeric} vs analytic {analytic}"
            );
        }
    }
}
