//! Optimizers over network parameters.

use ndarray::ArrayD;

use super::network::{Gradients, Network};
use crate::scalar::Scalar;

/// Adaptive-moment optimizer (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(net: &Network<F>, lr: f64) -> Self {
        let zeros = net.zero_grads().tensors;
        Self {
            lr: F::cast(lr),
            beta1: F::cast(0.9),
            beta2: F::cast(0.999),
            eps: F::cast(1e-8),
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Like [`Adam::new`] but for a free-standing parameter tensor list.
    pub fn for_tensors(shapes: &[Vec<usize>], lr: f64) -> Self {
        let zeros: Vec<ArrayD<F>> = shapes
            .iter()
            .map(|s| ArrayD::zeros(ndarray::IxDyn(s)))
            .collect();
        Self {
            lr: F::cast(lr),
            beta1: F::cast(0.9),
            beta2: F::cast(0.999),
            eps: F::cast(1e-8),
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Network<F>, grads: &Gradients<F>) {
        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        let mut cursor = 0usize;
        net.visit_params_mut(&mut |_, mut param| {
            let g = &grads.tensors[cursor];
            let m = &mut self.m[cursor];
            let v = &mut self.v[cursor];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (one - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (one - self.beta2) * g * g;
            });
            ndarray::Zip::from(&mut param)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    *p = *p - self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
                });
            cursor += 1;
        });
        assert_eq!(cursor, grads.tensors.len(), "optimizer/gradient layout mismatch");
    }

    /// Adam update applied directly to raw tensors (used for parameters that
    /// live outside a network, e.g. prototype matrices).
    pub fn step_tensors(&mut self, params: &mut [ArrayD<F>], grads: &[ArrayD<F>]) {
        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for ((param, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (one - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (one - self.beta2) * g * g;
            });
            ndarray::Zip::from(&mut *param)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    *p = *p - self.lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
                });
        }
    }
}

/// Plain stochastic gradient descent.
#[derive(Debug, Clone, Copy)]
pub struct Sgd<F> {
    pub lr: F,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(lr: f64) -> Self {
        Self { lr: F::cast(lr) }
    }

    pub fn step(&self, net: &mut Network<F>, grads: &Gradients<F>) {
        let mut cursor = 0usize;
        net.visit_params_mut(&mut |_, mut param| {
            let g = &grads.tensors[cursor];
            ndarray::Zip::from(&mut param).and(g).for_each(|p, &g| {
                *p = *p - self.lr * g;
            });
            cursor += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{InputSpec, NetworkSpec};
    use crate::nn::LayerSpec;

    fn scalar_net(seed: u64) -> Network<f64> {
        Network::build(
            NetworkSpec {
                input: InputSpec::Features { features: 2 },
                layers: vec![LayerSpec::Linear { out_features: 1 }],
            },
            seed,
        )
        .unwrap()
    }

    // quadratic objective: both optimizers must reduce the loss
    #[test]
    fn adam_reduces_linear_regression_loss() {
        let mut net = scalar_net(2);
        let mut adam = Adam::new(&net, 0.05);
        let xs = [
            ndarray::arr1(&[1.0, 0.0]).into_dyn(),
            ndarray::arr1(&[0.0, 1.0]).into_dyn(),
            ndarray::arr1(&[1.0, 1.0]).into_dyn(),
        ];
        let ys = [2.0, -1.0, 1.0];
        let loss = |net: &Network<f64>| -> f64 {
            xs.iter()
                .zip(&ys)
                .map(|(x, &y)| {
                    let p = net.forward(x).unwrap()[0];
                    (p - y) * (p - y)
                })
                .sum::<f64>()
                / xs.len() as f64
        };
        let before = loss(&net);
        for _ in 0..300 {
            let mut grads = net.zero_grads();
            for (x, &y) in xs.iter().zip(&ys) {
                let (p, tape) = net.forward_tape(x).unwrap();
                let dy = ndarray::arr1(&[2.0 * (p[0] - y) / xs.len() as f64]).into_dyn();
                net.backward(&tape, &dy, Some(&mut grads)).unwrap();
            }
            adam.step(&mut net, &grads);
        }
        let after = loss(&net);
        assert!(after < 1e-3, "loss went {before} -> {after}");
    }

    #[test]
    fn sgd_single_step_decreases_single_example_error() {
        let mut net = scalar_net(5);
        let x = ndarray::arr1(&[0.7, -0.4]).into_dyn();
        let y = 3.0;
        let err = |net: &Network<f64>| {
            let p = net.forward(&x).unwrap()[0];
            (p - y) * (p - y)
        };
        let before = err(&net);
        let (p, tape) = net.forward_tape(&x).unwrap();
        let dy = ndarray::arr1(&[2.0 * (p[0] - y)]).into_dyn();
        let mut grads = net.zero_grads();
        net.backward(&tape, &dy, Some(&mut grads)).unwrap();
        Sgd::new(1e-3).step(&mut net, &grads);
        let after = err(&net);
        assert!(after < before, "{before} -> {after}");
    }
}
