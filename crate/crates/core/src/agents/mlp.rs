//! Fully connected network with ReLU hidden layers and hand-written backprop.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    /// `scale · σ(z)`
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `weights[l]` has shape (fan_in, fan_out).
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub output: OutputActivation,
    pub output_scale: f64,
}

/// Per-layer gradients, same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Which hidden ReLU units are active, layer by layer, row-major.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden]
            .iter()
            .flat_map(|z| z.iter().map(|&v| v > 0.0))
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Mlp {
    /// Uniform Glorot initialisation, zero biases.
    pub fn new(
        sizes: &[usize],
        output: OutputActivation,
        output_scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut net = Self::zeros(sizes, output, output_scale);
        for w in &mut net.weights {
            let (fan_in, fan_out) = w.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            w.mapv_inplace(|_| dist.sample(rng));
        }
        net
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation, output_scale: f64) -> Self {
        assert!(
            sizes.len() >= 2,
            "need at least an input and an output layer"
        );
        Self {
            weights: sizes
                .windows(2)
                .map(|w| Array2::zeros((w[0], w[1])))
                .collect(),
            biases: sizes[1..].iter().map(|&n| Array1::zeros(n)).collect(),
            output,
            output_scale,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].nrows()];
        s.extend(self.weights.iter().map(|w| w.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("nonempty").ncols()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn activate_output(&self, z: &Array2<f64>) -> Array2<f64> {
        match self.output {
            OutputActivation::Identity => z.clone(),
            OutputActivation::Sigmoid => z.mapv(|v| self.output_scale * sigmoid(v)),
        }
    }

    /// Rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = a.dot(w) + b;
            a = if l == last {
                self.activate_output(&z)
            } else {
                z.mapv(|v| v.max(0.0))
            };
        }
        a
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = a.dot(w) + b;
            let next = if l == last {
                self.activate_output(&z)
            } else {
                z.mapv(|v| v.max(0.0))
            };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        ForwardCache {
            inputs,
            pre,
            output: a,
        }
    }

    /// Gradients of a loss with respect to every parameter and to the input,
    /// given `grad_out = ∂loss/∂output` for the cached pass.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &Array2<f64>,
    ) -> (Gradients, Array2<f64>) {
        let n = self.weights.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = match self.output {
            OutputActivation::Identity => grad_out.clone(),
            OutputActivation::Sigmoid => {
                let s = cache.pre[n - 1].mapv(sigmoid);
                grad_out * &s.mapv(|v| self.output_scale * v * (1.0 - v))
            }
        };
        for l in (0..n).rev() {
            gw.push(cache.inputs[l].t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            let back = delta.dot(&self.weights[l].t());
            delta = if l > 0 {
                let mask = cache.pre[l - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                back * mask
            } else {
                back
            };
        }
        gw.reverse();
        gb.reverse();
        (
            Gradients {
                weights: gw,
                biases: gb,
            },
            delta,
        )
    }

    /// `θ_target ← τ·θ_online + (1 − τ)·θ_target`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.weights.iter_mut().zip(&online.weights) {
            t.zip_mut_with(o, |t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
        for (t, o) in self.biases.iter_mut().zip(&online.biases) {
            t.zip_mut_with(o, |t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
    }

    /// All parameters, layer by layer, weights (row-major) then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = it.next().expect("length checked");
            }
            for v in b.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
    }
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_input(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
        Array::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
    }

    /// Loss `Σ c ⊙ f(x)` so that `∂loss/∂output = c`.
    fn check_gradients(net: &Mlp, x: &Array2<f64>, c: &Array2<f64>) -> f64 {
        let cache = net.forward_cached(x.view());
        let (grads, _) = net.backward(&cache, c);
        let analytic = grads.flat();
        let base = net.flat_params();
        let h = 1e-5;
        let mut numeric = vec![0.0; base.len()];
        let mut probe = net.clone();
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            probe.set_flat_params(&p);
            let up = (&probe.forward(x.view()) * c).sum();
            p[k] -= 2.0 * h;
            probe.set_flat_params(&p);
            let down = (&probe.forward(x.view()) * c).sum();
            numeric[k] = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
            + numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / norm.max(1e-300)
    }

    #[test]
    fn zero_network_outputs_midpoint() {
        let net = Mlp::zeros(&[4, 8, 3], OutputActivation::Sigmoid, 200.0);
        let out = net.forward(array![[0.3, 0.1, 0.9, 0.2]].view());
        assert_eq!(out, array![[100.0, 100.0, 100.0]]);
    }

    #[test]
    fn sigmoid_outputs_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[4, 16, 3], OutputActivation::Sigmoid, 5.0, &mut rng);
        let x = random_input(64, 4, &mut rng) * 100.0;
        assert!(net
            .forward(x.view())
            .iter()
            .all(|&v| (0.0..=5.0).contains(&v)));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for output in [OutputActivation::Identity, OutputActivation::Sigmoid] {
            for _ in 0..5 {
                let net = Mlp::new(&[5, 7, 6, 3], output, 2.0, &mut rng);
                let x = random_input(4, 5, &mut rng);
                let c = random_input(4, 3, &mut rng);
                let err = check_gradients(&net, &x, &c);
                assert!(err < 1e-6, "relative error {err}");
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = Mlp::new(&[3, 6, 2], OutputActivation::Identity, 1.0, &mut rng);
        let x = random_input(2, 3, &mut rng);
        let c = random_input(2, 2, &mut rng);
        let (_, gx) = net.backward(&net.forward_cached(x.view()), &c);
        let h = 1e-5;
        for i in 0..2 {
            for j in 0..3 {
                let mut up = x.clone();
                up[[i, j]] += h;
                let mut down = x.clone();
                down[[i, j]] -= h;
                let num = ((&net.forward(up.view()) * &c).sum()
                    - (&net.forward(down.view()) * &c).sum())
                    / (2.0 * h);
                assert!((num - gx[[i, j]]).abs() < 1e-6 * (1.0 + num.abs()));
            }
        }
    }

    #[test]
    fn polyak_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let online = Mlp::new(&[2, 3, 1], OutputActivation::Identity, 1.0, &mut rng);
        let mut target = Mlp::new(&[2, 3, 1], OutputActivation::Identity, 1.0, &mut rng);
        let before = target.flat_params();
        target.soft_update_from(&online, 0.01);
        for ((t, b), o) in target
            .flat_params()
            .iter()
            .zip(&before)
            .zip(online.flat_params())
        {
            assert!((t - (0.01 * o + 0.99 * b)).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[4, 5, 3], OutputActivation::Sigmoid, 3.0, &mut rng);
        let mut other = Mlp::zeros(&[4, 5, 3], OutputActivation::Sigmoid, 3.0);
        other.set_flat_params(&net.flat_params());
        assert_eq!(net, other);
        assert_eq!(net.sizes(), vec![4, 5, 3]);
        assert_eq!(net.n_params(), 4 * 5 + 5 + 5 * 3 + 3);
    }
}
