use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::QVector;

/// Fully connected layer. `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi)),
        );
    }
}

/// Feedforward Q-network: ReLU on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Parameter gradients, laid out exactly like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescale so the global L2 norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: dims.len(),
        });
    }
    if dims.contains(&0) {
        return Err(Error::InvalidHyperparams(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

impl Mlp {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for l in &mut net.layers {
            let limit = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for w in &mut l.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::DimensionMismatch {
                    expected: l.inputs * l.outputs,
                    got: l.weights.len(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in checkpoint order: per layer, weights then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<QVector> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.affine(&cur, &mut next);
            if i != last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(QVector::new(cur))
    }

    /// Gradient of `mean_i (Q(obs_i)[action_i] - target_i)^2` with respect to
    /// every parameter. Outputs other than the chosen action carry no loss.
    pub fn gradients(&self, batch: &[(&[f64], usize, f64)]) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut grads = Gradients {
            layers: self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        };
        let last = self.layers.len() - 1;
        let scale = 2.0 / batch.len() as f64;
        // activations[k] is the input to layer k; activations[last + 1] the output
        let mut activations: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len() + 1];
        let mut delta = Vec::new();
        let mut prev_delta = Vec::new();
        for &(obs, action, target) in batch {
            self.check_input(obs)?;
            if action >= self.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.output_dim(),
                    got: action,
                });
            }
            activations[0].clear();
            activations[0].extend_from_slice(obs);
            for (k, l) in self.layers.iter().enumerate() {
                let (head, tail) = activations.split_at_mut(k + 1);
                l.affine(&head[k], &mut tail[0]);
                if k != last {
                    tail[0].iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            delta.clear();
            delta.resize(self.output_dim(), 0.0);
            delta[action] = scale * (activations[last + 1][action] - target);

            for k in (0..self.layers.len()).rev() {
                let l = &self.layers[k];
                let g = &mut grads.layers[k];
                let input = &activations[k];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let row = &mut g.weights[o * l.inputs..(o + 1) * l.inputs];
                    row.iter_mut().zip(input).for_each(|(gw, x)| *gw += d * x);
                }
                if k == 0 {
                    break;
                }
                prev_delta.clear();
                prev_delta.resize(l.inputs, 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    prev_delta.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
                // ReLU derivative: the layer's post-activation is positive iff active
                prev_delta.iter_mut().zip(input).for_each(|(p, a)| {
                    if *a <= 0.0 {
                        *p = 0.0
                    }
                });
                std::mem::swap(&mut delta, &mut prev_delta);
            }
        }
        Ok(grads)
    }

    /// Plain gradient descent: `param -= lr * grad`.
    pub fn optimizer_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len(),
                got: grads.layers.len(),
            });
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            if l.weights.len() != g.weights.len() || l.bias.len() != g.bias.len() {
                return Err(Error::DimensionMismatch {
                    expected: l.weights.len() + l.bias.len(),
                    got: g.weights.len() + g.bias.len(),
                });
            }
            l.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w -= lr * d);
            l.bias.iter_mut().zip(&g.bias).for_each(|(b, d)| *b -= lr * d);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[6, 64, 64, 2]).unwrap();
        let q = net.forward(&[0.1, 0.9, 0.3, 0.0, 1.0, 0.5]).unwrap();
        assert_eq!(q.values, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_rows() {
        let mut net = Mlp::zeros(&[6, 2]).unwrap();
        net.layers[0].weights[0] = 1.0;
        net.layers[0].weights[6 + 1] = 1.0;
        let q = net.forward(&[0.3, 0.7, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(q.values, vec![0.3, 0.7]);
    }

    /// 2-2-2 net evaluated by hand:
    /// h = relu([[1, -2], [0.5, 1]] x + [0.1, -0.3]),
    /// q = [[2, -1], [-0.5, 3]] h + [0, 1].
    #[test]
    fn hand_computed_tiny_net() {
        let net = Mlp::from_layers(vec![
            Layer {
                inputs: 2,
                outputs: 2,
                weights: vec![1.0, -2.0, 0.5, 1.0],
                bias: vec![0.1, -0.3],
            },
            Layer {
                inputs: 2,
                outputs: 2,
                weights: vec![2.0, -1.0, -0.5, 3.0],
                bias: vec![0.0, 1.0],
            },
        ])
        .unwrap();
        // x = (0.4, 0.1): pre = (0.3, 0.0) -> h = (0.3, 0.0); q = (0.6, 0.85)
        let q = net.forward(&[0.4, 0.1]).unwrap();
        assert!((q.values[0] - 0.6).abs() < 1e-15);
        assert!((q.values[1] - 0.85).abs() < 1e-15);
        // x = (0.2, 0.5): pre = (-0.7, 0.3) -> h = (0, 0.3); q = (-0.3, 1.9)
        let q = net.forward(&[0.2, 0.5]).unwrap();
        assert!((q.values[0] + 0.3).abs() < 1e-15);
        assert!((q.values[1] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn input_dimension_checked() {
        let net = Mlp::zeros(&[6, 2]).unwrap();
        assert!(matches!(net.forward(&[0.0; 5]), Err(Error::DimensionMismatch { .. })));
        assert!(net.gradients(&[(&[0.0; 6][..], 2, 0.0)]).is_err());
        assert!(matches!(net.gradients(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn exact_targets_give_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::random(&[6, 8, 2], &mut rng).unwrap();
        let obs = [0.2, 0.0, 0.4, 0.1, 0.9, 0.3];
        let q = net.forward(&obs).unwrap();
        let g = net
            .gradients(&[(&obs[..], 1, q.values[1]), (&obs[..], 0, q.values[0])])
            .unwrap();
        assert!(g.iter().all(|x| x == 0.0));
    }

    #[test]
    fn doubling_residuals_doubles_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::random(&[3, 5, 2], &mut rng).unwrap();
        let obs = [[0.1, 0.5, 0.9], [0.7, 0.2, 0.0]];
        let q: Vec<_> = obs.iter().map(|o| net.forward(o).unwrap()).collect();
        let batch = |k: f64| -> Vec<(&[f64], usize, f64)> {
            vec![
                (&obs[0][..], 0, q[0].values[0] - k * 0.3),
                (&obs[1][..], 1, q[1].values[1] + k * 1.1),
            ]
        };
        let g1: Vec<f64> = net.gradients(&batch(1.0)).unwrap().iter().collect();
        let g2: Vec<f64> = net.gradients(&batch(2.0)).unwrap().iter().collect();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn optimizer_no_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::random(&[4, 6, 2], &mut rng).unwrap();
        let mut g = net.gradients(&[(&[0.1, 0.2, 0.3, 0.4][..], 0, 1.0)]).unwrap();
        let mut a = net.clone();
        a.optimizer_step(&g, 0.0).unwrap();
        assert_eq!(a, net);
        g.scale(0.0);
        a.optimizer_step(&g, 0.1).unwrap();
        assert_eq!(a, net);
    }

    #[test]
    fn one_step_reduces_scalar_quadratic() {
        // q = w * 1.0, target 3, loss (w - 3)^2, w0 = 1: gradient 2(w - 3) = -4
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        net.layers[0].weights[0] = 1.0;
        let batch = [(&[1.0][..], 0, 3.0)];
        let g = net.gradients(&batch).unwrap();
        assert_eq!(g.layers[0].weights[0], -4.0);
        assert_eq!(g.layers[0].bias[0], -4.0);
        net.optimizer_step(&g, 0.1).unwrap();
        let q = net.forward(&[1.0]).unwrap().values[0];
        assert!((q - 3.0).powi(2) < 4.0);
    }

    #[test]
    fn clip_bounds_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Mlp::random(&[4, 6, 2], &mut rng).unwrap();
        let mut g = net.gradients(&[(&[1.0, 1.0, 1.0, 1.0][..], 0, 100.0)]).unwrap();
        g.clip_norm(0.5);
        assert!((g.norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn init_scale_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::random(&[6, 64, 64, 2], &mut rng).unwrap();
        assert_eq!(net.layer_dims(), vec![6, 64, 64, 2]);
        for l in net.layers() {
            let limit = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() < limit));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
    }
}
