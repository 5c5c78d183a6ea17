//! Dense multi-layer perceptrons on the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layer {
    w: ParamId,
    b: ParamId,
    activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

/// A stack of affine layers with per-layer activations.
///
/// Hidden layers are ReLU; the output activation is the caller's choice
/// (linear for critics, linear logits for actors — the softmax is applied
/// with masking at the sampling site).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Build with fan-in-scaled uniform initialization (±√(3/fan_in)).
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        dims: &[usize],
        output: Activation,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape { op: "mlp", msg: "need at least input and output dims".into() });
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (3.0 / fan_in as f64).sqrt();
            let w = store.add(Tensor::matrix(
                fan_out,
                fan_in,
                (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect(),
            ));
            let b = store.add(Tensor::zeros(fan_out, 1));
            let activation =
                if i + 2 == dims.len() { output } else { Activation::Relu };
            layers.push(Layer { w, b, activation, in_dim: fan_in, out_dim: fan_out });
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }

    /// Differentiable forward pass on the tape.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        if tape.value(input).rows != self.input_dim() || tape.value(input).cols != 1 {
            return Err(Error::Shape {
                op: "mlp_forward",
                msg: format!(
                    "layer 0 expects input {}, got {}x{}",
                    self.input_dim(),
                    tape.value(input).rows,
                    tape.value(input).cols
                ),
            });
        }
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.w);
            let b = tape.param(store, layer.b);
            h = tape.affine(w, b, h).map_err(|_| Error::Shape {
                op: "mlp_forward",
                msg: format!("shape mismatch at layer {i}"),
            })?;
            if layer.activation == Activation::Relu {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Tape-free forward pass for rollouts.
    pub fn forward_values(&self, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                msg: format!("layer 0 expects input {}, got {}", self.input_dim(), input.len()),
            });
        }
        let mut h = input.to_vec();
        for layer in &self.layers {
            let w = store.get(layer.w);
            let b = store.get(layer.b);
            let mut out = b.data.clone();
            for r in 0..layer.out_dim {
                let row = &w.data[r * layer.in_dim..(r + 1) * layer.in_dim];
                let mut acc = 0.0;
                for (wv, xv) in row.iter().zip(&h) {
                    acc += wv * xv;
                }
                out[r] += acc;
            }
            if layer.activation == Activation::Relu {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            h = out;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::finite_difference;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(1, "mlp");
        let mlp = Mlp::new(&mut store, &mut rng, &[3, 3], Activation::Linear).unwrap();
        // Overwrite with identity weights and zero bias.
        let ids = mlp.param_ids();
        *store.get_mut(ids[0]) = Tensor::matrix(
            3,
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let out = mlp.forward_values(&store, &[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn zero_weights_yield_activated_bias() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(2, "mlp");
        let mlp = Mlp::new(&mut store, &mut rng, &[2, 2], Activation::Relu).unwrap();
        let ids = mlp.param_ids();
        *store.get_mut(ids[0]) = Tensor::zeros(2, 2);
        *store.get_mut(ids[1]) = Tensor::vector(vec![1.5, -0.5]);
        let out = mlp.forward_values(&store, &[3.0, 4.0]).unwrap();
        assert_eq!(out, vec![1.5, 0.0]);
    }

    #[test]
    fn fixed_2x2_case_matches_hand_arithmetic() {
        // W = [[1, 2], [3, 4]], b = [0.5, -1], x = [1, -1]
        // Wx + b = [1·1 + 2·(−1) + 0.5, 3·1 + 4·(−1) − 1] = [−0.5, −2].
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(3, "mlp");
        let mlp = Mlp::new(&mut store, &mut rng, &[2, 2], Activation::Linear).unwrap();
        let ids = mlp.param_ids();
        *store.get_mut(ids[0]) = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        *store.get_mut(ids[1]) = Tensor::vector(vec![0.5, -1.0]);
        let out = mlp.forward_values(&store, &[1.0, -1.0]).unwrap();
        assert!((out[0] - -0.5).abs() < 1e-12);
        assert!((out[1] - -2.0).abs() < 1e-12);
    }

    #[test]
    fn tape_and_value_paths_agree() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(4, "mlp");
        let mlp = Mlp::new(&mut store, &mut rng, &[4, 8, 3], Activation::Linear).unwrap();
        let x = vec![0.3, -0.7, 1.2, 0.0];
        let fast = mlp.forward_values(&store, &x).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::vector(x));
        let out = mlp.forward(&mut tape, &store, xv).unwrap();
        for (a, b) in fast.iter().zip(&tape.value(out).data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(5, "mlp");
        let mlp = Mlp::new(&mut store, &mut rng, &[3, 6, 2], Activation::Linear).unwrap();
        let x = vec![0.4, -0.2, 0.9];

        let loss_of = |st: &ParamStore| {
            let out = mlp.forward_values(st, &x).unwrap();
            out.iter().map(|v| v * v).sum::<f64>()
        };

        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::vector(x.clone()));
        let out = mlp.forward(&mut tape, &store, xv).unwrap();
        let sq = tape.square(out);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();

        for (id, fd) in finite_difference(&store, &mlp.param_ids(), 1e-5, loss_of) {
            let an = grads.get(id, &store);
            for (a, f) in an.data.iter().zip(&fd.data) {
                assert!((a - f).abs() / f.abs().max(1e-6) < 1e-4);
            }
        }
    }

    #[test]
    fn wrong_input_width_names_layer() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(6, "mlp");
        let mlp = Mlp::new(&mut store, &mut rng, &[3, 2], Activation::Linear).unwrap();
        let err = mlp.forward_values(&store, &[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
    }
}
