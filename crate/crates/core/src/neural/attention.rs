//! Bilinear query-key attention over other agents' embeddings.
//!
//! The critic of each agent mixes the embeddings of the remaining agents
//! into one context vector: scores e_iᵀW_kᵀW_q e_b are scaled by the key
//! width, softmax-normalized into weights φ, and applied to the value
//! transform Ψ(V·e_i).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Activation;
use super::tape::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionHead {
    w_q: ParamId,
    w_k: ParamId,
    v: ParamId,
    embed_dim: usize,
    attn_dim: usize,
    /// Nonlinearity Ψ applied to value transforms.
    psi: Activation,
}

/// Result of one attention mix on the tape.
pub struct AttentionMix {
    /// Context vector ψ_b; zero vector when there are no other agents.
    pub psi: Var,
    /// Softmax weights over the other agents (empty when none).
    pub weights: Option<Var>,
}

impl AttentionHead {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        embed_dim: usize,
        attn_dim: usize,
        psi: Activation,
    ) -> Self {
        let limit = (3.0 / embed_dim as f64).sqrt();
        let mut mk = |rows: usize| {
            Tensor::matrix(
                rows,
                embed_dim,
                (0..rows * embed_dim).map(|_| rng.gen_range(-limit..limit)).collect(),
            )
        };
        let w_q = store.add(mk(attn_dim));
        let w_k = store.add(mk(attn_dim));
        let v = store.add(mk(attn_dim));
        AttentionHead { w_q, w_k, v, embed_dim, attn_dim, psi }
    }

    pub fn output_dim(&self) -> usize {
        self.attn_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w_q, self.w_k, self.v]
    }

    /// Mix the other agents' embeddings relative to `own`.
    pub fn mix(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        own: Var,
        others: &[Var],
    ) -> Result<AttentionMix> {
        if others.is_empty() {
            let psi = tape.leaf(Tensor::zeros(self.attn_dim, 1));
            return Ok(AttentionMix { psi, weights: None });
        }
        let wq = tape.param(store, self.w_q);
        let wk = tape.param(store, self.w_k);
        let vm = tape.param(store, self.v);
        let query = tape.matvec(wq, own)?;
        let scale = 1.0 / (self.attn_dim as f64).sqrt();

        let mut scores = Vec::with_capacity(others.len());
        for &e in others {
            let key = tape.matvec(wk, e)?;
            let s = tape.dot(key, query)?;
            scores.push(tape.scale(s, scale));
        }
        // Gather scores into one vector for the softmax.
        let mut score_vec = scores[0];
        for &s in &scores[1..] {
            score_vec = tape.concat(score_vec, s);
        }
        let weights = tape.softmax(score_vec);

        let mut psi: Option<Var> = None;
        for (i, &e) in others.iter().enumerate() {
            let value = tape.matvec(vm, e)?;
            let value = match self.psi {
                Activation::Relu => tape.relu(value),
                Activation::Linear => value,
            };
            let w_i = tape.index(weights, i)?;
            let contrib = tape.scale_vec(w_i, value)?;
            psi = Some(match psi {
                None => contrib,
                Some(acc) => tape.add(acc, contrib)?,
            });
        }
        Ok(AttentionMix { psi: psi.unwrap(), weights: Some(weights) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(embed: usize, attn: usize) -> (ParamStore, AttentionHead) {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(7, "attention");
        let h = AttentionHead::new(&mut store, &mut rng, embed, attn, Activation::Relu);
        (store, h)
    }

    #[test]
    fn no_others_yields_zero_context() {
        let (store, h) = head(4, 3);
        let mut tape = Tape::new();
        let own = tape.leaf(Tensor::vector(vec![1.0, -0.5, 0.0, 2.0]));
        let mix = h.mix(&mut tape, &store, own, &[]).unwrap();
        assert_eq!(tape.value(mix.psi).data, vec![0.0; 3]);
        assert!(mix.weights.is_none());
    }

    #[test]
    fn single_other_gets_full_weight() {
        let (store, h) = head(4, 3);
        let mut tape = Tape::new();
        let own = tape.leaf(Tensor::vector(vec![1.0, -0.5, 0.0, 2.0]));
        let other = tape.leaf(Tensor::vector(vec![0.3, 0.3, -1.0, 0.1]));
        let mix = h.mix(&mut tape, &store, own, &[other]).unwrap();
        let w = tape.value(mix.weights.unwrap());
        assert_eq!(w.len(), 1);
        assert!((w.data[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_others_weighted_uniformly() {
        let (store, h) = head(4, 3);
        let mut tape = Tape::new();
        let own = tape.leaf(Tensor::vector(vec![1.0, -0.5, 0.0, 2.0]));
        let e = vec![0.3, 0.3, -1.0, 0.1];
        let others: Vec<Var> =
            (0..3).map(|_| tape.leaf(Tensor::vector(e.clone()))).collect();
        let mix = h.mix(&mut tape, &store, own, &others).unwrap();
        let w = tape.value(mix.weights.unwrap());
        for &wi in &w.data {
            assert!((wi - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_of_zero_and_ln3_scores() {
        // Scores (0, ln 3) softmax to (0.25, 0.75); drive the head with
        // crafted weights that reproduce those scores.
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(8, "attention");
        let h = AttentionHead::new(&mut store, &mut rng, 1, 1, Activation::Linear);
        let ids = h.param_ids();
        *store.get_mut(ids[0]) = Tensor::matrix(1, 1, vec![1.0]); // W_q
        *store.get_mut(ids[1]) = Tensor::matrix(1, 1, vec![1.0]); // W_k
        *store.get_mut(ids[2]) = Tensor::matrix(1, 1, vec![1.0]); // V
        let mut tape = Tape::new();
        let own = tape.leaf(Tensor::vector(vec![1.0]));
        // attn_dim = 1 → scale = 1; scores are e_i·e_b.
        let a = tape.leaf(Tensor::vector(vec![0.0]));
        let b = tape.leaf(Tensor::vector(vec![3f64.ln()]));
        let mix = h.mix(&mut tape, &store, own, &[a, b]).unwrap();
        let w = tape.value(mix.weights.unwrap());
        assert!((w.data[0] - 0.25).abs() < 1e-12);
        assert!((w.data[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn weights_invariant_to_constant_score_shift() {
        // Shifting every OTHER embedding so that all scores move by the
        // same constant leaves φ unchanged: engineered with 1-D embeddings
        // where score_i = k·e_i·q; instead add the shift directly on scores
        // by extending each e_i with a shared component.
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(9, "attention");
        let h = AttentionHead::new(&mut store, &mut rng, 2, 1, Activation::Linear);
        let ids = h.param_ids();
        *store.get_mut(ids[0]) = Tensor::matrix(1, 2, vec![1.0, 0.0]); // W_q picks own[0]
        *store.get_mut(ids[1]) = Tensor::matrix(1, 2, vec![1.0, 1.0]); // W_k sums components
        *store.get_mut(ids[2]) = Tensor::matrix(1, 2, vec![1.0, 0.0]);
        let weights_for = |shift: f64| {
            let mut tape = Tape::new();
            let own = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
            let a = tape.leaf(Tensor::vector(vec![0.4, shift]));
            let b = tape.leaf(Tensor::vector(vec![-0.9, shift]));
            let mix = h.mix(&mut tape, &store, own, &[a, b]).unwrap();
            tape.value(mix.weights.unwrap()).data.clone()
        };
        let w0 = weights_for(0.0);
        let w5 = weights_for(5.0);
        for (a, b) in w0.iter().zip(&w5) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
