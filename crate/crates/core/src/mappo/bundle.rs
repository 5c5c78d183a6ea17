//! Per-agent-class parameter bundles: actor, embeddings, attention and the
//! centralized critic head, with frozen old copies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::SatelliteLayer;
use crate::neural::{Activation, AttentionHead, Mlp, ParamStore, Tape, Tensor, Var};

/// Which parameter set an acting agent draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentClass {
    CubeSat,
    Lms,
    /// The single-agent central controller.
    Central,
}

impl AgentClass {
    pub fn of_layer(layer: SatelliteLayer) -> Self {
        match layer {
            SatelliteLayer::CubeSat => AgentClass::CubeSat,
            SatelliteLayer::Lms => AgentClass::Lms,
            SatelliteLayer::Cns => unreachable!("the CNS is not an agent"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentClass::CubeSat => "cubesat",
            AgentClass::Lms => "lms",
            AgentClass::Central => "central",
        }
    }
}

/// Network widths; the small profile is the default, the large one mirrors
/// the reported training setup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetProfile {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub critic_hidden: usize,
}

impl NetProfile {
    pub fn test() -> Self {
        NetProfile { hidden: vec![32, 32], embed_dim: 16, attn_dim: 16, critic_hidden: 32 }
    }

    pub fn paper() -> Self {
        NetProfile {
            hidden: vec![512, 512, 512],
            embed_dim: 128,
            attn_dim: 128,
            critic_hidden: 512,
        }
    }
}

/// Actor π, embedding functions g (critic input / keys) and p (query),
/// attention head, and critic head f — with frozen old copies of all
/// parameters for ratio and target computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentBundle {
    pub class: AgentClass,
    pub obs_dim: usize,
    /// Sizes of the categorical action heads (menu first).
    pub head_sizes: Vec<usize>,
    pub store: ParamStore,
    pub old_store: ParamStore,
    actor: Mlp,
    embed_g: Mlp,
    embed_p: Mlp,
    attention: AttentionHead,
    critic_head: Mlp,
}

impl AgentBundle {
    pub fn new(
        class: AgentClass,
        obs_dim: usize,
        head_sizes: Vec<usize>,
        profile: &NetProfile,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let act_dim: usize = head_sizes.iter().sum();
        let mut actor_dims = vec![obs_dim];
        actor_dims.extend_from_slice(&profile.hidden);
        actor_dims.push(act_dim);
        let actor = Mlp::new(&mut store, rng, &actor_dims, Activation::Linear)?;
        // Shrink the policy head so the initial policy is near uniform and
        // the early penalty gradient cannot collapse exploration.
        if let Some(&head_w) = actor.param_ids().iter().rev().nth(1) {
            for v in &mut store.get_mut(head_w).data {
                *v *= 0.01;
            }
        }
        let embed_in = obs_dim + act_dim;
        let embed_g =
            Mlp::new(&mut store, rng, &[embed_in, profile.embed_dim], Activation::Relu)?;
        let embed_p =
            Mlp::new(&mut store, rng, &[embed_in, profile.embed_dim], Activation::Relu)?;
        let attention =
            AttentionHead::new(&mut store, rng, profile.embed_dim, profile.attn_dim, Activation::Relu);
        let critic_head = Mlp::new(
            &mut store,
            rng,
            &[profile.embed_dim + profile.attn_dim, profile.critic_hidden, 1],
            Activation::Linear,
        )?;
        let old_store = store.clone();
        Ok(AgentBundle {
            class,
            obs_dim,
            head_sizes,
            store,
            old_store,
            actor,
            embed_g,
            embed_p,
            attention,
            critic_head,
        })
    }

    pub fn act_dim(&self) -> usize {
        self.head_sizes.iter().sum()
    }

    /// θ_old ← θ, τ̄ ← τ.
    pub fn refresh_old(&mut self) {
        self.old_store = self.store.clone();
    }

    pub fn actor_param_ids(&self) -> Vec<crate::neural::ParamId> {
        self.actor.param_ids()
    }

    pub fn critic_param_ids(&self) -> Vec<crate::neural::ParamId> {
        let mut ids = self.embed_g.param_ids();
        ids.extend(self.embed_p.param_ids());
        ids.extend(self.attention.param_ids());
        ids.extend(self.critic_head.param_ids());
        ids
    }

    /// Actor logits over all heads, concatenated.
    pub fn actor_logits(&self, store: &ParamStore, obs: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward_values(store, obs)
    }

    /// Embedding e = g(z, a) on plain values.
    pub fn embed_value(&self, store: &ParamStore, obs: &[f64], act_onehot: &[f64]) -> Result<Vec<f64>> {
        let mut input = obs.to_vec();
        input.extend_from_slice(act_onehot);
        self.embed_g.forward_values(store, &input)
    }

    /// Centralized Q on plain values: own (z, a) embedded through g and p,
    /// the other agents contributing their cached embeddings through the
    /// attention head.
    pub fn q_value(
        &self,
        store: &ParamStore,
        obs: &[f64],
        act_onehot: &[f64],
        others: &[Vec<f64>],
    ) -> Result<f64> {
        let mut input = obs.to_vec();
        input.extend_from_slice(act_onehot);
        let own_g = self.embed_g.forward_values(store, &input)?;
        let own_p = self.embed_p.forward_values(store, &input)?;
        let psi = self.attention_values(store, &own_p, others);
        let mut critic_in = own_g;
        critic_in.extend_from_slice(&psi);
        Ok(self.critic_head.forward_values(store, &critic_in)?[0])
    }

    /// Attention mix on plain values (keys/values from cached embeddings).
    fn attention_values(&self, store: &ParamStore, own_p: &[f64], others: &[Vec<f64>]) -> Vec<f64> {
        let ids = self.attention.param_ids();
        let (wq, wk, v) = (store.get(ids[0]), store.get(ids[1]), store.get(ids[2]));
        let attn_dim = self.attention.output_dim();
        if others.is_empty() {
            return vec![0.0; attn_dim];
        }
        let query = mat_vec(wq, own_p);
        let scale = 1.0 / (attn_dim as f64).sqrt();
        let scores: Vec<f64> = others
            .iter()
            .map(|e| {
                let key = mat_vec(wk, e);
                key.iter().zip(&query).map(|(a, b)| a * b).sum::<f64>() * scale
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut psi = vec![0.0; attn_dim];
        for (e, w) in others.iter().zip(exps.iter().map(|e| e / total)) {
            let val = mat_vec(v, e);
            for (p, x) in psi.iter_mut().zip(val) {
                *p += w * x.max(0.0);
            }
        }
        psi
    }

    /// Differentiable actor logits.
    pub fn actor_logits_tape(&self, tape: &mut Tape, store: &ParamStore, obs: &[f64]) -> Result<Var> {
        let x = tape.leaf(Tensor::vector(obs.to_vec()));
        self.actor.forward(tape, store, x)
    }

    /// Differentiable centralized Q; other agents' embeddings enter as
    /// constants (their parameters are trained by their own losses).
    pub fn q_value_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        obs: &[f64],
        act_onehot: &[f64],
        others: &[Vec<f64>],
    ) -> Result<Var> {
        let mut input = obs.to_vec();
        input.extend_from_slice(act_onehot);
        let x = tape.leaf(Tensor::vector(input));
        let own_g = self.embed_g.forward(tape, store, x)?;
        let own_p = self.embed_p.forward(tape, store, x)?;
        let other_vars: Vec<Var> =
            others.iter().map(|e| tape.leaf(Tensor::vector(e.clone()))).collect();
        let mix = self.attention.mix(tape, store, own_p, &other_vars)?;
        let critic_in = tape.concat(own_g, mix.psi);
        let q = self.critic_head.forward(tape, store, critic_in)?;
        tape.index(q, 0)
    }

    /// One-hot encoding of per-head choices, concatenated.
    pub fn onehot(&self, choices: &[usize]) -> Vec<f64> {
        debug_assert_eq!(choices.len(), self.head_sizes.len());
        let mut v = vec![0.0; self.act_dim()];
        let mut offset = 0;
        for (h, &c) in self.head_sizes.iter().zip(choices) {
            v[offset + c] = 1.0;
            offset += h;
        }
        v
    }

    /// Split flat logits into per-head slices.
    pub fn split_heads<'a>(&self, logits: &'a [f64]) -> Vec<&'a [f64]> {
        let mut out = Vec::with_capacity(self.head_sizes.len());
        let mut offset = 0;
        for &h in &self.head_sizes {
            out.push(&logits[offset..offset + h]);
            offset += h;
        }
        out
    }
}

fn mat_vec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.rows];
    for r in 0..m.rows {
        let row = &m.data[r * m.cols..(r + 1) * m.cols];
        out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> AgentBundle {
        let mut rng = crate::rng::stream(5, "bundle");
        AgentBundle::new(AgentClass::Lms, 6, vec![4], &NetProfile::test(), &mut rng).unwrap()
    }

    #[test]
    fn q_value_and_tape_paths_agree() {
        let b = bundle();
        let obs = vec![0.1, -0.4, 0.8, 0.0, 0.3, 0.9];
        let act = b.onehot(&[2]);
        let others = vec![vec![0.5; 16], vec![-0.2; 16]];
        let fast = b.q_value(&b.store, &obs, &act, &others).unwrap();
        let mut tape = Tape::new();
        let q = b.q_value_tape(&mut tape, &b.store, &obs, &act, &others).unwrap();
        assert!((fast - tape.scalar_value(q)).abs() < 1e-12);
    }

    #[test]
    fn single_agent_q_uses_zero_context() {
        let b = bundle();
        let obs = vec![0.1; 6];
        let act = b.onehot(&[0]);
        let q_alone = b.q_value(&b.store, &obs, &act, &[]).unwrap();
        // Recompute by hand with ψ = 0.
        let mut input = obs.clone();
        input.extend_from_slice(&act);
        let own_g = b.embed_g.forward_values(&b.store, &input).unwrap();
        let mut critic_in = own_g;
        critic_in.extend_from_slice(&vec![0.0; 16]);
        let by_hand = b.critic_head.forward_values(&b.store, &critic_in).unwrap()[0];
        assert!((q_alone - by_hand).abs() < 1e-12);
    }

    #[test]
    fn q_invariant_to_permuting_other_agents() {
        let b = bundle();
        let obs = vec![0.2; 6];
        let act = b.onehot(&[1]);
        let e1 = vec![0.3; 16];
        let e2 = vec![-0.7; 16];
        let e3 = vec![0.05; 16];
        let q_a = b
            .q_value(&b.store, &obs, &act, &[e1.clone(), e2.clone(), e3.clone()])
            .unwrap();
        let q_b = b.q_value(&b.store, &obs, &act, &[e3, e1, e2]).unwrap();
        assert!((q_a - q_b).abs() < 1e-12);
    }

    #[test]
    fn hand_set_weights_match_hand_computed_q() {
        // 1-wide everything so the whole pass is scalar arithmetic.
        let mut rng = crate::rng::stream(6, "bundle-hand");
        let profile =
            NetProfile { hidden: vec![1], embed_dim: 1, attn_dim: 1, critic_hidden: 1 };
        let mut b = AgentBundle::new(AgentClass::CubeSat, 1, vec![1], &profile, &mut rng).unwrap();
        // Zero every parameter, then set the chain to identity-ish values.
        for id in b.store.ids().collect::<Vec<_>>() {
            for v in &mut b.store.get_mut(id).data {
                *v = 0.0;
            }
        }
        // embed_g: w = [1, 1] (obs ++ act), bias 0 → g = relu(z + a)
        let g_ids = b.embed_g.param_ids();
        *b.store.get_mut(g_ids[0]) = Tensor::matrix(1, 2, vec![1.0, 1.0]);
        // embed_p: w = [2, 0] → p = relu(2z)
        let p_ids = b.embed_p.param_ids();
        *b.store.get_mut(p_ids[0]) = Tensor::matrix(1, 2, vec![2.0, 0.0]);
        // attention: wq = wk = v = [1]
        let a_ids = b.attention.param_ids();
        for id in &a_ids {
            *b.store.get_mut(*id) = Tensor::matrix(1, 1, vec![1.0]);
        }
        // critic: layer1 w = [[1],[1]] … shapes: [2 → 1hidden? critic is
        // [embed+attn=2, 1, 1]]
        let c_ids = b.critic_head.param_ids();
        *b.store.get_mut(c_ids[0]) = Tensor::matrix(1, 2, vec![1.0, 1.0]);
        *b.store.get_mut(c_ids[2]) = Tensor::matrix(1, 1, vec![3.0]);

        // obs = 0.5, act = 1 (one-hot scalar), one other with embedding 0.25.
        // g = relu(0.5 + 1) = 1.5; p = relu(1.0) = 1.0
        // single other → φ = 1; value = relu(1·0.25) = 0.25 → ψ = 0.25
        // critic hidden = relu(1·1.5 + 1·0.25) = 1.75; out = 3·1.75 = 5.25
        let q = b.q_value(&b.store, &[0.5], &[1.0], &[vec![0.25]]).unwrap();
        assert!((q - 5.25).abs() < 1e-12, "q = {q}");
    }

    #[test]
    fn refresh_old_copies_current() {
        let mut b = bundle();
        let id = b.store.ids().next().unwrap();
        b.store.get_mut(id).data[0] += 1.0;
        assert_ne!(b.store.get(id).data[0], b.old_store.get(id).data[0]);
        b.refresh_old();
        assert_eq!(b.store.get(id).data[0], b.old_store.get(id).data[0]);
    }
}
