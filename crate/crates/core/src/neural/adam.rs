//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::tape::{ParamGrads, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Whether the caller maximizes (policy surrogate) or minimizes (losses).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Ascent,
    Descent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Moments mirror every tensor in `store`.
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| {
                let t = store.get(id);
                Tensor::zeros(t.rows, t.cols)
            })
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every parameter in the store.
///
/// Disconnected parameters see a zero gradient; their moments decay as
/// usual. `Ascent` adds the step, `Descent` subtracts it.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut AdamState,
    direction: Direction,
) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Shape {
            op: "adam_step",
            msg: format!("optimizer tracks {} tensors, store has {}", state.m.len(), store.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let sign = match direction {
        Direction::Ascent => 1.0,
        Direction::Descent => -1.0,
    };
    for id in store.ids() {
        let g = grads.get(id, store);
        let p = store.get(id);
        if g.rows != p.rows || g.cols != p.cols {
            return Err(Error::Shape {
                op: "adam_step",
                msg: format!(
                    "gradient {}x{} vs parameter {}x{}",
                    g.rows, g.cols, p.rows, p.cols
                ),
            });
        }
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        let p = store.get_mut(id);
        for i in 0..p.data.len() {
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g.data[i];
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            p.data[i] += sign * state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
