//! Advantage estimation: k-step bootstrapped targets and the
//! counterfactual baseline.

/// Bootstrapped action-value targets over one agent trajectory.
///
/// With TD errors δ(n) = r(n) + Ξ·Q_old(n+1) − Q_old(n) (terminal
/// bootstrap zero), the target is the exponentially weighted k-step
/// combination Q̂(n) = Σ_{k≥n} (Ξυ)^{k−n} δ(k) + Q_old(n).
pub fn k_step_q_hat(rewards: &[f64], q_old: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), q_old.len());
    let n = rewards.len();
    let mut q_hat = vec![0.0; n];
    let mut tail = 0.0;
    for i in (0..n).rev() {
        let next_q = if i + 1 < n { q_old[i + 1] } else { 0.0 };
        let delta = rewards[i] + gamma * next_q - q_old[i];
        tail = delta + gamma * lambda * tail;
        q_hat[i] = tail + q_old[i];
    }
    q_hat
}

/// Per-step advantages A = Q̂ − V_old.
pub fn gae_advantage(q_hat: &[f64], v_old: &[f64]) -> Vec<f64> {
    assert_eq!(q_hat.len(), v_old.len());
    q_hat.iter().zip(v_old).map(|(q, v)| q - v).collect()
}

/// Counterfactual baseline: the old policy's expectation of the critic
/// over this agent's own action, the others held fixed.
///
/// `probs` are π_old(a′|z) over the agent's menu and `q_values` the critic
/// evaluated with each candidate action swapped in.
pub fn counterfactual_baseline(probs: &[f64], q_values: &[f64]) -> f64 {
    assert_eq!(probs.len(), q_values.len());
    probs.iter().zip(q_values).map(|(p, q)| p * q).sum()
}
