//! Masked categorical policies over candidate menus.

use rand::Rng;

/// Softmax restricted to the valid entries; invalid entries get probability
/// exactly zero. Panics on an all-false mask.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    debug_assert_eq!(logits.len(), mask.len());
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "action mask excludes every entry");
    let mut out = vec![0.0; logits.len()];
    let mut total = 0.0;
    for i in 0..logits.len() {
        if mask[i] {
            let e = (logits[i] - max).exp();
            out[i] = e;
            total += e;
        }
    }
    for v in &mut out {
        *v /= total;
    }
    out
}

/// log π(i) of the masked softmax.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool], index: usize) -> f64 {
    debug_assert!(mask[index], "log-prob of a masked action");
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| (l - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    logits[index] - log_z
}

/// Sample an index from the masked softmax.
pub fn sample_masked(logits: &[f64], mask: &[bool], rng: &mut impl Rng) -> usize {
    let probs = masked_softmax(logits, mask);
    let draw: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    let mut last_valid = 0;
    for (i, &p) in probs.iter().enumerate() {
        if mask[i] {
            last_valid = i;
            acc += p;
            if draw < acc {
                return i;
            }
        }
    }
    last_valid
}

/// Entropy of the masked distribution, for diagnostics.
pub fn masked_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_entries_are_exactly_zero_and_rest_normalize() {
        let probs = masked_softmax(&[1.0, 5.0, 2.0, 0.0], &[true, false, true, true]);
        assert_eq!(probs[1], 0.0);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(probs[2] > probs[0]);
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let logits = [0.3, -1.0, 2.0];
        let mask = [true, true, true];
        let probs = masked_softmax(&logits, &mask);
        for i in 0..3 {
            let lp = masked_log_softmax(&logits, &mask, i);
            assert!((lp.exp() - probs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_respects_mask_and_seed() {
        let logits = [0.0, 10.0, 0.0];
        let mask = [true, false, true];
        let mut rng = crate::rng::stream(11, "policy");
        for _ in 0..100 {
            let s = sample_masked(&logits, &mask, &mut rng);
            assert!(s == 0 || s == 2);
        }
        let mut a = crate::rng::stream(3, "policy");
        let mut b = crate::rng::stream(3, "policy");
        for _ in 0..50 {
            assert_eq!(
                sample_masked(&logits, &mask, &mut a),
                sample_masked(&logits, &mask, &mut b)
            );
        }
    }
}
