//! Softmax, multiclass logistic derivatives, and the log-likelihood loss.

/// Softmax with max-subtraction; `out` receives the probabilities.
pub fn softmax_row(scores: &[f64], out: &mut [f64]) {
    debug_assert_eq!(scores.len(), out.len());
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Softmax over a buffer already holding the raw scores.
pub fn softmax_in_place(buf: &mut [f64]) {
    let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in buf.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in buf.iter_mut() {
        *v /= sum;
    }
}

/// Residual and weight of one instance for one class: `(r - p, p(1-p))`
/// where `r` is the one-hot label indicator.
#[inline]
pub fn rp_pp(label: u32, class: usize, p: f64) -> (f64, f64) {
    let r = (label as usize == class) as u8 as f64;
    (r - p, p * (1.0 - p))
}

/// First/second derivatives of the loss for one instance:
/// `g_k = -(r_k - p_k)`, `h_k = p_k(1 - p_k)`.
pub fn instance_derivatives(label: u32, p_row: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut g = Vec::with_capacity(p_row.len());
    let mut h = Vec::with_capacity(p_row.len());
    for (k, &p) in p_row.iter().enumerate() {
        let (rp, pp) = rp_pp(label, k, p);
        g.push(-rp);
        h.push(pp);
    }
    (g, h)
}

/// Negative log-likelihood over rows: `Σ_i -log p_{i, y_i}`.
pub fn nll_loss(labels: &[u32], probs: &[f64], n_classes: usize) -> f64 {
    debug_assert_eq!(probs.len(), labels.len() * n_classes);
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[i * n_classes + y as usize].ln())
        .sum()
}

pub fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric() {
        let mut out = [0.0; 2];
        softmax_row(&[0.0, 0.0], &mut out);
        assert_eq!(out, [0.5, 0.5]);
    }

    #[test]
    fn softmax_shift_invariant() {
        for c in [-3.0, 0.0, 250.0] {
            let mut out = [0.0; 3];
            softmax_row(&[c, c, c], &mut out);
            for p in out {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_no_overflow() {
        let mut out = [0.0; 2];
        softmax_row(&[700.0, 0.0], &mut out);
        assert!(out[0] > 1.0 - 1e-12 && out[0].is_finite());
        assert!(out[1] < 1e-12);
        assert!((out[0] + out[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivatives_at_uniform() {
        let (g, h) = instance_derivatives(0, &[0.5, 0.5]);
        assert_eq!(g, vec![-0.5, 0.5]);
        assert_eq!(h, vec![0.25, 0.25]);
    }

    #[test]
    fn derivatives_direct() {
        let (g, h) = instance_derivatives(1, &[0.2, 0.8]);
        assert!((g[0] - 0.2).abs() < 1e-15);
        assert!((g[1] + 0.2).abs() < 1e-15);
        assert!((h[0] - 0.16).abs() < 1e-15);
        assert!((h[1] - 0.16).abs() < 1e-15);
    }

    #[test]
    fn derivatives_sum_to_zero() {
        let p = [0.1, 0.3, 0.6];
        let (g, _) = instance_derivatives(2, &p);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn nll_values() {
        assert_eq!(nll_loss(&[0], &[1.0, 0.0], 2), 0.0);
        let l = nll_loss(&[1], &[0.5, 0.5], 2);
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_monotone_in_correct_probability() {
        let hi = nll_loss(&[0], &[0.9, 0.1], 2);
        let lo = nll_loss(&[0], &[0.6, 0.4], 2);
        assert!(lo > hi);
    }
}
