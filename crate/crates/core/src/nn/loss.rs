//! Losses: softmax cross-entropy, Gaussian KL to the standard normal, ELBO.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Floor applied inside log terms so exact zeros stay finite.
pub const EPS_PROB: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean negative log probability of the true class.
///
/// `probs` holds one probability vector per row; `labels[i]` indexes the true
/// class of row i. Probabilities are floored at [`EPS_PROB`] inside the log.
pub fn cross_entropy_loss(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() == 0 || labels.is_empty() {
        return Err(Error::invalid("cross_entropy_loss: empty batch"));
    }
    if probs.rows() != labels.len() {
        return Err(Error::shape(format!(
            "cross_entropy_loss: {} prediction rows vs {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let classes = probs.cols();
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::invalid(format!(
                "cross_entropy_loss: label {} out of range for {} classes",
                label, classes
            )));
        }
        total -= probs.get(i, label).max(EPS_PROB).ln();
    }
    Ok(total / labels.len() as f64)
}

/// KL( N(mu, sigma^2) || N(0, 1) ) summed over all entries:
/// sum of (sigma^2 + mu^2 - 1 - ln sigma^2) / 2.
pub fn kl_gaussian_to_standard_normal(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::shape(format!(
            "kl: {} means vs {} sigmas",
            mu.len(),
            sigma.len()
        )));
    }
    let mut total = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if s <= 0.0 || !s.is_finite() {
            return Err(Error::numeric(format!(
                "kl: sigma must be positive, got {s}"
            )));
        }
        total += (s * s + m * m - 1.0 - (s * s).ln()) / 2.0;
    }
    Ok(total)
}

/// ELBO-style training objective: cross-entropy plus the KL penalty spread
/// uniformly over the batches of one epoch.
pub fn elbo_loss(ce: f64, kl_total: f64, beta: f64, num_batches_per_epoch: usize) -> Result<f64> {
    if num_batches_per_epoch == 0 {
        return Err(Error::invalid(
            "elbo_loss: num_batches_per_epoch must be >= 1",
        ));
    }
    if beta < 0.0 {
        return Err(Error::invalid("elbo_loss: beta must be >= 0"));
    }
    if !ce.is_finite() || !kl_total.is_finite() {
        return Err(Error::numeric("elbo_loss: non-finite inputs".to_string()));
    }
    Ok(ce + beta * kl_total / num_batches_per_epoch as f64)
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax_rows(&Matrix::zeros(3, 4));
        for i in 0..3 {
            for j in 0..4 {
                assert!((p.get(i, j) - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_closed_form() {
        // logits (2, 0) -> (0.8808, 0.1192)
        let p = softmax_rows(&m(&[vec![2.0, 0.0]]));
        assert!((p.get(0, 0) - 0.8807970779778823).abs() < 1e-12);
        assert!((p.get(0, 1) - 0.11920292202211755).abs() < 1e-12);
    }

    #[test]
    fn ce_zero_for_one_hot() {
        let p = m(&[vec![1.0, 0.0]]);
        assert_eq!(cross_entropy_loss(&p, &[0]).unwrap(), 0.0);
    }

    #[test]
    fn ce_uniform_is_ln2() {
        let p = m(&[vec![0.5, 0.5]]);
        let loss = cross_entropy_loss(&p, &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn ce_closed_form_batch() {
        let p = m(&[vec![0.9, 0.1], vec![0.2, 0.8]]);
        let loss = cross_entropy_loss(&p, &[0, 1]).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.1643).abs() < 5e-4);
    }

    #[test]
    fn ce_rejects_empty_batch() {
        assert!(cross_entropy_loss(&Matrix::zeros(0, 2), &[]).is_err());
    }

    #[test]
    fn kl_zero_at_standard_normal() {
        assert_eq!(kl_gaussian_to_standard_normal(&[0.0], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn kl_closed_form_values() {
        let v = kl_gaussian_to_standard_normal(&[1.0], &[1.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let v = kl_gaussian_to_standard_normal(&[0.0], &[2.0]).unwrap();
        assert!((v - (4.0 - 1.0 - 4.0f64.ln()) / 2.0).abs() < 1e-15);
        assert!((v - 0.8069).abs() < 5e-4);
    }

    #[test]
    fn kl_rejects_nonpositive_sigma() {
        assert!(kl_gaussian_to_standard_normal(&[0.0], &[0.0]).is_err());
        assert!(kl_gaussian_to_standard_normal(&[0.0], &[-1.0]).is_err());
    }

    /// KL matches numeric quadrature of the defining integral
    /// E_q[ln q(x) - ln p(x)] on a handful of (mu, sigma).
    #[test]
    fn kl_matches_quadrature() {
        for &(mu, sigma) in &[(0.0, 1.0), (1.0, 1.0), (0.0, 2.0), (-1.5, 0.7), (2.0, 0.4)] {
            let closed = kl_gaussian_to_standard_normal(&[mu], &[sigma]).unwrap();
            let numeric = kl_quadrature(mu, sigma);
            assert!(
                (closed - numeric).abs() < 1e-9,
                "mu={mu} sigma={sigma}: {closed} vs {numeric}"
            );
        }
    }

    /// Simpson integration of q(x) ln(q(x)/p(x)) over +-12 sigma.
    pub(crate) fn kl_quadrature(mu: f64, sigma: f64) -> f64 {
        let lo = mu - 12.0 * sigma.max(1.0);
        let hi = mu + 12.0 * sigma.max(1.0);
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let integrand = |x: f64| {
            let q = (-(x - mu) * (x - mu) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            if q <= 0.0 {
                return 0.0;
            }
            let ln_q = -((x - mu) * (x - mu)) / (2.0 * sigma * sigma)
                - sigma.ln()
                - 0.5 * (2.0 * std::f64::consts::PI).ln();
            let ln_p = -x * x / 2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln();
            q * (ln_q - ln_p)
        };
        let mut acc = integrand(lo) + integrand(hi);
        for i in 1..n {
            let x = lo + i as f64 * h;
            acc += integrand(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn elbo_formula() {
        assert_eq!(elbo_loss(1.0, 10.0, 1.0, 10).unwrap(), 2.0);
        assert_eq!(elbo_loss(0.7, 10.0, 0.0, 10).unwrap(), 0.7);
        assert_eq!(elbo_loss(0.5, 0.0, 3.0, 4).unwrap(), 0.5);
    }

    #[test]
    fn elbo_rejects_bad_inputs() {
        assert!(elbo_loss(1.0, 1.0, -0.5, 1).is_err());
        assert!(elbo_loss(f64::NAN, 1.0, 1.0, 1).is_err());
        assert!(elbo_loss(1.0, 1.0, 1.0, 0).is_err());
    }
}
