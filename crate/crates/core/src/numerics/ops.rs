use rand_distr::{Beta, Distribution};

use crate::error::{CekdError, Result};
use crate::numerics::{RngStream, Tensor};

/// Temperature softmax over a logit slice, with max-subtraction.
pub fn softmax_slice(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if temperature <= 0.0 {
        return Err(CekdError::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(CekdError::invalid("softmax of empty logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Temperature softmax of a rank-1 logits tensor.
pub fn softmax(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    if logits.shape().len() != 1 {
        return Err(CekdError::invalid("softmax expects a rank-1 tensor"));
    }
    let p = softmax_slice(logits.data(), temperature)?;
    Tensor::from_vec(logits.shape(), p)
}

/// KL(p || q) = sum p ln(p/q), natural log, with 0 ln(0/q) = 0.
///
/// A positive-mass `p` cell over a zero-mass `q` cell is reported as an
/// error instead of a silent NaN/Inf.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(CekdError::invalid("kl_div length mismatch"));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CekdError::invalid(format!(
                "{name} is not a probability vector (sum {sum})"
            )));
        }
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(CekdError::Numeric(
                "kl_div diverges: zero target mass under positive source mass".into(),
            ));
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc)
}

/// Draw from Beta(alpha, alpha) on [0,1].
pub fn sample_beta(alpha: f64, rng: &mut RngStream) -> Result<f64> {
    if alpha <= 0.0 {
        return Err(CekdError::invalid(format!(
            "beta parameter must be positive, got {alpha}"
        )));
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| CekdError::invalid(format!("beta distribution: {e}")))?;
    Ok(beta.sample(rng).clamp(0.0, 1.0))
}
