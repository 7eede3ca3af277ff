//! Cross-distillation and collaborative-ensemble losses.
//!
//! Both branches see the same image pairs under different mixing methods.
//! The teacher's output on its own batch supervises the student's output on
//! that batch and vice versa; on top of that, a per-sample row-wise-minimum
//! logit ensemble supervises all four outputs. Targets are always detached:
//! gradients flow only into the prediction side of each KL term.

use serde::Serialize;

use crate::error::{CekdError, Result};
use crate::numerics::{kl_div, softmax_slice, Tensor};

/// The four branch outputs for one batch: teacher on the h1 and h2 batches,
/// student on the h2 and h1 batches.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsQuad {
    pub t1: Tensor,
    pub t2: Tensor,
    pub s1: Tensor,
    pub s2: Tensor,
}

impl LogitsQuad {
    pub fn validate(&self) -> Result<()> {
        let shape = self.t1.shape();
        if shape.len() != 2 {
            return Err(CekdError::invalid("logits must be [N, classes]"));
        }
        for t in [&self.t2, &self.s1, &self.s2] {
            if t.shape() != shape {
                return Err(CekdError::invalid("logits quad shape mismatch"));
            }
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.t1.shape()[0]
    }

    pub fn num_classes(&self) -> usize {
        self.t1.shape()[1]
    }
}

/// Row-wise minimum ensembles: e1 over (t1, s2), e2 over (s1, t2).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePair {
    pub e1: Tensor,
    pub e2: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambdas: [f64; 6],
    pub temperature: f64,
    pub ce_weight: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            lambdas: [0.7, 0.3, 0.5, 0.5, 0.5, 0.5],
            temperature: 4.0,
            ce_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(CekdError::invalid("temperature must be positive"));
        }
        if self.lambdas.iter().any(|&l| l < 0.0) || self.ce_weight < 0.0 {
            return Err(CekdError::invalid("loss weights must be nonnegative"));
        }
        Ok(())
    }
}

/// Hard-target bookkeeping for one mixed batch.
#[derive(Debug, Clone, PartialEq)]
pub struct HardTargets {
    pub labels_a: Vec<usize>,
    pub labels_b: Vec<usize>,
    pub w_a: Vec<f64>,
    pub w_b: Vec<f64>,
}

impl From<&crate::augment::MixedBatch> for HardTargets {
    fn from(batch: &crate::augment::MixedBatch) -> HardTargets {
        HardTargets {
            labels_a: batch.labels_a(),
            labels_b: batch.labels_b(),
            w_a: batch.weights_a(),
            w_b: batch.weights_b(),
        }
    }
}

/// Every loss term, individually recorded, plus the per-network totals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_kd_h1: f64,
    pub l_kd_h2: f64,
    pub l_kd_t1: f64,
    pub l_kd_t2: f64,
    pub l_kd_s1: f64,
    pub l_kd_s2: f64,
    pub l_ce_teacher_h1: f64,
    pub l_ce_teacher_h2: f64,
    pub l_ce_student_h1: f64,
    pub l_ce_student_h2: f64,
    pub total_teacher: f64,
    pub total_student: f64,
}

/// Temperature-softened distillation loss, mean over the batch with the
/// usual T^2 factor. The target side is a constant.
pub fn kd_loss(target_logits: &Tensor, pred_logits: &Tensor, temperature: f64) -> Result<f64> {
    if target_logits.shape() != pred_logits.shape() || target_logits.shape().len() != 2 {
        return Err(CekdError::invalid("kd_loss expects matching [N,c] logits"));
    }
    let n = target_logits.shape()[0];
    let mut acc = 0.0;
    for i in 0..n {
        let p = softmax_slice(target_logits.row(i), temperature)?;
        let q = softmax_slice(pred_logits.row(i), temperature)?;
        acc += temperature * temperature * kl_div(&p, &q)?;
    }
    Ok(acc / n as f64)
}

/// Gradient of `kd_loss` with respect to the prediction logits:
/// per sample `(T/N) * (q - p)`.
pub fn kd_loss_grad_pred(
    target_logits: &Tensor,
    pred_logits: &Tensor,
    temperature: f64,
) -> Result<Tensor> {
    if target_logits.shape() != pred_logits.shape() || target_logits.shape().len() != 2 {
        return Err(CekdError::invalid("kd_loss expects matching [N,c] logits"));
    }
    let (n, c) = (target_logits.shape()[0], target_logits.shape()[1]);
    let mut grad = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let p = softmax_slice(target_logits.row(i), temperature)?;
        let q = softmax_slice(pred_logits.row(i), temperature)?;
        for j in 0..c {
            let idx = grad.idx2(i, j);
            grad.data_mut()[idx] = temperature / n as f64 * (q[j] - p[j]);
        }
    }
    Ok(grad)
}

/// Cross distillation: the teacher's h1 output supervises the student's h1
/// output, and the student's h2 output supervises the teacher's h2 output.
pub fn cross_kd(quad: &LogitsQuad, temperature: f64) -> Result<(f64, f64)> {
    quad.validate()?;
    let l_h1 = kd_loss(&quad.t1, &quad.s2, temperature)?;
    let l_h2 = kd_loss(&quad.s1, &quad.t2, temperature)?;
    Ok((l_h1, l_h2))
}

/// Per-sample, per-class minimum over each branch group.
pub fn ensemble_logits(quad: &LogitsQuad) -> Result<EnsemblePair> {
    quad.validate()?;
    let min_pair = |a: &Tensor, b: &Tensor| {
        let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| x.min(y)).collect();
        Tensor::from_vec(a.shape(), data)
    };
    Ok(EnsemblePair {
        e1: min_pair(&quad.t1, &quad.s2)?,
        e2: min_pair(&quad.s1, &quad.t2)?,
    })
}

/// The four ensemble distillation losses; ensembles are constants.
pub fn ensemble_kd(
    quad: &LogitsQuad,
    pair: &EnsemblePair,
    temperature: f64,
) -> Result<(f64, f64, f64, f64)> {
    quad.validate()?;
    Ok((
        kd_loss(&pair.e1, &quad.t1, temperature)?,
        kd_loss(&pair.e2, &quad.t2, temperature)?,
        kd_loss(&pair.e2, &quad.s1, temperature)?,
        kd_loss(&pair.e1, &quad.s2, temperature)?,
    ))
}

fn check_targets(logits: &Tensor, targets: &HardTargets) -> Result<(usize, usize)> {
    if logits.shape().len() != 2 {
        return Err(CekdError::invalid("mixed_ce expects [N,c] logits"));
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if targets.labels_a.len() != n
        || targets.labels_b.len() != n
        || targets.w_a.len() != n
        || targets.w_b.len() != n
    {
        return Err(CekdError::invalid("hard target length mismatch"));
    }
    if targets.labels_a.iter().chain(&targets.labels_b).any(|&l| l >= c) {
        return Err(CekdError::invalid("label out of range"));
    }
    Ok((n, c))
}

/// Dual-label cross entropy: mean over the batch of
/// `w_a * CE(logits, y_a) + w_b * CE(logits, y_b)`.
pub fn mixed_ce(logits: &Tensor, targets: &HardTargets) -> Result<f64> {
    let (n, _) = check_targets(logits, targets)?;
    let mut acc = 0.0;
    for i in 0..n {
        let q = softmax_slice(logits.row(i), 1.0)?;
        acc += targets.w_a[i] * -q[targets.labels_a[i]].ln()
            + targets.w_b[i] * -q[targets.labels_b[i]].ln();
    }
    Ok(acc / n as f64)
}

/// Gradient of `mixed_ce` with respect to the logits.
pub fn mixed_ce_grad(logits: &Tensor, targets: &HardTargets) -> Result<Tensor> {
    let (n, c) = check_targets(logits, targets)?;
    let mut grad = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let q = softmax_slice(logits.row(i), 1.0)?;
        let (wa, wb) = (targets.w_a[i], targets.w_b[i]);
        for j in 0..c {
            let idx = grad.idx2(i, j);
            grad.data_mut()[idx] = (wa + wb) * q[j] / n as f64;
        }
        let ia = grad.idx2(i, targets.labels_a[i]);
        grad.data_mut()[ia] -= wa / n as f64;
        let ib = grad.idx2(i, targets.labels_b[i]);
        grad.data_mut()[ib] -= wb / n as f64;
    }
    Ok(grad)
}

/// Compute every loss term and the two weighted per-network totals.
///
/// The teacher total carries the cross-entropy of t1/t2, the h2 cross term
/// and the two teacher ensemble terms; the student total mirrors it.
pub fn total_loss(
    quad: &LogitsQuad,
    h1_targets: &HardTargets,
    h2_targets: &HardTargets,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    quad.validate()?;
    let t = weights.temperature;
    let (l_kd_h1, l_kd_h2) = cross_kd(quad, t)?;
    let pair = ensemble_logits(quad)?;
    let (l_kd_t1, l_kd_t2, l_kd_s1, l_kd_s2) = ensemble_kd(quad, &pair, t)?;
    let l_ce_teacher_h1 = mixed_ce(&quad.t1, h1_targets)?;
    let l_ce_teacher_h2 = mixed_ce(&quad.t2, h2_targets)?;
    let l_ce_student_h2 = mixed_ce(&quad.s1, h2_targets)?;
    let l_ce_student_h1 = mixed_ce(&quad.s2, h1_targets)?;
    let [l1, l2, l3, l4, l5, l6] = weights.lambdas;
    let cw = weights.ce_weight;
    Ok(LossBreakdown {
        l_kd_h1,
        l_kd_h2,
        l_kd_t1,
        l_kd_t2,
        l_kd_s1,
        l_kd_s2,
        l_ce_teacher_h1,
        l_ce_teacher_h2,
        l_ce_student_h1,
        l_ce_student_h2,
        total_teacher: cw * (l_ce_teacher_h1 + l_ce_teacher_h2)
            + l2 * l_kd_h2
            + l3 * l_kd_t1
            + l4 * l_kd_t2,
        total_student: cw * (l_ce_student_h1 + l_ce_student_h2)
            + l1 * l_kd_h1
            + l5 * l_kd_s1
            + l6 * l_kd_s2,
    })
}

/// Gradients of the teacher total with respect to (t1, t2). Targets and the
/// ensembles are constants, so no term reaches the student.
pub fn teacher_dlogits(
    quad: &LogitsQuad,
    h1_targets: &HardTargets,
    h2_targets: &HardTargets,
    weights: &LossWeights,
) -> Result<(Tensor, Tensor)> {
    weights.validate()?;
    quad.validate()?;
    let t = weights.temperature;
    let pair = ensemble_logits(quad)?;
    let [_, l2, l3, l4, _, _] = weights.lambdas;

    let mut dt1 = mixed_ce_grad(&quad.t1, h1_targets)?;
    dt1.scale(weights.ce_weight);
    dt1.add_scaled(&kd_loss_grad_pred(&pair.e1, &quad.t1, t)?, l3);

    let mut dt2 = mixed_ce_grad(&quad.t2, h2_targets)?;
    dt2.scale(weights.ce_weight);
    dt2.add_scaled(&kd_loss_grad_pred(&quad.s1, &quad.t2, t)?, l2);
    dt2.add_scaled(&kd_loss_grad_pred(&pair.e2, &quad.t2, t)?, l4);
    Ok((dt1, dt2))
}

/// Gradients of the student total with respect to (s1, s2).
pub fn student_dlogits(
    quad: &LogitsQuad,
    h1_targets: &HardTargets,
    h2_targets: &HardTargets,
    weights: &LossWeights,
) -> Result<(Tensor, Tensor)> {
    weights.validate()?;
    quad.validate()?;
    let t = weights.temperature;
    let pair = ensemble_logits(quad)?;
    let [l1, _, _, _, l5, l6] = weights.lambdas;

    let mut ds1 = mixed_ce_grad(&quad.s1, h2_targets)?;
    ds1.scale(weights.ce_weight);
    ds1.add_scaled(&kd_loss_grad_pred(&pair.e2, &quad.s1, t)?, l5);

    let mut ds2 = mixed_ce_grad(&quad.s2, h1_targets)?;
    ds2.scale(weights.ce_weight);
    ds2.add_scaled(&kd_loss_grad_pred(&quad.t1, &quad.s2, t)?, l1);
    ds2.add_scaled(&kd_loss_grad_pred(&pair.e1, &quad.s2, t)?, l6);
    Ok((ds1, ds2))
}
