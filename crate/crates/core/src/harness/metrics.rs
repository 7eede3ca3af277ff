use serde::Serialize;

use crate::distill::LossBreakdown;

/// One line of metrics.jsonl: a training step or a per-epoch evaluation.
///
/// Wall-clock time is deliberately kept out of this file so that reruns with
/// identical configs produce byte-identical metrics; total wall time lives
/// in summary.json.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub kind: &'static str,
    pub epoch: u64,
    pub step: u64,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub student_acc: Option<f64>,
    pub lr: f64,
}

impl MetricsRecord {
    pub fn step(epoch: u64, step: u64, losses: LossBreakdown, lr: f64) -> MetricsRecord {
        MetricsRecord {
            kind: "step",
            epoch,
            step,
            losses: Some(losses),
            teacher_acc: None,
            student_acc: None,
            lr,
        }
    }

    pub fn eval(
        epoch: u64,
        step: u64,
        teacher_acc: f64,
        student_acc: Option<f64>,
        lr: f64,
    ) -> MetricsRecord {
        MetricsRecord {
            kind: "eval",
            epoch,
            step,
            losses: None,
            teacher_acc: Some(teacher_acc),
            student_acc,
            lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub best_teacher_acc: f64,
    pub best_student_acc: Option<f64>,
    pub final_teacher_acc: f64,
    pub final_student_acc: Option<f64>,
    pub epochs: u64,
    pub total_wall_ms: u64,
}
