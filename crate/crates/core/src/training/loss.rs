//! Classification losses, both as plain functions on probability rows and as
//! recorded graph nodes.
//!
//! Every `log` argument is floored at [`PROB_FLOOR`]; each time the floor is
//! hit a process-wide counter is bumped (see [`floor_hits`]).

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Tensor, Var};

pub const PROB_FLOOR: f64 = 1e-12;

static FLOOR_HITS: AtomicUsize = AtomicUsize::new(0);

/// Number of times a log argument has been clamped to [`PROB_FLOOR`].
pub fn floor_hits() -> usize {
    FLOOR_HITS.load(Ordering::Relaxed)
}

fn floored_ln(p: f64) -> f64 {
    if p < PROB_FLOOR {
        FLOOR_HITS.fetch_add(1, Ordering::Relaxed);
        PROB_FLOOR.ln()
    } else {
        p.ln()
    }
}

/// Which per-example loss to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `-log p_y`
    Ce,
    /// `-log p_y - log(1 - max_{k != y} p_k)`
    Bce,
    /// `max(z_y - max_{k != y} z_k, -kappa)` with kappa = 0; attackers minimize it.
    Cw,
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= classes) {
        Some(&label) => Err(Error::Label { label, classes }),
        None => Ok(()),
    }
}

/// Cross entropy of a probability row.
pub fn ce_loss(p: &[f64], y: usize) -> Result<f64> {
    check_labels(&[y], p.len())?;
    Ok(-floored_ln(p[y]))
}

/// Boosted cross entropy of a probability row: cross entropy plus a penalty on
/// the single largest wrong-class probability.
pub fn bce_loss(p: &[f64], y: usize) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::Contract("boosted cross entropy needs at least two classes".into()));
    }
    check_labels(&[y], p.len())?;
    let runner_up = p
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(-floored_ln(p[y]) - floored_ln(1.0 - runner_up))
}

/// Squared L2 distance between logit rows, summed over classes and averaged
/// over the batch.
pub fn mse_logits(teacher: &Tensor, student: &Tensor) -> Result<f64> {
    if teacher.shape() != student.shape() {
        return Err(Error::shape("mse_logits", teacher.shape(), student.shape()));
    }
    let total: f64 = teacher.data().iter().zip(student.data()).map(|(t, s)| (t - s) * (t - s)).sum();
    Ok(total / teacher.rows() as f64)
}

fn note_floor_hits(v: &Var<'_>, floor: f64) {
    let hits = v.with_value(|t| t.data().iter().filter(|&&x| !(x > floor)).count());
    if hits > 0 {
        FLOOR_HITS.fetch_add(hits, Ordering::Relaxed);
    }
}

/// Per-example cross entropy `[batch]` from logits `[batch × K]`.
pub fn cross_entropy<'g>(logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let floor = PROB_FLOOR.ln();
    let log_py = logits.log_softmax().pick(labels)?;
    note_floor_hits(&log_py, floor);
    Ok(log_py.clamp_min(floor).neg())
}

/// Per-example boosted cross entropy `[batch]`.
pub fn boosted_cross_entropy<'g>(logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let ce = cross_entropy(logits, labels)?;
    let runner_up = logits.softmax().max_excluding(labels)?;
    let complement = runner_up.neg().add_scalar(1.0);
    note_floor_hits(&complement, PROB_FLOOR);
    let margin_term = complement.clamp_min(PROB_FLOOR).log()?.neg();
    ce.add(margin_term)
}

/// Per-example CW margin `max(z_y - max_{k != y} z_k, 0)` `[batch]`.
pub fn cw_margin<'g>(logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let true_logit = logits.pick(labels)?;
    let best_other = logits.max_excluding(labels)?;
    Ok(true_logit.sub(best_other)?.clamp_min(0.0))
}

/// Per-example squared logit distance `[batch]`.
pub fn logit_sq_distance<'g>(student: Var<'g>, teacher: Var<'g>) -> Result<Var<'g>> {
    let diff = student.sub(teacher)?;
    Ok(diff.mul(diff)?.sum_rows())
}

pub fn per_example<'g>(kind: LossKind, logits: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let classes = logits.with_value(Tensor::cols);
    check_labels(labels, classes)?;
    match kind {
        LossKind::Ce => cross_entropy(logits, labels),
        LossKind::Bce => boosted_cross_entropy(logits, labels),
        LossKind::Cw => cw_margin(logits, labels),
    }
}
