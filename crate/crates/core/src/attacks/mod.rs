//! Adversarial example generation and margin estimation.
//!
//! - [`fgsm`], [`pgd`] and [`cw_pgd`] craft L∞-bounded perturbations, with
//!   optional per-example budgets for PGD.
//! - [`deepfool_margin`] estimates an example's distance to the nearest
//!   decision boundary.
//! - [`adversarial_direction`] and [`margin_along`] measure the margin along a
//!   fixed direction by line search.

mod deepfool;
mod geometry;
mod gradient;

use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::nets::Network;

pub use deepfool::{deepfool_margin, DeepFoolConfig, MarginEstimate, MarginSpace, StepForm};
pub use geometry::{adversarial_direction, margin_along};
pub use gradient::{cw_pgd, fgsm, pgd, PgdOptions, RANDOM_START_STD};

use crate::training::loss::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackFamily {
    Fgsm,
    Pgd,
    CwPgd,
}

/// A uniform-budget attack configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub family: AttackFamily,
    pub eps: f64,
    /// Step size α (ignored by FGSM, which steps by ε).
    pub step: f64,
    pub iterations: usize,
    pub random_start: bool,
    pub seed: u64,
}

impl AttackSpec {
    pub fn fgsm(eps: f64) -> Self {
        AttackSpec {
            family: AttackFamily::Fgsm,
            eps,
            step: eps,
            iterations: 1,
            random_start: false,
            seed: 0,
        }
    }

    /// Evaluation PGD: 20 steps of ε/10 from a random start.
    pub fn pgd20(eps: f64, seed: u64) -> Self {
        AttackSpec {
            family: AttackFamily::Pgd,
            eps,
            step: eps / 10.0,
            iterations: 20,
            random_start: true,
            seed,
        }
    }

    /// Training PGD: 10 steps of ε/4 from a random start.
    pub fn pgd10(eps: f64, seed: u64) -> Self {
        AttackSpec {
            family: AttackFamily::Pgd,
            eps,
            step: eps / 4.0,
            iterations: 10,
            random_start: true,
            seed,
        }
    }

    /// CW margin loss inside the evaluation PGD loop.
    pub fn cw20(eps: f64, seed: u64) -> Self {
        AttackSpec {
            family: AttackFamily::CwPgd,
            ..AttackSpec::pgd20(eps, seed)
        }
    }

    pub fn loss(&self) -> LossKind {
        match self.family {
            AttackFamily::CwPgd => LossKind::Cw,
            _ => LossKind::Ce,
        }
    }

    /// Short name used as a report key, e.g. `pgd20`.
    pub fn name(&self) -> String {
        match self.family {
            AttackFamily::Fgsm => "fgsm".to_string(),
            AttackFamily::Pgd => format!("pgd{}", self.iterations),
            AttackFamily::CwPgd => format!("cw{}", self.iterations),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::Contract(format!(
                "attack budget must be finite and nonnegative, got {}",
                self.eps
            )));
        }
        if self.family != AttackFamily::Fgsm && self.iterations > 0 && self.eps > 0.0 && !(self.step > 0.0) {
            return Err(Error::Contract(format!("step size must be positive, got {}", self.step)));
        }
        Ok(())
    }

    /// Run the attack on a batch.
    pub fn run(&self, net: &Network, x: &Tensor, labels: &[usize], domain: Domain) -> Result<Tensor> {
        self.validate()?;
        match self.family {
            AttackFamily::Fgsm => fgsm(net, x, labels, self.eps, domain),
            AttackFamily::Pgd | AttackFamily::CwPgd => {
                let n = x.rows();
                let opts = PgdOptions {
                    iterations: self.iterations,
                    random_start: self.random_start,
                    seed: self.seed,
                    index_offset: 0,
                    loss: self.loss(),
                };
                pgd(net, x, labels, &vec![self.eps; n], &vec![self.step; n], &opts, domain)
            }
        }
    }
}

/// One line of an exported attack log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub index: usize,
    pub eps: f64,
    pub linf: f64,
    pub success: bool,
    pub iterations: usize,
}

/// Summarize an attack batch: L∞ distance and whether the label was lost.
pub fn attack_records(
    net: &Network,
    x: &Tensor,
    adversarial: &Tensor,
    labels: &[usize],
    budgets: &[f64],
    iterations: usize,
) -> Result<Vec<AttackRecord>> {
    let preds = net.predict(adversarial)?;
    Ok((0..x.rows())
        .map(|i| AttackRecord {
            index: i,
            eps: budgets[i],
            linf: linf_distance(x.row(i), adversarial.row(i)),
            success: preds[i] != labels[i],
            iterations,
        })
        .collect())
}

pub fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
}
