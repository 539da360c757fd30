//! Training loops: natural training, standard adversarial training (SAT) and
//! moderate-margin adversarial training (MMAT).
//!
//! MMAT minimizes, per mini-batch,
//!
//! ```text
//! mean_i BCE(f(x̃'_i), y_i) + mean_i ‖z_teacher(x_i) − z(x_i)‖² / λ
//! ```
//!
//! where `x̃'_i` is a PGD example under the per-example budget `ε_i`.

pub mod loss;
mod sgd;

use serde::{Deserialize, Serialize};

use crate::attacks::{pgd, AttackSpec, PgdOptions};
use crate::data::{self, Dataset, Domain};
use crate::error::{Error, Result};
use crate::ndgrad::{Graph, Tensor};
use crate::nets::Network;
use crate::rng;
use crate::strategy::{dynamic_regrade, BudgetAssignment, StrategyParams};

pub use loss::{bce_loss, ce_loss, mse_logits, LossKind};
pub use sgd::{sgd_step, Sgd};

const BATCH_ATTACK_STREAM: &str = "batch-attack";
const METRIC_ATTACK_STREAM: &str = "metric-attack";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDrop {
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate drops applied from the given epoch on.
    pub lr_drops: Vec<LrDrop>,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Divides the teacher term of the MMAT objective.
    pub lambda: f64,
    pub attack_iterations: usize,
    /// Attack step as a fraction of each example's budget.
    pub attack_step_fraction: f64,
    pub random_start: bool,
    pub seed: u64,
    /// Compute NA/RA on the training split after every epoch.
    pub train_metrics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 128,
            lr: 0.05,
            lr_drops: vec![LrDrop { epoch: 30, factor: 0.1 }, LrDrop { epoch: 36, factor: 0.1 }],
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda: 4.0,
            attack_iterations: 10,
            attack_step_fraction: 0.25,
            random_start: true,
            seed: 0,
            train_metrics: true,
        }
    }
}

impl TrainConfig {
    /// 100 epochs at η = 0.01, divided by 10 at epochs 75 and 90, weight
    /// decay 0.0035, no per-epoch training-set metrics.
    pub fn long_schedule() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 0.01,
            lr_drops: vec![LrDrop { epoch: 75, factor: 0.1 }, LrDrop { epoch: 90, factor: 0.1 }],
            weight_decay: 0.0035,
            train_metrics: false,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, detail: String| Error::Config {
            path: format!("train.{path}"),
            detail,
        };
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(bad("lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.lambda > 0.0) {
            return Err(bad("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if !(self.attack_step_fraction > 0.0) {
            return Err(bad("attack_step_fraction", "must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(bad("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_drops
            .iter()
            .filter(|d| epoch >= d.epoch)
            .fold(self.lr, |lr, d| lr * d.factor)
    }
}

/// Source of the logits the student is pulled towards.
#[derive(Debug, Clone, PartialEq)]
pub enum Teacher {
    /// A fixed, separately trained network.
    Frozen { network: Network, tag: String },
    /// The student's own current logits, detached from the graph.
    LiveStudent,
}

impl Teacher {
    pub fn frozen(network: Network, tag: impl Into<String>) -> Self {
        Teacher::Frozen { network, tag: tag.into() }
    }

    fn logits(&self, student: &Network, x: &Tensor) -> Result<Tensor> {
        match self {
            Teacher::Frozen { network, .. } => {
                if network.input_dim() != student.input_dim() || network.classes() != student.classes() {
                    return Err(Error::shape("teacher", &network.sizes(), &student.sizes()));
                }
                network.forward(x)
            }
            Teacher::LiveStudent => student.forward(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BudgetPlan {
    Static(BudgetAssignment),
    /// Regrade the training set with the live network at every epoch start.
    Dynamic(StrategyParams),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Natural,
    /// Uniform-budget PGD examples scored with `loss`.
    Sat {
        eps: f64,
        loss: LossKind,
    },
    Mmat {
        teacher: Teacher,
        budgets: BudgetPlan,
    },
}

impl Method {
    pub fn sat(eps: f64) -> Self {
        Method::Sat { eps, loss: LossKind::Ce }
    }

    pub fn tag(&self) -> String {
        match self {
            Method::Natural => "natural".into(),
            Method::Sat { eps, .. } => format!("sat-{eps}"),
            Method::Mmat { .. } => "mmat".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub na_train: Option<f64>,
    pub ra_train: Option<f64>,
    pub na_val: Option<f64>,
    pub ra_val: Option<f64>,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,lr,loss,na_train,ra_train,na_val,ra_val";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss,
            opt_cell(self.na_train),
            opt_cell(self.ra_train),
            opt_cell(self.na_val),
            opt_cell(self.ra_val)
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_net: Network,
    /// Highest validation RA (final network when no validation split).
    pub best_net: Network,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    /// Objective value of every mini-batch in order.
    pub batch_losses: Vec<f64>,
}

/// Value of the MMAT objective and its two parts on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmatValue {
    pub objective: f64,
    pub adversarial_term: f64,
    pub teacher_term: f64,
}

/// Budgets → PGD examples with step `fraction·ε_i`, always ascending CE.
fn finer_grained_examples(
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    budgets: &[f64],
    config: &TrainConfig,
    seed: u64,
    domain: Domain,
) -> Result<Tensor> {
    let steps: Vec<f64> = budgets.iter().map(|e| e * config.attack_step_fraction).collect();
    let opts = PgdOptions {
        iterations: config.attack_iterations,
        random_start: config.random_start,
        seed,
        index_offset: 0,
        loss: LossKind::Ce,
    };
    pgd(net, x, labels, budgets, &steps, &opts, domain)
}

/// Evaluate the MMAT objective on one batch without updating anything.
#[allow(clippy::too_many_arguments)]
pub fn mmat_objective(
    net: &Network,
    teacher: &Teacher,
    x: &Tensor,
    labels: &[usize],
    budgets: &[f64],
    lambda: f64,
    config: &TrainConfig,
    seed: u64,
    domain: Domain,
) -> Result<MmatValue> {
    let adv = finer_grained_examples(net, x, labels, budgets, config, seed, domain)?;
    let g = Graph::new();
    let teacher_logits = teacher.logits(net, x)?;
    let (total, l1, l2) = mmat_graph(&g, net, false, &adv, x, labels, &teacher_logits, lambda)?;
    Ok(MmatValue {
        objective: total,
        adversarial_term: l1,
        teacher_term: l2,
    })
}

/// Records the MMAT objective; returns `(objective, L1 mean, L2 mean)` and
/// leaves the graph ready for backward from its last node.
#[allow(clippy::too_many_arguments)]
fn mmat_graph(
    g: &Graph,
    net: &Network,
    trainable: bool,
    adv: &Tensor,
    x: &Tensor,
    labels: &[usize],
    teacher_logits: &Tensor,
    lambda: f64,
) -> Result<(f64, f64, f64)> {
    let bound = net.bind(g, trainable);
    let l1 = loss::boosted_cross_entropy(bound.logits(g.constant(adv.clone()))?, labels)?.mean();
    let natural = bound.logits(g.constant(x.clone()))?;
    let l2 = loss::logit_sq_distance(natural, g.constant(teacher_logits.clone()))?.mean();
    let total = l1.add(l2.scale(1.0 / lambda))?;
    Ok((total.item(), l1.item(), l2.item()))
}

fn accuracy(net: &Network, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let preds = net.predict(x)?;
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

fn robust_accuracy_pgd10(net: &Network, ds: &Dataset, seed: u64) -> Result<f64> {
    let adv = AttackSpec::pgd10(ds.base_eps, seed).run(net, &ds.x, &ds.labels, ds.domain)?;
    accuracy(net, &adv, &ds.labels)
}

/// Train `init` on `train_set` with the chosen method.
///
/// Mini-batches are reshuffled each epoch from the config seed. When a
/// validation split is given, the best network is the one with the highest
/// validation robust accuracy under training-time PGD at the validation
/// set's base budget.
pub fn train(config: &TrainConfig, init: Network, train_set: &Dataset, val: Option<&Dataset>, method: &Method) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train_set.dim() != init.input_dim() {
        return Err(Error::shape("train", &[train_set.dim()], &[init.input_dim()]));
    }
    match method {
        Method::Sat { eps, .. } if !(*eps >= 0.0) => {
            return Err(Error::Contract(format!("SAT budget must be nonnegative, got {eps}")));
        }
        Method::Mmat {
            budgets: BudgetPlan::Static(a),
            ..
        } if a.len() != train_set.len() => {
            return Err(Error::Contract(format!(
                "budget assignment covers {} examples, training set has {}",
                a.len(),
                train_set.len()
            )));
        }
        _ => {}
    }

    let mut net = init;
    let mut opt = Sgd::new(&net, config.momentum, config.weight_decay);
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut batch_losses = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let dynamic_budgets = match method {
            Method::Mmat {
                budgets: BudgetPlan::Dynamic(params),
                ..
            } => Some(dynamic_regrade(&net, &train_set.x, &train_set.labels, params)?),
            _ => None,
        };

        let mut epoch_loss = 0.0;
        let order = data::batches(train_set.len(), config.batch_size, config.seed, epoch);
        for (b, idx) in order.iter().enumerate() {
            let x = train_set.x.select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let attack_seed = rng::derive(config.seed, BATCH_ATTACK_STREAM, ((epoch as u64) << 32) | b as u64);

            let g = Graph::new();
            let bound = net.bind(&g, true);
            let objective = match method {
                Method::Natural => loss::cross_entropy(bound.logits(g.constant(x))?, &labels)?.mean(),
                Method::Sat { eps, loss: kind } => {
                    let budgets = vec![*eps; idx.len()];
                    let adv = finer_grained_examples(&net, &x, &labels, &budgets, config, attack_seed, train_set.domain)?;
                    loss::per_example(*kind, bound.logits(g.constant(adv))?, &labels)?.mean()
                }
                Method::Mmat { teacher, budgets } => {
                    let eps = match (budgets, &dynamic_budgets) {
                        (_, Some(dynamic)) => dynamic.select(idx),
                        (BudgetPlan::Static(assignment), None) => assignment.select(idx),
                        (BudgetPlan::Dynamic(_), None) => unreachable!("dynamic budgets computed above"),
                    };
                    let adv = finer_grained_examples(&net, &x, &labels, &eps, config, attack_seed, train_set.domain)?;
                    let teacher_logits = teacher.logits(&net, &x)?;
                    let l1 = loss::boosted_cross_entropy(bound.logits(g.constant(adv))?, &labels)?.mean();
                    let natural = bound.logits(g.constant(x))?;
                    let l2 = loss::logit_sq_distance(natural, g.constant(teacher_logits))?.mean();
                    l1.add(l2.scale(1.0 / config.lambda))?
                }
            };
            let value = objective.item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: value,
                });
            }
            g.backward(objective)?;
            opt.step(&mut net, &bound.gradients(), lr);
            if net
                .layers()
                .iter()
                .any(|l| l.weights.has_non_finite() || l.bias.iter().any(|b| !b.is_finite()))
            {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: value,
                });
            }
            batch_losses.push(value);
            epoch_loss += value;
        }

        let metric_seed = rng::derive(config.seed, METRIC_ATTACK_STREAM, epoch as u64);
        let (na_train, ra_train) = if config.train_metrics {
            (
                Some(accuracy(&net, &train_set.x, &train_set.labels)?),
                Some(robust_accuracy_pgd10(&net, train_set, metric_seed)?),
            )
        } else {
            (None, None)
        };
        let (na_val, ra_val) = match val {
            Some(v) => (
                Some(accuracy(&net, &v.x, &v.labels)?),
                Some(robust_accuracy_pgd10(&net, v, metric_seed)?),
            ),
            None => (None, None),
        };
        if let Some(ra) = ra_val {
            if best.as_ref().is_none_or(|(b, _, _)| ra > *b) {
                best = Some((ra, epoch, net.clone()));
            }
        }
        metrics.push(EpochMetrics {
            epoch,
            lr,
            loss: epoch_loss / order.len() as f64,
            na_train,
            ra_train,
            na_val,
            ra_val,
        });
    }

    let (best_epoch, best_net) = match best {
        Some((_, e, n)) => (e, n),
        None => (config.epochs.saturating_sub(1), net.clone()),
    };
    Ok(TrainOutcome {
        final_net: net,
        best_net,
        best_epoch,
        metrics,
        batch_losses,
    })
}
