//! Toy-scale comparison of natural training, SAT and MMAT on one dataset.
//!
//! [`train_zoo`] fits the five models such a comparison needs from a single
//! root seed: natural, SAT at the base budget (also the strategy net), SAT at
//! a larger budget, the weakly robust SAT teacher and the MMAT student.

use serde::{Deserialize, Serialize};

use crate::attacks::AttackSpec;
use crate::data::{gen_rings, Dataset};
use crate::error::Result;
use crate::evaluation::{margins, median_margin, natural_accuracy, robust_accuracy, MarginSubset};
use crate::nets::Network;
use crate::rng::{self, stream};
use crate::strategy::{assign_budgets, StrategyParams};
use crate::training::{train, BudgetPlan, Method, Teacher, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub radii: Vec<f64>,
    pub noise: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub base_eps: f64,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub teacher_scale: f64,
    pub high_scale: f64,
    pub strategy: StrategyParams,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let base_eps = 0.1;
        StudyConfig {
            radii: vec![1.0, 1.5],
            noise: 0.1,
            train_per_class: 1000,
            val_per_class: 0,
            test_per_class: 500,
            base_eps,
            hidden: vec![32, 32],
            train: TrainConfig::long_schedule(),
            teacher_scale: 0.75,
            high_scale: 2.0,
            strategy: StrategyParams::zmax_default(base_eps),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Zoo {
    pub train: Dataset,
    pub test: Dataset,
    pub natural: Network,
    pub sat: Network,
    pub sat_high: Network,
    pub teacher: Network,
    pub mmat: Network,
}

impl Zoo {
    pub fn models(&self) -> [(&'static str, &Network); 5] {
        [
            ("natural", &self.natural),
            ("sat", &self.sat),
            ("sat-high", &self.sat_high),
            ("teacher", &self.teacher),
            ("mmat", &self.mmat),
        ]
    }
}

impl StudyConfig {
    pub fn datasets(&self, seed: u64) -> Result<(Dataset, Option<Dataset>, Dataset)> {
        let make = |n: usize, which: u64| -> Result<Dataset> {
            let mut d = gen_rings(n, &self.radii, self.noise, rng::derive(seed, stream::DATA, which))?;
            d.base_eps = self.base_eps;
            Ok(d)
        };
        let val = if self.val_per_class > 0 {
            Some(make(self.val_per_class, 2)?)
        } else {
            None
        };
        Ok((make(self.train_per_class, 0)?, val, make(self.test_per_class, 1)?))
    }

    fn sizes(&self, d: usize, k: usize) -> Vec<usize> {
        let mut s = vec![d];
        s.extend(&self.hidden);
        s.push(k);
        s
    }

    fn fit(&self, seed: u64, init_index: u64, train_set: &Dataset, val: Option<&Dataset>, method: &Method) -> Result<Network> {
        let config = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let init = Network::mlp(
            &self.sizes(train_set.dim(), train_set.classes),
            rng::derive(seed, stream::INIT, init_index),
        )?;
        let out = train(&config, init, train_set, val, method)?;
        Ok(if val.is_some() { out.best_net } else { out.final_net })
    }

    /// MMAT student given an already trained teacher and strategy net.
    pub fn fit_mmat(
        &self,
        seed: u64,
        train_set: &Dataset,
        val: Option<&Dataset>,
        teacher: &Network,
        strategy: &Network,
    ) -> Result<Network> {
        let assignment = assign_budgets(strategy, "sat", train_set, &self.strategy)?;
        let method = Method::Mmat {
            teacher: Teacher::frozen(teacher.clone(), "teacher"),
            budgets: BudgetPlan::Static(assignment),
        };
        self.fit(seed, 0, train_set, val, &method)
    }

    pub fn train_zoo(&self, seed: u64) -> Result<Zoo> {
        let (train_set, val, test) = self.datasets(seed)?;
        let v = val.as_ref();
        let natural = self.fit(seed, 0, &train_set, v, &Method::Natural)?;
        let sat = self.fit(seed, 0, &train_set, v, &Method::sat(self.base_eps))?;
        let sat_high = self.fit(seed, 0, &train_set, v, &Method::sat(self.high_scale * self.base_eps))?;
        let teacher = self.fit(seed, 1, &train_set, v, &Method::sat(self.teacher_scale * self.base_eps))?;
        let mmat = self.fit_mmat(seed, &train_set, v, &teacher, &sat)?;
        Ok(Zoo {
            train: train_set,
            test,
            natural,
            sat,
            sat_high,
            teacher,
            mmat,
        })
    }
}

/// NA, RA under PGD-20 at the base budget, and the median DeepFool margin
/// over correctly classified test examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub na: f64,
    pub ra: f64,
    pub median_margin: f64,
}

pub fn score(net: &Network, test: &Dataset, seed: u64) -> Result<Scores> {
    let spec = AttackSpec::pgd20(test.base_eps, rng::derive(seed, stream::ATTACK, 1));
    let samples = margins(net, test, MarginSubset::Correct, &Default::default())?;
    Ok(Scores {
        na: natural_accuracy(net, test)?.value(),
        ra: robust_accuracy(net, test, &spec)?.value(),
        median_margin: median_margin(&samples).unwrap_or(0.0),
    })
}
