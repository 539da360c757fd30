//! Per-example perturbation budgets.
//!
//! Correctly classified examples are split into three grades by their
//! distance to the decision boundary (or by their largest logit, a cheap
//! proxy): grade A sits closest to the boundary and gets the smallest budget,
//! grade C sits farthest and gets the largest. Misclassified examples get a
//! budget of exactly zero.

use std::fmt::{self, Write as _};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attacks::{deepfool_margin, DeepFoolConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::nets::{argmax_rows, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grade {
    A,
    B,
    C,
    #[serde(rename = "MISCLASSIFIED")]
    Misclassified,
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::A => "A",
            Grade::B => "B",
            Grade::C => "C",
            Grade::Misclassified => "MISCLASSIFIED",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Thresholds {
    /// Nearest-rank percentiles of the margins.
    Margin { lower: f64, upper: f64 },
    /// Fixed cut points on the largest logit.
    Zmax { z1: f64, z2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeBudgets {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl GradeBudgets {
    pub fn for_grade(&self, grade: Grade) -> f64 {
        match grade {
            Grade::A => self.a,
            Grade::B => self.b,
            Grade::C => self.c,
            Grade::Misclassified => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeEntry {
    pub index: usize,
    pub grade: Grade,
    /// Margin or largest logit; absent for misclassified examples and for
    /// margins the estimator could not find.
    pub score: Option<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeTable {
    pub thresholds: Thresholds,
    pub budgets: GradeBudgets,
    /// Sorted by example index.
    pub entries: Vec<GradeEntry>,
}

/// 0-based position of the nearest-rank `p`-percentile in a sorted list of
/// `n` values: the `ceil(p·n)`-th order statistic.
pub fn nearest_rank_index(p: f64, n: usize) -> usize {
    let r = p * n as f64;
    let nearest = r.round();
    // absorb representation error such as 0.7 * 10 = 7.000000000000001
    let rank = if (r - nearest).abs() < 1e-9 { nearest } else { r.ceil() };
    (rank.max(1.0) as usize).min(n) - 1
}

fn validate_scores(values: &[(usize, f64)], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::DegeneratePartition(format!("no {what} to grade")));
    }
    if let Some((i, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Contract(format!("{what} of example {i} is {v}")));
    }
    Ok(())
}

fn sorted_by_score(values: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    sorted
}

/// Grade by margin percentiles.
///
/// With margins sorted ascending, `lower`/`upper` are the nearest-rank
/// percentiles at `fractions`. Grade A takes `m ≤ lower` with budget
/// `max(D_A)`, grade B takes `lower < m ≤ upper` with budget `mean(D_B)`, and
/// grade C takes the rest with budget `min(D_C)`.
pub fn grade_by_margin(margins: &[(usize, f64)], fractions: (f64, f64)) -> Result<GradeTable> {
    validate_scores(margins, "margins")?;
    if let Some((i, m)) = margins.iter().find(|(_, m)| *m < 0.0) {
        return Err(Error::Contract(format!("margin of example {i} is negative ({m})")));
    }
    if !(0.0 < fractions.0 && fractions.0 < fractions.1 && fractions.1 < 1.0) {
        return Err(Error::Contract(format!(
            "grading fractions must satisfy 0 < a < b < 1, got {fractions:?}"
        )));
    }
    let sorted = sorted_by_score(margins);
    let values: Vec<f64> = sorted.iter().map(|&(_, m)| m).collect();
    let lower = values[nearest_rank_index(fractions.0, values.len())];
    let upper = values[nearest_rank_index(fractions.1, values.len())];

    let grade_of = |m: f64| {
        if m <= lower {
            Grade::A
        } else if m <= upper {
            Grade::B
        } else {
            Grade::C
        }
    };
    let members = |g: Grade| -> Vec<f64> { values.iter().copied().filter(|&m| grade_of(m) == g).collect() };
    let (da, db, dc) = (members(Grade::A), members(Grade::B), members(Grade::C));
    for (name, set) in [("A", &da), ("B", &db), ("C", &dc)] {
        if set.is_empty() {
            return Err(Error::DegeneratePartition(format!(
                "grade {name} is empty (thresholds {lower} and {upper} over {} margins)",
                values.len()
            )));
        }
    }
    let budgets = GradeBudgets {
        a: da.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        b: db.iter().sum::<f64>() / db.len() as f64,
        c: dc.iter().copied().fold(f64::INFINITY, f64::min),
    };

    let mut entries: Vec<GradeEntry> = margins
        .iter()
        .map(|&(index, m)| {
            let grade = grade_of(m);
            GradeEntry {
                index,
                grade,
                score: Some(m),
                eps: budgets.for_grade(grade),
            }
        })
        .collect();
    entries.sort_by_key(|e| e.index);
    Ok(GradeTable {
        thresholds: Thresholds::Margin { lower, upper },
        budgets,
        entries,
    })
}

/// Grade by largest logit: A for `z ≤ z1`, B for `z1 < z ≤ z2`, C above.
pub fn grade_by_zmax(zmax: &[(usize, f64)], z1: f64, z2: f64, budgets: GradeBudgets) -> Result<GradeTable> {
    if !(z1 < z2) {
        return Err(Error::Contract(format!("need Z1 < Z2, got {z1} and {z2}")));
    }
    validate_scores(zmax, "logit maxima")?;
    let mut entries: Vec<GradeEntry> = zmax
        .iter()
        .map(|&(index, z)| {
            let grade = if z <= z1 {
                Grade::A
            } else if z <= z2 {
                Grade::B
            } else {
                Grade::C
            };
            GradeEntry {
                index,
                grade,
                score: Some(z),
                eps: budgets.for_grade(grade),
            }
        })
        .collect();
    entries.sort_by_key(|e| e.index);
    Ok(GradeTable {
        thresholds: Thresholds::Zmax { z1, z2 },
        budgets,
        entries,
    })
}

/// Format a budget as `k/255` when it is one, otherwise as a decimal.
pub fn format_eps(eps: f64) -> String {
    if eps == 0.0 {
        return "0".to_string();
    }
    let k = eps * 255.0;
    if (k - k.round()).abs() < 1e-9 {
        format!("{}/255", k.round() as i64)
    } else {
        format!("{eps}")
    }
}

impl GradeTable {
    pub fn count(&self, grade: Grade) -> usize {
        self.entries.iter().filter(|e| e.grade == grade).count()
    }

    /// Add misclassified examples (budget zero) to the table.
    pub fn with_misclassified(mut self, indices: &[usize]) -> Self {
        self.entries.extend(indices.iter().map(|&index| GradeEntry {
            index,
            grade: Grade::Misclassified,
            score: None,
            eps: 0.0,
        }));
        self.entries.sort_by_key(|e| e.index);
        self
    }

    /// One-line description of thresholds, budgets and grade counts.
    pub fn summary(&self) -> String {
        let mut s = match self.thresholds {
            Thresholds::Margin { lower, upper } => format!("P40={} P70={}", format_eps(lower), format_eps(upper)),
            Thresholds::Zmax { z1, z2 } => format!("Z1={z1} Z2={z2}"),
        };
        let _ = write!(
            s,
            " eps={},{},{} A={} B={} C={} MISCLASSIFIED={}",
            format_eps(self.budgets.a),
            format_eps(self.budgets.b),
            format_eps(self.budgets.c),
            self.count(Grade::A),
            self.count(Grade::B),
            self.count(Grade::C),
            self.count(Grade::Misclassified),
        );
        s
    }

    /// `index,grade,margin_or_zmax,eps` rows with a header.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "index,grade,margin_or_zmax,eps")?;
        for e in &self.entries {
            let score = e.score.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", e.index, e.grade, score, format_eps(e.eps))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradingMode {
    MarginStatic,
    ZmaxStatic,
}

/// Settings shared by static assignment and dynamic regrading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyParams {
    pub mode: GradingMode,
    /// Percentiles separating A/B and B/C in margin mode.
    pub fractions: (f64, f64),
    pub z1: f64,
    pub z2: f64,
    /// Budgets handed out in zmax mode.
    pub zmax_budgets: GradeBudgets,
    pub deepfool: DeepFoolConfig,
}

impl StrategyParams {
    /// Largest-logit grading with cut points 2 and 6 and budgets
    /// `(5/8, 10/8, 15/8)·base_eps`, i.e. 5/255, 10/255, 15/255 at 8/255.
    pub fn zmax_default(base_eps: f64) -> Self {
        StrategyParams {
            mode: GradingMode::ZmaxStatic,
            fractions: (0.40, 0.70),
            z1: 2.0,
            z2: 6.0,
            zmax_budgets: GradeBudgets {
                a: base_eps * 5.0 / 8.0,
                b: base_eps * 10.0 / 8.0,
                c: base_eps * 15.0 / 8.0,
            },
            deepfool: DeepFoolConfig::default(),
        }
    }

    pub fn margin_default(base_eps: f64) -> Self {
        StrategyParams {
            mode: GradingMode::MarginStatic,
            ..StrategyParams::zmax_default(base_eps)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetSource {
    MarginStatic,
    ZmaxStatic,
    Dynamic,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetAssignment {
    pub eps: Vec<f64>,
    pub grades: Vec<Grade>,
    pub source: BudgetSource,
    /// Identifier of the network that produced the grades.
    pub strategy_id: String,
    /// Absent when every example was misclassified or budgets are uniform.
    pub table: Option<GradeTable>,
}

impl BudgetAssignment {
    /// The same budget for every example, misclassified or not.
    pub fn uniform(n: usize, eps: f64) -> Self {
        BudgetAssignment {
            eps: vec![eps; n],
            grades: vec![Grade::A; n],
            source: BudgetSource::Uniform,
            strategy_id: "uniform".into(),
            table: None,
        }
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.eps[i]).collect()
    }
}

/// Grade a labelled batch with `net`, returning the table (if anything was
/// correctly classified) and per-row budgets.
fn grade_batch(net: &Network, x: &Tensor, labels: &[usize], params: &StrategyParams) -> Result<(Option<GradeTable>, Vec<f64>, Vec<Grade>)> {
    let logits = net.forward(x)?;
    let preds = argmax_rows(&logits);
    let (correct, wrong): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| preds[i] == labels[i]);

    if correct.is_empty() {
        return Ok((None, vec![0.0; labels.len()], vec![Grade::Misclassified; labels.len()]));
    }

    let table = match params.mode {
        GradingMode::ZmaxStatic => {
            let zmax: Vec<(usize, f64)> = correct
                .iter()
                .map(|&i| (i, logits.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)))
                .collect();
            grade_by_zmax(&zmax, params.z1, params.z2, params.zmax_budgets)?
        }
        GradingMode::MarginStatic => {
            let mut found = Vec::with_capacity(correct.len());
            let mut far = Vec::new();
            for &i in &correct {
                match deepfool_margin(net, x.row(i), &params.deepfool) {
                    Ok(est) if est.found => found.push((i, est.margin.unwrap_or(0.0))),
                    Ok(_) | Err(Error::DegenerateGeometry(_)) => far.push(i),
                    Err(e) => return Err(e),
                }
            }
            let mut table = grade_by_margin(&found, params.fractions)?;
            // no boundary within reach: treat as far from it
            table.entries.extend(far.iter().map(|&index| GradeEntry {
                index,
                grade: Grade::C,
                score: None,
                eps: table.budgets.c,
            }));
            table.entries.sort_by_key(|e| e.index);
            table
        }
    };
    let table = table.with_misclassified(&wrong);
    let eps = table.entries.iter().map(|e| e.eps).collect();
    let grades = table.entries.iter().map(|e| e.grade).collect();
    Ok((Some(table), eps, grades))
}

/// Static budgets for a whole dataset from a frozen strategy network.
pub fn assign_budgets(strategy: &Network, strategy_id: &str, dataset: &Dataset, params: &StrategyParams) -> Result<BudgetAssignment> {
    let (table, eps, grades) = grade_batch(strategy, &dataset.x, &dataset.labels, params)?;
    Ok(BudgetAssignment {
        eps,
        grades,
        source: match params.mode {
            GradingMode::MarginStatic => BudgetSource::MarginStatic,
            GradingMode::ZmaxStatic => BudgetSource::ZmaxStatic,
        },
        strategy_id: strategy_id.to_string(),
        table,
    })
}

/// Regrade with the live network, e.g. at an epoch boundary.
pub fn dynamic_regrade(current: &Network, x: &Tensor, labels: &[usize], params: &StrategyParams) -> Result<BudgetAssignment> {
    let (table, eps, grades) = grade_batch(current, x, labels, params)?;
    Ok(BudgetAssignment {
        eps,
        grades,
        source: BudgetSource::Dynamic,
        strategy_id: "live".into(),
        table,
    })
}
