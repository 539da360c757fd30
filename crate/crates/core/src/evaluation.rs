//! Natural and robust accuracy, black-box transfer and margin histograms.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attacks::{deepfool_margin, AttackFamily, AttackSpec, DeepFoolConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ndgrad::Tensor;
use crate::nets::Network;

/// An exact `correct / total` count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub correct: usize,
    pub total: usize,
}

impl Fraction {
    pub fn value(self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

fn count_correct(net: &Network, x: &Tensor, labels: &[usize]) -> Result<Fraction> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = net.predict(x)?;
    Ok(Fraction {
        correct: preds.iter().zip(labels).filter(|(p, y)| p == y).count(),
        total: labels.len(),
    })
}

pub fn natural_accuracy(net: &Network, dataset: &Dataset) -> Result<Fraction> {
    count_correct(net, &dataset.x, &dataset.labels)
}

pub fn robust_accuracy(net: &Network, dataset: &Dataset, spec: &AttackSpec) -> Result<Fraction> {
    let adv = spec.run(net, &dataset.x, &dataset.labels, dataset.domain)?;
    count_correct(net, &adv, &dataset.labels)
}

/// Adversarial examples crafted once on a source model and replayed against
/// any number of targets.
#[derive(Debug, Clone)]
pub struct TransferSet {
    pub spec: AttackSpec,
    pub adversarial: Tensor,
}

impl TransferSet {
    pub fn craft(source: &Network, dataset: &Dataset, spec: &AttackSpec) -> Result<Self> {
        Ok(TransferSet {
            spec: spec.clone(),
            adversarial: spec.run(source, &dataset.x, &dataset.labels, dataset.domain)?,
        })
    }

    pub fn evaluate(&self, target: &Network, dataset: &Dataset) -> Result<Fraction> {
        if self.adversarial.shape() != dataset.x.shape() {
            return Err(Error::shape("transfer", self.adversarial.shape(), dataset.x.shape()));
        }
        count_correct(target, &self.adversarial, &dataset.labels)
    }
}

/// Robust accuracy of `target` on examples crafted against `source`.
pub fn black_box_transfer(source: &Network, target: &Network, dataset: &Dataset, spec: &AttackSpec) -> Result<Fraction> {
    if source.input_dim() != target.input_dim() || source.classes() != target.classes() {
        return Err(Error::shape("transfer", &source.sizes(), &target.sizes()));
    }
    TransferSet::craft(source, dataset, spec)?.evaluate(target, dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackResult {
    pub spec: AttackSpec,
    pub robust: Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferResult {
    pub source: String,
    pub attack: String,
    pub robust: Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub model: String,
    pub dataset: String,
    pub natural: Fraction,
    pub attacks: BTreeMap<String, AttackResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transfer: Vec<TransferResult>,
    pub seed: u64,
    pub config_hash: String,
    pub artifact_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn ra(&self, attack: &str) -> Option<f64> {
        self.attacks.get(attack).map(|a| a.robust.value())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// NA plus RA under each attack in `specs`.
pub fn evaluate(net: &Network, model: &str, dataset: &Dataset, specs: &[AttackSpec], seed: u64, config_hash: &str) -> Result<EvalReport> {
    let natural = natural_accuracy(net, dataset)?;
    let mut attacks = BTreeMap::new();
    for spec in specs {
        spec.validate()?;
        let robust = robust_accuracy(net, dataset, spec)?;
        attacks.insert(
            spec.name(),
            AttackResult {
                spec: spec.clone(),
                robust,
            },
        );
    }
    let mut warnings = Vec::new();
    let by_family = |f: AttackFamily, iters: usize| {
        attacks
            .values()
            .find(|a| a.spec.family == f && (f == AttackFamily::Fgsm || a.spec.iterations == iters))
    };
    if let (Some(fg), Some(pg)) = (by_family(AttackFamily::Fgsm, 0), by_family(AttackFamily::Pgd, 20)) {
        if fg.spec.eps == pg.spec.eps && pg.robust.value() > fg.robust.value() {
            warnings.push(format!(
                "RA under pgd20 ({}) exceeds RA under fgsm ({})",
                pg.robust.value(),
                fg.robust.value()
            ));
        }
    }
    Ok(EvalReport {
        model: model.to_string(),
        dataset: dataset.id.clone(),
        natural,
        attacks,
        transfer: Vec::new(),
        seed,
        config_hash: config_hash.to_string(),
        artifact_version: crate::ARTIFACT_VERSION.to_string(),
        wall_time_ms: None,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginSubset {
    Correct,
    Misclassified,
    All,
}

impl std::str::FromStr for MarginSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correct" => Ok(MarginSubset::Correct),
            "misclassified" => Ok(MarginSubset::Misclassified),
            "all" => Ok(MarginSubset::All),
            other => Err(Error::Config {
                path: "subset".into(),
                detail: format!("expected correct, misclassified or all, got {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSample {
    pub index: usize,
    pub correct: bool,
    /// `None` when DeepFool found no boundary (or the scores are flat);
    /// misclassified examples get 0.
    pub margin: Option<f64>,
}

/// DeepFool margins of every example in `subset`.
pub fn margins(net: &Network, dataset: &Dataset, subset: MarginSubset, cfg: &DeepFoolConfig) -> Result<Vec<MarginSample>> {
    let preds = net.predict(&dataset.x)?;
    let mut out = Vec::new();
    for (i, (&p, &y)) in preds.iter().zip(&dataset.labels).enumerate() {
        let correct = p == y;
        let wanted = match subset {
            MarginSubset::Correct => correct,
            MarginSubset::Misclassified => !correct,
            MarginSubset::All => true,
        };
        if !wanted {
            continue;
        }
        let margin = if correct {
            match deepfool_margin(net, dataset.x.row(i), cfg) {
                Ok(est) => est.margin,
                Err(Error::DegenerateGeometry(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            Some(0.0)
        };
        out.push(MarginSample { index: i, correct, margin });
    }
    Ok(out)
}

/// Lower median of the margins, counting not-found examples as +∞.
pub fn median_margin(samples: &[MarginSample]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut m: Vec<f64> = samples.iter().map(|s| s.margin.unwrap_or(f64::INFINITY)).collect();
    m.sort_by(f64::total_cmp);
    Some(m[(m.len() - 1) / 2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginHistogram {
    pub model: String,
    pub subset: MarginSubset,
    /// `bins + 1` edges; the last bin also collects everything beyond its upper edge.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub not_found: usize,
}

impl MarginHistogram {
    pub fn bin(samples: &[MarginSample], bins: usize, width: f64, model: &str, subset: MarginSubset) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Contract("histogram needs at least one bin".into()));
        }
        if !(width > 0.0) {
            return Err(Error::Contract(format!("bin width must be positive, got {width}")));
        }
        let edges: Vec<f64> = (0..=bins).map(|k| k as f64 * width).collect();
        let mut counts = vec![0; bins];
        let mut not_found = 0;
        for s in samples {
            match s.margin {
                None => not_found += 1,
                Some(m) => counts[((m / width).floor() as usize).min(bins - 1)] += 1,
            }
        }
        Ok(MarginHistogram {
            model: model.to_string(),
            subset,
            edges,
            counts,
            not_found,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.not_found
    }

    /// Rows `bin_lo,bin_hi,count`; the open last bin has `bin_hi = inf` and
    /// not-found examples close the table with `bin_lo = not_found`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "bin_lo,bin_hi,count")?;
        let last = self.counts.len() - 1;
        for (k, c) in self.counts.iter().enumerate() {
            let hi = if k == last {
                "inf".to_string()
            } else {
                self.edges[k + 1].to_string()
            };
            writeln!(out, "{},{},{}", self.edges[k], hi, c)?;
        }
        writeln!(out, "not_found,,{}", self.not_found)?;
        Ok(())
    }
}

/// Default histogram: 25 bins of width 1/255.
pub fn margin_histogram(net: &Network, model: &str, dataset: &Dataset, bins: usize, subset: MarginSubset) -> Result<MarginHistogram> {
    let samples = margins(net, dataset, subset, &DeepFoolConfig::default())?;
    MarginHistogram::bin(&samples, bins, 1.0 / 255.0, model, subset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_gaussians, Domain};
    use crate::nets::{Activation, Layer};

    fn blobs() -> Dataset {
        gen_gaussians(50, &[vec![1.0, 0.0], vec![-1.0, 0.0]], 0.2, 3).unwrap()
    }

    fn linear(w: [f64; 2]) -> Network {
        let layer = Layer {
            weights: Tensor::from_rows(&[[w[0], -w[0]], [w[1], -w[1]]]).unwrap(),
            bias: vec![0.0, 0.0],
            activation: Activation::Identity,
        };
        Network::from_layers(vec![layer], 0).unwrap()
    }

    #[test]
    fn accuracy_matches_loop() {
        let ds = blobs();
        let net = Network::mlp(&[2, 8, 2], 1).unwrap();
        let na = natural_accuracy(&net, &ds).unwrap();
        let mut correct = 0;
        for i in 0..ds.len() {
            let p = net.predict(&ds.x.select_rows(&[i])).unwrap()[0];
            correct += usize::from(p == ds.labels[i]);
        }
        assert_eq!(na, Fraction { correct, total: ds.len() });
    }

    #[test]
    fn flipped_labels_complement_accuracy() {
        let ds = blobs();
        let net = linear([1.0, 0.8]);
        let na = natural_accuracy(&net, &ds).unwrap().value();
        let flipped = Dataset::new(
            ds.x.clone(),
            ds.labels.iter().map(|y| 1 - y).collect(),
            2,
            Domain::Unconstrained,
            "f",
            0.05,
        )
        .unwrap();
        assert_eq!(natural_accuracy(&net, &flipped).unwrap().value(), 1.0 - na);
    }

    #[test]
    fn zero_budget_attack_is_identity() {
        let ds = blobs();
        let net = Network::mlp(&[2, 8, 2], 2).unwrap();
        let spec = AttackSpec {
            eps: 0.0,
            random_start: false,
            ..AttackSpec::pgd20(0.0, 1)
        };
        assert_eq!(robust_accuracy(&net, &ds, &spec).unwrap(), natural_accuracy(&net, &ds).unwrap());
    }

    #[test]
    fn self_transfer_equals_white_box() {
        let ds = blobs();
        let net = Network::mlp(&[2, 8, 2], 4).unwrap();
        let spec = AttackSpec::pgd20(0.3, 9);
        assert_eq!(
            black_box_transfer(&net, &net, &ds, &spec).unwrap(),
            robust_accuracy(&net, &ds, &spec).unwrap()
        );
    }

    #[test]
    fn histogram_conserves_examples() {
        let ds = blobs();
        let net = linear([-1.0, 0.3]);
        for subset in [MarginSubset::Correct, MarginSubset::Misclassified, MarginSubset::All] {
            let h = margin_histogram(&net, "m", &ds, 25, subset).unwrap();
            let expected = margins(&net, &ds, subset, &DeepFoolConfig::default()).unwrap().len();
            assert_eq!(h.total(), expected);
        }
    }

    #[test]
    fn misclassified_mass_sits_in_first_bin() {
        let ds = blobs();
        let net = linear([-1.0, 0.0]);
        let h = margin_histogram(&net, "m", &ds, 5, MarginSubset::Misclassified).unwrap();
        assert!(h.total() > 0);
        assert_eq!(h.counts[0], h.total());
    }

    #[test]
    fn median_treats_not_found_as_infinite() {
        let s = |m: Option<f64>| MarginSample {
            index: 0,
            correct: true,
            margin: m,
        };
        assert_eq!(median_margin(&[s(Some(1.0)), s(None), s(Some(3.0))]), Some(3.0));
        assert_eq!(median_margin(&[s(Some(2.0)), s(Some(1.0))]), Some(1.0));
        assert_eq!(median_margin(&[]), None);
    }

    #[test]
    fn histogram_csv_layout() {
        let s = |m: Option<f64>| MarginSample {
            index: 0,
            correct: true,
            margin: m,
        };
        let h = MarginHistogram::bin(&[s(Some(0.5)), s(Some(9.0)), s(None)], 2, 1.0, "m", MarginSubset::All).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bin_lo,bin_hi,count\n0,1,1\n1,inf,1\nnot_found,,1\n"
        );
    }

    #[test]
    fn report_json_round_trips() {
        let ds = blobs();
        let net = Network::mlp(&[2, 8, 2], 5).unwrap();
        let r = evaluate(&net, "m", &ds, &[AttackSpec::fgsm(0.05), AttackSpec::pgd20(0.05, 1)], 1, "abc").unwrap();
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.ra("pgd20").unwrap() <= r.natural.value() + 1e-12 || !r.warnings.is_empty());
    }
}
