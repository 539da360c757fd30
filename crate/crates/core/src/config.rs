//! JSON run configuration shared by every CLI command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackSpec, DeepFoolConfig};
use crate::data::{self, Dataset, Domain};
use crate::error::{Error, Result};
use crate::evaluation::MarginSubset;
use crate::rng::{self, stream};
use crate::strategy::{GradeBudgets, GradingMode, StrategyParams};
use crate::training::{LossKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Gaussians,
    Rings,
    Csv,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Training examples per class for synthetic data.
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub centers: Vec<Vec<f64>>,
    pub sigma: f64,
    pub radii: Vec<f64>,
    pub noise: f64,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// IDX label files paired with `train_path` / `test_path`.
    pub train_labels: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub classes: usize,
    /// Overrides the dataset's own base budget.
    pub base_eps: Option<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Gaussians,
            train_per_class: 500,
            val_per_class: 100,
            test_per_class: 250,
            centers: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            sigma: 0.2,
            radii: vec![1.0, 1.5],
            noise: 0.2,
            train_path: None,
            test_path: None,
            train_labels: None,
            test_labels: None,
            classes: 2,
            base_eps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![32, 32] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Natural,
    Sat,
    Mmat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub kind: MethodKind,
    /// SAT budget as a multiple of the base budget.
    pub sat_scale: f64,
    pub sat_loss: LossKind,
    pub teacher: Option<PathBuf>,
    /// Train a SAT teacher first when no teacher checkpoint is given.
    pub auto_teacher: bool,
    pub teacher_scale: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            kind: MethodKind::Natural,
            sat_scale: 1.0,
            sat_loss: LossKind::Ce,
            teacher: None,
            auto_teacher: false,
            teacher_scale: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub mode: GradingMode,
    /// Regrade with the live network at each epoch instead of a fixed strategy net.
    pub dynamic: bool,
    pub fractions: (f64, f64),
    pub z1: f64,
    pub z2: f64,
    /// zmax budgets as multiples of the base budget.
    pub zmax_scales: (f64, f64, f64),
    /// Strategy checkpoint; SAT at the base budget is trained when absent.
    pub checkpoint: Option<PathBuf>,
    pub deepfool: DeepFoolConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            mode: GradingMode::ZmaxStatic,
            dynamic: false,
            fractions: (0.40, 0.70),
            z1: 2.0,
            z2: 6.0,
            zmax_scales: (5.0 / 8.0, 10.0 / 8.0, 15.0 / 8.0),
            checkpoint: None,
            deepfool: DeepFoolConfig::default(),
        }
    }
}

impl StrategyConfig {
    pub fn params(&self, base_eps: f64) -> StrategyParams {
        let (a, b, c) = self.zmax_scales;
        StrategyParams {
            mode: self.mode,
            fractions: self.fractions,
            z1: self.z1,
            z2: self.z2,
            zmax_budgets: GradeBudgets {
                a: a * base_eps,
                b: b * base_eps,
                c: c * base_eps,
            },
            deepfool: self.deepfool.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Evaluation budget as a multiple of the base budget.
    pub eps_scale: f64,
    /// Any of `fgsm`, `pgd20`, `cw20`.
    pub attacks: Vec<String>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            eps_scale: 1.0,
            attacks: vec!["fgsm".into(), "pgd20".into(), "cw20".into()],
        }
    }
}

impl AttackConfig {
    pub fn specs(&self, base_eps: f64, seed: u64) -> Result<Vec<AttackSpec>> {
        let eps = self.eps_scale * base_eps;
        let attack_seed = rng::derive(seed, stream::ATTACK, 0);
        self.attacks
            .iter()
            .map(|name| match name.as_str() {
                "fgsm" => Ok(AttackSpec::fgsm(eps)),
                "pgd20" => Ok(AttackSpec::pgd20(eps, attack_seed)),
                "cw20" => Ok(AttackSpec::cw20(eps, attack_seed)),
                other => Err(Error::Config {
                    path: "attack.attacks".into(),
                    detail: format!("unknown attack {other:?}; expected fgsm, pgd20 or cw20"),
                }),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    pub margin_bins: usize,
    /// Bin width in input units.
    pub margin_bin_width: f64,
    pub margin_subset: MarginSubset,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: Split::Test,
            margin_bins: 25,
            margin_bin_width: 1.0 / 255.0,
            margin_subset: MarginSubset::Correct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub method: MethodConfig,
    pub train: TrainConfig,
    pub strategy: StrategyConfig,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            method: MethodConfig::default(),
            train: TrainConfig::default(),
            strategy: StrategyConfig::default(),
            attack: AttackConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

/// Turn a serde message like "unknown field `x`, expected ..." at some
/// `line:column` into a config error naming the offending path.
fn json_error(e: serde_json::Error, text: &str) -> Error {
    let detail = e.to_string();
    let path = serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .and_then(|v| locate_field(&v, &detail))
        .unwrap_or_else(|| format!("line {}", e.line()));
    Error::Config { path, detail }
}

fn locate_field(root: &serde_json::Value, detail: &str) -> Option<String> {
    let name = detail.split('`').nth(1)?;
    fn walk(v: &serde_json::Value, name: &str, prefix: &str) -> Option<String> {
        let obj = v.as_object()?;
        for (k, child) in obj {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            if k == name {
                return Some(path);
            }
            if let Some(p) = walk(child, name, &path) {
                return Some(p);
            }
        }
        None
    }
    walk(root, name, "")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| json_error(e, text))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        RunConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let bad = |path: &str, detail: &str| {
            Err(Error::Config {
                path: path.into(),
                detail: detail.into(),
            })
        };
        if self.model.hidden.contains(&0) {
            return bad("model.hidden", "layer widths must be positive");
        }
        if !(self.method.sat_scale >= 0.0) {
            return bad("method.sat_scale", "must be nonnegative");
        }
        if !(self.method.teacher_scale >= 0.0) {
            return bad("method.teacher_scale", "must be nonnegative");
        }
        if !(self.attack.eps_scale >= 0.0) {
            return bad("attack.eps_scale", "must be nonnegative");
        }
        if self.eval.margin_bins == 0 {
            return bad("eval.margin_bins", "must be at least 1");
        }
        if !(self.eval.margin_bin_width > 0.0) {
            return bad("eval.margin_bin_width", "must be positive");
        }
        if self.strategy.mode == GradingMode::ZmaxStatic && !(self.strategy.z1 < self.strategy.z2) {
            return bad("strategy.z1", "must be below strategy.z2");
        }
        let (p, q) = self.strategy.fractions;
        if !(0.0 < p && p < q && q < 1.0) {
            return bad("strategy.fractions", "need 0 < first < second < 1");
        }
        if let Some(eps) = self.dataset.base_eps {
            if !(eps >= 0.0) {
                return bad("dataset.base_eps", "must be nonnegative");
            }
        }
        Ok(())
    }

    /// Pretty JSON with every default filled in.
    pub fn resolved_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// First 16 hex digits of SHA-256 over the compact resolved config,
    /// ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Training set used for fitting, grading and `split = train` evaluation.
    pub fn train_set(&self) -> Result<Dataset> {
        self.load_split(0)
    }

    /// Held-out split for best-checkpoint selection (synthetic data only).
    pub fn val_set(&self) -> Result<Option<Dataset>> {
        match self.dataset.kind {
            DatasetKind::Gaussians | DatasetKind::Rings if self.dataset.val_per_class > 0 => Ok(Some(self.load_split(2)?)),
            _ => Ok(None),
        }
    }

    pub fn test_set(&self) -> Result<Dataset> {
        self.load_split(1)
    }

    pub fn eval_set(&self) -> Result<Dataset> {
        match self.eval.split {
            Split::Train => self.train_set(),
            Split::Test => self.test_set(),
        }
    }

    fn load_split(&self, which: u64) -> Result<Dataset> {
        let d = &self.dataset;
        let seed = rng::derive(self.seed, stream::DATA, which);
        let per_class = [d.train_per_class, d.test_per_class, d.val_per_class][which as usize];
        let missing = |field: &str| Error::Config {
            path: format!("dataset.{field}"),
            detail: format!("required for {:?} data", d.kind).to_lowercase(),
        };
        let mut ds = match d.kind {
            DatasetKind::Gaussians => data::gen_gaussians(per_class, &d.centers, d.sigma, seed)?,
            DatasetKind::Rings => data::gen_rings(per_class, &d.radii, d.noise, seed)?,
            DatasetKind::Csv => {
                let (field, path) = if which == 0 {
                    ("train_path", &d.train_path)
                } else {
                    ("test_path", &d.test_path)
                };
                let path = path.as_ref().ok_or_else(|| missing(field))?;
                let text = std::fs::read_to_string(path)?;
                let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Dataset::read_csv(&text, d.classes, Domain::Unconstrained, &id, d.base_eps.unwrap_or(0.1))?
            }
            DatasetKind::Idx => {
                let (images, labels) = if which == 0 {
                    (("train_path", &d.train_path), ("train_labels", &d.train_labels))
                } else {
                    (("test_path", &d.test_path), ("test_labels", &d.test_labels))
                };
                let img = images.1.as_ref().ok_or_else(|| missing(images.0))?;
                let lab = labels.1.as_ref().ok_or_else(|| missing(labels.0))?;
                data::load_idx_dataset(img, lab, d.classes)?
            }
        };
        if let Some(eps) = d.base_eps {
            ds.base_eps = eps;
        }
        Ok(ds)
    }

    /// Layer sizes for a dataset of input dimension `d` and `k` classes.
    pub fn layer_sizes(&self, d: usize, k: usize) -> Vec<usize> {
        let mut sizes = vec![d];
        sizes.extend(&self.model.hidden);
        sizes.push(k);
        sizes
    }

    /// Copy of the training hyperparameters carrying the root seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}
