//! `mmat train | grade | eval | margins`.
//!
//! Every command reads an optional JSON [`RunConfig`]; flags override it.
//! Outputs go to the configured output directory, each stamped with the
//! config hash, the root seed and [`crate::ARTIFACT_VERSION`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{DatasetKind, MethodKind, RunConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{self, MarginHistogram, MarginSubset, TransferResult, TransferSet};
use crate::nets::{Checkpoint, Network};
use crate::rng::{self, stream};
use crate::strategy::{assign_budgets, GradingMode};
use crate::training::{self, BudgetPlan, EpochMetrics, Method, Teacher, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "mmat", version, about = "Moderate-margin adversarial training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; defaults are used for anything missing.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write final/best checkpoints plus metrics.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<MethodKind>,
        /// Teacher checkpoint for MMAT.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Train a weakly robust SAT teacher first.
        #[arg(long)]
        auto_teacher: bool,
        /// Strategy checkpoint used to grade the training set.
        #[arg(long)]
        strategy: Option<PathBuf>,
    },
    /// Grade the training set with a strategy checkpoint and write grades.csv.
    Grade {
        #[command(flatten)]
        common: Common,
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["zmax", "margin"])]
        mode: Option<String>,
    },
    /// NA and RA of each checkpoint, one report JSON per model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
        /// Comma-separated attacks (fgsm, pgd20, cw20) or `none`.
        #[arg(long, value_delimiter = ',')]
        attack: Option<Vec<String>>,
        /// Also attack each target with examples crafted on this source.
        #[arg(long)]
        transfer: Option<PathBuf>,
    },
    /// DeepFool margin histogram of one checkpoint.
    Margins {
        #[command(flatten)]
        common: Common,
        checkpoint: PathBuf,
        #[arg(long)]
        subset: Option<MarginSubset>,
        #[arg(long)]
        bins: Option<usize>,
    },
}

impl clap::ValueEnum for MarginSubset {
    fn value_variants<'a>() -> &'a [Self] {
        &[MarginSubset::Correct, MarginSubset::Misclassified, MarginSubset::All]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            MarginSubset::Correct => "correct",
            MarginSubset::Misclassified => "misclassified",
            MarginSubset::All => "all",
        }))
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        Error::DegeneratePartition(_) | Error::EmptyDataset | Error::DegenerateGeometry(_) => 3,
        Error::Divergence { .. } => 4,
        _ => 1,
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(kind) = common.dataset {
        config.dataset.kind = kind;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

/// Leading comment line of every CSV artifact.
pub fn provenance(config: &RunConfig) -> String {
    format!("# {} config={} seed={}", crate::ARTIFACT_VERSION, config.hash(), config.seed)
}

struct Run<'a> {
    config: RunConfig,
    hash: String,
    log: &'a mut dyn Write,
}

impl Run<'_> {
    fn new(config: RunConfig, log: &mut dyn Write) -> Result<Run<'_>> {
        config.validate()?;
        fs::create_dir_all(&config.output_dir)?;
        let hash = config.hash();
        fs::write(config.output_dir.join("resolved-config.json"), config.resolved_json()?)?;
        Ok(Run { config, hash, log })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn wrote(&mut self, path: &Path) -> Result<()> {
        writeln!(self.log, "wrote {}", path.display())?;
        Ok(())
    }

    fn save_checkpoint(&mut self, name: &str, net: &Network, method: &str, epoch: usize) -> Result<Checkpoint> {
        let ckpt = Checkpoint::new(net.clone(), method, epoch, &self.hash, self.config.seed);
        let path = self.path(name);
        ckpt.save(&path)?;
        self.wrote(&path)?;
        Ok(ckpt)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text)?;
        self.wrote(&path)
    }

    fn fresh_net(&self, train: &Dataset, index: u64) -> Result<Network> {
        let sizes = self.config.layer_sizes(train.dim(), train.classes);
        Network::mlp(&sizes, rng::derive(self.config.seed, stream::INIT, index))
    }

    fn fit(&mut self, train: &Dataset, val: Option<&Dataset>, method: &Method, init_index: u64) -> Result<TrainOutcome> {
        writeln!(self.log, "training {} on {} ({} examples)", method.tag(), train.id, train.len())?;
        let init = self.fresh_net(train, init_index)?;
        training::train(&self.config.train_config(), init, train, val, method)
    }
}

fn metrics_csv(config: &RunConfig, metrics: &[EpochMetrics]) -> String {
    let mut s = provenance(config);
    s.push('\n');
    s.push_str(EpochMetrics::CSV_HEADER);
    s.push('\n');
    for m in metrics {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}

fn load_compatible(path: &Path, data: &Dataset) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.network.input_dim() != data.dim() || ckpt.network.classes() != data.classes {
        return Err(Error::shape(
            "checkpoint",
            &[ckpt.network.input_dim(), ckpt.network.classes()],
            &[data.dim(), data.classes],
        ));
    }
    Ok(ckpt)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

fn cmd_train(
    common: &Common,
    method: Option<MethodKind>,
    teacher: Option<PathBuf>,
    auto_teacher: bool,
    strategy: Option<PathBuf>,
    log: &mut dyn Write,
) -> Result<()> {
    let mut config = resolve(common)?;
    if let Some(m) = method {
        config.method.kind = m;
    }
    if teacher.is_some() {
        config.method.teacher = teacher;
    }
    config.method.auto_teacher |= auto_teacher;
    if strategy.is_some() {
        config.strategy.checkpoint = strategy;
    }
    let mut run = Run::new(config, log)?;
    let train = run.config.train_set()?;
    let val = run.config.val_set()?;
    let base = train.base_eps;
    let mc = run.config.method.clone();

    let method = match mc.kind {
        MethodKind::Natural => Method::Natural,
        MethodKind::Sat => Method::Sat {
            eps: mc.sat_scale * base,
            loss: mc.sat_loss,
        },
        MethodKind::Mmat => {
            let teacher = match (&mc.teacher, mc.auto_teacher) {
                (Some(path), _) => {
                    let ckpt = load_compatible(path, &train)?;
                    Teacher::frozen(ckpt.network, ckpt.meta.method)
                }
                (None, true) => {
                    let m = Method::sat(mc.teacher_scale * base);
                    let out = run.fit(&train, val.as_ref(), &m, 1)?;
                    let ckpt = run.save_checkpoint("teacher.json", &out.best_net, &m.tag(), out.best_epoch)?;
                    Teacher::frozen(ckpt.network, ckpt.meta.method)
                }
                (None, false) => {
                    return Err(Error::Config {
                        path: "method.teacher".into(),
                        detail: "MMAT needs a teacher checkpoint or --auto-teacher".into(),
                    })
                }
            };
            let params = run.config.strategy.params(base);
            let budgets = if run.config.strategy.dynamic {
                BudgetPlan::Dynamic(params)
            } else {
                let strategy_ckpt = match run.config.strategy.checkpoint.clone() {
                    Some(path) => load_compatible(&path, &train)?,
                    None => {
                        let m = Method::sat(base);
                        let out = run.fit(&train, val.as_ref(), &m, 2)?;
                        run.save_checkpoint("strategy.json", &out.best_net, &m.tag(), out.best_epoch)?
                    }
                };
                let assignment = assign_budgets(&strategy_ckpt.network, &strategy_ckpt.id(), &train, &params)?;
                if let Some(table) = &assignment.table {
                    writeln!(run.log, "{}", table.summary())?;
                }
                BudgetPlan::Static(assignment)
            };
            Method::Mmat { teacher, budgets }
        }
    };

    let out = run.fit(&train, val.as_ref(), &method, 0)?;
    let tag = method.tag();
    let name = format!("{:?}", mc.kind).to_lowercase();
    let last_epoch = out.metrics.last().map_or(0, |m| m.epoch);
    run.save_checkpoint(&format!("{name}-final.json"), &out.final_net, &tag, last_epoch)?;
    run.save_checkpoint(&format!("{name}-best.json"), &out.best_net, &tag, out.best_epoch)?;
    let csv = metrics_csv(&run.config, &out.metrics);
    run.write_text("metrics.csv", &csv)
}

fn cmd_grade(common: &Common, checkpoint: &Path, mode: Option<&str>, log: &mut dyn Write) -> Result<()> {
    let mut config = resolve(common)?;
    match mode {
        Some("zmax") => config.strategy.mode = GradingMode::ZmaxStatic,
        Some("margin") => config.strategy.mode = GradingMode::MarginStatic,
        _ => {}
    }
    let mut run = Run::new(config, log)?;
    let train = run.config.train_set()?;
    let ckpt = load_compatible(checkpoint, &train)?;
    let params = run.config.strategy.params(train.base_eps);
    let assignment = assign_budgets(&ckpt.network, &ckpt.id(), &train, &params)?;
    let mut csv = Vec::new();
    writeln!(csv, "{}", provenance(&run.config))?;
    match &assignment.table {
        Some(table) => {
            table.write_csv(&mut csv)?;
            writeln!(run.log, "{}", table.summary())?;
        }
        None => {
            writeln!(csv, "index,grade,margin_or_zmax,eps")?;
            for i in 0..train.len() {
                writeln!(csv, "{i},MISCLASSIFIED,,0")?;
            }
            writeln!(run.log, "MISCLASSIFIED={}", train.len())?;
        }
    }
    let text = String::from_utf8(csv).expect("csv is utf-8");
    run.write_text("grades.csv", &text)
}

fn cmd_eval(
    common: &Common,
    checkpoints: &[PathBuf],
    attack: Option<Vec<String>>,
    transfer: Option<&Path>,
    log: &mut dyn Write,
) -> Result<()> {
    let mut config = resolve(common)?;
    if let Some(list) = attack {
        config.attack.attacks = list.into_iter().filter(|a| a != "none").collect();
    }
    let mut run = Run::new(config, log)?;
    let data = run.config.eval_set()?;
    let specs = run.config.attack.specs(data.base_eps, run.config.seed)?;
    let source = transfer.map(|p| load_compatible(p, &data)).transpose()?;
    let crafted = match &source {
        Some(src) => specs
            .iter()
            .map(|s| TransferSet::craft(&src.network, &data, s))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    for path in checkpoints {
        let ckpt = load_compatible(path, &data)?;
        let mut report = evaluation::evaluate(&ckpt.network, &ckpt.id(), &data, &specs, run.config.seed, &run.hash)?;
        if let Some(src) = &source {
            for set in &crafted {
                report.transfer.push(TransferResult {
                    source: src.id(),
                    attack: set.spec.name(),
                    robust: set.evaluate(&ckpt.network, &data)?,
                });
            }
        }
        let mut line = format!("{}: NA={}", stem(path), report.natural.value());
        for (name, a) in &report.attacks {
            line.push_str(&format!(" {name}={}", a.robust.value()));
        }
        writeln!(run.log, "{line}")?;
        for w in &report.warnings {
            writeln!(run.log, "warning: {w}")?;
        }
        run.write_text(&format!("{}-report.json", stem(path)), &report.to_json()?)?;
    }
    Ok(())
}

fn cmd_margins(common: &Common, checkpoint: &Path, subset: Option<MarginSubset>, bins: Option<usize>, log: &mut dyn Write) -> Result<()> {
    let mut config = resolve(common)?;
    if let Some(s) = subset {
        config.eval.margin_subset = s;
    }
    if let Some(b) = bins {
        config.eval.margin_bins = b;
    }
    let mut run = Run::new(config, log)?;
    let data = run.config.eval_set()?;
    let ckpt = load_compatible(checkpoint, &data)?;
    let ec = run.config.eval.clone();
    let samples = evaluation::margins(&ckpt.network, &data, ec.margin_subset, &run.config.strategy.deepfool)?;
    let hist = MarginHistogram::bin(&samples, ec.margin_bins, ec.margin_bin_width, &ckpt.id(), ec.margin_subset)?;
    if let Some(m) = evaluation::median_margin(&samples) {
        writeln!(run.log, "median margin {m} over {} examples", samples.len())?;
    }
    let mut csv = Vec::new();
    writeln!(csv, "{}", provenance(&run.config))?;
    hist.write_csv(&mut csv)?;
    let text = String::from_utf8(csv).expect("csv is utf-8");
    run.write_text("margins.csv", &text)
}

/// Execute a parsed command, logging progress to `log`.
pub fn run(cli: Cli, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            method,
            teacher,
            auto_teacher,
            strategy,
        } => cmd_train(&common, method, teacher, auto_teacher, strategy, log),
        Command::Grade { common, checkpoint, mode } => cmd_grade(&common, &checkpoint, mode.as_deref(), log),
        Command::Eval {
            common,
            checkpoints,
            attack,
            transfer,
        } => cmd_eval(&common, &checkpoints, attack, transfer.as_deref(), log),
        Command::Margins {
            common,
            checkpoint,
            subset,
            bins,
        } => cmd_margins(&common, &checkpoint, subset, bins, log),
    }
}
