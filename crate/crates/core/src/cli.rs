use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ugrec::checkpoint::Checkpoint;
use ugrec::dataset::{self, DEFAULT_THRESHOLD};
use ugrec::eval::{evaluate, sweep_csv, SparsityGroups, SweepRow, DEFAULT_RATIOS};
use ugrec::graph::{EntityKind, Namespace};
use ugrec::model::init_params;
use ugrec::synth::{generate_synthetic_graph, trivial_solution_probe, SynthConfig, SYNTH_CATALOG};
use ugrec::train::{fit, fit_with, subsample_cooccurrence, Ablation, TrainConfig};
use ugrec::{DataSplit, Error, ModelConfig, Result};

pub const LR_GRID: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.1];

#[derive(Debug, Parser)]
#[command(name = "ugrec", version, about = "Unified-graph recommender: prepare, train, evaluate, recommend")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration; see README for the sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.learning_rate=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Prepared dataset directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, filter and split a raw triplet file.
    Prepare {
        #[arg(long)]
        triplets: Option<PathBuf>,
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// Minimum interactions per user and item.
        #[arg(long)]
        threshold: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a prepared split.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        /// full, o-dc, o-c, o-d or o-att.
        #[arg(long)]
        ablation: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Ranking cutoff.
        #[arg(long)]
        k: Option<usize>,
        /// Upper bounds of the sparsity groups, e.g. `5,10,15`.
        #[arg(long, value_delimiter = ',')]
        groups: Option<Vec<usize>>,
        #[command(flatten)]
        common: Common,
    },
    /// Top-n items for one user.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(short, long, default_value_t = 10)]
        n: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run a multi-variant experiment and write a CSV table.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a planted-cluster synthetic dataset as raw triplet and catalog files.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Ablation,
    CoRatioSweep,
    SparsityReport,
    TrivialProbe,
    LrGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub experiment: ExperimentConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            experiment: ExperimentConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw triplet file read by `prepare`.
    pub triplets: Option<PathBuf>,
    /// Relation catalog read by `prepare`.
    pub catalog: Option<PathBuf>,
    /// Prepared split directory read by every other command.
    pub dir: PathBuf,
    pub threshold: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            triplets: None,
            catalog: None,
            dir: PathBuf::from("prepared"),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub groups: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 20,
            groups: SparsityGroups::default().thresholds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ratios: Vec<f64>,
    pub lr_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            ratios: DEFAULT_RATIOS.to_vec(),
            lr_grid: LR_GRID.to_vec(),
        }
    }
}

fn config_err(m: impl Into<String>) -> Error {
    Error::Config(m.into())
}

/// Sets a dotted key in a TOML table. The value is parsed as TOML when
/// possible and kept as a string otherwise.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut table = root;
    for p in path {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// File, then `--set` overrides, then dedicated flags.
pub fn resolve_config(common: &Common, flags: &[String]) -> Result<RunConfig> {
    let mut table = match &common.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Error::from(e).in_file(path))?
            .parse::<toml::Table>()
            .map_err(|e| config_err(e.to_string()).in_file(path))?,
        None => toml::Table::new(),
    };
    let mut all: Vec<String> = common.overrides.clone();
    if let Some(s) = common.seed {
        all.push(format!("train.seed={s}"));
        all.push(format!("synth.seed={s}"));
    }
    if common.deterministic {
        all.push("train.deterministic=true".into());
    }
    if let Some(d) = &common.output_dir {
        all.push(format!("output_dir={}", toml_str(d)));
    }
    if let Some(d) = &common.data {
        all.push(format!("data.dir={}", toml_str(d)));
    }
    all.extend(flags.iter().cloned());
    for a in &all {
        apply_override(&mut table, a)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    if cfg.eval.k == 0 {
        return Err(config_err("eval.k must be >= 1"));
    }
    Ok(cfg)
}

fn toml_str(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::from(e).in_file(path))
}

fn echo_config(cfg: &RunConfig) -> Result<()> {
    create_dir(&cfg.output_dir)?;
    let text = toml::to_string(cfg).map_err(|e| config_err(e.to_string()))?;
    write_file(&cfg.output_dir.join("config.toml"), text)
}

/// Runs variants in parallel unless the run is deterministic.
fn run_variants<T: Send, R: Send>(items: Vec<T>, sequential: bool, f: impl Fn(T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    if sequential {
        items.into_iter().map(f).collect()
    } else {
        items.into_par_iter().map(f).collect()
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare {
            triplets,
            catalog,
            threshold,
            common,
        } => {
            let mut flags = Vec::new();
            if let Some(t) = triplets {
                flags.push(format!("data.triplets={}", toml_str(&t)));
            }
            if let Some(c) = catalog {
                flags.push(format!("data.catalog={}", toml_str(&c)));
            }
            if let Some(t) = threshold {
                flags.push(format!("data.threshold={t}"));
            }
            let cfg = resolve_config(&common, &flags)?;
            cmd_prepare(&cfg)
        }
        Command::Train { epochs, ablation, common } => {
            let mut flags = Vec::new();
            if let Some(e) = epochs {
                flags.push(format!("train.epochs={e}"));
            }
            if let Some(a) = ablation {
                let a = Ablation::parse(&a).ok_or_else(|| config_err(format!("unknown ablation `{a}`")))?;
                flags.push(format!("train.ablation=\"{}\"", ablation_key(a)));
            }
            cmd_train(&resolve_config(&common, &flags)?)
        }
        Command::Evaluate {
            checkpoint,
            k,
            groups,
            common,
        } => {
            let mut flags = Vec::new();
            if let Some(k) = k {
                flags.push(format!("eval.k={k}"));
            }
            if let Some(g) = groups {
                flags.push(format!("eval.groups={g:?}"));
            }
            cmd_evaluate(&resolve_config(&common, &flags)?, &checkpoint)
        }
        Command::Recommend {
            checkpoint,
            user,
            n,
            common,
        } => cmd_recommend(&resolve_config(&common, &[])?, &checkpoint, &user, n),
        Command::Experiment { kind, epochs, common } => {
            let flags: Vec<String> = epochs.map(|e| format!("train.epochs={e}")).into_iter().collect();
            cmd_experiment(&resolve_config(&common, &flags)?, kind)
        }
        Command::Synth { common } => cmd_synth(&resolve_config(&common, &[])?),
    }
}

fn ablation_key(a: Ablation) -> &'static str {
    match a {
        Ablation::Full => "full",
        Ablation::NoDirectedNoCo => "o-dc",
        Ablation::NoCo => "o-c",
        Ablation::NoDirected => "o-d",
        Ablation::NoAttention => "o-att",
    }
}

pub fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    let triplets = cfg.data.triplets.as_ref().ok_or_else(|| config_err("prepare needs --triplets"))?;
    let catalog = cfg.data.catalog.as_ref().ok_or_else(|| config_err("prepare needs --catalog"))?;
    let prepared = dataset::prepare(triplets, catalog, cfg.data.threshold)?;
    dataset::write_split(&prepared.split, &prepared.stats, &cfg.output_dir)?;
    echo_config(cfg)?;
    print!("{}", prepared.stats);
    Ok(())
}

fn binding(split: &DataSplit) -> ([u8; 32], [u8; 32]) {
    let g = &split.train;
    (g.catalog().hash(), g.vocab().hash(g.catalog()))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let split = dataset::load_split(&cfg.data.dir)?;
    echo_config(cfg)?;
    let (catalog_hash, vocab_hash) = binding(&split);
    let out = &cfg.output_dir;
    let save = |params, name: &str| {
        Checkpoint {
            params,
            catalog_hash,
            vocab_hash,
        }
        .save(out.join(name))
    };
    if cfg.train.epochs == 0 {
        let model = cfg.train.ablation.apply(&cfg.model);
        let g = &split.train;
        return save(init_params(g.num_entities(), g.catalog(), &model, cfg.train.seed)?, "initial.ckpt");
    }
    let log_path = out.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::from(e).in_file(&log_path))?;
    let mut io_err = None;
    let result = fit_with(&split, &cfg.model, &cfg.train, |rec| {
        let line = serde_json::to_string(rec).expect("serializable record");
        if let Err(e) = writeln!(log, "{line}") {
            io_err.get_or_insert(e);
        }
        eprintln!(
            "epoch {:>5}  {}  active {:.3}  valid HR@{} {:.4}  NDCG {:.4}",
            rec.epoch, rec.variant, rec.active_fraction, rec.k, rec.valid_hr, rec.valid_ndcg
        );
    })?;
    if let Some(e) = io_err {
        return Err(Error::from(e).in_file(&log_path));
    }
    save(result.best, "best.ckpt")?;
    save(result.last, "final.ckpt")?;
    eprintln!("best epoch {}", result.best_epoch);
    Ok(())
}

fn load_bound(cfg: &RunConfig, checkpoint: &Path) -> Result<(Checkpoint, DataSplit)> {
    let ck = Checkpoint::load(checkpoint)?;
    let split = dataset::load_split(&cfg.data.dir)?;
    let (c, v) = binding(&split);
    ck.check_binding(&c, &v).map_err(|e| e.in_file(checkpoint))?;
    Ok((ck, split))
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    let (ck, split) = load_bound(cfg, checkpoint)?;
    let groups = SparsityGroups {
        thresholds: cfg.eval.groups.clone(),
    };
    let report = evaluate(&split, &ck.params, cfg.eval.k, &groups)?;
    echo_config(cfg)?;
    write_file(&cfg.output_dir.join("report.json"), report.to_json(&split.train))?;
    write_file(&cfg.output_dir.join("groups.csv"), report.groups_csv())?;
    println!("users\t{}", report.users);
    println!("hr@{}\t{:.6}", report.k, report.hr);
    println!("ndcg@{}\t{:.6}", report.k, report.ndcg);
    Ok(())
}

pub fn cmd_recommend(cfg: &RunConfig, checkpoint: &Path, user: &str, n: usize) -> Result<()> {
    let (ck, split) = load_bound(cfg, checkpoint)?;
    let g = &split.train;
    let ns = Namespace::for_side(EntityKind::User, g.catalog().interaction());
    let Some(id) = g.vocab().lookup(user, ns) else {
        let mut users: Vec<&str> = g.users().into_iter().map(|u| g.vocab().name(u)).collect();
        users.sort_by_key(|u| (strsim::levenshtein(user, u), *u));
        users.truncate(5);
        return Err(Error::Graph(format!("unknown user `{user}`; nearest: {}", users.join(", "))));
    };
    let exclude: HashSet<_> = split.train_items(id).collect();
    let ranked = ugrec::eval::rank_items(&ck.params, g, id, &exclude)?;
    let mut out = String::from("rank\titem\tdistance\n");
    for (i, r) in ranked.iter().take(n).enumerate() {
        let _ = writeln!(out, "{}\t{}\t{:.9}", i + 1, g.vocab().name(r.item), r.distance);
    }
    print!("{out}");
    Ok(())
}

fn with_train(split: &DataSplit, train: ugrec::UnifiedGraph) -> DataSplit {
    DataSplit {
        train,
        validation: split.validation.clone(),
        test: split.test.clone(),
    }
}

pub fn cmd_experiment(cfg: &RunConfig, kind: ExperimentKind) -> Result<()> {
    let split = dataset::load_split(&cfg.data.dir)?;
    echo_config(cfg)?;
    let seq = cfg.train.deterministic;
    let k = cfg.eval.k;
    let groups = SparsityGroups {
        thresholds: cfg.eval.groups.clone(),
    };
    let (name, table) = match kind {
        ExperimentKind::Ablation => {
            let rows = run_variants(Ablation::ALL.to_vec(), seq, |a| {
                let tc = TrainConfig { ablation: a, ..cfg.train.clone() };
                let fitted = fit(&split, &cfg.model, &tc)?;
                Ok((a, fitted.best_epoch, evaluate(&split, &fitted.best, k, &groups)?))
            })?;
            let mut s = String::from("variant,best_epoch,k,hr,ndcg\n");
            for (a, e, r) in rows {
                let _ = writeln!(s, "{},{},{},{:.6},{:.6}", a.label(), e, r.k, r.hr, r.ndcg);
            }
            ("ablation", s)
        }
        ExperimentKind::CoRatioSweep => {
            let rows = run_variants(cfg.experiment.ratios.clone(), seq, |ratio| {
                let sub = with_train(&split, subsample_cooccurrence(&split.train, ratio, cfg.train.seed)?);
                let undirected_triplets = sub.train.catalog().undirected().map(|r| sub.train.triplets(r.id).len()).sum();
                let fitted = fit(&sub, &cfg.model, &cfg.train)?;
                Ok(SweepRow {
                    ratio,
                    undirected_triplets,
                    report: evaluate(&sub, &fitted.best, k, &groups)?,
                })
            })?;
            ("co_ratio_sweep", sweep_csv(&rows))
        }
        ExperimentKind::SparsityReport => {
            let fitted = fit(&split, &cfg.model, &cfg.train)?;
            ("sparsity_report", evaluate(&split, &fitted.best, k, &groups)?.groups_csv())
        }
        ExperimentKind::TrivialProbe => {
            ("trivial_probe", trivial_solution_probe(&split.train, &cfg.model, &cfg.train)?.to_csv())
        }
        ExperimentKind::LrGrid => {
            let rows = run_variants(cfg.experiment.lr_grid.clone(), seq, |lr| {
                let tc = TrainConfig { learning_rate: lr, ..cfg.train.clone() };
                let fitted = fit(&split, &cfg.model, &tc)?;
                let valid = fitted
                    .history
                    .iter()
                    .find(|r| r.epoch == fitted.best_epoch)
                    .map_or((0.0, 0.0), |r| (r.valid_hr, r.valid_ndcg));
                Ok((lr, fitted.best_epoch, valid))
            })?;
            let best = rows
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .2 .0.total_cmp(&b.1 .2 .0).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i);
            let mut s = String::from("learning_rate,best_epoch,valid_hr,valid_ndcg,selected\n");
            for (i, (lr, e, (hr, ndcg))) in rows.iter().enumerate() {
                let _ = writeln!(s, "{lr},{e},{hr:.6},{ndcg:.6},{}", Some(i) == best);
            }
            ("lr_grid", s)
        }
    };
    write_file(&cfg.output_dir.join(format!("{name}.csv")), &table)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let g = generate_synthetic_graph(&cfg.synth)?.graph;
    create_dir(&cfg.output_dir)?;
    let mut buf = Vec::new();
    g.write_triplets(&mut buf)?;
    write_file(&cfg.output_dir.join("triplets.tsv"), buf)?;
    write_file(&cfg.output_dir.join("catalog.tsv"), SYNTH_CATALOG)?;
    echo_config(cfg)?;
    print!("{}", g.stats());
    Ok(())
}
