//! Command-line front end: `train`, `sweep-alpha`, `ablate` and `synth`.
//!
//! Settings come from an optional JSON config file; flags override file
//! values. Everything is validated before any training starts.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, FeatureSelection, SynthSpec};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::losses::LossConvention;
use crate::model::GlmInput;
use crate::report;
use crate::trainer::{self, CvRun, CvSummary, Stat, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "attngcn", version, about = "Attention-masked latent-graph GCN trainer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross-validate one configuration and export its artifacts.
    Train(CommonArgs),
    /// Cross-validate once per alpha value.
    SweepAlpha(SweepArgs),
    /// Compare all / complement / selected-only feature sets.
    Ablate(AblateArgs),
    /// Write the planted benchmark dataset and its ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha2: Option<f64>,
    /// `masked` or `raw`.
    #[arg(long)]
    pub glm_input: Option<String>,
    /// `prose` (alpha weights classification) or `eq1`.
    #[arg(long)]
    pub loss_convention: Option<String>,
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label_column: Option<String>,
    /// `default` or overrides such as `n=120,d=20,seed=3`.
    #[arg(long)]
    pub synth: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub mask_learning_rate: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of top-attention features to select.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// A `mask.csv` from an earlier `train`; trains first when absent.
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub synth: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub label_column: String,
    pub synth: Option<SynthSpec>,
    pub selection: FeatureSelection,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub alphas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: None,
            label_column: "label".into(),
            synth: None,
            selection: FeatureSelection::All,
            out: None,
            jobs: 1,
            alphas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// File values first, then flags.
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let t = &mut cfg.train;
        if let Some(v) = args.seed {
            t.seed = v;
        }
        if let Some(v) = args.alpha {
            t.loss.alpha = v;
        }
        if let Some(v) = args.alpha1 {
            t.loss.alpha1 = v;
        }
        if let Some(v) = args.alpha2 {
            t.loss.alpha2 = v;
        }
        if let Some(v) = &args.glm_input {
            t.architecture.glm_input = v.parse::<GlmInput>()?;
        }
        if let Some(v) = &args.loss_convention {
            t.loss_convention = v.parse::<LossConvention>()?;
        }
        if let Some(v) = args.epochs {
            t.epochs = v;
        }
        if let Some(v) = args.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = args.mask_learning_rate {
            t.mask_learning_rate = Some(v);
        }
        if let Some(v) = args.folds {
            t.folds = v;
        }
        if let Some(v) = &args.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &args.label_column {
            cfg.label_column = v.clone();
        }
        if let Some(v) = &args.synth {
            cfg.synth = Some(SynthSpec::parse(v)?);
        }
        if let Some(v) = &args.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = args.jobs {
            cfg.jobs = v;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match (&self.data, &self.synth) {
            (None, None) => {
                return Err(Error::Config(
                    "missing field `data`: give a dataset path or a `synth` spec".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config("set only one of `data` and `synth`".into()))
            }
            (_, Some(s)) => s.validate()?,
            _ => {}
        }
        if self.out.is_none() {
            return Err(Error::Config("missing field `out`: give an output directory".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    fn out_dir(&self) -> &Path {
        self.out.as_deref().expect("validated")
    }

    /// Loads or generates the dataset and applies the column selection.
    pub fn dataset(&self) -> Result<Dataset> {
        let ds = match (&self.data, &self.synth) {
            (Some(p), _) => data::load_csv(p, &self.label_column).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("cannot read data {}: {io}", p.display())),
                other => other,
            })?,
            (None, Some(s)) => data::synth_planted(s)?.0,
            (None, None) => return Err(Error::Config("missing field `data`".into())),
        };
        let ds = data::select_features(&ds, &self.selection)?;
        if self.train.top_k > ds.feature_count() {
            return Err(Error::Config(format!(
                "top_k ({}) exceeds the feature count ({})",
                self.train.top_k,
                ds.feature_count()
            )));
        }
        Ok(ds)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn loss_trace_csv(record: &trainer::MetricRecord) -> String {
    let mut out = String::from("epoch,L,L_c,F_MEL,F_MSL\n");
    for p in &record.loss_trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.epoch, p.total, p.classification, p.entropy, p.size
        ));
    }
    out
}

fn print_summary(label: &str, s: &CvSummary) {
    let pct = |st: &Stat| format!("{:.2} ± {:.2}", 100.0 * st.mean, 100.0 * st.std);
    println!(
        "{label}: accuracy {}  auc {}  f1 {}  avg_top_k {:.4}  avg_others {:.4}",
        pct(&s.accuracy),
        pct(&s.auc),
        pct(&s.f1),
        s.avg_top_k.mean,
        s.avg_others.mean
    );
}

/// Writes the `train` artifacts for a finished cross-validation run.
pub fn write_train_artifacts(out: &Path, ds: &Dataset, run: &CvRun) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_json(&out.join("summary.json"), &run.summary)?;
    for f in &run.folds {
        write_atomic(
            &out.join(format!("loss_trace_fold{}.csv", f.record.fold)),
            loss_trace_csv(&f.record).as_bytes(),
        )?;
    }
    let rows = report::feature_report_from_attention(&run.summary.mean_attention, ds)?;
    write_atomic(&out.join("mask.csv"), report::feature_report_csv(&rows).as_bytes())?;
    if let Some(first) = run.folds.first() {
        let before = report::export_adjacency(&first.adjacency_before, &ds.labels);
        let after = report::export_adjacency(&first.adjacency_after, &ds.labels);
        write_atomic(&out.join("adjacency_before.csv"), before.to_csv().as_bytes())?;
        write_atomic(&out.join("adjacency_after.csv"), after.to_csv().as_bytes())?;
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<CvRun> {
    cfg.validate()?;
    let ds = cfg.dataset()?;
    let run = trainer::cross_validate_run(&ds, &cfg.train, cfg.jobs)?;
    write_train_artifacts(cfg.out_dir(), &ds, &run)?;
    write_json(&cfg.out_dir().join("config.json"), cfg)?;
    print_summary("train", &run.summary);
    Ok(run)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub alpha: f64,
    pub accuracy: Stat,
    pub auc: Stat,
    pub f1: Stat,
    pub avg_top_k: Stat,
    pub avg_others: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub entries: Vec<SweepEntry>,
}

pub fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Config("alphas must not be empty".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Config(format!("alphas: {a} is outside [0, 1]")));
    }
    Ok(())
}

pub fn cmd_sweep_alpha(cfg: &RunConfig) -> Result<SweepTable> {
    cfg.validate()?;
    validate_alphas(&cfg.alphas)?;
    let ds = cfg.dataset()?;
    let mut entries = Vec::with_capacity(cfg.alphas.len());
    for &alpha in &cfg.alphas {
        let mut train = cfg.train.clone();
        train.loss.alpha = alpha;
        let s = trainer::cross_validate(&ds, &train, cfg.jobs).map_err(|e| Error::Alpha {
            alpha,
            source: Box::new(e),
        })?;
        print_summary(&format!("alpha {alpha}"), &s);
        entries.push(SweepEntry {
            alpha,
            accuracy: s.accuracy,
            auc: s.auc,
            f1: s.f1,
            avg_top_k: s.avg_top_k,
            avg_others: s.avg_others,
        });
    }
    let table = SweepTable { entries };
    std::fs::create_dir_all(cfg.out_dir())?;
    write_json(&cfg.out_dir().join("sweep.json"), &table)?;
    Ok(table)
}

pub fn cmd_ablate(cfg: &RunConfig, top_k: usize, mask: Option<&Path>) -> Result<report::AblationTable> {
    cfg.validate()?;
    let ds = cfg.dataset()?;
    let d = ds.feature_count();
    if top_k == 0 || top_k >= d {
        return Err(Error::Config(format!(
            "top_k must satisfy 1 <= top_k < {d} (feature count), got {top_k}"
        )));
    }
    let (selected, precomputed) = match mask {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read mask {}: {e}", p.display())))?;
            let rows = report::parse_feature_report(&text)?;
            let mut attention = vec![f64::NEG_INFINITY; d];
            for r in &rows {
                let j = ds.feature_index(&r.feature).ok_or_else(|| {
                    Error::Config(format!("mask feature `{}` not in dataset", r.feature))
                })?;
                attention[j] = r.attention;
            }
            (report::top_features(&attention, &ds.feature_names, top_k), None)
        }
        None => {
            let run = trainer::cross_validate_run(&ds, &cfg.train, cfg.jobs)?;
            write_train_artifacts(cfg.out_dir(), &ds, &run)?;
            let sel = report::top_features(&run.summary.mean_attention, &ds.feature_names, top_k);
            (sel, Some(run.summary))
        }
    };
    let table = report::ablation_run_with(&ds, &selected, &cfg.train, cfg.jobs, precomputed)?;
    print_summary("all", &table.all);
    print_summary("complement", &table.complement);
    print_summary("selected", &table.selected);
    std::fs::create_dir_all(cfg.out_dir())?;
    write_json(&cfg.out_dir().join("ablation.json"), &table)?;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub informative: Vec<usize>,
    pub informative_names: Vec<String>,
    pub spec: SynthSpec,
}

pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<Truth> {
    spec.validate()?;
    let (ds, informative) = data::synth_planted(spec)?;
    std::fs::create_dir_all(out)?;
    data::save_csv(&ds, out.join("data.csv"))?;
    let truth = Truth {
        informative_names: informative.iter().map(|&j| ds.feature_names[j].clone()).collect(),
        informative,
        spec: spec.clone(),
    };
    write_json(&out.join("truth.json"), &truth)?;
    println!("synth: {} rows, {} features -> {}", ds.len(), ds.feature_count(), out.display());
    Ok(truth)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&RunConfig::resolve(&a)?).map(|_| ()),
        Command::SweepAlpha(a) => {
            let mut cfg = RunConfig::resolve(&a.common)?;
            if let Some(al) = a.alphas {
                cfg.alphas = al;
            }
            cmd_sweep_alpha(&cfg).map(|_| ())
        }
        Command::Ablate(a) => {
            let cfg = RunConfig::resolve(&a.common)?;
            let k = a.top_k.unwrap_or(cfg.train.top_k);
            cmd_ablate(&cfg, k, a.mask.as_deref()).map(|_| ())
        }
        Command::Synth(a) => {
            let base = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let spec = match &a.synth {
                Some(s) => SynthSpec::parse(s)?,
                None => base.synth.clone().unwrap_or_default(),
            };
            let out = a
                .out
                .or(base.out)
                .ok_or_else(|| Error::Config("missing field `out`: give an output directory".into()))?;
            cmd_synth(&spec, &out).map(|_| ())
        }
    }
}

/// Parses `args` and runs; returns the process exit code
/// (0 success, 1 validation, 2 runtime).
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
