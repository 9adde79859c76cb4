//! Command-line front end: argument definitions and command runners.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{
    check_euler_identity, check_homogeneity, class_spectra, parse_ranks, spike_triggered_average_with,
    sta_shuffled_baseline, truncate_and_eval_with,
};
use crate::data::{load_delimited, load_idx, make_xor, split, Dataset, DelimitedOptions, SplitSpec};
use crate::error::{Error, Result};
use crate::margin::{compute_margin, theorem_diagnostics, write_ndjson};
use crate::model::{load_checkpoint, save_checkpoint, InitScheme, Network, NetworkSpec};
use crate::train::{evaluate, gradient_flow, train, verify_xor, Optimizer, RecordPolicy, TrainConfig, TrainTrace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

/// Default root for run directories when `--out` is not given.
pub const OUT_ROOT_ENV: &str = "DIQNN_OUT_ROOT";
/// Directory holding the four MNIST IDX files for `--data mnist`.
pub const MNIST_DIR_ENV: &str = "DIQNN_MNIST_DIR";

#[derive(Debug, Parser)]
#[command(name = "diqnn", version, about = "Quadratic neural networks and margin dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write its trace, margin report and checkpoint.
    Train(TrainArgs),
    /// Run an analysis on a saved checkpoint.
    Analyze(AnalyzeArgs),
    /// Integrate gradient flow on XOR and check the margin dynamics.
    XorVerify(XorArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerArg {
    Gd,
    Sgd,
    Flow,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Gd => Optimizer::Gd,
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Flow => Optimizer::GradientFlow,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// `xor`, `mnist`, `idx:<images>,<labels>` or `csv:<path>`.
    #[arg(long)]
    pub data: String,
    /// Held-out set in the same syntax; otherwise a split of `--data`.
    #[arg(long)]
    pub test_data: Option<String>,
    /// Fraction held out when no test set is given. Ignored for `xor`.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Zero-based label column for `csv:` data (default: last).
    #[arg(long)]
    pub label_column: Option<usize>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Keep only the first N training samples.
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Keep only the first N test samples.
    #[arg(long)]
    pub max_test_samples: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// `linear`, `mlp:H`, `quadratic`, `lowrank:R` or `lowrank-deep:WxR,...,R`.
    #[arg(long, default_value = "quadratic")]
    pub model: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Mini-batch size for SGD.
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_margin: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    pub optimizer: OptimizerArg,
    /// RK4 step, only with `--optimizer flow`.
    #[arg(long)]
    pub flow_step: Option<f64>,
    /// Integration horizon, only with `--optimizer flow`.
    #[arg(long)]
    pub total_time: Option<f64>,
    /// Start from c₁ = e₁, c₂ = e₂ (needs `lowrank:1` on 2-d, 2-class data).
    #[arg(long)]
    pub xor_paper_init: bool,
    /// Trace cadence: `auto`, `step`, `epoch` or a step interval.
    #[arg(long, default_value = "auto")]
    pub record: String,
    /// Leading samples per set evaluated for each trace record; 0 uses the
    /// full sets.
    #[arg(long, default_value_t = 2000)]
    pub eval_limit: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
#[group(id = "analysis", required = true, multiple = false)]
pub struct AnalysisChoice {
    /// Accuracy after truncating each class matrix, e.g. `1,2,4,8,full`.
    #[arg(long)]
    pub rank_curve: Option<String>,
    /// Spike-triggered averages against leading eigenvectors.
    #[arg(long)]
    pub sta: bool,
    /// Output scaling under θ → αθ.
    #[arg(long)]
    pub homogeneity: bool,
    /// ⟨∂Φ/∂θ, θ⟩ against L·Φ.
    #[arg(long)]
    pub euler: bool,
    /// Margin-dynamics diagnostics: separation, Gram spectrum, bound.
    #[arg(long)]
    pub theorem_diag: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub choice: AnalysisChoice,
    /// Scales for `--homogeneity`.
    #[arg(long, default_value = "0.25,0.5,2,4")]
    pub scales: String,
    /// Number of samples checked by `--homogeneity` and `--euler`.
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to the checkpoint's directory; reports go to `<out>/analysis`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct XorArgs {
    #[arg(long, default_value_t = 50.0)]
    pub total_time: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub flow_step: f64,
    /// Also write the sampled trajectory and report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let command_line = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    let outcome = match &cli.command {
        Command::Train(a) => cmd_train(a, &command_line),
        Command::Analyze(a) => cmd_analyze(a, &command_line),
        Command::XorVerify(a) => cmd_xor_verify(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => EXIT_DIVERGED,
                _ => EXIT_USAGE,
            }
        }
    }
}

enum Source {
    Xor,
    Mnist,
    Idx(PathBuf, PathBuf),
    Csv(PathBuf),
}

impl Source {
    fn parse(s: &str) -> Result<Self> {
        if s == "xor" {
            return Ok(Source::Xor);
        }
        if s == "mnist" {
            return Ok(Source::Mnist);
        }
        if let Some(rest) = s.strip_prefix("idx:") {
            let (img, lbl) = rest
                .split_once(',')
                .ok_or_else(|| Error::Spec(format!("expected idx:<images>,<labels>, got {s:?}")))?;
            return Ok(Source::Idx(img.into(), lbl.into()));
        }
        if let Some(path) = s.strip_prefix("csv:") {
            return Ok(Source::Csv(path.into()));
        }
        Err(Error::Spec(format!(
            "unknown data source {s:?}; expected xor, mnist, idx:<images>,<labels> or csv:<path>"
        )))
    }
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV).map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from)
}

fn load_source(source: &Source, args: &DataArgs, test: bool) -> Result<Dataset> {
    match source {
        Source::Xor => Ok(make_xor()),
        Source::Mnist => {
            let dir = mnist_dir();
            let prefix = if test { "t10k" } else { "train" };
            load_idx(
                dir.join(format!("{prefix}-images-idx3-ubyte")),
                dir.join(format!("{prefix}-labels-idx1-ubyte")),
            )
        }
        Source::Idx(img, lbl) => load_idx(img, lbl),
        Source::Csv(path) => {
            if !args.delimiter.is_ascii() {
                return Err(Error::Spec(format!("delimiter {:?} must be ASCII", args.delimiter)));
            }
            load_delimited(
                path,
                DelimitedOptions {
                    label_column: args.label_column,
                    delimiter: args.delimiter as u8,
                },
            )
        }
    }
}

fn truncate(data: Dataset, limit: Option<usize>) -> Result<Dataset> {
    match limit {
        Some(n) if n < data.len() => data.take(n),
        _ => Ok(data),
    }
}

/// Resolves `--data`/`--test-data` into a training set and optional test set.
pub fn load_data(args: &DataArgs, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    let source = Source::parse(&args.data)?;
    let (train_set, test_set) = match (&args.test_data, &source) {
        (Some(t), _) => (
            load_source(&source, args, false)?,
            Some(load_source(&Source::parse(t)?, args, true)?),
        ),
        (None, Source::Xor) => (make_xor(), None),
        (None, Source::Mnist) => (load_source(&source, args, false)?, Some(load_source(&source, args, true)?)),
        (None, _) => {
            let full = load_source(&source, args, false)?;
            if args.test_fraction > 0.0 {
                let (a, b) = split(
                    &full,
                    SplitSpec {
                        test_fraction: args.test_fraction,
                        seed,
                    },
                )?;
                (a, Some(b))
            } else {
                (full, None)
            }
        }
    };
    let train_set = truncate(train_set, args.max_samples)?;
    let test_set = test_set.map(|t| truncate(t, args.max_test_samples)).transpose()?;
    if let Some(t) = &test_set {
        if t.dim() != train_set.dim() {
            return Err(Error::Dimension(format!(
                "test data has {} features, training data {}",
                t.dim(),
                train_set.dim()
            )));
        }
    }
    Ok((train_set, test_set))
}

fn parse_record(s: &str) -> Result<RecordPolicy> {
    match s {
        "auto" => Ok(RecordPolicy::Auto),
        "step" => Ok(RecordPolicy::EveryStep),
        "epoch" => Ok(RecordPolicy::EpochEnd),
        n => n
            .parse()
            .ok()
            .filter(|&n: &usize| n > 0)
            .map(RecordPolicy::Every)
            .ok_or_else(|| Error::Spec(format!("invalid --record {n:?}; expected auto, step, epoch or N > 0"))),
    }
}

/// Builds the training configuration, rejecting flag combinations that do
/// not apply to the chosen optimizer.
pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let flow = args.optimizer == OptimizerArg::Flow;
    if !flow && args.flow_step.is_some() {
        return Err(Error::Spec("--flow-step requires --optimizer flow".into()));
    }
    if !flow && args.total_time.is_some() {
        return Err(Error::Spec("--total-time requires --optimizer flow".into()));
    }
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: args.lr,
        batch_size: Some(args.batch),
        epochs: args.epochs,
        lambda_margin: args.lambda_margin,
        seed: args.seed,
        optimizer: args.optimizer.into(),
        flow_step: args.flow_step.unwrap_or(defaults.flow_step),
        total_time: args.total_time.unwrap_or(defaults.total_time),
        record: parse_record(&args.record)?,
        eval_limit: (args.eval_limit > 0).then_some(args.eval_limit),
    };
    config.validate()?;
    Ok(config)
}

fn out_dir(explicit: Option<&Path>, default_name: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ROOT_ENV)
            .map_or_else(|| PathBuf::from("runs"), PathBuf::from)
            .join(default_name),
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Run description written before any long computation and completed when
/// the command finishes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub subcommand: String,
    pub config: Value,
    pub seed: u64,
    pub datasets: Map<String, Value>,
    pub version: String,
    /// Hash of the command, configuration and dataset fingerprints.
    pub run_id: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, subcommand: &str, config: Value, seed: u64, datasets: &[(&str, &Dataset)]) -> Self {
        let mut sets = Map::new();
        for (role, d) in datasets {
            sets.insert(
                (*role).into(),
                json!({"name": d.name(), "samples": d.len(), "features": d.dim(),
                       "classes": d.classes(), "sha256": d.fingerprint()}),
            );
        }
        let mut h = Sha256::new();
        h.update(subcommand.as_bytes());
        h.update(config.to_string().as_bytes());
        h.update(Value::Object(sets.clone()).to_string().as_bytes());
        let run_id = format!("{:x}", h.finalize())[..16].to_string();
        Self {
            command: command.into(),
            subcommand: subcommand.into(),
            config,
            seed,
            datasets: sets,
            version: env!("CARGO_PKG_VERSION").into(),
            run_id,
            started_at: now(),
            finished_at: None,
            status: "running".into(),
            outputs: Vec::new(),
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn finish(&mut self, path: &Path, status: &str) -> Result<()> {
        self.finished_at = Some(now());
        self.status = status.into();
        self.write(path)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn cmd_train(args: &TrainArgs, command_line: &str) -> Result<i32> {
    let config = train_config(args)?;
    let (train_set, test_set) = load_data(&args.data, args.seed)?;
    let spec = NetworkSpec::parse(&args.model, train_set.dim(), train_set.classes())?;
    let scheme = if args.xor_paper_init {
        InitScheme::XorPaper
    } else {
        InitScheme::Gaussian
    };
    let mut net = Network::init(&spec, args.seed, scheme)?;

    let out = out_dir(
        args.out.as_deref(),
        &format!("train-{}-seed{}", args.model.replace([':', ','], "_"), args.seed),
    );
    fs::create_dir_all(&out)?;
    let manifest_path = out.join("manifest.json");
    let mut sets = vec![("train", &train_set)];
    if let Some(t) = &test_set {
        sets.push(("test", t));
    }
    let mut manifest = RunManifest::new(
        command_line,
        "train",
        json!({"args": args, "train": config, "network": spec, "param_count": net.param_count()}),
        args.seed,
        &sets,
    );
    manifest.write(&manifest_path)?;
    log::info!(
        "training {} ({} parameters) on {} samples; writing to {}",
        args.model,
        net.param_count(),
        train_set.len(),
        out.display()
    );

    let trace = match config.optimizer {
        Optimizer::GradientFlow => gradient_flow(&mut net, &train_set, test_set.as_ref(), &config, |_, _| Ok(())),
        _ => train(&mut net, &train_set, test_set.as_ref(), &config),
    };
    let trace: TrainTrace = match trace {
        Ok(t) => t,
        Err(e) => {
            manifest.finish(&manifest_path, "diverged")?;
            return Err(e);
        }
    };

    write_with(&out.join("trace.csv"), |w| trace.write_csv(w))?;
    write_with(&out.join("trace.ndj"), |w| trace.write_ndjson(w))?;
    let report = compute_margin(&net, &train_set)?;
    write_with(&out.join("margin.ndj"), |w| {
        write_ndjson(&mut *w, &json!({"manifest": "manifest.json", "run_id": manifest.run_id,
                                      "summary": report.summary()}))?;
        for s in &report.per_sample {
            write_ndjson(&mut *w, s)?;
        }
        Ok(())
    })?;
    let mut meta = Map::new();
    meta.insert("manifest".into(), json!("manifest.json"));
    meta.insert("run_id".into(), json!(manifest.run_id));
    meta.insert("model".into(), json!(args.model));
    save_checkpoint(out.join("checkpoint.bin"), &net, &meta)?;

    manifest.outputs = ["trace.csv", "trace.ndj", "margin.ndj", "checkpoint.bin"]
        .map(String::from)
        .to_vec();
    manifest.finish(&manifest_path, "ok")?;

    let last = trace.last();
    let test_acc = match &test_set {
        Some(t) => Some(evaluate(&net, t, None, 0.0)?.accuracy),
        None => None,
    };
    println!(
        "model={} steps={} loss={:.6} train_acc={:.4} test_acc={} delta_mu={:.6} out={}",
        args.model,
        last.map_or(0, |r| r.step),
        last.map_or(f64::NAN, |r| r.loss),
        last.map_or(f64::NAN, |r| r.train_acc),
        test_acc.map_or("-".into(), |a| format!("{a:.4}")),
        report.delta_mu,
        out.display()
    );
    Ok(EXIT_OK)
}

fn parse_scales(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|a| a.is_finite() && *a > 0.0)
                .ok_or_else(|| Error::Spec(format!("invalid scale {v:?}")))
        })
        .collect()
}

fn check_matches(net: &Network, data: &Dataset) -> Result<()> {
    if net.inputs() != data.dim() || net.outputs() != data.classes() {
        return Err(Error::Format(format!(
            "checkpoint expects {} features and {} classes, data has {} and {}",
            net.inputs(),
            net.outputs(),
            data.dim(),
            data.classes()
        )));
    }
    Ok(())
}

/// Samples spread evenly through `data`.
fn probe_indices(n: usize, points: usize) -> Vec<usize> {
    let points = points.clamp(1, n);
    (0..points).map(|i| i * n / points).collect()
}

pub fn cmd_analyze(args: &AnalyzeArgs, command_line: &str) -> Result<i32> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let net = checkpoint.network;
    let (train_set, test_set) = load_data(&args.data, args.seed)?;
    // Analyses of generalization use the held-out set when there is one.
    let data = test_set.as_ref().unwrap_or(&train_set);
    check_matches(&net, data)?;

    let base = args
        .out
        .clone()
        .or_else(|| args.checkpoint.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let dir = base.join("analysis");
    fs::create_dir_all(&dir)?;
    let c = &args.choice;
    let kind = if c.rank_curve.is_some() {
        "rank_curve"
    } else if c.sta {
        "sta"
    } else if c.homogeneity {
        "homogeneity"
    } else if c.euler {
        "euler"
    } else {
        "theorem_diag"
    };
    let manifest_path = dir.join(format!("{kind}.manifest.json"));
    let mut manifest = RunManifest::new(command_line, "analyze", json!({"args": args}), args.seed, &[("data", data)]);
    manifest.write(&manifest_path)?;

    let mut outputs = Vec::new();
    let mut emit = |name: &str| outputs.push(format!("analysis/{name}"));
    let mut verdict = EXIT_OK;
    match kind {
        "rank_curve" => {
            let ranks = parse_ranks(c.rank_curve.as_deref().unwrap_or_default())?;
            let spectra = class_spectra(&net)?;
            let curve = truncate_and_eval_with(&net, data, &ranks, &spectra)?;
            write_with(&dir.join("rank_curve.csv"), |w| curve.write_csv(w))?;
            write_json(&dir.join("rank_curve.json"), &curve)?;
            emit("rank_curve.csv");
            emit("rank_curve.json");
            for p in &curve.points {
                println!("rank={} accuracy={:.4}", p.rank, p.accuracy);
            }
        }
        "sta" => {
            let spectra = class_spectra(&net)?;
            let report = spike_triggered_average_with(&net, data, &spectra)?;
            let baseline = sta_shuffled_baseline(&report, args.seed);
            write_with(&dir.join("sta.csv"), |w| report.write_csv(w))?;
            write_with(&dir.join("sta_vectors.csv"), |w| report.write_sta_rows(w))?;
            write_json(
                &dir.join("sta.json"),
                &json!({"mean_cosine": report.mean_cosine(), "shuffled_baseline": baseline,
                        "classes": report.classes.iter().map(|c| json!({"class": c.class,
                            "count": c.count, "cosine": c.cosine,
                            "leading_eigenvalue": c.leading_eigenvalue})).collect::<Vec<_>>()}),
            )?;
            emit("sta.csv");
            emit("sta_vectors.csv");
            emit("sta.json");
            for cl in &report.classes {
                match cl.cosine {
                    Some(v) => println!("class={} count={} cosine={v:.4}", cl.class, cl.count),
                    None => println!("class={} count={} cosine=missing", cl.class, cl.count),
                }
            }
            println!(
                "mean_cosine={} shuffled_baseline={}",
                report.mean_cosine().map_or("-".into(), |v| format!("{v:.4}")),
                baseline.map_or("-".into(), |v| format!("{v:.4}"))
            );
        }
        "homogeneity" => {
            let scales = parse_scales(&args.scales)?;
            let mut reports = Vec::new();
            for i in probe_indices(data.len(), args.points) {
                reports.push((i, check_homogeneity(&net, data.sample(i), &scales)?));
            }
            let worst = reports.iter().map(|(_, r)| r.worst_relative_error).fold(0.0, f64::max);
            write_with(&dir.join("homogeneity.csv"), |w| {
                writeln!(w, "sample,alpha,relative_error")?;
                for (i, r) in &reports {
                    for s in &r.scales {
                        writeln!(w, "{i},{},{}", s.alpha, s.relative_error)?;
                    }
                }
                Ok(())
            })?;
            emit("homogeneity.csv");
            println!("degree={} worst_relative_error={worst:e}", reports[0].1.degree);
            if worst >= 1e-10 {
                verdict = EXIT_VERIFICATION;
            }
        }
        "euler" => {
            let mut reports = Vec::new();
            for i in probe_indices(data.len(), args.points) {
                reports.push((i, check_euler_identity(&net, data.sample(i))?));
            }
            let worst = reports.iter().map(|(_, r)| r.worst_relative_error).fold(0.0, f64::max);
            write_with(&dir.join("euler.csv"), |w| {
                writeln!(w, "sample,output,lhs,rhs,relative_error")?;
                for (i, r) in &reports {
                    for (o, e) in r.outputs.iter().enumerate() {
                        writeln!(w, "{i},{o},{},{},{}", e.lhs, e.rhs, e.relative_error)?;
                    }
                }
                Ok(())
            })?;
            emit("euler.csv");
            println!("degree={} worst_relative_error={worst:e}", reports[0].1.degree);
            if worst >= 1e-8 {
                verdict = EXIT_VERIFICATION;
            }
        }
        _ => {
            let diag = theorem_diagnostics(&net, data)?;
            let record = diag.record();
            write_json(&dir.join("theorem_diag.json"), &record)?;
            write_with(&dir.join("theorem_diag.csv"), |w| {
                writeln!(w, "field,value")?;
                if let Value::Object(m) = serde_json::to_value(&record)? {
                    for (k, v) in m {
                        writeln!(w, "{k},{}", v.to_string().replace(',', ";"))?;
                    }
                }
                Ok(())
            })?;
            write_with(&dir.join("gram_eigenvalues.csv"), |w| {
                writeln!(w, "index,eigenvalue")?;
                for (i, v) in diag.gram_eigenvalues.iter().enumerate() {
                    writeln!(w, "{i},{v}")?;
                }
                Ok(())
            })?;
            emit("theorem_diag.json");
            emit("theorem_diag.csv");
            emit("gram_eigenvalues.csv");
            println!(
                "classes={} separation={:?} condition_holds={} bound={}",
                record.classes,
                record.separation,
                record.condition_holds,
                record.bound.map_or("undefined".into(), |b| b.to_string())
            );
        }
    }
    manifest.outputs = outputs;
    manifest.finish(&manifest_path, if verdict == EXIT_OK { "ok" } else { "failed" })?;
    Ok(verdict)
}

pub fn cmd_xor_verify(args: &XorArgs) -> Result<i32> {
    let report = verify_xor(args.total_time, args.flow_step)?;
    for c in &report.checks {
        println!(
            "{} {} value={:e} threshold={:e} ({})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold,
            c.detail
        );
    }
    println!("final_delta_mu={:.6}", report.final_delta_mu());
    if let Some(r) = report.rate_ratio {
        println!("rate_ratio={r:.6}");
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        write_with(&dir.join("xor_trace.csv"), |w| {
            writeln!(w, "time,a,b,c2_x1,c2_x2,delta_mu,closed_form_rate")?;
            for s in &report.samples {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    s.time,
                    s.a,
                    s.b,
                    s.c2_x1,
                    s.c2_x2,
                    s.delta_mu,
                    s.closed_form_rate()
                )?;
            }
            Ok(())
        })?;
        write_json(
            &dir.join("xor_report.json"),
            &json!({"total_time": report.total_time, "flow_step": report.flow_step,
                    "checks": report.checks, "rate_ratio": report.rate_ratio,
                    "final_delta_mu": report.final_delta_mu()}),
        )?;
    }
    if report.all_passed() {
        Ok(EXIT_OK)
    } else {
        let failed: Vec<&str> = report.failed().map(|c| c.name.as_str()).collect();
        eprintln!("verification failed: {}", failed.join(", "));
        Ok(EXIT_VERIFICATION)
    }
}
