//! Command-line interface: train, add, delete, predict, eval, bench, synth.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use onlineboost::dataset::{self, Format, LabelColumn, RawDataset};
use onlineboost::error::Error;
use onlineboost::eval;
use onlineboost::online::{robustness_diagnostics, Policy, UpdateOptions};
use onlineboost::store::{self, ExportMode};
use onlineboost::synth;
use onlineboost::{HyperParams, Model};

#[derive(Parser)]
#[command(
    name = "onlineboost",
    about = "Gradient boosting with in-place incremental and decremental learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it to a model file.
    Train(TrainArgs),
    /// Incrementally learn new rows into an existing model file.
    Add(AddArgs),
    /// Decrementally remove learned rows from an existing model file.
    Delete(DeleteArgs),
    /// Predict probabilities and labels for feature rows.
    Predict(PredictArgs),
    /// Verification harness experiments.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Wall-clock benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Generate a synthetic multiclass CSV dataset.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Libsvm,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Libsvm => Format::Libsvm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelColArg {
    First,
    Last,
}

impl From<LabelColArg> for LabelColumn {
    fn from(l: LabelColArg) -> LabelColumn {
        match l {
            LabelColArg::First => LabelColumn::First,
            LabelColArg::Last => LabelColumn::Last,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Lazy,
    Eager,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportArg {
    Full,
    Slim,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input data file.
    #[arg(long)]
    data: PathBuf,
    /// Input format.
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Skip one CSV header line.
    #[arg(long)]
    header: bool,
    /// Which CSV column holds the label.
    #[arg(long, value_enum, default_value = "first")]
    label_col: LabelColArg,
}

impl DataArgs {
    fn load(&self) -> Result<RawDataset, Error> {
        dataset::load_tabular_with(
            &self.data,
            self.format.into(),
            self.header,
            self.label_col.into(),
        )
    }
}

/// Hyperparameters; unset flags fall back to the config file, then defaults.
#[derive(Args, Clone)]
struct HyperArgs {
    /// Boosting iterations M.
    #[arg(long)]
    iters: Option<usize>,
    /// Number of classes K (default: inferred from labels).
    #[arg(long)]
    classes: Option<usize>,
    /// Terminal nodes per tree J.
    #[arg(long)]
    leaves: Option<u32>,
    /// Maximum bins per feature B.
    #[arg(long)]
    bins: Option<usize>,
    /// Shrinkage ν.
    #[arg(long)]
    shrinkage: Option<f64>,
    /// Split candidate sample rate α.
    #[arg(long)]
    alpha: Option<f64>,
    /// Split robustness tolerance σ.
    #[arg(long)]
    sigma: Option<f64>,
    /// RNG seed (ONLINEBOOST_SEED overrides).
    #[arg(long)]
    seed: Option<u64>,
    /// Optional key=value config file; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl HyperArgs {
    fn resolve(&self) -> Result<HyperParams, Error> {
        let file: HashMap<String, String> = match &self.config {
            Some(path) => parse_config(path)?,
            None => HashMap::new(),
        };
        fn pick<T: std::str::FromStr>(
            flag: Option<T>,
            file: &HashMap<String, String>,
            key: &'static str,
            default: T,
        ) -> Result<T, Error> {
            if let Some(v) = flag {
                return Ok(v);
            }
            match file.get(key) {
                Some(raw) => raw.parse().map_err(|_| Error::InvalidParam {
                    name: key,
                    msg: format!("bad config value {raw:?}"),
                }),
                None => Ok(default),
            }
        }
        let defaults = HyperParams::default();
        let mut params = HyperParams {
            iterations: pick(self.iters, &file, "iters", defaults.iterations)?,
            n_classes: pick(self.classes, &file, "classes", defaults.n_classes)?,
            max_leaves: pick(self.leaves, &file, "leaves", defaults.max_leaves)?,
            max_bins: pick(self.bins, &file, "bins", defaults.max_bins)?,
            shrinkage: pick(self.shrinkage, &file, "shrinkage", defaults.shrinkage)?,
            sample_rate: pick(self.alpha, &file, "alpha", defaults.sample_rate)?,
            tolerance: pick(self.sigma, &file, "sigma", defaults.tolerance)?,
            seed: pick(self.seed, &file, "seed", defaults.seed)?,
        };
        if let Ok(seed) = std::env::var("ONLINEBOOST_SEED") {
            params.seed = seed.parse().map_err(|_| Error::InvalidParam {
                name: "ONLINEBOOST_SEED",
                msg: format!("bad value {seed:?}"),
            })?;
        }
        params.validate()?;
        Ok(params)
    }
}

fn parse_config(path: &Path) -> Result<HashMap<String, String>, Error> {
    let mut out = HashMap::new();
    for (lineno, line) in fs::read_to_string(path)?.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected key = value".into(),
            });
        };
        out.insert(
            key.trim().to_string(),
            value.trim().trim_matches('"').to_string(),
        );
    }
    Ok(out)
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Optional held-out data to report a test error on.
    #[arg(long)]
    test: Option<PathBuf>,
    /// full keeps the online-learning state; slim is prediction-only.
    #[arg(long, value_enum, default_value = "full")]
    export: ExportArg,
}

#[derive(Args)]
struct AddArgs {
    /// Model file to update in place.
    #[arg(long)]
    model: PathBuf,
    /// Rows to learn (same format as training data).
    #[arg(long)]
    rows: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    header: bool,
    #[arg(long, value_enum, default_value = "lazy")]
    policy: PolicyArg,
    /// Write the update report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Include the per-node decision log in the report.
    #[arg(long)]
    verbose_decisions: bool,
}

#[derive(Args)]
struct DeleteArgs {
    #[arg(long)]
    model: PathBuf,
    /// File with one instance id per line.
    #[arg(long)]
    ids: PathBuf,
    #[arg(long, value_enum, default_value = "lazy")]
    policy: PolicyArg,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    verbose_decisions: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV: label,p0,...,pK-1 per row.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Functional similarity φ between two models on a test set.
    Similarity(SimilarityArgs),
    /// Four-phase backdoor inject/remove protocol.
    Backdoor(BackdoorArgs),
    /// Leaf-score approximation error against a structure-matched retrain.
    LeafError(LeafErrorArgs),
    /// Batch addition/removal schedule with online-vs-retrain accuracy.
    Schedule(ScheduleArgs),
    /// Split robustness diagnostics at a given batch fraction λ.
    Robustness(RobustnessArgs),
}

#[derive(Args)]
struct SimilarityArgs {
    /// Reference model (e.g. retrained from scratch).
    #[arg(long)]
    a: PathBuf,
    /// Online-updated model.
    #[arg(long)]
    b: PathBuf,
    /// Test data.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BackdoorArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Test data.
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Fraction of training rows poisoned.
    #[arg(long, default_value_t = 0.05)]
    poison_frac: f64,
    /// Number of leading features the trigger stamps.
    #[arg(long, default_value_t = 3)]
    trigger_features: usize,
    /// Trigger value (default: each feature's training maximum).
    #[arg(long)]
    trigger_value: Option<f64>,
    #[arg(long, default_value_t = 0)]
    target_label: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LeafErrorArgs {
    /// Full-mode model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Number of equal parts the training data is divided into.
    #[arg(long, default_value_t = 20)]
    parts: usize,
    /// Also train a from-scratch reference at every step.
    #[arg(long)]
    retrain_ref: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long)]
    model: PathBuf,
    /// Online batch fraction |D'| / |D_tr|.
    #[arg(long, default_value_t = 0.001)]
    lambda: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Online add/delete wall time versus retraining from scratch.
    Speedup(SpeedupArgs),
}

#[derive(Args)]
struct SpeedupArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Batch sizes: values below 1 are fractions, otherwise row counts.
    #[arg(long, value_delimiter = ',', default_value = "1,0.001,0.01")]
    sizes: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    features: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Snap features to this many integer levels (0 keeps them continuous).
    #[arg(long, default_value_t = 64)]
    quantize: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::InvalidParam { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Add(args) => cmd_add(args),
        Command::Delete(args) => cmd_delete(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(cmd) => match cmd {
            EvalCommand::Similarity(args) => cmd_similarity(args),
            EvalCommand::Backdoor(args) => cmd_backdoor(args),
            EvalCommand::LeafError(args) => cmd_leaf_error(args),
            EvalCommand::Schedule(args) => cmd_schedule(args),
            EvalCommand::Robustness(args) => cmd_robustness(args),
        },
        Command::Bench(cmd) => match cmd {
            BenchCommand::Speedup(args) => cmd_speedup(args),
        },
        Command::Synth(args) => cmd_synth(args),
    }
}

fn emit_json<T: onlineboost::serde::Serialize>(value: &T, out: Option<&Path>) -> Result<(), Error> {
    let json = serde_json::to_string_pretty(value).expect("serializable report");
    match out {
        Some(path) => fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let raw = args.data.load()?;
    let params = args.hyper.resolve()?;
    let start = std::time::Instant::now();
    let model = Model::train(&raw, params)?;
    let train_secs = start.elapsed().as_secs_f64();
    let mode = match args.export {
        ExportArg::Full => ExportMode::Full,
        ExportArg::Slim => ExportMode::Slim,
    };
    store::save(&model, &args.out, mode)?;
    println!(
        "trained {} trees (M={} K={}) on {} rows in {:.3}s",
        model.trees.len(),
        model.params.iterations,
        model.params.n_classes,
        raw.n_rows(),
        train_secs
    );
    println!("final training nll: {:.6}", model.training_nll()?);
    if let Some(test_path) = &args.test {
        let test = dataset::load_tabular(test_path, args.data.format.into(), args.data.header)?;
        println!("test error: {:.4}", model.test_error(&test)?);
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

fn update_options(policy: PolicyArg, verbose: bool) -> UpdateOptions {
    UpdateOptions {
        policy: match policy {
            PolicyArg::Lazy => Policy::Lazy,
            PolicyArg::Eager => Policy::Eager,
        },
        record_decisions: verbose,
    }
}

fn cmd_add(args: AddArgs) -> Result<(), Error> {
    let rows = dataset::load_tabular(&args.rows, args.format.into(), args.header)?;
    let mut model = store::load(&args.model)?;
    let report = model.incremental_learn(&rows, update_options(args.policy, args.verbose_decisions))?;
    store::save(&model, &args.model, ExportMode::Full)?;
    println!(
        "added {} rows (ids {:?}) in {}µs; retrained {} nodes",
        report.batch_size,
        report.added_ids.unwrap(),
        report.micros,
        report.retrained_nodes
    );
    emit_json(&report, args.report.as_deref())
}

fn cmd_delete(args: DeleteArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&args.ids)?;
    let mut ids = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        ids.push(line.parse::<u32>().map_err(|_| Error::Parse {
            path: args.ids.display().to_string(),
            line: lineno + 1,
            msg: format!("bad instance id {line:?}"),
        })?);
    }
    let mut model = store::load(&args.model)?;
    let report = model.decremental_learn(&ids, update_options(args.policy, args.verbose_decisions))?;
    store::save(&model, &args.model, ExportMode::Full)?;
    println!(
        "deleted {} rows in {}µs; retrained {} nodes",
        report.batch_size, report.micros, report.retrained_nodes
    );
    emit_json(&report, args.report.as_deref())
}

fn cmd_predict(args: PredictArgs) -> Result<(), Error> {
    let data = args.data.load()?;
    let model = store::load(&args.model)?;
    let mut out = String::new();
    for i in 0..data.n_rows() {
        let (probs, label) = model.predict(data.row(i))?;
        out.push_str(&label.to_string());
        for p in probs {
            out.push(',');
            out.push_str(&format!("{p:.12}"));
        }
        out.push('\n');
    }
    fs::write(&args.out, out)?;
    println!("wrote {} predictions to {}", data.n_rows(), args.out.display());
    Ok(())
}

fn cmd_similarity(args: SimilarityArgs) -> Result<(), Error> {
    let a = store::load(&args.a)?;
    let b = store::load(&args.b)?;
    let test = dataset::load_tabular(&args.test, args.format.into(), args.header)?;
    let report = eval::functional_similarity(&a, &b, &test)?;
    println!(
        "phi={:.4} c2w={:.4} w2c={:.4} w2w={:.4} over {} rows",
        report.phi, report.c2w, report.w2c, report.w2w, report.n
    );
    emit_json(&report, args.out.as_deref())
}

fn cmd_backdoor(args: BackdoorArgs) -> Result<(), Error> {
    let train = args.data.load()?;
    let test = dataset::load_tabular(&args.test, args.data.format.into(), args.data.header)?;
    let params = args.hyper.resolve()?;
    let config = eval::BackdoorConfig {
        poison_fraction: args.poison_frac,
        trigger_features: args.trigger_features,
        trigger_value: args.trigger_value,
        target_label: args.target_label,
        seed: params.seed,
    };
    let report = eval::run_backdoor_experiment(&train, &test, params, &config)?;
    println!("{:<16} {:>10} {:>10}", "phase", "clean acc", "asr");
    for phase in &report.phases {
        println!(
            "{:<16} {:>9.2}% {:>9.2}%",
            phase.phase,
            100.0 * phase.clean_accuracy,
            100.0 * phase.attack_success_rate
        );
    }
    emit_json(&report, args.out.as_deref())
}

fn cmd_leaf_error(args: LeafErrorArgs) -> Result<(), Error> {
    let model = store::load(&args.model)?;
    let reference = eval::structure_matched_retrain(&model)?;
    let report = eval::leaf_score_error(&model, &reference)?;
    println!("leaf score approximation error: {:.4}%", 100.0 * report.error);
    emit_json(&report, args.out.as_deref())
}

fn cmd_schedule(args: ScheduleArgs) -> Result<(), Error> {
    let train = args.data.load()?;
    let test = dataset::load_tabular(&args.test, args.data.format.into(), args.data.header)?;
    let params = args.hyper.resolve()?;
    let steps = eval::ramp_schedule(args.parts);
    let report = eval::run_schedule(
        &train,
        &test,
        params,
        args.parts,
        &[0],
        &steps,
        params.seed,
        args.retrain_ref,
    )?;
    println!(
        "initial error (1 of {} parts): {:.4}",
        args.parts, report.initial_error
    );
    for step in &report.steps {
        match step.retrain_error {
            Some(r) => println!(
                "step {:>3} {:?} part {:>2}: online {:.4} retrain {:.4} ({} rows)",
                step.step, step.op, step.part, step.online_error, r, step.live_rows
            ),
            None => println!(
                "step {:>3} {:?} part {:>2}: online {:.4} ({} rows)",
                step.step, step.op, step.part, step.online_error, step.live_rows
            ),
        }
    }
    emit_json(&report, args.out.as_deref())
}

fn cmd_robustness(args: RobustnessArgs) -> Result<(), Error> {
    let model = store::load(&args.model)?;
    let report = robustness_diagnostics(&model, args.lambda)?;
    let n = report.len();
    let distance_ok = report.iter().filter(|r| r.distance_robust == Some(true)).count();
    let ratio_ok = report.iter().filter(|r| r.gain_ratio_robust == Some(true)).count();
    println!(
        "{n} internal nodes: {distance_ok} distance-robust, {ratio_ok} gain-ratio-robust at lambda={}",
        args.lambda
    );
    emit_json(&report, args.out.as_deref())
}

fn cmd_speedup(args: SpeedupArgs) -> Result<(), Error> {
    let data = args.data.load()?;
    let params = args.hyper.resolve()?;
    let rows = eval::benchmark_speedup(&data, params, &args.sizes, params.seed)?;
    println!(
        "{:>10} {:>12} {:>12} {:>14} {:>12} {:>12}",
        "batch", "add µs", "delete µs", "retrain µs", "add speedup", "del speedup"
    );
    for row in &rows {
        println!(
            "{:>10} {:>12} {:>12} {:>14} {:>11.1}x {:>11.1}x",
            row.batch_rows,
            row.add_micros,
            row.delete_micros,
            row.retrain_full_micros,
            row.add_speedup,
            row.delete_speedup
        );
    }
    emit_json(&rows, args.out.as_deref())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let quantize = (args.quantize > 0).then_some(args.quantize);
    let raw = synth::gaussian_blobs(args.rows, args.features, args.classes, quantize, args.seed);
    let mut out = String::new();
    for i in 0..raw.n_rows() {
        out.push_str(&raw.labels[i].to_string());
        for v in raw.row(i) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(&args.out, out)?;
    println!(
        "wrote {} rows x {} features ({} classes) to {}",
        args.rows,
        args.features,
        args.classes,
        args.out.display()
    );
    Ok(())
}
