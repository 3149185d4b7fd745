//! Command-line surface. Every failure ends the process with one stderr
//! line `<category>: <reason>` and exit code 2 (usage or configuration) or
//! 1 (runtime).

mod bench;
mod config;
mod model_file;

use std::ffi::OsString;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::dataio::{parse_libsvm, scan_labels, synth_gaussian_mixture, write_libsvm, Dataset, LabelSpace, SynthSpec};
use crate::metastack::{attention_report, train_supercone};
use crate::metrics::MetricsReport;

pub use bench::{bench_cost, CostReport, CostRow};
pub use config::{ExperimentConfig, OutputPaths, CONFIG_SCHEMA};
pub use model_file::{load_model, save_model, ModelFile, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub reason: String,
}

impl CliError {
    pub fn usage(reason: impl Into<String>) -> Self {
        Self {
            code: 2,
            reason: reason.into(),
        }
    }

    pub fn runtime(reason: impl Into<String>) -> Self {
        Self {
            code: 1,
            reason: reason.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.reason)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "supercone",
    version,
    about = "Stacked heterogeneous experts with a learned neural combiner"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write it with its meta-training loss trace.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's training file.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Model output path; overrides the config's `output.model`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss trace CSV; defaults to `<out>.trace.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Concept vocabulary size; overrides the config's `vocab_size`.
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Score a model on a LIBSVM file and write the metrics report.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Report path; stdout if omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Mean combination weight per candidate expert, as CSV.
    Attention {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-instance serving cost in microseconds, per component.
    BenchCost {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write `train.libsvm` and `test.libsvm` drawn from a Gaussian mixture.
    Synth {
        /// Synth spec JSON: num_classes, dim, n, class_separation, seed.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Test-set size; defaults to the spec's `n`.
        #[arg(long)]
        test_n: Option<usize>,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the JSON Schema of the experiment config.
    ConfigSchema,
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.reason.replace('\n', " "));
            e.code
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train {
            config,
            train,
            out,
            trace,
            seed,
            vocab_size,
        } => cmd_train(config.as_deref(), train, out, trace, seed, vocab_size),
        Command::Evaluate { model, test, report } => cmd_evaluate(&model, &test, report.as_deref()),
        Command::Attention { model, data, out } => cmd_attention(&model, &data, out.as_deref()),
        Command::BenchCost {
            model,
            data,
            repeat,
            out,
        } => cmd_bench_cost(&model, &data, repeat, out.as_deref()),
        Command::Synth {
            spec,
            out,
            test_n,
            seed,
        } => cmd_synth(&spec, &out, test_n, seed),
        Command::ConfigSchema => {
            print!("{CONFIG_SCHEMA}");
            Ok(())
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| CliError::runtime(format!("io: cannot write {}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    if !path.is_file() {
        return Err(CliError::usage(format!("dataset: not found: {}", path.display())));
    }
    std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("dataset: cannot read {}: {e}", path.display())))
}

/// Reads a LIBSVM file. Classes come from `labels` or are scanned from the
/// file itself.
pub fn read_dataset(path: &Path, labels: Option<&LabelSpace>, vocab_size: Option<usize>) -> CliResult<Dataset> {
    let text = read_text(path)?;
    let data_err = |e: crate::dataio::DataError| CliError::runtime(format!("dataset: {}: {e}", path.display()));
    let scanned;
    let space = match labels {
        Some(s) => s,
        None => {
            let classes = scan_labels(BufReader::new(text.as_bytes())).map_err(data_err)?;
            scanned = LabelSpace::from_classes(classes).map_err(data_err)?;
            &scanned
        }
    };
    parse_libsvm(BufReader::new(text.as_bytes()), space, vocab_size).map_err(data_err)
}

fn cmd_train(
    config: Option<&Path>,
    train: Option<PathBuf>,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
    seed: Option<u64>,
    vocab_size: Option<usize>,
) -> CliResult<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = train {
        cfg.train = Some(t);
        cfg.synth = None;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if vocab_size.is_some() {
        cfg.vocab_size = vocab_size;
    }
    let out = out
        .or_else(|| cfg.output.model.clone())
        .ok_or_else(|| CliError::usage("usage: no model output path (pass --out or set output.model)"))?;
    let trace = trace.or_else(|| cfg.output.trace.clone()).unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".trace.csv");
        PathBuf::from(p)
    });
    let stack = cfg.stack_config()?;

    let label_space = match &cfg.labels {
        Some(l) => {
            Some(LabelSpace::from_classes(l.clone()).map_err(|e| CliError::usage(format!("config: labels: {e}")))?)
        }
        None => None,
    };
    let data = match (&cfg.train, &cfg.synth) {
        (Some(path), _) => read_dataset(path, label_space.as_ref(), cfg.vocab_size)?,
        (None, Some(spec)) => {
            let d = synth_gaussian_mixture(spec).map_err(|e| CliError::usage(format!("config: synth: {e}")))?;
            match cfg.vocab_size {
                Some(v) => d
                    .with_vocab_size(v)
                    .map_err(|e| CliError::usage(format!("config: {e}")))?,
                None => d,
            }
        }
        (None, None) => {
            return Err(CliError::usage(
                "usage: no training data (pass --train or set train/synth)",
            ))
        }
    };
    if data.is_empty() {
        return Err(CliError::runtime("dataset: no instances"));
    }
    // Without an explicit size the vocabulary spans the train and test files.
    let data = match (&cfg.test, cfg.vocab_size) {
        (Some(test), None) => {
            let t = read_dataset(test, Some(data.label_space()), None)?;
            let v = data.vocab_size().max(t.vocab_size());
            data.with_vocab_size(v)
                .map_err(|e| CliError::runtime(format!("dataset: {e}")))?
        }
        _ => data,
    };

    let outcome = train_supercone(&stack, &data).map_err(|e| CliError::runtime(format!("train: {e}")))?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    save_model(&outcome.model, &stack, &out)?;
    write_output(Some(&trace), &outcome.trace.to_csv())?;
    println!(
        "trained {} instances, {} candidates; meta loss {:.6} -> {:.6}",
        data.len(),
        outcome.model.num_candidates(),
        outcome.trace.initial_loss,
        outcome.trace.final_loss()
    );
    Ok(())
}

/// Metrics of `model` on `data`.
pub fn evaluate_model(model: &crate::metastack::SuperConeModel, data: &Dataset) -> CliResult<MetricsReport> {
    let scores = model
        .predict_dataset(data)
        .map_err(|e| CliError::runtime(format!("evaluate: {e}")))?;
    MetricsReport::compute(&scores, &data.labels(), &model.label_space)
        .map_err(|e| CliError::runtime(format!("evaluate: {e}")))
}

fn cmd_evaluate(model: &Path, test: &Path, report: Option<&Path>) -> CliResult<()> {
    let model = load_model(model)?;
    let data = read_dataset(test, Some(&model.label_space), Some(model.vocab_size))?;
    let metrics = evaluate_model(&model, &data)?;
    let mut text = serde_json::to_string_pretty(&metrics).expect("report serializes");
    text.push('\n');
    write_output(report, &text)
}

fn cmd_attention(model: &Path, data: &Path, out: Option<&Path>) -> CliResult<()> {
    let model = load_model(model)?;
    let data = read_dataset(data, Some(&model.label_space), Some(model.vocab_size))?;
    let report = attention_report(&model, &data).map_err(|e| CliError::runtime(format!("attention: {e}")))?;
    write_output(out, &report.to_csv())
}

fn cmd_bench_cost(model: &Path, data: &Path, repeat: usize, out: Option<&Path>) -> CliResult<()> {
    if repeat == 0 {
        return Err(CliError::usage("usage: --repeat must be at least 1"));
    }
    let model = load_model(model)?;
    let data = read_dataset(data, Some(&model.label_space), Some(model.vocab_size))?;
    let report = bench_cost(&model, &data, repeat).map_err(|e| CliError::runtime(format!("bench: {e}")))?;
    write_output(out, &report.to_csv())
}

/// Seed of the test split written by `synth`.
pub fn synth_test_seed(seed: u64) -> u64 {
    crate::seed::derive(seed, &[0x7E57])
}

fn cmd_synth(spec: &Path, out: &Path, test_n: Option<usize>, seed: Option<u64>) -> CliResult<()> {
    let text =
        std::fs::read_to_string(spec).map_err(|_| CliError::usage(format!("config: not found: {}", spec.display())))?;
    let mut spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config: invalid synth spec: {e}")))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let train = synth_gaussian_mixture(&spec).map_err(|e| CliError::usage(format!("config: synth: {e}")))?;
    let test_spec = SynthSpec {
        n: test_n.unwrap_or(spec.n),
        seed: synth_test_seed(spec.seed),
        ..spec.clone()
    };
    let test = synth_gaussian_mixture(&test_spec).map_err(|e| CliError::usage(format!("config: synth: {e}")))?;
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime(format!("io: cannot create {}: {e}", out.display())))?;
    for (name, d) in [("train.libsvm", &train), ("test.libsvm", &test)] {
        let path = out.join(name);
        let file = std::fs::File::create(&path)
            .map_err(|e| CliError::runtime(format!("io: cannot write {}: {e}", path.display())))?;
        write_libsvm(d, std::io::BufWriter::new(file))
            .map_err(|e| CliError::runtime(format!("io: cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}
