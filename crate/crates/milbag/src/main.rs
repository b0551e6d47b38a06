use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use milbag::data::archive::{read_archive, summarize, write_archive, ArchiveError};
use milbag::data::synthetic::{generate_synthetic, SyntheticSpec};
use milbag::data::DataError;
use milbag::metrics::evaluate;
use milbag::model::{read_checkpoint, write_checkpoint, ModelError, Phi, PoolingStrategy};
use milbag::train::{
    score_dataset, train_experiment, DataSource, ExperimentConfig, TrainError,
};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "milbag", version, about = "Multiple-instance learning with attention pooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic weakly-labelled bag archive.
    Generate(GenerateArgs),
    /// Train a model on a bag archive and write the best checkpoint.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a bag archive.
    Eval(EvalArgs),
    /// Print the header and label statistics of a bag archive.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output archive path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long = "bags-per-class", default_value_t = 600)]
    bags_per_class: usize,
    #[arg(long = "feature-dim", default_value_t = 16)]
    feature_dim: usize,
    /// Instances per bag.
    #[arg(long, default_value_t = 10)]
    instances: usize,
    #[arg(long = "positives-min", default_value_t = 1)]
    positives_min: usize,
    #[arg(long = "positives-max", default_value_t = 2)]
    positives_max: usize,
    /// Distance of cluster centers from the origin.
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    /// Standard deviation of background and cluster noise.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Chance a positive bag carries a second class.
    #[arg(long = "extra-label-prob", default_value_t = 0.0)]
    extra_label_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training archive.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long, default_value = "model.miln")]
    out: PathBuf,
    /// Run log output path (defaults to the checkpoint path with `.log`).
    #[arg(long)]
    log: Option<PathBuf>,
    /// TOML config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<PoolingStrategy>,
    #[arg(long, value_parser = parse_phi)]
    phi: Option<Phi>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Class-balanced batches: on or off.
    #[arg(long, value_parser = parse_on_off)]
    balanced: Option<bool>,
    #[arg(long = "eval-every")]
    eval_every: Option<usize>,
    #[arg(long = "eval-frac")]
    eval_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluation archive.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "attention", value_parser = parse_strategy)]
    strategy: PoolingStrategy,
    /// Optional path for the machine-readable key=value report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected \"on\" or \"off\", got {other:?}")),
    }
}

fn parse_strategy(s: &str) -> Result<PoolingStrategy, String> {
    s.parse()
}

fn parse_phi(s: &str) -> Result<Phi, String> {
    s.parse()
}

/// Optional per-field overrides loadable from a TOML file. Flag values win
/// over file values, file values win over defaults.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    strategy: Option<PoolingStrategy>,
    phi: Option<Phi>,
    hidden: Option<Vec<usize>>,
    dropout: Option<f64>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    steps: Option<usize>,
    balanced: Option<bool>,
    eval_every: Option<usize>,
    eval_fraction: Option<f64>,
    seed: Option<u64>,
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: EXIT_USAGE }
    }

    fn data(message: impl Into<String>) -> Self {
        CliError { message: message.into(), code: EXIT_DATA }
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        let code = match &err {
            TrainError::Config(_) => EXIT_USAGE,
            TrainError::NonFiniteLoss { .. } => EXIT_NUMERIC,
            TrainError::Model(ModelError::Config(_)) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError { message: err.to_string(), code }
    }
}

impl From<ArchiveError> for CliError {
    fn from(err: ArchiveError) -> Self {
        CliError::data(err.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(err: DataError) -> Self {
        let code = match &err {
            DataError::BadSpec(_) | DataError::BadFractions(..) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError { message: err.to_string(), code }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(*args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn print_summary(summary: &milbag::data::archive::ArchiveSummary) {
    println!("version      {}", summary.version);
    println!("bags         {}", summary.num_bags);
    println!("classes      {}", summary.num_classes);
    println!("feature dim  {}", summary.feature_dim);
    if summary.num_bags > 0 {
        println!("instances    {}..{} per bag", summary.min_instances, summary.max_instances);
    }
    println!("positives per class:");
    for (class, count) in summary.class_counts.iter().enumerate() {
        println!("  class {class:>4}: {count}");
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        num_classes: args.classes,
        feature_dim: args.feature_dim,
        instances_per_bag: args.instances,
        bags_per_class: vec![args.bags_per_class; args.classes],
        positives_min: args.positives_min,
        positives_max: args.positives_max,
        separation: args.separation,
        noise_std: args.noise,
        extra_label_prob: args.extra_label_prob,
        seed: args.seed,
    };
    let dataset = generate_synthetic(&spec)?;
    write_archive(&dataset, &args.out)?;
    println!("wrote {} bags to {}", dataset.len(), args.out.display());
    print_summary(&summarize(&dataset));
    Ok(())
}

fn load_config_file(path: &PathBuf) -> Result<ConfigFile, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => load_config_file(path)?,
        None => ConfigFile::default(),
    };
    let mut config = ExperimentConfig::new(DataSource::Archive(args.data.clone()));
    config.strategy = args.strategy.or(file.strategy).unwrap_or(config.strategy);
    config.phi = args.phi.or(file.phi).unwrap_or(config.phi);
    config.hidden = args.hidden.or(file.hidden).unwrap_or(config.hidden);
    config.dropout = args.dropout.or(file.dropout).unwrap_or(config.dropout);
    config.lr = args.lr.or(file.lr).unwrap_or(config.lr);
    config.batch_size = args.batch_size.or(file.batch_size).unwrap_or(config.batch_size);
    config.steps = args.steps.or(file.steps).unwrap_or(config.steps);
    config.balanced = args.balanced.or(file.balanced).unwrap_or(config.balanced);
    config.eval_every = args.eval_every.or(file.eval_every).unwrap_or(config.eval_every);
    config.eval_fraction = args.eval_fraction.or(file.eval_fraction).unwrap_or(config.eval_fraction);
    config.seed = args.seed.or(file.seed).unwrap_or(config.seed);

    let outcome = train_experiment(&config, |record| {
        println!(
            "step {:>7}  loss {:>9.5}  mAP {:>7.4}  AUC {:>7.4}  d' {:>7.4}  [{:.1}s]",
            record.step,
            record.loss,
            record.map,
            record.auc,
            record.d_prime,
            record.wall.as_secs_f64()
        );
    })?;
    for class in &outcome.singleton_classes {
        eprintln!("warning: class {class} has a single bag; kept in the train split");
    }

    write_checkpoint(&outcome.network, &args.out)
        .map_err(|e| CliError::data(e.to_string()))?;
    let log_path = args.log.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    fs::write(&log_path, outcome.log.to_kv_string())
        .map_err(|e| CliError::data(format!("cannot write log {}: {e}", log_path.display())))?;
    println!(
        "best mAP {:.4} at step {}; checkpoint {}, log {}",
        outcome.best_map,
        outcome.best_step,
        args.out.display(),
        log_path.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let net = read_checkpoint(&args.checkpoint).map_err(|e| CliError::data(e.to_string()))?;
    let dataset = read_archive(&args.data)?;
    if dataset.feature_dim() != net.feature_dim() || dataset.num_classes() != net.num_classes() {
        return Err(CliError::data(format!(
            "checkpoint expects {} features x {} classes, archive has {} x {}",
            net.feature_dim(),
            net.num_classes(),
            dataset.feature_dim(),
            dataset.num_classes()
        )));
    }
    let table = score_dataset(&net, args.strategy, &dataset)?;
    let report = evaluate(&table).map_err(|e| CliError::data(e.to_string()))?;
    print!("{}", report.to_table_string());
    if let Some(path) = &args.report {
        fs::write(path, report.to_kv_string(dataset.len()))
            .map_err(|e| CliError::data(format!("cannot write report {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), CliError> {
    let dataset = read_archive(&args.path)?;
    println!("{}", args.path.display());
    print_summary(&summarize(&dataset));
    Ok(())
}
