//! `inflab` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "inflab", version, about = "Character-level inflection with self-supervised auxiliary tasks")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Flat key=value file supplying settings for the chosen command.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Subsample supervised data per part of speech and draw an unlabeled word list.
    SampleData(SampleDataArgs),
    /// Corpus statistics as TSV.
    Stats(StatsArgs),
    /// Project canonical segmentations onto surface forms.
    SegmentAlign(SegmentAlignArgs),
    /// Preview auxiliary instances for a noise configuration.
    Noise(NoiseArgs),
    /// Train a model, optionally with an auxiliary task.
    Train(TrainArgs),
    /// Exact-match accuracy of a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Trigram copy analysis on examples where two models disagree.
    AnalyzeCopy(AnalyzeCopyArgs),
    /// Collect run reports into a markdown results table.
    Aggregate(AggregateArgs),
    /// Generate the synthetic agglutinative language.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Seed {
    /// Seed for every random choice the command makes.
    #[arg(long, env = "INFLAB_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SampleDataArgs {
    /// Full supervised TSV to subsample.
    #[arg(long)]
    pub sup: Option<PathBuf>,
    /// Supervised examples kept per part of speech.
    #[arg(long, default_value_t = 200)]
    pub per_pos: usize,
    /// Unlabeled word pool.
    #[arg(long)]
    pub lex: Option<PathBuf>,
    /// Read the pool as segmented `word<TAB>seg` rows with this separator.
    #[arg(long)]
    pub lex_sep: Option<char>,
    #[arg(long, default_value_t = 5000)]
    pub lex_size: usize,
    #[arg(long)]
    pub with_replacement: bool,
    /// Comma-separated POS filter, e.g. `N,V,ADJ`.
    #[arg(long)]
    pub pos: Option<String>,
    /// Drop pool words shorter than this many characters.
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    /// Drop pool tokens containing `@` or `www`.
    #[arg(long)]
    pub web_filter: bool,
    /// Fail instead of returning a smaller list when the pool is too small.
    #[arg(long)]
    pub strict_size: bool,
    #[command(flatten)]
    pub seed: Seed,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Files or directories. `.tsv` files are supervised data, anything else
    /// a word list. Directory files are grouped by the name before the first dot.
    #[arg(id = "input_pos", value_name = "PATH")]
    pub input_pos: Vec<PathBuf>,
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// Output TSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SegmentAlignArgs {
    /// Rows of `word<TAB>canonical segmentation`.
    #[arg(long)]
    pub canonical: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = '-')]
    pub sep: char,
}

#[derive(Args, Debug)]
pub struct NoiseArgs {
    /// Word list (or segmented rows with `--seg-sep`).
    #[arg(id = "input_pos", value_name = "IN")]
    pub input_pos: Option<PathBuf>,
    /// `source<TAB>target` output.
    #[arg(id = "output_pos", value_name = "OUT")]
    pub output_pos: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// `ae` or `objective-strategy-corruption-granularity`, e.g. `t5-suffix-delete-char`.
    #[arg(long, default_value = "cmlm-iid-mask-char")]
    pub spec: String,
    #[arg(long, default_value_t = 0.25)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.95)]
    pub tail_mass: f64,
    #[arg(long)]
    pub seg_sep: Option<char>,
    #[arg(long, default_value_t = 50)]
    pub sentinels: usize,
    #[command(flatten)]
    pub seed: Seed,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Supervised training TSV.
    #[arg(long)]
    pub sup: PathBuf,
    /// Development TSV used for checkpoint selection.
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Unlabeled word list for the auxiliary task.
    #[arg(long)]
    pub lex: Option<PathBuf>,
    /// Read the word list as segmented rows with this separator.
    #[arg(long)]
    pub lex_sep: Option<char>,
    /// Auxiliary objective; omitted means supervised training only.
    #[arg(long, value_parser = ["ae", "cmlm", "t5"])]
    pub objective: Option<String>,
    #[arg(long, default_value = "iid", value_parser = ["iid", "suffix", "prefix"])]
    pub strategy: String,
    #[arg(long, default_value = "mask", value_parser = ["mask", "delete"])]
    pub corruption: String,
    #[arg(long, default_value = "char", value_parser = ["char", "segment"])]
    pub granularity: String,
    #[arg(long, default_value_t = 0.25)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.95)]
    pub tail_mass: f64,
    #[arg(long, default_value = "paper", value_parser = ["paper", "baseline", "tiny"])]
    pub preset: String,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Evaluations without improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub sentinels: usize,
    /// Language label recorded in the report; defaults to the name of the
    /// supervised file up to its first dot.
    #[arg(long)]
    pub language: Option<String>,
    /// Dataset label recorded in the report.
    #[arg(long, default_value = "default")]
    pub dataset: String,
    #[command(flatten)]
    pub seed: Seed,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Supervised TSV to decode.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for predictions and scores.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeCopyArgs {
    /// Predictions of model A; repeat once per language.
    #[arg(long, required = true)]
    pub preds_a: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub preds_b: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub dev: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub train: Vec<PathBuf>,
    /// Optional labels, one per language.
    #[arg(long)]
    pub language: Vec<String>,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AggregateArgs {
    /// Pattern matching `report.json` files of training runs.
    #[arg(long)]
    pub glob: String,
    /// Markdown table.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub train: usize,
    #[arg(long, default_value_t = 100)]
    pub dev: usize,
    #[arg(long, default_value_t = 100)]
    pub test: usize,
    #[arg(long, default_value_t = 1000)]
    pub unlabeled: usize,
    #[arg(long, default_value_t = 150)]
    pub stems: usize,
    /// Stems reserved for dev and test.
    #[arg(long, default_value_t = 0)]
    pub heldout_stems: usize,
    #[command(flatten)]
    pub seed: Seed,
    #[arg(long)]
    pub out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

fn parse(argv: Vec<String>) -> Result<(Cli, clap::ArgMatches, String), Failure> {
    let cmd = Cli::command();
    let first = match cmd.clone().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) if e.kind() == clap::error::ErrorKind::MissingRequiredArgument => {
            // Required settings may come from the config file.
            cmd.clone().ignore_errors(true).get_matches_from(&argv)
        }
        Err(e) => e.exit(),
    };
    let Some((name, sub_matches)) = first.subcommand() else {
        let _ = Cli::command().print_help();
        std::process::exit(2);
    };
    let name = name.to_string();
    let mut argv = argv;
    if let Some(path) = first.get_one::<PathBuf>("config") {
        let entries = config::read(path).map_err(|e| Failure::Usage(format!("{e:#}")))?;
        let sub = cmd.find_subcommand(&name).expect("known subcommand");
        let extra = config::to_args(sub, &entries, path, sub_matches).map_err(|e| Failure::Usage(format!("{e:#}")))?;
        let at = argv.iter().position(|a| *a == name).expect("subcommand in argv");
        argv.splice(at + 1..at + 1, extra);
    }
    let matches = cmd.try_get_matches_from(&argv).unwrap_or_else(|e| e.exit());
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    Ok((cli, matches, name))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let argv: Vec<String> = std::env::args().collect();
    let result = parse(argv).and_then(|(cli, matches, name)| {
        let sub_matches = matches.subcommand_matches(&name).expect("parsed subcommand");
        let resolved = config::render_resolved(Cli::command().find_subcommand(&name).unwrap(), sub_matches);
        commands::run(cli.command, &resolved).map_err(Failure::Runtime)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
