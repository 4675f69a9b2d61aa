//! `cog`: ingest corpora, run grounding experiments, check loss fixtures and
//! serve the verification API.

mod commands;
mod config;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cog_core::eval::EvalSplit;
use cog_core::{ConceptStrategy, Stages};

use crate::error::{CliError, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "cog", version, args_override_self = true, about = "Concept-guided entity grounding for multi-modal knowledge graphs")]
pub struct Cli {
    /// Worker threads for scoring; defaults to the number of cores.
    #[arg(long, global = true, env = "COG_THREADS")]
    pub threads: Option<usize>,

    /// Key-value config file (`key = value` per line). Explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate raw JSONL files and write a normalized corpus bundle plus summary.json.
    Ingest(IngestArgs),
    /// Write a synthetic corpus bundle with a matching scorer config.
    Generate(GenerateArgs),
    /// Filter entities by viewtimes.
    SelectLongtail(SelectArgs),
    /// Run the ranking and classification protocol and write report files.
    Experiment(ExperimentArgs),
    /// Rank candidate images for one entity.
    Rank(RankArgs),
    /// Ground a list of (entity, image) pairs.
    Classify(ClassifyArgs),
    /// Compare the contrastive losses against a fixture's expected values.
    LossCheck(LossCheckArgs),
    /// Start the HTTP grounding and verification service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub entities: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Linker output (JSONL of image_id, caption, linked_entities) to label pairs from.
    #[arg(long)]
    pub linking: Option<PathBuf>,
    /// Match linked names ignoring case.
    #[arg(long)]
    pub case_insensitive: bool,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of entities (one true image each).
    #[arg(long = "entity-count", default_value_t = 1000)]
    pub entity_count: usize,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub world: WorldArgs,
}

/// Overrides for the synthetic world and scorer.
#[derive(Debug, Args, Clone, Default)]
pub struct WorldArgs {
    #[arg(long)]
    pub world_seed: Option<u64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub name_weight: Option<f64>,
    #[arg(long)]
    pub concept_weight: Option<f64>,
    #[arg(long)]
    pub bias: Option<f64>,
    #[arg(long)]
    pub distractor_overlap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Viewtimes cutoff; defaults to 100000, or 1000000 with --common.
    #[arg(long)]
    pub threshold: Option<u64>,
    /// Select popular entities (viewtimes above the cutoff) instead.
    #[arg(long)]
    pub common: bool,
    /// Output JSONL file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct CorpusArgs {
    /// Corpus bundle directory (entities.jsonl, images.jsonl, optional pairs.jsonl).
    #[arg(long, env = "COG_CORPUS")]
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerMode {
    Synthetic,
    Remote,
}

#[derive(Debug, Args, Clone)]
pub struct ScorerArgs {
    #[arg(long, value_enum, default_value_t = ScorerMode::Synthetic, env = "COG_SCORER")]
    pub scorer: ScorerMode,
    #[arg(long, env = "COG_SCORER_URL")]
    pub scorer_url: Option<String>,
    #[arg(long, env = "COG_SCORER_TIMEOUT_MS", default_value_t = 30_000)]
    pub scorer_timeout_ms: u64,
    #[arg(long, env = "COG_SCORER_RETRIES", default_value_t = 2)]
    pub scorer_retries: u32,
    #[command(flatten)]
    pub world: WorldArgs,
}

#[derive(Debug, Args, Clone)]
pub struct GroundingArgs {
    #[arg(long, default_value = "all")]
    pub strategy: ConceptStrategy,
    #[arg(long, default_value = "1+2")]
    pub stages: Stages,
    /// Acceptance threshold for both stages unless --stage2-threshold is set.
    #[arg(long, default_value_t = 0.5, env = "COG_THRESHOLD")]
    pub threshold: f64,
    #[arg(long)]
    pub stage2_threshold: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub log_base: u32,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub grounding: GroundingArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = "test")]
    pub split: EvalSplit,
    /// Skip the 50-candidate ranking protocol.
    #[arg(long)]
    pub no_ranking: bool,
    /// Directory for report.json and verdicts.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a one-row CSV summary in percent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long, default_value = "all")]
    pub strategy: ConceptStrategy,
    #[arg(long)]
    pub entity: String,
    /// Comma-separated image ids; every corpus image when absent.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<String>,
    /// Keep only the best N.
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub grounding: GroundingArgs,
    /// Pairs JSONL; the bundle's pairs.jsonl when absent.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Verdicts JSONL output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    /// Batch fixture JSON.
    pub fixture: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[command(flatten)]
    pub grounding: GroundingArgs,
    #[arg(long, default_value = "127.0.0.1:8080", env = "COG_BIND")]
    pub bind: SocketAddr,
    /// Append-only event log for verdicts and decisions.
    #[arg(long, env = "COG_LOG")]
    pub log: PathBuf,
    /// Built verification UI to serve under /ui/.
    #[arg(long, env = "COG_UI_DIR")]
    pub ui_dir: Option<PathBuf>,
    /// Bearer token required on /v1 routes other than health.
    #[arg(long, env = cog_service::app::ENV_API_TOKEN, hide_env_values = true)]
    pub token: Option<String>,
}

fn run() -> Result<(), CliError> {
    let args = config::expand_config(std::env::args_os().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Err(CliError::Validation(String::new()))
            } else {
                Ok(())
            };
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(CliError::runtime)?;
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Generate(a) => commands::generate(a),
        Command::SelectLongtail(a) => commands::select_longtail(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::Rank(a) => commands::rank(a),
        Command::Classify(a) => commands::classify(a),
        Command::LossCheck(a) => commands::loss_check(a),
        Command::Serve(a) => commands::serve(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(EXIT_VALIDATION as u8))
        }
    }
}
