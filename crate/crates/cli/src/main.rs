use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use finsts_core::augment::ShiftCategory;

mod commands;
mod config;
mod run;

#[derive(Parser, Debug)]
#[command(name = "finsts", version, about = "Semantic shift detection for paired financial narratives")]
pub struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Forbid network access; LLM and embedding requests must hit their caches.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Read the corpus manifest and segment every document into sentences.
    Ingest(IngestArgs),
    /// Pair sentences across consecutive periods of each company.
    Match(MatchArgs),
    /// Generate triplets with the LLM.
    Augment(AugmentArgs),
    /// Token overlap and TransRate of a triplet dataset.
    Assess(TripletsArg),
    /// Split triplets and train a projection head.
    Train(TrainArgs),
    /// AUC of the raw embeddings and the trained head.
    Eval(EvalArgs),
    /// Train without each shift category and score every category.
    Ablate(AblateArgs),
    /// Agreement between annotators in an annotation event log.
    Kappa(KappaArgs),
    /// Run the annotation HTTP service.
    ServeAnnotate(ServeArgs),
    /// Write final annotation labels as JSON Lines.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Corpus manifest; overrides the config.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[arg(long)]
    pub min_similarity: Option<f64>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// round_robin, fixed:C<n> or random
    #[arg(long, default_value = "round_robin")]
    pub policy: String,
    /// Augment a seeded sample of this many sentences.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TripletsArg {
    #[arg(long)]
    pub triplets: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Head checkpoint; defaults to the one written by `train`.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Labeled pairs (JSON Lines) to evaluate as well.
    #[arg(long)]
    pub annotated: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    #[arg(long)]
    pub annotated: Option<PathBuf>,
    /// Only run these rows (repeatable).
    #[arg(long = "exclude-category")]
    pub exclude_category: Vec<ShiftCategory>,
}

#[derive(Args, Debug)]
pub struct KappaArgs {
    #[arg(long)]
    pub event_log: Option<PathBuf>,
    /// Agreement over (score, category) instead of score alone.
    #[arg(long)]
    pub joint: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = finsts_annotate::DEFAULT_LISTEN)]
    pub listen: SocketAddr,
    /// Pair records to annotate; defaults to the output of `match`.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub event_log: Option<PathBuf>,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Allowed annotator id (repeatable). Without any, ids register on first use.
    #[arg(long = "annotator")]
    pub annotators: Vec<String>,
    #[arg(long)]
    pub joint: bool,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub event_log: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let name = commands::name(&cli.command);
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            let report = serde_json::json!({ "error": { "subcommand": name, "message": e.to_string(), "causes": &chain[1..] } });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
