use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsplit::partitioner::{CopyMethod, Strategy};
use fedsplit::projection::Method;

mod commands;
mod config;
mod inputs;

/// Class-level partitioning of image datasets into federated client subsets.
#[derive(Debug, Parser)]
#[command(name = "fedsplit", version, propagate_version = true)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` file; `[subcommand]` sections apply to one subcommand.
    /// Command-line flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// More progress output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only report errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic class embeddings and a placeholder image dataset.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Build a partition plan and materialize it.
    #[command(args_override_self = true)]
    Partition(PartitionArgs),
    /// Compute heterogeneity metrics for a manifest.
    #[command(args_override_self = true)]
    Metrics(MetricsArgs),
    /// Project class embeddings to 2-D with PCA or t-SNE.
    #[command(args_override_self = true)]
    Project(ProjectArgs),
}

#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    /// CEMB1 file, per-class or per-image.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Listing for a per-image file (default: `<file>.tsv`, then `<stem>.tsv`).
    #[arg(long, value_name = "PATH")]
    pub listing: Option<PathBuf>,
    /// Images averaged per class when reducing per-image embeddings.
    #[arg(long, default_value_t = fedsplit::embedding_io::DEFAULT_MAX_IMAGES_PER_CLASS)]
    pub max_images_per_class: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub classes: usize,
    /// Latent clusters; classes are assigned round-robin.
    #[arg(long, default_value_t = 15)]
    pub clusters: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Per-component noise around each cluster anchor.
    #[arg(long, default_value_t = 0.1)]
    pub stddev: f64,
    /// Minimum distance between cluster anchors.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 20)]
    pub images_per_class: usize,
    /// Write only `embeddings.cemb`, no dataset tree.
    #[arg(long)]
    pub embeddings_only: bool,
    #[arg(long)]
    pub seed: u64,
    /// Receives `embeddings.cemb` and `dataset/`.
    #[arg(long, value_name = "DIR")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Root with one folder per class.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub num_subsets: Option<usize>,
    #[arg(long)]
    pub classes_per_subset: Option<usize>,
    /// Images sampled per class (default: all).
    #[arg(long)]
    pub images_per_class: Option<usize>,
    /// K for k-means (diverse: defaults to classes-per-subset).
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Neighbor clusters pooled with the base cluster (similar).
    #[arg(long)]
    pub top_k: Option<usize>,
    /// copy, move, symlink or manifest-only [default: copy].
    #[arg(long)]
    pub copy_method: Option<CopyMethod>,
    /// Base-cluster redraws per subset before giving up (similar).
    #[arg(long)]
    pub retry_limit: Option<usize>,
    /// L2-normalize class embeddings before clustering.
    #[arg(long)]
    pub normalize_embeddings: bool,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    /// Required for `--copy-method move`.
    #[arg(long)]
    pub allow_destructive: bool,
    /// Regenerate using the parameters recorded in this manifest.
    #[arg(long, value_name = "PATH")]
    pub from_manifest: Option<PathBuf>,
    /// Record the wall-clock time in the manifest (breaks byte-identical reruns).
    #[arg(long)]
    pub record_timestamp: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PairingArg {
    /// Subset i of one plan against subset i of the other.
    Index,
    /// Uniform pairs drawn with replacement.
    Sampled,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    /// Second manifest for cross-plan Jaccard.
    #[arg(long, value_name = "PATH")]
    pub compare: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PairingArg::Sampled)]
    pub pairing: PairingArg,
    /// Sampled pairs for cross-plan Jaccard.
    #[arg(long, default_value_t = fedsplit::metrics::DEFAULT_JACCARD_SAMPLES)]
    pub samples: usize,
    /// Sample this many within-plan pairs for Jaccard instead of all pairs.
    #[arg(long)]
    pub within_samples: Option<usize>,
    /// Also write `redundancy_pairs.csv` with every pairwise overlap.
    #[arg(long)]
    pub redundancy_pairs: bool,
    /// Seed for sampled pairings.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    #[arg(long, default_value = "pca")]
    pub method: Method,
    /// Output dimensions (2-D only).
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=2))]
    pub dims: u8,
    /// PCA dimensions fed to t-SNE [default: min(50, dim, n)].
    #[arg(long)]
    pub pca_dims: Option<usize>,
    /// t-SNE perplexity [default: 30, clamped below (n-1)/3].
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long, default_value_t = fedsplit::projection::DEFAULT_ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = fedsplit::projection::DEFAULT_LEARNING_RATE)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = fedsplit::projection::DEFAULT_EARLY_EXAGGERATION)]
    pub early_exaggeration: f64,
    /// Label points by the manifest's clustering.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// With --manifest, label points by membership in this subset instead.
    #[arg(long, requires = "manifest")]
    pub subset: Option<usize>,
    /// Required for t-SNE.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub output: PathBuf,
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    init_logging(cli.verbose, cli.quiet);
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Partition(a) => commands::partition(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Project(a) => commands::project(a),
    };
    match result {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
