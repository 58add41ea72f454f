mod commands;
mod figures;
mod manifest;

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crowdlabel::layout::Layout;
use crowdlabel::PipelineConfig;

#[derive(Parser)]
#[command(name = "crowdlabel", version, about = "Crowd annotation pipeline for image classification benchmarks")]
struct Cli {
    /// Artifact root.
    #[arg(long, env = "ANNO_DATA_DIR", default_value = ".", global = true)]
    data_dir: PathBuf,

    /// JSON file with pipeline settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: ConfigArgs,

    #[command(subcommand)]
    command: Command,
}

/// One flag per pipeline setting.
#[derive(Args, Default)]
struct ConfigArgs {
    #[arg(long, global = true)]
    grid_size: Option<usize>,
    #[arg(long, global = true)]
    min_controls: Option<usize>,
    #[arg(long, global = true)]
    annotators: Option<usize>,
    #[arg(long, global = true)]
    worker_control_rate: Option<f64>,
    #[arg(long, global = true)]
    worker_bad_share: Option<f64>,
    #[arg(long, global = true)]
    task_control_rate: Option<f64>,
    #[arg(long, global = true)]
    sf_high: Option<f64>,
    #[arg(long, global = true)]
    wn_far: Option<u32>,
    #[arg(long, global = true)]
    min_cands: Option<usize>,
    #[arg(long, global = true)]
    trunc: Option<usize>,
    #[arg(long, global = true)]
    in_sf_floor: Option<f64>,
    #[arg(long, global = true)]
    seen_floor: Option<u32>,
    #[arg(long, global = true)]
    dominance: Option<f64>,
    #[arg(long, global = true)]
    classify_flag_share: Option<f64>,
    #[arg(long, global = true)]
    k_min: Option<usize>,
    #[arg(long, global = true)]
    sf_bins: Option<usize>,
    #[arg(long, global = true)]
    bootstrap_replicates: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

macro_rules! apply {
    ($cfg:ident, $args:ident, $($f:ident),*) => {
        $(if let Some(v) = $args.$f { $cfg.$f = v; })*
    };
}

impl ConfigArgs {
    fn resolve(&self, file: Option<&PathBuf>) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = match file {
            Some(p) => crowdlabel::io::read_json(p).with_context(|| format!("reading config {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        let a = self;
        apply!(cfg, a, grid_size, min_controls, annotators, worker_control_rate, worker_bad_share,
            task_control_rate, sf_high, wn_far, min_cands, trunc, in_sf_floor, seen_floor, dominance,
            classify_flag_share, k_min, sf_bins, bootstrap_replicates, seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate inputs and build the per-image label pools.
    Ingest,
    Grids {
        #[command(subcommand)]
        action: GridsCmd,
    },
    Qc {
        #[command(subcommand)]
        action: QcCmd,
    },
    Sf {
        #[command(subcommand)]
        action: SfCmd,
    },
    Candidates {
        #[command(subcommand)]
        action: CandidatesCmd,
    },
    Classify {
        #[command(subcommand)]
        action: ClassifyCmd,
    },
    Metrics {
        #[command(subcommand)]
        action: MetricsCmd,
    },
    Analyze {
        #[command(subcommand)]
        action: AnalyzeCmd,
    },
    Simulate {
        #[command(subcommand)]
        action: SimulateCmd,
    },
    Import {
        #[command(subcommand)]
        action: ImportCmd,
    },
    /// Serve tasks over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Seconds before an unanswered lease is released.
        #[arg(long, default_value_t = 900)]
        lease_timeout: u64,
    },
}

#[derive(Subcommand)]
enum GridsCmd {
    /// Build contains-task grids from the label pools.
    Build,
}

#[derive(Subcommand)]
enum QcCmd {
    /// Filter contains responses by control rates.
    Contains,
}

#[derive(Subcommand)]
enum SfCmd {
    /// Selection frequencies from the retained contains responses.
    Compute,
}

#[derive(Subcommand)]
enum CandidatesCmd {
    /// Candidate labels and classify eligibility per image.
    Select,
}

#[derive(Subcommand)]
enum ClassifyCmd {
    /// One classify task per eligible image.
    Build,
    /// Drop inconsistent responses and unreliable workers.
    Qc,
    /// Turn retained responses into per-image annotations.
    Aggregate,
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// Per-model metrics and figure tables.
    Report {
        /// Ambiguous pairs to evaluate for the pairwise table.
        #[arg(long, default_value_t = 10)]
        pairs: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Class,
    Superclass,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Full,
    Intra,
    Inter,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    Confusion {
        /// `human`, `sf-argmax` or `model:<id>`.
        #[arg(long, default_value = "human")]
        source: String,
        #[arg(long, value_enum, default_value = "superclass")]
        level: LevelArg,
        #[arg(long, value_enum, default_value = "full")]
        scope: ScopeArg,
    },
    Cooccurrence {
        #[arg(long, value_enum, default_value = "class")]
        level: LevelArg,
        #[arg(long, default_value_t = 15)]
        top: usize,
    },
    Ambiguous {
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    Sfacc {
        /// Defaults to the first model.
        #[arg(long)]
        model: Option<String>,
    },
    Mislabeled,
}

#[derive(Args, Clone)]
pub struct NoiseArgs {
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.0)]
    eta: f64,
    #[arg(long, default_value_t = 2.0)]
    kappa: f64,
    /// Size of the simulated worker pool.
    #[arg(long, default_value_t = 12)]
    workers: usize,
    /// The first this many workers answer at random.
    #[arg(long, default_value_t = 0)]
    spammers: usize,
    #[arg(long, default_value_t = 0.5)]
    spam_rate: f64,
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Generate a synthetic dataset and its ground truth.
    World {
        #[arg(long, default_value_t = 500)]
        images: usize,
        #[arg(long, default_value_t = 11)]
        superclasses: usize,
        #[arg(long, default_value_t = 2)]
        classes_per_superclass: usize,
        #[arg(long, default_value_t = 3)]
        max_objects: usize,
        #[arg(long, default_value_t = 3)]
        models: usize,
        #[arg(long, default_value_t = 0.3)]
        main_disagreement: f64,
        #[arg(long, default_value_t = 0.05)]
        pool_miss: f64,
    },
    /// Answer every grid with simulated annotators.
    Contains(NoiseArgs),
    /// Answer every classify task with simulated annotators.
    Classify(NoiseArgs),
}

#[derive(Subcommand)]
enum ImportCmd {
    /// Convert published multi-label annotations to annotations.jsonl.
    ReleasedAnnotations {
        #[arg(long)]
        annotations: PathBuf,
        /// Validation labels, one class id per line or `image class` pairs.
        #[arg(long)]
        labels: PathBuf,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let cfg = cli.overrides.resolve(cli.config.as_ref())?;
    let layout = Layout::new(&cli.data_dir);
    use commands as c;
    match cli.command {
        Command::Ingest => c::ingest(&layout, &cfg),
        Command::Grids { action: GridsCmd::Build } => c::grids_build(&layout, &cfg),
        Command::Qc { action: QcCmd::Contains } => c::qc_contains(&layout, &cfg),
        Command::Sf { action: SfCmd::Compute } => c::sf_compute(&layout, &cfg),
        Command::Candidates { action: CandidatesCmd::Select } => c::candidates_select(&layout, &cfg),
        Command::Classify { action: ClassifyCmd::Build } => c::classify_build(&layout, &cfg),
        Command::Classify { action: ClassifyCmd::Qc } => c::classify_qc(&layout, &cfg),
        Command::Classify { action: ClassifyCmd::Aggregate } => c::classify_aggregate(&layout, &cfg),
        Command::Metrics { action: MetricsCmd::Report { pairs } } => c::metrics_report(&layout, &cfg, pairs),
        Command::Analyze { action } => match action {
            AnalyzeCmd::Confusion { source, level, scope } => c::analyze_confusion(&layout, &cfg, &source, level, scope),
            AnalyzeCmd::Cooccurrence { level, top } => c::analyze_cooccurrence(&layout, &cfg, level, top),
            AnalyzeCmd::Ambiguous { top } => c::analyze_ambiguous(&layout, &cfg, top),
            AnalyzeCmd::Sfacc { model } => c::analyze_sfacc(&layout, &cfg, model.as_deref()),
            AnalyzeCmd::Mislabeled => c::analyze_mislabeled(&layout, &cfg),
        },
        Command::Simulate { action } => match action {
            SimulateCmd::World { images, superclasses, classes_per_superclass, max_objects, models, main_disagreement, pool_miss } => {
                let spec = crowdlabel::simulate::WorldSpec {
                    images,
                    superclasses,
                    classes_per_superclass,
                    max_objects,
                    models,
                    main_disagreement,
                    pool_miss,
                    seed: cfg.seed,
                };
                c::simulate_world(&layout, &cfg, &spec)
            }
            SimulateCmd::Contains(n) => c::simulate_contains(&layout, &cfg, &n),
            SimulateCmd::Classify(n) => c::simulate_classify(&layout, &cfg, &n),
        },
        Command::Import { action: ImportCmd::ReleasedAnnotations { annotations, labels } } => {
            c::import_released(&layout, &cfg, &annotations, &labels)
        }
        Command::Serve { addr, lease_timeout } => c::serve(&layout, &cfg, addr, lease_timeout),
    }
}
