use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use osb_cli::commands::{self, Run};
use osb_cli::config::{ConfigError, ExperimentConfig};
use osb_cli::manifest::run_stage;

#[derive(Parser)]
#[command(name = "osb", version, about = "One-shot sketch generation benchmark")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON experiment configuration; missing fields take their defaults.
    #[arg(long, global = true, env = "OSB_CONFIG")]
    config: Option<PathBuf>,
    /// Run seed, added to every component seed.
    #[arg(long, global = true, env = "OSB_SEED")]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, env = "OSB_OUT")]
    out: Option<PathBuf>,
    /// Comma-separated guidance scales, replacing the configured list.
    #[arg(long, global = true, value_delimiter = ',', env = "OSB_GAMMA")]
    gamma: Option<Vec<f64>>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "OSB_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Prepare few-shot concepts.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train the evaluation critics.
    #[command(subcommand)]
    Critics(CriticsCmd),
    /// Train the diffusion model on the training concepts.
    Train,
    /// Draw guided samples for every test concept.
    Sample,
    /// Per-concept diversity, recognizability and originality.
    Evaluate,
    /// Binned recognizability against originality with a quadratic fit.
    Curve,
    /// Misalignment importance maps for test concepts.
    Attribute {
        #[arg(long)]
        concept: Option<String>,
        /// Samples averaged per map.
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Guidance scale of the sampled trajectories.
        #[arg(long, default_value_t = 1.0)]
        guidance: f64,
    },
    /// Spearman correlation between a model map and a human map.
    CompareMaps {
        /// Directory holding the model map.
        #[arg(long)]
        model: PathBuf,
        /// Directory holding the human map.
        #[arg(long)]
        human: PathBuf,
    },
    /// Annotation-game analyses.
    #[command(subcommand)]
    Clickme(ClickmeCmd),
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Generate the procedural star fixture.
    Synth,
    /// Cluster stroke drawings (newline-delimited JSON) into concepts.
    Build {
        #[arg(long, required = true)]
        ndjson: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CriticsCmd {
    /// Contrastive feature extractor and one-shot prototype classifier.
    Train,
}

#[derive(Subcommand)]
enum ClickmeCmd {
    /// Split-pair reliability and aggregated per-category maps.
    Analyze {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 49)]
        blur: usize,
    },
}

fn load_config(g: &Global) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::load(g.config.as_deref(), std::env::vars())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(gs) = &g.gamma {
        cfg.metrics.gammas = gs.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.global)?;
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(ConfigError("--jobs must be positive".into()).into());
        }
        osb_cli::set_threads(j)?;
    }
    let run = Run::new(cfg);
    let hash = run.cfg.hash();
    let seed = run.cfg.seed;
    let gammas = run.cfg.metrics.gammas.clone();
    let stage = |name: &str, body: &dyn Fn() -> anyhow::Result<Vec<PathBuf>>| run_stage(&run.dir, name, &hash, seed, body);
    match &cli.command {
        Command::Dataset(DatasetCmd::Synth) => stage("dataset", &|| commands::dataset_synth(&run)),
        Command::Dataset(DatasetCmd::Build { ndjson }) => stage("dataset", &|| commands::dataset_build(&run, ndjson)),
        Command::Critics(CriticsCmd::Train) => stage("critics", &|| commands::critics_train(&run)),
        Command::Train => stage("train", &|| commands::train_model(&run)),
        Command::Sample => stage("sample", &|| commands::sample(&run, &gammas)),
        Command::Evaluate => stage("evaluate", &|| commands::evaluate(&run, &gammas)),
        Command::Curve => stage("curve", &|| commands::curve(&run, &gammas)),
        Command::Attribute { concept, samples, guidance } => {
            if !(*guidance >= 0.0) || *samples == 0 {
                return Err(ConfigError("attribute needs --guidance >= 0 and --samples > 0".into()).into());
            }
            stage("attribute", &|| commands::attribute(&run, concept.as_deref(), *guidance, *samples))
        }
        Command::CompareMaps { model, human } => {
            let c = commands::compare(model, human)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
            Ok(())
        }
        Command::Clickme(ClickmeCmd::Analyze { store, blur }) => {
            stage("clickme", &|| commands::clickme_analyze(&run, store, *blur))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
