use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;

use osb_clickme_server::{load_pool, router, AppState};
use osb_core::clickme::{
    AnnotationStore, ClickMeConfig, GameService, PixelEmbedder, PrototypeMaskedClassifier, ReliabilityParams,
    SystemClock,
};

/// Serve the annotation game over HTTP.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Directory of `<category>/<image>.pgm` drawings.
    #[arg(long)]
    pool: PathBuf,
    /// Annotation store directory (created if missing).
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// JSON file with a ClickMeConfig; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "OSB_SEED")]
    seed: Option<u64>,
    /// Side of the pixel grid used by the built-in template classifier.
    #[arg(long, default_value_t = 32)]
    classifier_grid: usize,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::from_default_env()).init();
    let args = Args::parse();
    let mut config: ClickMeConfig = match &args.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => ClickMeConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let pool = load_pool(&args.pool, config.image_size).context("loading image pool")?;
    let mut classes: Vec<(String, Vec<osb_core::Image>)> = Vec::new();
    for p in &pool {
        match classes.iter_mut().find(|c| c.0 == p.category) {
            Some(c) => c.1.push((*p.image).clone()),
            None => classes.push((p.category.clone(), vec![(*p.image).clone()])),
        }
    }
    let classifier = PrototypeMaskedClassifier::new(PixelEmbedder { size: args.classifier_grid }, &classes, 1.0)?;
    let reliability = ReliabilityParams {
        blur_size: config.blur_size,
        blur_sigma: config.blur_sigma,
        seed: config.seed,
        ..Default::default()
    };
    let game = GameService::new(
        config,
        pool,
        Arc::new(classifier),
        AnnotationStore::open(&args.store)?,
        Arc::new(SystemClock),
    )?;
    let app = router(Arc::new(AppState { game, reliability }));
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    tracing::info!(addr = %args.bind, "listening");
    axum::serve(listener, app).await?;
    Ok(())
}
