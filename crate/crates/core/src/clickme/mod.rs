//! Annotation game backend: rounds, reveal masks, live masked classification,
//! persistence, human map aggregation and reliability analysis.

mod aggregate;
mod classifier;
mod config;
mod game;
mod reliability;
mod round;
mod store;

pub use aggregate::{aggregate_category_map, aggregate_maps};
pub use classifier::{MaskedClassifier, PixelEmbedder, PrototypeMaskedClassifier};
pub use config::ClickMeConfig;
pub use game::{GameService, PoolImage, SessionInfo, StrokeBatch, StrokeOutcome};
pub use reliability::{
    pair_draws, reliability_analysis, AnnotatedMap, ImageReliability, ReliabilityParams, ReliabilityReport,
    BASELINE_STREAM,
};
pub use round::{BrushStroke, Clock, ManualClock, Round, RoundStatus, SystemClock, Verdict};
pub use store::{AnnotationStore, MapRecord, INDEX_FILE};
