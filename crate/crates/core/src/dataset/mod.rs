//! Stroke ingestion, rasterization, concept extraction by clustering, splits
//! and procedural fixtures.

mod concepts;
mod kmeans;
mod pipeline;
mod strokes;
mod synth;
mod variability;

pub use concepts::*;
pub use kmeans::*;
pub use pipeline::*;
pub use strokes::*;
pub use synth::*;
pub use variability::*;
