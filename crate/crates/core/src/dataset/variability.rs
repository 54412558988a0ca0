use serde::{Deserialize, Serialize};

use crate::critics::Embedder;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::diversity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariabilityReport {
    /// `(class, normalized diversity)` in input order.
    pub per_class: Vec<(String, f64)>,
    pub mean: f64,
    pub max: f64,
    /// Classes with fewer than 2 samples.
    pub skipped: Vec<String>,
}

/// Normalized diversity of every class with at least 2 samples.
pub fn intra_class_variability_report(classes: &[(String, Vec<Image>)], embedder: &dyn Embedder) -> Result<VariabilityReport> {
    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for (name, images) in classes {
        if images.len() < 2 {
            tracing::warn!(class = %name, samples = images.len(), "skipping class with fewer than 2 samples");
            skipped.push(name.clone());
            continue;
        }
        let refs: Vec<&Image> = images.iter().collect();
        per_class.push((name.clone(), diversity(&embedder.embed_normalized(&refs)?)?));
    }
    if per_class.is_empty() {
        return Err(Error::Insufficient("no class has 2 or more samples".into()));
    }
    let mean = per_class.iter().map(|c| c.1).sum::<f64>() / per_class.len() as f64;
    let max = per_class.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(VariabilityReport {
        per_class,
        mean,
        max,
        skipped,
    })
}
