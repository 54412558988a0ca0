use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Width of the critic feature space.
pub const FEATURE_DIM: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Bessel-corrected standard deviation across coordinates.
    pub fn coordinate_std(&self) -> f64 {
        bessel_std(&self.values)
    }
}

pub(crate) fn bessel_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Scales `v` so the Bessel-corrected std across its coordinates is one.
/// The mean is not removed.
pub fn normalize_features(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    let sd = v.coordinate_std();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate(
            "embedding has zero spread across coordinates and cannot be normalized".into(),
        ));
    }
    Ok(EmbeddingVector {
        values: v.values.iter().map(|x| x / sd).collect(),
        normalized: true,
    })
}

/// A network mapping images to feature vectors.
pub trait Embedder: Sync {
    fn image_size(&self) -> usize;
    fn dim(&self) -> usize;
    /// Raw (unnormalized) embeddings, one per image.
    fn embed_batch(&self, images: &[&Image]) -> Result<Vec<EmbeddingVector>>;

    fn embed(&self, image: &Image) -> Result<EmbeddingVector> {
        Ok(self.embed_batch(&[image])?.remove(0))
    }

    fn embed_normalized(&self, images: &[&Image]) -> Result<Vec<EmbeddingVector>> {
        self.embed_batch(images)?.iter().map(normalize_features).collect()
    }
}

pub(crate) fn check_resolution(images: &[&Image], size: usize) -> Result<()> {
    match images.iter().find(|im| im.width() != size || im.height() != size) {
        Some(im) => Err(Error::Shape(format!(
            "embedder expects {size}x{size} images, got {}x{}",
            im.width(),
            im.height()
        ))),
        None => Ok(()),
    }
}

pub fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Symmetric matrix of Euclidean distances with an exactly zero diagonal.
pub fn pairwise_distances(embs: &[EmbeddingVector]) -> Vec<Vec<f64>> {
    let n = embs.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = squared_l2(&embs[i].values, &embs[j].values).sqrt();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Raw embedding rows as a little-endian `f32` matrix, as written to embedding dumps.
pub fn embeddings_to_le_bytes(embs: &[EmbeddingVector]) -> Vec<u8> {
    embs.iter()
        .flat_map(|e| e.values.iter().flat_map(|v| (*v as f32).to_le_bytes()))
        .collect()
}
