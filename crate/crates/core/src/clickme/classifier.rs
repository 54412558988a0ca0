use crate::critics::{Embedder, EmbeddingVector, PrototypeSet};
use crate::error::{Error, Result};
use crate::image::Image;

use super::round::Verdict;

/// Live classifier applied to partially revealed drawings.
pub trait MaskedClassifier: Send + Sync {
    fn labels(&self) -> Vec<String>;
    fn classify(&self, image: &Image) -> Result<Verdict>;
}

/// Area-downsampled pixels as features; needs no training.
#[derive(Clone, Copy, Debug)]
pub struct PixelEmbedder {
    pub size: usize,
}

impl Embedder for PixelEmbedder {
    fn image_size(&self) -> usize {
        self.size
    }

    fn dim(&self) -> usize {
        self.size * self.size
    }

    fn embed_batch(&self, images: &[&Image]) -> Result<Vec<EmbeddingVector>> {
        Ok(images
            .iter()
            .map(|im| {
                let im = if im.width() == self.size && im.height() == self.size {
                    (*im).clone()
                } else {
                    im.resize_area(self.size, self.size)
                };
                EmbeddingVector::raw(im.pixels().iter().map(|&v| v as f64).collect())
            })
            .collect())
    }
}

/// Nearest class-mean embedding; confidence is the softmax of negative squared
/// distances divided by `temperature`.
pub struct PrototypeMaskedClassifier<E> {
    embedder: E,
    prototypes: PrototypeSet<String>,
    temperature: f64,
}

impl<E: Embedder + Send> PrototypeMaskedClassifier<E> {
    pub fn new(embedder: E, classes: &[(String, Vec<Image>)], temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        let mut ids = Vec::new();
        let mut protos = Vec::new();
        for (label, images) in classes {
            if images.is_empty() {
                return Err(Error::Insufficient(format!("class {label} has no images")));
            }
            let resized: Vec<Image> = images.iter().map(|im| fit(im, embedder.image_size())).collect();
            let refs: Vec<&Image> = resized.iter().collect();
            let embs = embedder.embed_batch(&refs)?;
            let d = embs[0].dim();
            let mean: Vec<f64> = (0..d)
                .map(|j| embs.iter().map(|e| e.values[j]).sum::<f64>() / embs.len() as f64)
                .collect();
            ids.push(label.clone());
            protos.push(EmbeddingVector::raw(mean));
        }
        Ok(Self {
            prototypes: PrototypeSet::from_embeddings(ids, protos)?,
            embedder,
            temperature,
        })
    }
}

fn fit(image: &Image, size: usize) -> Image {
    if image.width() == size && image.height() == size {
        image.clone()
    } else {
        image.resize_area(size, size)
    }
}

impl<E: Embedder + Send> MaskedClassifier for PrototypeMaskedClassifier<E> {
    fn labels(&self) -> Vec<String> {
        self.prototypes.ids().to_vec()
    }

    fn classify(&self, image: &Image) -> Result<Verdict> {
        let e = self.embedder.embed(&fit(image, self.embedder.image_size()))?;
        let label = self.prototypes.classify(&e);
        let d = self.prototypes.distances(&e);
        let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let z: f64 = d.iter().map(|v| (-(v - dmin) / self.temperature).exp()).sum();
        let k = self.prototypes.ids().iter().position(|l| *l == label).expect("label from set");
        Ok(Verdict {
            label,
            confidence: (-(d[k] - dmin) / self.temperature).exp() / z,
        })
    }
}
