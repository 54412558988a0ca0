use serde::{Deserialize, Serialize};

use super::stats::spearman_rank_correlation;
use crate::critics::{Embedder, EmbeddingVector, PrototypeSet};
use crate::error::{Error, Result};
use crate::image::Image;

fn require_normalized(e: &EmbeddingVector) -> Result<()> {
    if e.normalized {
        Ok(())
    } else {
        Err(Error::InvalidArgument("embedding must be normalized first".into()))
    }
}

/// Square root of the per-coordinate Bessel variance across samples, averaged over coordinates.
pub fn diversity(embeddings: &[EmbeddingVector]) -> Result<f64> {
    if embeddings.len() < 2 {
        return Err(Error::Insufficient("diversity needs at least 2 samples".into()));
    }
    for e in embeddings {
        require_normalized(e)?;
    }
    let d = embeddings[0].dim();
    if embeddings.iter().any(|e| e.dim() != d) {
        return Err(Error::Shape("embeddings differ in dimension".into()));
    }
    let n = embeddings.len() as f64;
    let mut total = 0.0;
    for j in 0..d {
        // shifted by the first sample so identical inputs give exactly zero
        let shift = embeddings[0].values[j];
        let mean = embeddings.iter().map(|e| e.values[j] - shift).sum::<f64>() / n;
        total += embeddings.iter().map(|e| (e.values[j] - shift - mean).powi(2)).sum::<f64>() / (n - 1.0);
    }
    Ok((total / d as f64).sqrt())
}

/// Euclidean distance between normalized embeddings divided by `sqrt(dim)`.
pub fn originality(sample: &EmbeddingVector, exemplar: &EmbeddingVector) -> Result<f64> {
    require_normalized(sample)?;
    require_normalized(exemplar)?;
    if sample.dim() != exemplar.dim() || sample.dim() == 0 {
        return Err(Error::Shape("embeddings differ in dimension".into()));
    }
    let sq: f64 = sample
        .values
        .iter()
        .zip(&exemplar.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(sq.sqrt() / (sample.dim() as f64).sqrt())
}

/// `sqrt(2 − 2·cos(u, v))`.
pub fn cosine_distance(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::Shape("embeddings differ in dimension".into()));
    }
    let nu = u.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine distance of a zero vector".into()));
    }
    let c = (u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum::<f64>() / (nu * nv)).clamp(-1.0, 1.0);
    Ok((2.0 - 2.0 * c).max(0.0).sqrt())
}

/// Fraction of `samples` that the one-shot classifier assigns to `concept`
/// given one exemplar per test concept.
pub fn recognizability<C: Ord + Clone>(
    samples: &[Image],
    concept: &C,
    support: &[(C, Image)],
    classifier: &dyn Embedder,
) -> Result<f64> {
    let set = PrototypeSet::new(classifier, support)?;
    recognizability_with(samples, concept, &set, classifier)
}

/// [`recognizability`] with prototypes already embedded.
pub fn recognizability_with<C: Ord + Clone>(
    samples: &[Image],
    concept: &C,
    prototypes: &PrototypeSet<C>,
    classifier: &dyn Embedder,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Insufficient("no samples to classify".into()));
    }
    if !prototypes.ids().contains(concept) {
        return Err(Error::InvalidArgument("support does not contain the concept".into()));
    }
    let refs: Vec<&Image> = samples.iter().collect();
    let embs = classifier.embed_batch(&refs)?;
    let hits = embs.iter().filter(|e| prototypes.classify(e) == *concept).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Distance used to score a sample against its exemplar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    L2,
    Cosine,
}

impl DistanceKind {
    pub fn eval(self, a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
        match self {
            DistanceKind::L2 => originality(a, b),
            DistanceKind::Cosine => cosine_distance(a, b),
        }
    }
}

/// Per-sample originality scores under one (embedder, distance) setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginalitySetting {
    pub name: String,
    pub scores: Vec<f64>,
}

/// Scores `(sample, exemplar)` pairs with normalized embeddings of `embedder`.
pub fn originality_setting(
    name: &str,
    embedder: &dyn Embedder,
    distance: DistanceKind,
    pairs: &[(&Image, &Image)],
) -> Result<OriginalitySetting> {
    let samples: Vec<&Image> = pairs.iter().map(|p| p.0).collect();
    let exemplars: Vec<&Image> = pairs.iter().map(|p| p.1).collect();
    let es = embedder.embed_normalized(&samples)?;
    let ee = embedder.embed_normalized(&exemplars)?;
    let scores = es
        .iter()
        .zip(&ee)
        .map(|(a, b)| distance.eval(a, b))
        .collect::<Result<Vec<f64>>>()?;
    Ok(OriginalitySetting {
        name: name.into(),
        scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingCorrelation {
    pub setting_a: String,
    pub setting_b: String,
    pub rho: f64,
    pub p_value: f64,
}

/// Pairwise Spearman correlations between the sample rankings of every pair of settings.
pub fn validate_originality(settings: &[OriginalitySetting]) -> Result<Vec<SettingCorrelation>> {
    if settings.len() < 2 {
        return Err(Error::Insufficient("need at least two originality settings".into()));
    }
    let n = settings[0].scores.len();
    if settings.iter().any(|s| s.scores.len() != n) {
        return Err(Error::Shape("settings scored different numbers of samples".into()));
    }
    if n < 10 {
        return Err(Error::Insufficient(format!("{n} samples; at least 10 required")));
    }
    let mut out = Vec::new();
    for i in 0..settings.len() {
        for j in i + 1..settings.len() {
            let (rho, p) = spearman_rank_correlation(&settings[i].scores, &settings[j].scores)?;
            out.push(SettingCorrelation {
                setting_a: settings[i].name.clone(),
                setting_b: settings[j].name.clone(),
                rho,
                p_value: p,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critics::normalize_features;
    use proptest::prelude::*;

    fn norm(v: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector {
            values: v,
            normalized: true,
        }
    }

    #[test]
    fn diversity_cases() {
        let a = norm(vec![0.3, -1.0, 2.0]);
        assert_eq!(diversity(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
        let d = diversity(&[norm(vec![0.0]), norm(vec![2.0])]).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert!(diversity(&[a.clone()]).is_err());
        assert!(diversity(&[EmbeddingVector::raw(vec![1.0]), EmbeddingVector::raw(vec![2.0])]).is_err());
    }

    #[test]
    fn outlier_strictly_increases_diversity() {
        let set = vec![norm(vec![0.0, 1.0]), norm(vec![0.1, 0.9]), norm(vec![-0.1, 1.1])];
        let base = diversity(&set).unwrap();
        let mut more = set.clone();
        more.push(norm(vec![10.0, -10.0]));
        assert!(diversity(&more).unwrap() > base);
    }

    #[test]
    fn originality_hand_case() {
        let o = originality(&norm(vec![0.0, 0.0]), &norm(vec![3.0, 4.0])).unwrap();
        assert!((o - 5.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(originality(&EmbeddingVector::raw(vec![0.0]), &norm(vec![1.0])).is_err());
    }

    #[test]
    fn cosine_cases() {
        let u = EmbeddingVector::raw(vec![1.0, 0.0]);
        let v = EmbeddingVector::raw(vec![0.0, 3.0]);
        let w = EmbeddingVector::raw(vec![-2.0, 0.0]);
        assert_eq!(cosine_distance(&u, &u).unwrap(), 0.0);
        assert!((cosine_distance(&u, &v).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((cosine_distance(&u, &w).unwrap() - 2.0).abs() < 1e-12);
        assert!(cosine_distance(&u, &EmbeddingVector::raw(vec![0.0, 0.0])).is_err());
    }

    proptest! {
        #[test]
        fn originality_is_a_metric(a in prop::collection::vec(-5.0f64..5.0, 8), b in prop::collection::vec(-5.0f64..5.0, 8)) {
            let (ea, eb) = (EmbeddingVector::raw(a), EmbeddingVector::raw(b));
            prop_assume!(ea.coordinate_std() > 1e-3 && eb.coordinate_std() > 1e-3);
            let (na, nb) = (normalize_features(&ea).unwrap(), normalize_features(&eb).unwrap());
            prop_assert_eq!(originality(&na, &nb).unwrap(), originality(&nb, &na).unwrap());
            prop_assert_eq!(originality(&na, &na).unwrap(), 0.0);
            prop_assert!(na == nb || originality(&na, &nb).unwrap() > 0.0);
        }
    }

    #[test]
    fn setting_against_itself_is_one() {
        let s = OriginalitySetting {
            name: "a".into(),
            scores: (0..12).map(|i| (i as f64).sin()).collect(),
        };
        let r = validate_originality(&[s.clone(), s]).unwrap();
        assert_eq!(r[0].rho, 1.0);
    }
}
