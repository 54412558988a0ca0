use serde::{Deserialize, Serialize};

use super::concepts::{ConceptProvenance, ConceptSet, Split};
use super::kmeans::kmeans;
use crate::critics::{squared_l2, Embedder};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub k_clusters: usize,
    pub min_cluster_size: usize,
    /// Largest allowed mean distance from members to their centroid.
    pub max_spread: f64,
    pub min_center_distance: f64,
    pub image_size: usize,
    /// Initialization stops adding centers closer than this; defaults to half
    /// of `min_center_distance`.
    #[serde(default)]
    pub collapse_distance: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            k_clusters: 6,
            min_cluster_size: 500,
            max_spread: 1800.0,
            min_center_distance: 700.0,
            image_size: 48,
            collapse_distance: None,
            seed: 0,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k_clusters > 0
            && self.min_cluster_size > 0
            && self.max_spread > 0.0
            && self.min_center_distance > 0.0
            && self.image_size > 0
            && self.collapse_distance.is_none_or(|d| d >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("pipeline parameters must be positive".into()))
        }
    }

    pub fn effective_collapse_distance(&self) -> f64 {
        self.collapse_distance.unwrap_or(self.min_center_distance / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary<I> {
    pub cluster_index: usize,
    /// Sorted ascending.
    pub member_ids: Vec<I>,
    pub centroid: Vec<f64>,
    pub spread: f64,
    pub exemplar_id: I,
}

impl<I> ClusterSummary<I> {
    pub fn size(&self) -> usize {
        self.member_ids.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    TooSmall,
    TooSpread,
    TooClose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringReport<I> {
    pub survivors: Vec<ClusterSummary<I>>,
    pub removed: Vec<(usize, FilterReason)>,
}

fn centroid_of(members: &[&[f64]]) -> Vec<f64> {
    let d = members[0].len();
    let mut c = vec![0.0; d];
    for m in members {
        for (a, v) in c.iter_mut().zip(m.iter()) {
            *a += v;
        }
    }
    c.iter_mut().for_each(|a| *a /= members.len() as f64);
    c
}

/// Member closest to the mean of `embeddings`; ties go to the lowest id.
pub fn select_exemplar<I: Ord + Clone>(embeddings: &[Vec<f64>], ids: &[I]) -> Result<I> {
    if embeddings.is_empty() || embeddings.len() != ids.len() {
        return Err(Error::InvalidArgument("empty cluster or id count mismatch".into()));
    }
    let refs: Vec<&[f64]> = embeddings.iter().map(|e| e.as_slice()).collect();
    let c = centroid_of(&refs);
    let mut best: Option<(f64, &I)> = None;
    for (e, id) in embeddings.iter().zip(ids) {
        let d = squared_l2(e, &c);
        best = match best {
            Some((bd, bid)) if bd < d || (bd == d && bid < id) => Some((bd, bid)),
            _ => Some((d, id)),
        };
    }
    Ok(best.expect("nonempty").1.clone())
}

/// Mean euclidean distance from members to the centroid.
pub fn cluster_spread(members: &[&[f64]], centroid: &[f64]) -> f64 {
    members.iter().map(|m| squared_l2(m, centroid).sqrt()).sum::<f64>() / members.len() as f64
}

/// k-means on raw embeddings followed by the size, spread and center-distance
/// filters. Input order does not matter: points are sorted by id first.
pub fn cluster_embeddings<I: Ord + Clone>(
    ids: &[I],
    embeddings: &[Vec<f64>],
    params: &PipelineParams,
) -> Result<ClusteringReport<I>> {
    params.validate()?;
    if ids.len() != embeddings.len() {
        return Err(Error::Shape("one embedding per id required".into()));
    }
    if ids.is_empty() {
        return Ok(ClusteringReport {
            survivors: vec![],
            removed: vec![],
        });
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    if order.windows(2).any(|w| ids[w[0]] == ids[w[1]]) {
        return Err(Error::InvalidArgument("duplicate sample ids".into()));
    }
    let points: Vec<Vec<f64>> = order.iter().map(|&i| embeddings[i].clone()).collect();
    let km = kmeans(&points, params.k_clusters, params.effective_collapse_distance(), params.seed)?;

    let mut clusters = Vec::new();
    for j in 0..km.centroids.len() {
        let idx: Vec<usize> = (0..points.len()).filter(|&i| km.assignment[i] == j).collect();
        let members: Vec<&[f64]> = idx.iter().map(|&i| points[i].as_slice()).collect();
        let member_ids: Vec<I> = idx.iter().map(|&i| ids[order[i]].clone()).collect();
        let centroid = centroid_of(&members);
        let spread = cluster_spread(&members, &centroid);
        let owned: Vec<Vec<f64>> = members.iter().map(|m| m.to_vec()).collect();
        let exemplar_id = select_exemplar(&owned, &member_ids)?;
        clusters.push(ClusterSummary {
            cluster_index: j,
            member_ids,
            centroid,
            spread,
            exemplar_id,
        });
    }
    Ok(filter_clusters(clusters, params))
}

/// Applies the filters in order size, spread, center distance. Among clusters
/// closer than `min_center_distance`, the one conflicting with the most
/// survivors goes first; ties remove the smaller cluster, then the higher index.
pub fn filter_clusters<I>(clusters: Vec<ClusterSummary<I>>, params: &PipelineParams) -> ClusteringReport<I> {
    let mut removed = Vec::new();
    let mut survivors = Vec::new();
    for c in clusters {
        if c.size() < params.min_cluster_size {
            removed.push((c.cluster_index, FilterReason::TooSmall));
        } else if c.spread > params.max_spread {
            removed.push((c.cluster_index, FilterReason::TooSpread));
        } else {
            survivors.push(c);
        }
    }
    loop {
        let conflicts: Vec<usize> = survivors
            .iter()
            .map(|a| {
                survivors
                    .iter()
                    .filter(|b| {
                        b.cluster_index != a.cluster_index
                            && squared_l2(&a.centroid, &b.centroid).sqrt() < params.min_center_distance
                    })
                    .count()
            })
            .collect();
        let worst = (0..survivors.len()).filter(|&i| conflicts[i] > 0).max_by(|&a, &b| {
            conflicts[a]
                .cmp(&conflicts[b])
                .then(survivors[b].size().cmp(&survivors[a].size()))
                .then(survivors[a].cluster_index.cmp(&survivors[b].cluster_index))
        });
        match worst {
            Some(i) => {
                let c = survivors.remove(i);
                removed.push((c.cluster_index, FilterReason::TooClose));
            }
            None => break,
        }
    }
    ClusteringReport { survivors, removed }
}

/// Embeds the category samples with `embedder` (raw features) and turns every
/// surviving cluster into a concept whose variations are the other members.
pub fn build_fewshot_concepts<I: Ord + Clone>(
    category: &str,
    samples: &[(I, Image)],
    embedder: &dyn Embedder,
    params: &PipelineParams,
) -> Result<Vec<ConceptSet>> {
    params.validate()?;
    let images: Vec<&Image> = samples.iter().map(|s| &s.1).collect();
    let mut embeddings = Vec::with_capacity(samples.len());
    for chunk in images.chunks(256) {
        embeddings.extend(embedder.embed_batch(chunk)?.into_iter().map(|e| e.values));
    }
    let ids: Vec<I> = samples.iter().map(|s| s.0.clone()).collect();
    let report = cluster_embeddings(&ids, &embeddings, params)?;
    let image_of = |id: &I| -> &Image {
        let k = ids.iter().position(|x| x == id).expect("member of input");
        &samples[k].1
    };
    let to_size = |img: &Image| {
        if img.width() == params.image_size && img.height() == params.image_size {
            img.clone()
        } else {
            img.resize_area(params.image_size, params.image_size).threshold(0.5)
        }
    };
    Ok(report
        .survivors
        .iter()
        .map(|c| ConceptSet {
            concept_id: format!("{category}-{}", c.cluster_index),
            exemplar: to_size(image_of(&c.exemplar_id)),
            variations: c
                .member_ids
                .iter()
                .filter(|id| **id != c.exemplar_id)
                .map(|id| to_size(image_of(id)))
                .collect(),
            split: Split::Train,
            provenance: ConceptProvenance {
                source_category: category.into(),
                cluster_index: c.cluster_index,
            },
        })
        .collect())
}

/// Independent re-check of the three filters and of exemplar optimality over
/// the surviving clusters, from the raw member embeddings.
pub fn audit_clusters<I: Ord + Clone>(
    survivors: &[ClusterSummary<I>],
    embedding_of: impl Fn(&I) -> Vec<f64>,
    params: &PipelineParams,
) -> Result<()> {
    let mut centroids = Vec::new();
    for c in survivors {
        if c.size() < params.min_cluster_size {
            return Err(Error::State(format!("cluster {} has {} members", c.cluster_index, c.size())));
        }
        let embs: Vec<Vec<f64>> = c.member_ids.iter().map(&embedding_of).collect();
        let n = embs.len() as f64;
        let d = embs[0].len();
        let centroid: Vec<f64> = (0..d).map(|j| embs.iter().map(|e| e[j]).sum::<f64>() / n).collect();
        let spread = embs
            .iter()
            .map(|e| e.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .sum::<f64>()
            / n;
        if spread > params.max_spread {
            return Err(Error::State(format!("cluster {} spread {spread}", c.cluster_index)));
        }
        let dist = |e: &Vec<f64>| e.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let ex = dist(&embedding_of(&c.exemplar_id));
        if embs.iter().any(|e| dist(e) < ex) {
            return Err(Error::State(format!("cluster {} exemplar is not the closest member", c.cluster_index)));
        }
        centroids.push((c.cluster_index, centroid));
    }
    for (i, (a, ca)) in centroids.iter().enumerate() {
        for (b, cb) in &centroids[i + 1..] {
            let d = ca.iter().zip(cb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if d < params.min_center_distance {
                return Err(Error::State(format!("clusters {a} and {b} are {d} apart")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(idx: usize, size: usize, centroid: Vec<f64>) -> ClusterSummary<usize> {
        ClusterSummary {
            cluster_index: idx,
            member_ids: (0..size).collect(),
            centroid,
            spread: 1.0,
            exemplar_id: 0,
        }
    }

    fn params() -> PipelineParams {
        PipelineParams {
            min_cluster_size: 1,
            ..PipelineParams::default()
        }
    }

    #[test]
    fn exemplar_selection() {
        assert_eq!(select_exemplar(&[vec![4.0]], &[7]).unwrap(), 7);
        // centroid at 0: distances 3, 1, 2 after balancing with a far counterweight
        let embs = vec![vec![3.0], vec![-1.0], vec![2.0], vec![-4.0]];
        assert_eq!(select_exemplar(&embs, &[10, 11, 12, 13]).unwrap(), 11);
        assert_eq!(select_exemplar(&[vec![1.0], vec![-1.0]], &[5, 2]).unwrap(), 2);
        assert!(select_exemplar::<usize>(&[], &[]).is_err());
    }

    #[test]
    fn filter_order_and_reasons() {
        let p = PipelineParams {
            min_cluster_size: 10,
            max_spread: 5.0,
            min_center_distance: 100.0,
            ..PipelineParams::default()
        };
        let mut spread_out = summary(1, 20, vec![1000.0]);
        spread_out.spread = 6.0;
        let r = filter_clusters(vec![summary(0, 5, vec![0.0]), spread_out, summary(2, 20, vec![0.0])], &p);
        assert_eq!(r.removed, vec![(0, FilterReason::TooSmall), (1, FilterReason::TooSpread)]);
        assert_eq!(r.survivors.len(), 1);
    }

    #[test]
    fn center_distance_removes_most_conflicted_first() {
        // B sits between A and C: it conflicts with both, A and C are far apart
        let r = filter_clusters(
            vec![summary(0, 50, vec![0.0]), summary(1, 900, vec![500.0]), summary(2, 50, vec![1000.0])],
            &params(),
        );
        assert_eq!(r.removed, vec![(1, FilterReason::TooClose)]);
        // a plain close pair drops the smaller cluster
        let r = filter_clusters(vec![summary(0, 60, vec![0.0]), summary(1, 50, vec![10.0])], &params());
        assert_eq!(r.removed, vec![(1, FilterReason::TooClose)]);
    }
}
