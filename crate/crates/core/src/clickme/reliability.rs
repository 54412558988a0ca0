use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, Image};
use crate::metrics::{average_ranks, pearson};

#[derive(Clone, Debug)]
pub struct AnnotatedMap {
    pub image_id: String,
    pub participant_id: String,
    pub map: Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityParams {
    pub n_pairs: usize,
    pub blur_size: usize,
    pub blur_sigma: Option<f64>,
    pub seed: u64,
    /// Images whose mean correlation is further than this many standard
    /// deviations from the grand mean are flagged.
    pub outlier_std: f64,
}

impl Default for ReliabilityParams {
    fn default() -> Self {
        Self {
            n_pairs: 10_000,
            blur_size: 49,
            blur_sigma: None,
            seed: 0,
            outlier_std: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReliability {
    pub image_id: String,
    pub n_participants: usize,
    pub mean_rho: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub per_image: Vec<ImageReliability>,
    pub grand_mean: f64,
    pub grand_std: f64,
    pub filtered_mean: f64,
    /// Mean correlation between maps of two different images.
    pub baseline_mean: Option<f64>,
    pub n_pairs: usize,
    /// Constant maps (nothing to rank) left out of the analysis.
    pub excluded_maps: usize,
}

/// Seeded draws of ordered pairs of distinct indices below `n`. Image `k`
/// (in sorted image-id order) uses stream `k` of the analysis seed.
pub fn pair_draws(seed: u64, stream: u64, n: usize, n_pairs: usize) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n_pairs)
        .map(|_| {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            (a, b)
        })
        .collect()
}

/// Stream of the image pairs in the cross-image baseline; participants are
/// drawn from the stream just below it.
pub const BASELINE_STREAM: u64 = u64::MAX;

struct Ranked {
    ranks: Vec<f64>,
}

fn rank_map(map: &Image, params: &ReliabilityParams) -> Result<Option<Ranked>> {
    let b = if params.blur_size > 1 {
        gaussian_blur(map, params.blur_size, params.blur_sigma)?
    } else {
        map.clone()
    };
    let v: Vec<f64> = b.pixels().iter().map(|&x| x as f64).collect();
    if v.iter().all(|&x| x == v[0]) {
        return Ok(None);
    }
    Ok(Some(Ranked { ranks: average_ranks(&v) }))
}

fn rho(a: &Ranked, b: &Ranked) -> f64 {
    pearson(&a.ranks, &b.ranks).expect("non-constant ranks")
}

/// Split-pair reliability of human maps: for every image with at least two
/// participants, the mean Spearman correlation between the blurred maps of
/// `n_pairs` random participant pairs; outlying images flagged; plus a
/// cross-image baseline.
pub fn reliability_analysis(maps: &[AnnotatedMap], params: &ReliabilityParams) -> Result<ReliabilityReport> {
    if params.n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be positive".into()));
    }
    // one map per (image, participant): the first in participant order wins
    let mut by_image: BTreeMap<&str, BTreeMap<&str, &Image>> = BTreeMap::new();
    for m in maps {
        by_image
            .entry(&m.image_id)
            .or_default()
            .entry(&m.participant_id)
            .or_insert(&m.map);
    }
    let ranked: Vec<(&str, Vec<Ranked>)> = by_image
        .iter()
        .map(|(img, parts)| {
            let rs = parts
                .values()
                .map(|m| rank_map(m, params))
                .collect::<Result<Vec<_>>>()?;
            Ok((*img, rs.into_iter().flatten().collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    let excluded_maps = by_image.values().map(|p| p.len()).sum::<usize>()
        - ranked.iter().map(|(_, r)| r.len()).sum::<usize>();

    let per_image: Vec<ImageReliability> = ranked
        .par_iter()
        .enumerate()
        .filter(|(_, (_, rs))| rs.len() >= 2)
        .map(|(k, (img, rs))| {
            let mut memo: HashMap<(usize, usize), f64> = HashMap::new();
            let mut total = 0.0;
            for (a, b) in pair_draws(params.seed, k as u64, rs.len(), params.n_pairs) {
                let key = (a.min(b), a.max(b));
                total += *memo.entry(key).or_insert_with(|| rho(&rs[key.0], &rs[key.1]));
            }
            ImageReliability {
                image_id: img.to_string(),
                n_participants: rs.len(),
                mean_rho: total / params.n_pairs as f64,
                flagged: false,
            }
        })
        .collect();
    if per_image.is_empty() {
        return Err(Error::Insufficient("no image has maps from two participants".into()));
    }
    let mut per_image = per_image;
    let n = per_image.len() as f64;
    let grand_mean = per_image.iter().map(|r| r.mean_rho).sum::<f64>() / n;
    let grand_std = if per_image.len() > 1 {
        (per_image.iter().map(|r| (r.mean_rho - grand_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    for r in per_image.iter_mut() {
        r.flagged = grand_std > 0.0 && (r.mean_rho - grand_mean).abs() > params.outlier_std * grand_std;
    }
    let kept: Vec<f64> = per_image.iter().filter(|r| !r.flagged).map(|r| r.mean_rho).collect();
    let filtered_mean = kept.iter().sum::<f64>() / kept.len() as f64;

    let pools: Vec<&Vec<Ranked>> = ranked.iter().map(|(_, r)| r).filter(|r| !r.is_empty()).collect();
    let baseline_mean = (pools.len() >= 2).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(BASELINE_STREAM - 1);
        let mut memo: HashMap<(usize, usize, usize, usize), f64> = HashMap::new();
        let mut total = 0.0;
        for (ia, ib) in pair_draws(params.seed, BASELINE_STREAM, pools.len(), params.n_pairs) {
            let pa = rng.gen_range(0..pools[ia].len());
            let pb = rng.gen_range(0..pools[ib].len());
            let key = if (ia, pa) < (ib, pb) { (ia, pa, ib, pb) } else { (ib, pb, ia, pa) };
            total += *memo
                .entry(key)
                .or_insert_with(|| rho(&pools[key.0][key.1], &pools[key.2][key.3]));
        }
        total / params.n_pairs as f64
    });

    Ok(ReliabilityReport {
        per_image,
        grand_mean,
        grand_std,
        filtered_mean,
        baseline_mean,
        n_pairs: params.n_pairs,
        excluded_maps,
    })
}
