//! Importance maps: model maps from the misalignment between conditional and
//! unconditional noise predictions along a sampling path, and their storage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_json, write_json};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::spearman_rank_correlation;
use crate::models::{sample_batch, Conditioning, ConditioningMode, ModelCheckpoint, SampleOptions, SampleTrajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    Max1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Model,
    Human,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub width: usize,
    pub height: usize,
    pub grid: Vec<f64>,
    pub normalization: Normalization,
    pub provenance: Provenance,
    pub category_id: String,
    /// Number of maps averaged into this one.
    pub n_samples: usize,
}

impl ImportanceMap {
    pub fn new(width: usize, height: usize, grid: Vec<f64>, provenance: Provenance, category_id: &str) -> Result<Self> {
        if grid.len() != width * height {
            return Err(Error::Shape(format!("{} values for a {width}x{height} map", grid.len())));
        }
        if grid.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("importance values must be finite and nonnegative".into()));
        }
        Ok(Self {
            width,
            height,
            grid,
            normalization: Normalization::Raw,
            provenance,
            category_id: category_id.into(),
            n_samples: 1,
        })
    }

    pub fn max_value(&self) -> f64 {
        self.grid.iter().cloned().fold(0.0, f64::max)
    }

    /// Divides by the maximum so the largest entry is 1; an all-zero map is left as is.
    pub fn max_normalized(&self) -> Self {
        let m = self.max_value();
        let mut out = self.clone();
        if m > 0.0 {
            out.grid.iter_mut().for_each(|v| *v /= m);
        }
        out.normalization = Normalization::Max1;
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.grid.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.width, self.height, self.grid.iter().map(|&v| v as f32).collect()).expect("dims checked")
    }

    /// Bilinear resampling to another resolution.
    pub fn resample(&self, width: usize, height: usize) -> Self {
        let img = self.to_image().resize_bilinear(width, height);
        let mut out = self.clone();
        out.width = width;
        out.height = height;
        out.grid = img.pixels().iter().map(|&v| (v as f64).max(0.0)).collect();
        out
    }

    /// Writes `<stem>.pgm` (16-bit, scaled by the map maximum) and `<stem>.json`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let scale = self.max_value();
        let img = Image::new(
            self.width,
            self.height,
            self.grid
                .iter()
                .map(|&v| if scale > 0.0 { (v / scale) as f32 } else { 0.0 })
                .collect(),
        )?;
        img.save_pgm(dir.join(format!("{stem}.pgm")), u16::MAX)?;
        write_json(
            dir.join(format!("{stem}.json")),
            &MapSidecar {
                category_id: self.category_id.clone(),
                provenance: self.provenance,
                normalization: self.normalization,
                n_samples: self.n_samples,
                width: self.width,
                height: self.height,
                scale,
            },
        )
    }

    /// Reads a map written by [`ImportanceMap::save`] (16-bit quantized).
    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let side: MapSidecar = read_json(dir.join(format!("{stem}.json")))?;
        let img = Image::load_pgm(dir.join(format!("{stem}.pgm")))?;
        if img.width() != side.width || img.height() != side.height {
            return Err(Error::Format("map image and sidecar disagree on size".into()));
        }
        Ok(Self {
            width: side.width,
            height: side.height,
            grid: img.pixels().iter().map(|&v| v as f64 * side.scale).collect(),
            normalization: side.normalization,
            provenance: side.provenance,
            category_id: side.category_id,
            n_samples: side.n_samples,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MapSidecar {
    category_id: String,
    provenance: Provenance,
    normalization: Normalization,
    n_samples: usize,
    width: usize,
    height: usize,
    /// Map value represented by full white in the image.
    scale: f64,
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// `φ = Σ_t |ε_c/‖ε_c‖ − ε_u/‖ε_u‖|` over every recorded step, with the norm taken over the whole image.
pub fn misalignment_map(traj: &SampleTrajectory, category_id: &str) -> Result<ImportanceMap> {
    if !traj.has_uncond() {
        return Err(Error::InvalidArgument(
            "trajectory lacks the unconditional branch; record it with guided sampling".into(),
        ));
    }
    let len = traj.size * traj.size;
    let mut acc = vec![0.0f64; len];
    for (k, (ec, eu)) in traj.eps_cond.iter().zip(&traj.eps_uncond).enumerate() {
        if ec.len() != len || eu.len() != len {
            return Err(Error::Shape(format!("step {k} has the wrong image size")));
        }
        let (nc, nu) = (l2(ec), l2(eu));
        if nc == 0.0 || nu == 0.0 {
            return Err(Error::Degenerate(format!("zero-norm score image at recorded step {k}")));
        }
        for ((a, &c), &u) in acc.iter_mut().zip(ec).zip(eu) {
            *a += (c as f64 / nc - u as f64 / nu).abs();
        }
    }
    ImportanceMap::new(traj.size, traj.size, acc, Provenance::Model, category_id)
}

/// Elementwise mean of maps of equal size.
pub fn average_maps(maps: &[ImportanceMap]) -> Result<ImportanceMap> {
    let first = maps.first().ok_or_else(|| Error::Insufficient("no maps to average".into()))?;
    if maps.iter().any(|m| m.width != first.width || m.height != first.height) {
        return Err(Error::Shape("maps differ in size".into()));
    }
    let n = maps.len() as f64;
    let mut grid = vec![0.0; first.grid.len()];
    for m in maps {
        for (g, v) in grid.iter_mut().zip(&m.grid) {
            *g += v;
        }
    }
    grid.iter_mut().for_each(|g| *g /= n);
    let mut out = first.clone();
    out.grid = grid;
    out.normalization = Normalization::Raw;
    out.n_samples = maps.iter().map(|m| m.n_samples).sum();
    Ok(out)
}

/// Mean misalignment map over guided samples (one per seed), max-normalized.
pub fn category_importance(
    ck: &ModelCheckpoint,
    exemplar: &Image,
    category_id: &str,
    gamma: f64,
    seeds: &[u64],
) -> Result<ImportanceMap> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    let context = match ck.config.conditioning_mode {
        ConditioningMode::Film => Some(ck.context(std::slice::from_ref(exemplar))?),
        _ => None,
    };
    let cond = match &context {
        Some(c) => Conditioning::Context(c),
        None => Conditioning::Exemplar(exemplar),
    };
    let items: Vec<(Conditioning<'_>, u64)> = seeds.iter().map(|&s| (cond, s)).collect();
    let trajs = sample_batch(ck, &items, &SampleOptions::guided(gamma))?;
    let maps = trajs
        .iter()
        .map(|t| misalignment_map(t, category_id))
        .collect::<Result<Vec<_>>>()?;
    Ok(average_maps(&maps)?.max_normalized())
}

/// Spearman correlation between a model map and a human map, after resampling
/// the human map to the model resolution.
pub fn compare_maps(model: &ImportanceMap, human: &ImportanceMap) -> Result<(f64, f64)> {
    let h = if human.width != model.width || human.height != model.height {
        human.resample(model.width, model.height)
    } else {
        human.clone()
    };
    spearman_rank_correlation(&model.grid, &h.grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(size: usize, cond: Vec<Vec<f32>>, uncond: Vec<Vec<f32>>) -> SampleTrajectory {
        SampleTrajectory {
            size,
            final_state: vec![0.0; size * size],
            states: (0..cond.len()).rev().map(|t| (t, vec![0.0; size * size])).collect(),
            eps_cond: cond,
            eps_uncond: uncond,
        }
    }

    #[test]
    fn single_step_hand_case() {
        let t = traj(2, vec![vec![3.0, 4.0, 0.0, 0.0]], vec![vec![0.0, 1.0, 0.0, 0.0]]);
        let m = misalignment_map(&t, "c").unwrap();
        assert!((m.grid[0] - 0.6).abs() < 1e-9 && (m.grid[1] - 0.2).abs() < 1e-9);
        assert_eq!(&m.grid[2..], &[0.0, 0.0]);
    }

    #[test]
    fn identical_branches_give_zero() {
        let e = vec![vec![1.0, -2.0, 0.5, 3.0], vec![0.1, 0.2, 0.3, -0.4]];
        let m = misalignment_map(&traj(2, e.clone(), e), "c").unwrap();
        assert!(m.grid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_branch_and_zero_norm_rejected() {
        assert!(misalignment_map(&traj(2, vec![vec![1.0; 4]], vec![]), "c").is_err());
        assert!(misalignment_map(&traj(2, vec![vec![0.0; 4]], vec![vec![1.0; 4]]), "c").is_err());
    }

    #[test]
    fn averaging_is_elementwise_mean() {
        let a = ImportanceMap::new(2, 1, vec![1.0, 0.0], Provenance::Model, "c").unwrap();
        let b = ImportanceMap::new(2, 1, vec![3.0, 2.0], Provenance::Model, "c").unwrap();
        assert_eq!(average_maps(&[a.clone(), b.clone()]).unwrap().grid, vec![2.0, 1.0]);
        assert_eq!(average_maps(&[a.clone(), a.clone()]).unwrap().grid, a.grid);
        assert_eq!(average_maps(&[a.clone()]).unwrap().max_normalized().grid, vec![1.0, 0.0]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ImportanceMap::new(3, 2, vec![0.0, 1.5, 3.0, 0.75, 2.25, 0.3], Provenance::Human, "cat").unwrap();
        m.save(dir.path(), "cat").unwrap();
        let back = ImportanceMap::load(dir.path(), "cat").unwrap();
        assert_eq!(back.provenance, Provenance::Human);
        for (a, b) in m.grid.iter().zip(&back.grid) {
            assert!((a - b).abs() <= 3.0 / 65535.0);
        }
    }

    proptest! {
        #[test]
        fn bounded_nonnegative_and_scale_invariant(
            steps in prop::collection::vec(
                (prop::collection::vec(-3.0f32..3.0, 9), prop::collection::vec(-3.0f32..3.0, 9), 0.1f32..10.0),
                1..8)
        ) {
            prop_assume!(steps.iter().all(|(c, u, _)| l2(c) > 1e-3 && l2(u) > 1e-3));
            let cond: Vec<Vec<f32>> = steps.iter().map(|s| s.0.clone()).collect();
            let uncond: Vec<Vec<f32>> = steps.iter().map(|s| s.1.clone()).collect();
            let m = misalignment_map(&traj(3, cond.clone(), uncond.clone()), "c").unwrap();
            prop_assert!(m.grid.iter().all(|v| *v >= 0.0 && v.is_finite()));
            prop_assert!(m.l2_norm() <= 2.0 * steps.len() as f64 + 1e-9);
            let scaled: Vec<Vec<f32>> = steps.iter().map(|s| s.0.iter().map(|v| v * s.2).collect()).collect();
            let ms = misalignment_map(&traj(3, scaled, uncond), "c").unwrap();
            for (a, b) in m.grid.iter().zip(&ms.grid) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
