use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::concepts::{ConceptProvenance, ConceptSet, Split};
use super::strokes::{rasterize, Polyline, StrokeDrawing};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureParams {
    pub n_concepts: usize,
    pub per_concept: usize,
    pub size: usize,
    /// 0 makes every variation identical to the exemplar; 1 is the default spread.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            n_concepts: 8,
            per_concept: 200,
            size: 48,
            jitter: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Decoration {
    InnerRing,
    Cross,
    Spokes,
    Dot,
}

#[derive(Clone, Debug)]
struct ShapeFamily {
    vertices: usize,
    radius: f64,
    rotation: f64,
    /// Alternate vertices pulled inwards by this factor (1 = regular polygon).
    star: f64,
    decorations: Vec<Decoration>,
}

impl ShapeFamily {
    fn draw(k: usize, rng: &mut ChaCha8Rng) -> Self {
        let vertices = 3 + k % 5;
        let all = [Decoration::InnerRing, Decoration::Cross, Decoration::Spokes, Decoration::Dot];
        let style = k / 5;
        let mut decorations: Vec<Decoration> = all
            .iter()
            .enumerate()
            .filter(|(i, _)| (style >> i) & 1 == 1)
            .map(|(_, d)| *d)
            .collect();
        if decorations.is_empty() && rng.gen_bool(0.5) {
            decorations.push(all[rng.gen_range(0..all.len())]);
        }
        Self {
            vertices,
            radius: rng.gen_range(0.55..0.8),
            rotation: rng.gen_range(0.0..TAU),
            star: if k % 2 == 1 { rng.gen_range(0.45..0.7) } else { 1.0 },
            decorations,
        }
    }

    /// Strokes in unit coordinates (`[-1, 1]²`) with jitter level `j`.
    fn strokes(&self, j: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<(f64, f64)>> {
        let rot = self.rotation + noise(rng, 0.25 * j);
        let scale = 1.0 + noise(rng, 0.08 * j);
        let (cx, cy) = (noise(rng, 0.05 * j), noise(rng, 0.05 * j));
        let n = self.vertices * if self.star < 1.0 { 2 } else { 1 };
        let verts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let r = self.radius * scale * if i % 2 == 1 { self.star } else { 1.0 };
                let a = rot + TAU * i as f64 / n as f64;
                (cx + r * a.cos() + noise(rng, 0.05 * j), cy + r * a.sin() + noise(rng, 0.05 * j))
            })
            .collect();
        let mut outline = verts.clone();
        outline.push(verts[0]);
        let mut out = vec![outline];
        for d in &self.decorations {
            if j > 0.0 && rng.gen_bool((0.2 * j).min(1.0)) {
                continue;
            }
            match d {
                Decoration::InnerRing => {
                    let r = 0.3 * self.radius * scale * (1.0 + noise(rng, 0.1 * j));
                    out.push((0..=24).map(|i| {
                        let a = TAU * i as f64 / 24.0;
                        (cx + r * a.cos(), cy + r * a.sin())
                    }).collect());
                }
                Decoration::Cross => {
                    let r = 0.25 * self.radius * scale;
                    let a = rot + std::f64::consts::FRAC_PI_4;
                    for b in [a, a + std::f64::consts::FRAC_PI_2] {
                        out.push(vec![(cx - r * b.cos(), cy - r * b.sin()), (cx + r * b.cos(), cy + r * b.sin())]);
                    }
                }
                Decoration::Spokes => {
                    for v in verts.iter().step_by(if self.star < 1.0 { 2 } else { 1 }) {
                        out.push(vec![(cx, cy), *v]);
                    }
                }
                Decoration::Dot => out.push(vec![(cx + noise(rng, 0.03 * j), cy + noise(rng, 0.03 * j))]),
            }
        }
        out
    }
}

fn noise(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    }
}

fn to_drawing(strokes: &[Vec<(f64, f64)>], canvas: usize, id: &str) -> Result<StrokeDrawing> {
    let half = canvas as f64 / 2.0;
    let px = |v: f64| ((v * 0.9 * half + half).round() as i32).clamp(0, canvas as i32 - 1);
    let lines = strokes
        .iter()
        .map(|s| Polyline::new(s.iter().map(|p| px(p.0)).collect(), s.iter().map(|p| px(p.1)).collect()))
        .collect::<Result<Vec<_>>>()?;
    StrokeDrawing::new("synthetic", lines, id, canvas)
}

/// Procedural concepts: closed (star) polygons with optional decorations,
/// one shape family per concept, variations from vertex, pose and stroke-count
/// jitter. The exemplar is the jitter-free instance. Deterministic per seed.
pub fn make_synthetic_fixture(p: &FixtureParams) -> Result<Vec<ConceptSet>> {
    if p.n_concepts < 2 {
        return Err(Error::InvalidArgument("a fixture needs at least 2 concepts".into()));
    }
    if p.size < 8 || !(p.jitter >= 0.0) || p.jitter > 4.0 {
        return Err(Error::InvalidArgument("fixture size must be at least 8 and jitter within [0, 4]".into()));
    }
    let canvas = 4 * p.size;
    (0..p.n_concepts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(k as u64);
            let family = ShapeFamily::draw(k, &mut rng);
            let id = format!("synth-{k:03}");
            let render = |strokes: &[Vec<(f64, f64)>], n: usize| -> Result<Image> {
                rasterize(&to_drawing(strokes, canvas, &format!("{id}-{n}"))?, p.size)
            };
            let exemplar = render(&family.strokes(0.0, &mut rng), 0)?;
            let variations = (0..p.per_concept)
                .map(|n| {
                    let s = family.strokes(p.jitter, &mut rng);
                    render(&s, n + 1)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ConceptSet {
                concept_id: id,
                exemplar,
                variations,
                split: Split::Train,
                provenance: ConceptProvenance {
                    source_category: "synthetic".into(),
                    cluster_index: k,
                },
            })
        })
        .collect()
}
