use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_json, write_json};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::TrainingSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptProvenance {
    pub source_category: String,
    pub cluster_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptSet {
    pub concept_id: String,
    pub exemplar: Image,
    pub variations: Vec<Image>,
    pub split: Split,
    pub provenance: ConceptProvenance,
}

impl ConceptSet {
    pub fn validate(&self) -> Result<()> {
        if self.concept_id.is_empty() || self.concept_id.contains(['/', '\\']) {
            return Err(Error::InvalidArgument(format!("bad concept id {:?}", self.concept_id)));
        }
        if self.variations.iter().any(|v| !v.same_dims(&self.exemplar)) {
            return Err(Error::Shape(format!("concept {} mixes resolutions", self.concept_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn split_of(&self, concept_id: &str) -> Option<Split> {
        if self.train.iter().any(|c| c == concept_id) {
            Some(Split::Train)
        } else if self.test.iter().any(|c| c == concept_id) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

/// Seeded uniform split of the concept ids (taken in sorted order) into
/// `n_train` training and the remaining test concepts.
pub fn split_concepts(concept_ids: &[String], n_train: usize, seed: u64) -> Result<SplitManifest> {
    let unique: BTreeSet<&String> = concept_ids.iter().collect();
    if unique.len() != concept_ids.len() {
        return Err(Error::InvalidArgument("duplicate concept ids".into()));
    }
    if n_train >= concept_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "n_train = {n_train} leaves no test concepts out of {}",
            concept_ids.len()
        )));
    }
    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ids.split_off(n_train);
    let (mut train, mut test) = (ids, test);
    train.sort();
    test.sort();
    Ok(SplitManifest { seed, train, test })
}

pub fn apply_split(concepts: &mut [ConceptSet], manifest: &SplitManifest) -> Result<()> {
    for c in concepts.iter_mut() {
        c.split = manifest
            .split_of(&c.concept_id)
            .ok_or_else(|| Error::InvalidArgument(format!("concept {} missing from split manifest", c.concept_id)))?;
    }
    Ok(())
}

/// Training pairs from the given concepts (caller chooses the split).
pub fn training_set<'a>(concepts: impl IntoIterator<Item = &'a ConceptSet>) -> TrainingSet {
    let mut ts = TrainingSet::new();
    for c in concepts {
        ts.push_concept(c.exemplar.clone(), c.variations.iter().cloned());
    }
    ts
}

pub const CONCEPT_MANIFEST: &str = "concept.json";

#[derive(Serialize, Deserialize)]
struct ConceptManifest {
    concept_id: String,
    split: Split,
    provenance: ConceptProvenance,
    image_size: usize,
    n_variations: usize,
}

/// Writes `root/<concept_id>/{exemplar.pgm, variations/NNNNN.pgm, concept.json}`.
pub fn save_concepts(root: impl AsRef<Path>, concepts: &[ConceptSet]) -> Result<()> {
    let root = root.as_ref();
    for c in concepts {
        c.validate()?;
        let dir = root.join(&c.concept_id);
        let vdir = dir.join("variations");
        std::fs::create_dir_all(&vdir)?;
        c.exemplar.save_pgm(dir.join("exemplar.pgm"), 255)?;
        for (i, v) in c.variations.iter().enumerate() {
            v.save_pgm(vdir.join(format!("{i:05}.pgm")), 255)?;
        }
        write_json(
            dir.join(CONCEPT_MANIFEST),
            &ConceptManifest {
                concept_id: c.concept_id.clone(),
                split: c.split,
                provenance: c.provenance.clone(),
                image_size: c.exemplar.width(),
                n_variations: c.variations.len(),
            },
        )?;
    }
    Ok(())
}

pub fn load_concept(dir: impl AsRef<Path>) -> Result<ConceptSet> {
    let dir = dir.as_ref();
    let m: ConceptManifest = read_json(dir.join(CONCEPT_MANIFEST))?;
    let exemplar = Image::load_pgm(dir.join("exemplar.pgm"))?;
    let variations = (0..m.n_variations)
        .map(|i| Image::load_pgm(dir.join("variations").join(format!("{i:05}.pgm"))))
        .collect::<Result<Vec<_>>>()?;
    let c = ConceptSet {
        concept_id: m.concept_id,
        exemplar,
        variations,
        split: m.split,
        provenance: m.provenance,
    };
    c.validate()?;
    Ok(c)
}

/// Loads every concept directory under `root`, ordered by directory name.
pub fn load_concepts(root: impl AsRef<Path>) -> Result<Vec<ConceptSet>> {
    let mut dirs: Vec<_> = std::fs::read_dir(root.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(CONCEPT_MANIFEST).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(load_concept).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i:03}")).collect()
    }

    #[test]
    fn split_partitions_and_is_deterministic() {
        let all = ids(20);
        let m = split_concepts(&all, 15, 4).unwrap();
        assert_eq!((m.train.len(), m.test.len()), (15, 5));
        let mut union: Vec<String> = m.train.iter().chain(&m.test).cloned().collect();
        union.sort();
        assert_eq!(union, all);
        assert_eq!(m, split_concepts(&all, 15, 4).unwrap());
        assert_eq!(split_concepts(&all, 19, 1).unwrap().test.len(), 1);
        assert!(split_concepts(&all, 20, 1).is_err());
    }

    #[test]
    fn paper_scale_split() {
        let m = split_concepts(&ids(665), 550, 0).unwrap();
        assert_eq!(m.test.len(), 115);
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = |v: f32| Image::filled(6, 6, v);
        let c = ConceptSet {
            concept_id: "cat-2".into(),
            exemplar: img(1.0),
            variations: vec![img(0.0), img(1.0)],
            split: Split::Test,
            provenance: ConceptProvenance {
                source_category: "cat".into(),
                cluster_index: 2,
            },
        };
        save_concepts(dir.path(), &[c.clone()]).unwrap();
        assert_eq!(load_concepts(dir.path()).unwrap(), vec![c]);
    }
}
