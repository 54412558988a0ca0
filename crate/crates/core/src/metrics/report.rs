use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::curve::GeneralizationCurve;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptEvaluation {
    pub concept_id: String,
    pub diversity: f64,
    pub recognizability: f64,
    pub mean_originality: f64,
    pub sample_count: usize,
}

impl ConceptEvaluation {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.recognizability) {
            return Err(Error::InvalidArgument("recognizability outside [0, 1]".into()));
        }
        if !(self.diversity >= 0.0) || !(self.mean_originality >= 0.0) {
            return Err(Error::InvalidArgument("diversity and originality must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Classes weighted equally: the unweighted mean of per-concept values.
pub fn mean_over_concepts(evals: &[ConceptEvaluation]) -> Option<(f64, f64, f64)> {
    if evals.is_empty() {
        return None;
    }
    let n = evals.len() as f64;
    Some((
        evals.iter().map(|e| e.diversity).sum::<f64>() / n,
        evals.iter().map(|e| e.recognizability).sum::<f64>() / n,
        evals.iter().map(|e| e.mean_originality).sum::<f64>() / n,
    ))
}

pub fn write_concept_csv<W: Write>(mut w: W, evals: &[ConceptEvaluation]) -> Result<()> {
    writeln!(w, "concept_id,diversity,recognizability,mean_originality,sample_count")?;
    for e in evals {
        if e.concept_id.contains([',', '"', '\n']) {
            return Err(Error::InvalidArgument(format!("concept id {:?} is not CSV-safe", e.concept_id)));
        }
        writeln!(
            w,
            "{},{},{},{},{}",
            e.concept_id, e.diversity, e.recognizability, e.mean_originality, e.sample_count
        )?;
    }
    Ok(())
}

pub fn save_concept_csv(path: impl AsRef<Path>, evals: &[ConceptEvaluation]) -> Result<()> {
    let mut buf = Vec::new();
    write_concept_csv(&mut buf, evals)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// JSON document for one generalization curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveDocument {
    pub label: String,
    pub bins: Vec<super::curve::OriginalityBin>,
    pub curve: GeneralizationCurve,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let e = ConceptEvaluation {
            concept_id: "c1".into(),
            diversity: 0.0,
            recognizability: 0.5,
            mean_originality: 0.25,
            sample_count: 4,
        };
        let mut buf = Vec::new();
        write_concept_csv(&mut buf, &[e]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "concept_id,diversity,recognizability,mean_originality,sample_count\nc1,0,0.5,0.25,4\n"
        );
    }
}
