use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: usize,
    pub originality: f64,
    pub recognized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginalityBin {
    pub bin_index: usize,
    pub members: Vec<usize>,
    pub mean_originality: f64,
    pub mean_recognizability: f64,
}

/// Sorts samples by originality (ties by id), keeps the lowest
/// `n_bins · per_bin` and cuts them into consecutive equal bins.
pub fn bin_by_originality(samples: &[ScoredSample], n_bins: usize, per_bin: usize) -> Result<Vec<OriginalityBin>> {
    if n_bins == 0 || per_bin == 0 {
        return Err(Error::InvalidArgument("bin count and size must be positive".into()));
    }
    let need = n_bins * per_bin;
    if samples.len() < need {
        return Err(Error::Insufficient(format!(
            "{} samples for {n_bins} bins of {per_bin}",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.originality.is_finite()) {
        return Err(Error::InvalidArgument("originality scores must be finite".into()));
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.originality.total_cmp(&b.originality).then(a.id.cmp(&b.id)));
    Ok(sorted[..need]
        .chunks(per_bin)
        .enumerate()
        .map(|(k, chunk)| OriginalityBin {
            bin_index: k,
            members: chunk.iter().map(|s| s.id).collect(),
            mean_originality: chunk.iter().map(|s| s.originality).sum::<f64>() / per_bin as f64,
            mean_recognizability: chunk.iter().filter(|s| s.recognized).count() as f64 / per_bin as f64,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub originality: f64,
    pub recognizability: f64,
}

/// Binned recognizability against originality with a degree-2 least-squares fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationCurve {
    pub points: Vec<CurvePoint>,
    /// `[c0, c1, c2]` of `c0 + c1·x + c2·x²`.
    pub poly_coeffs: [f64; 3],
    /// Residual sum of squares of the fit over `points`.
    pub least_squares_error: f64,
}

impl GeneralizationCurve {
    pub fn eval(&self, x: f64) -> f64 {
        let [c0, c1, c2] = self.poly_coeffs;
        c0 + c1 * x + c2 * x * x
    }

    /// Residual of the stored coefficients over the stored points.
    pub fn recompute_residual(&self) -> f64 {
        residual(&self.points, &self.poly_coeffs)
    }
}

fn residual(points: &[CurvePoint], c: &[f64; 3]) -> f64 {
    points
        .iter()
        .map(|p| {
            let x = p.originality;
            (p.recognizability - (c[0] + c[1] * x + c[2] * x * x)).powi(2)
        })
        .sum()
}

pub fn fit_generalization_curve(bins: &[OriginalityBin]) -> Result<GeneralizationCurve> {
    let points: Vec<CurvePoint> = bins
        .iter()
        .map(|b| CurvePoint {
            originality: b.mean_originality,
            recognizability: b.mean_recognizability,
        })
        .collect();
    fit_points(points)
}

/// Degree-2 least squares through `points` (at least 3 with distinct abscissae).
pub fn fit_points(points: Vec<CurvePoint>) -> Result<GeneralizationCurve> {
    if points.len() < 3 {
        return Err(Error::Insufficient("a quadratic fit needs at least 3 bins".into()));
    }
    let n = points.len();
    let x = DMatrix::from_fn(n, 3, |i, j| points[i].originality.powi(j as i32));
    let y = DVector::from_iterator(n, points.iter().map(|p| p.recognizability));
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return Err(Error::Singular("bin originalities do not determine a quadratic".into()));
    }
    let c = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Singular(format!("least-squares solve failed: {e}")))?;
    let poly_coeffs = [c[0], c[1], c[2]];
    let least_squares_error = residual(&points, &poly_coeffs);
    Ok(GeneralizationCurve {
        points,
        poly_coeffs,
        least_squares_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bins_from(points: &[(f64, f64)]) -> Vec<OriginalityBin> {
        points
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| OriginalityBin {
                bin_index: k,
                members: vec![k],
                mean_originality: x,
                mean_recognizability: y,
            })
            .collect()
    }

    /// Independent oracle: normal equations solved by Cramer's rule.
    fn normal_equations(points: &[(f64, f64)]) -> ([f64; 3], f64) {
        let mut s = [0.0f64; 5];
        let mut t = [0.0f64; 3];
        for &(x, y) in points {
            for (k, sk) in s.iter_mut().enumerate() {
                *sk += x.powi(k as i32);
            }
            for (k, tk) in t.iter_mut().enumerate() {
                *tk += y * x.powi(k as i32);
            }
        }
        let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
        let det3 = |a: [[f64; 3]; 3]| {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        };
        let d = det3(m);
        let mut c = [0.0; 3];
        for (k, ck) in c.iter_mut().enumerate() {
            let mut mk = m;
            for r in 0..3 {
                mk[r][k] = t[r];
            }
            *ck = det3(mk) / d;
        }
        let res = points
            .iter()
            .map(|&(x, y)| (y - (c[0] + c[1] * x + c[2] * x * x)).powi(2))
            .sum();
        (c, res)
    }

    #[test]
    fn five_hundred_samples_make_ten_bins_of_fifty() {
        let s: Vec<ScoredSample> = (0..500)
            .map(|i| ScoredSample {
                id: i,
                originality: (i as f64 * 7.3) % 11.0,
                recognized: i % 3 == 0,
            })
            .collect();
        let bins = bin_by_originality(&s, 10, 50).unwrap();
        assert_eq!(bins.len(), 10);
        assert!(bins.iter().all(|b| b.members.len() == 50));
    }

    #[test]
    fn equal_originalities_bin_by_id() {
        let s: Vec<ScoredSample> = (0..20)
            .rev()
            .map(|i| ScoredSample {
                id: i,
                originality: 0.5,
                recognized: true,
            })
            .collect();
        let bins = bin_by_originality(&s, 4, 5).unwrap();
        assert_eq!(bins[0].members, vec![0, 1, 2, 3, 4]);
        assert!(bins.iter().all(|b| b.mean_originality == 0.5));
    }

    #[test]
    fn threshold_boundary_between_bins_five_and_six() {
        let s: Vec<ScoredSample> = (1..=500)
            .map(|i| ScoredSample {
                id: i,
                originality: i as f64,
                recognized: i <= 250,
            })
            .collect();
        let bins = bin_by_originality(&s, 10, 50).unwrap();
        // brute force: bin k holds originalities 50k+1 ..= 50k+50
        for (k, b) in bins.iter().enumerate() {
            let expect = (1..=50).filter(|j| 50 * k + j <= 250).count() as f64 / 50.0;
            assert_eq!(b.mean_recognizability, expect);
        }
        assert_eq!(bins[4].mean_recognizability, 1.0);
        assert_eq!(bins[5].mean_recognizability, 0.0);
    }

    #[test]
    fn surplus_highest_originality_dropped() {
        let s: Vec<ScoredSample> = (0..23)
            .map(|i| ScoredSample {
                id: i,
                originality: i as f64,
                recognized: false,
            })
            .collect();
        let bins = bin_by_originality(&s, 2, 10).unwrap();
        assert_eq!(*bins[1].members.last().unwrap(), 19);
        assert!(bin_by_originality(&s, 3, 10).is_err());
    }

    #[test]
    fn exact_parabola_recovered() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| {
            let x = 0.2 + 0.1 * i as f64;
            (x, 0.9 - 0.3 * x + 0.05 * x * x)
        }).collect();
        let c = fit_generalization_curve(&bins_from(&pts)).unwrap();
        assert!(c.least_squares_error <= 1e-12);
        for (got, want) in c.poly_coeffs.iter().zip([0.9, -0.3, 0.05]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn too_few_bins_rejected() {
        assert!(fit_generalization_curve(&bins_from(&[(0.1, 1.0), (0.2, 0.9)])).is_err());
    }

    proptest! {
        #[test]
        fn matches_normal_equations_and_ignores_order(
            pts in prop::collection::vec((0.0f64..2.0, 0.0f64..1.0), 3..15)
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
            let mut distinct = xs.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup_by(|a, b| (*a - *b).abs() < 0.05);
            prop_assume!(spread > 0.3 && distinct.len() >= 3);
            let c = fit_generalization_curve(&bins_from(&pts)).unwrap();
            let (_, res) = normal_equations(&pts);
            prop_assert!((c.least_squares_error - res).abs() < 1e-10);
            prop_assert!((c.recompute_residual() - c.least_squares_error).abs() <= 1e-12);
            let mut rev = pts.clone();
            rev.reverse();
            let c2 = fit_generalization_curve(&bins_from(&rev)).unwrap();
            prop_assert!((c2.least_squares_error - c.least_squares_error).abs() < 1e-10);
        }
    }
}
