use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest sample size for which the p-value is computed by exhaustive permutation.
pub const EXACT_PERMUTATION_MAX_N: usize = 10;

/// Ranks starting at 1, tied values sharing the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation `ρ` alone (no p-value), for bulk use.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::Degenerate("constant input has undefined ranks".into()))
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::Insufficient("rank correlation needs at least 3 pairs".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("rank correlation inputs must be finite".into()));
    }
    Ok(())
}

/// Spearman `ρ` with a two-sided p-value: exact permutation for `n ≤ 10`,
/// Student-t approximation with `n − 2` degrees of freedom otherwise.
pub fn spearman_rank_correlation(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let rho = spearman_rho(a, b)?;
    let n = a.len();
    let p = if n <= EXACT_PERMUTATION_MAX_N {
        permutation_p_value(&average_ranks(a), &average_ranks(b), rho)
    } else {
        t_approx_p_value(rho, n)
    };
    Ok((rho, p))
}

pub fn t_approx_p_value(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Fraction of all orderings of `rb` whose |ρ| against `ra` is at least |`rho`|.
fn permutation_p_value(ra: &[f64], rb: &[f64], rho: f64) -> f64 {
    let n = ra.len();
    let mean = (n as f64 + 1.0) / 2.0;
    let da: Vec<f64> = ra.iter().map(|r| r - mean).collect();
    let db: Vec<f64> = rb.iter().map(|r| r - mean).collect();
    let norm = (da.iter().map(|x| x * x).sum::<f64>() * db.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let target = rho.abs() - 1e-12;
    let mut perm: Vec<usize> = (0..n).collect();
    let (mut hits, mut total) = (0u64, 0u64);
    // Heap's algorithm over all n! orderings
    let mut c = vec![0usize; n];
    let mut visit = |perm: &[usize]| {
        let s: f64 = perm.iter().enumerate().map(|(i, &j)| da[i] * db[j]).sum();
        total += 1;
        if (s / norm).abs() >= target {
            hits += 1;
        }
    };
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}
