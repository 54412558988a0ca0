use crate::attribution::{ImportanceMap, Provenance};
use crate::error::{Error, Result};
use crate::image::{gaussian_blur, Image};

use super::store::AnnotationStore;

/// Mean of the blurred maps, max-normalized, with human provenance.
pub fn aggregate_maps(maps: &[Image], category: &str, blur_size: usize, blur_sigma: Option<f64>) -> Result<ImportanceMap> {
    let first = maps.first().ok_or_else(|| Error::Insufficient(format!("no maps for {category}")))?;
    if maps.iter().any(|m| !m.same_dims(first)) {
        return Err(Error::Shape("maps differ in size".into()));
    }
    let mut acc = vec![0.0f64; first.len()];
    for m in maps {
        let b = if blur_size > 1 { gaussian_blur(m, blur_size, blur_sigma)? } else { m.clone() };
        for (a, &v) in acc.iter_mut().zip(b.pixels()) {
            *a += v as f64;
        }
    }
    acc.iter_mut().for_each(|a| *a = (*a / maps.len() as f64).max(0.0));
    let mut out = ImportanceMap::new(first.width(), first.height(), acc, Provenance::Human, category)?;
    out.n_samples = maps.len();
    Ok(out.max_normalized())
}

/// Aggregated human map of one category over every stored round, in store order.
pub fn aggregate_category_map(
    store: &AnnotationStore,
    category: &str,
    blur_size: usize,
    blur_sigma: Option<f64>,
) -> Result<ImportanceMap> {
    let maps = store
        .records()?
        .iter()
        .filter(|r| r.category == category)
        .map(|r| store.load_map(r))
        .collect::<Result<Vec<_>>>()?;
    if maps.is_empty() {
        return Err(Error::NotFound(format!("no stored maps for category {category}")));
    }
    aggregate_maps(&maps, category, blur_size, blur_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_ones_average_to_uniform() {
        let m = aggregate_maps(&[Image::blank(5, 5), Image::filled(5, 5, 1.0)], "c", 1, None).unwrap();
        assert!(m.grid.iter().all(|&v| v == 1.0));
        assert_eq!(m.n_samples, 2);
    }

    #[test]
    fn one_map_and_duplicates() {
        let mut a = Image::blank(32, 32);
        for x in 10..20 {
            a.set(x, 12, 1.0);
        }
        let one = aggregate_maps(&[a.clone()], "c", 9, None).unwrap();
        let two = aggregate_maps(&[a.clone(), a.clone()], "c", 9, None).unwrap();
        assert_eq!(one.grid, two.grid);
        assert!((one.max_value() - 1.0).abs() < 1e-12);
        assert!(aggregate_maps(&[], "c", 9, None).is_err());
    }
}
