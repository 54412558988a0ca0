use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{ConvEncoder, Module, Param, Tensor};

/// Largest support set accepted by [`encode_context`].
pub const MAX_SUPPORT: usize = 10;

/// Per-image embedding network whose outputs are mean-pooled into a context vector.
#[derive(Clone, Debug)]
pub struct ContextEncoder {
    net: ConvEncoder,
}

impl ContextEncoder {
    pub fn new(image_size: usize, width: usize, context_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            net: ConvEncoder::new("context", image_size, width, context_dim, &mut rng),
        }
    }

    pub fn context_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn image_size(&self) -> usize {
        self.net.image_size()
    }

    pub fn net(&self) -> &ConvEncoder {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut ConvEncoder {
        &mut self.net
    }

    /// Per-image embeddings of images already in the `[-1, 1]` range, `(n, d, 1, 1)`.
    pub fn embed_batch(&self, x: &Tensor) -> Tensor {
        self.net.forward(x)
    }
}

impl Module for ContextEncoder {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

/// Stacks binary images into a `(n, 1, S, S)` tensor in the `[-1, 1]` range.
pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images to stack".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::Shape("images in a batch must share dimensions".into()));
        }
        data.extend(img.pixels().iter().map(|v| 2.0 * v - 1.0));
    }
    Tensor::from_vec([images.len(), 1, h, w], data)
}

/// Mean-pools per-image embeddings of a support set (1 to 10 images) into one context vector.
///
/// The sum runs in a fixed order over embeddings sorted by their bit patterns,
/// so the result is bitwise identical under any permutation of the set.
pub fn encode_context(support: &[Image], encoder: &ContextEncoder) -> Result<Vec<f32>> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("support set is empty".into()));
    }
    if support.len() > MAX_SUPPORT {
        return Err(Error::InvalidArgument(format!(
            "support set has {} images, at most {MAX_SUPPORT} allowed",
            support.len()
        )));
    }
    let s = encoder.image_size();
    if support.iter().any(|im| im.width() != s || im.height() != s) {
        return Err(Error::Shape(format!("support images must be {s}x{s}")));
    }
    let refs: Vec<&Image> = support.iter().collect();
    let emb = encoder.embed_batch(&images_to_tensor(&refs)?);
    let mut rows: Vec<&[f32]> = (0..emb.n()).map(|i| emb.item(i)).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .map(|v| v.to_bits())
            .cmp(b.iter().map(|v| v.to_bits()))
    });
    Ok(mean_rows(&rows))
}

pub(crate) fn mean_rows(rows: &[&[f32]]) -> Vec<f32> {
    let d = rows[0].len();
    let mut acc = vec![0f64; d];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.iter()) {
            *a += *v as f64;
        }
    }
    acc.into_iter().map(|a| (a / rows.len() as f64) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: usize) -> Image {
        let data = (0..64).map(|i| ((i * 7 + seed * 13) % 5 == 0) as u8 as f32).collect();
        Image::square(8, data).unwrap()
    }

    #[test]
    fn repeated_image_gives_single_image_context() {
        let enc = ContextEncoder::new(8, 2, 5, 1);
        let one = encode_context(&[img(1)], &enc).unwrap();
        let rep = encode_context(&[img(1), img(1), img(1)], &enc).unwrap();
        for (a, b) in one.iter().zip(&rep) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn permutation_invariant_bitwise() {
        let enc = ContextEncoder::new(8, 2, 5, 2);
        let a = encode_context(&[img(1), img(2), img(3)], &enc).unwrap();
        let b = encode_context(&[img(3), img(1), img(2)], &enc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pair_is_manual_average() {
        let enc = ContextEncoder::new(8, 2, 5, 3);
        let e1 = encode_context(&[img(4)], &enc).unwrap();
        let e2 = encode_context(&[img(5)], &enc).unwrap();
        let c = encode_context(&[img(4), img(5)], &enc).unwrap();
        for i in 0..5 {
            assert!((c[i] - (e1[i] + e2[i]) / 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_and_oversized_sets_rejected() {
        let enc = ContextEncoder::new(8, 2, 5, 3);
        assert!(encode_context(&[], &enc).is_err());
        let many: Vec<Image> = (0..11).map(img).collect();
        assert!(encode_context(&many, &enc).is_err());
    }
}
