use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentationPolicy};
use super::embedding::{check_resolution, Embedder, EmbeddingVector, FEATURE_DIM};
use crate::checkpoint::{self, LOSS_FILE, METADATA_FILE};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::images_to_tensor;
use crate::nn::{ops, Adam, AdamConfig, ConvEncoder, Linear, Module, Param, ParamSpec, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub image_size: usize,
    /// Channels of the first convolution; later stages use twice this.
    pub width: usize,
    pub feature_dim: usize,
    /// Output width of the contrastive projection head.
    pub proj_dim: usize,
    pub seed: u64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            image_size: 48,
            width: 16,
            feature_dim: FEATURE_DIM,
            proj_dim: 128,
            seed: 0,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::InvalidArgument("critic image_size must be a positive multiple of 4".into()));
        }
        if self.width == 0 || self.feature_dim < 2 || self.proj_dim == 0 {
            return Err(Error::InvalidArgument("critic widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveHyper {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub temperature: f64,
    pub policy: AugmentationPolicy,
    pub seed: u64,
}

impl Default for ContrastiveHyper {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 256,
            lr: 1e-3,
            temperature: 0.5,
            policy: AugmentationPolicy::default(),
            seed: 0,
        }
    }
}

/// Contrastively trained encoder; its 256-wide fully connected output is the feature space.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    config: CriticConfig,
    encoder: ConvEncoder,
    head1: Linear,
    head2: Linear,
    pub loss_history: Vec<f64>,
}

struct HeadTrace {
    h: Tensor,
    r: Tensor,
    z1: Tensor,
    a: Tensor,
}

impl FeatureExtractor {
    pub fn new(config: &CriticConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let f = config.feature_dim;
        Ok(Self {
            encoder: ConvEncoder::new("encoder", config.image_size, config.width, f, &mut rng),
            head1: Linear::new("head1", f, f, &mut rng),
            head2: Linear::new("head2", f, config.proj_dim, &mut rng),
            config: config.clone(),
            loss_history: Vec::new(),
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    fn project(&self, h: Tensor) -> (Tensor, HeadTrace) {
        let r = ops::relu(&h);
        let z1 = self.head1.forward(&r);
        let a = ops::relu(&z1);
        let z = self.head2.forward(&a);
        (z, HeadTrace { h, r, z1, a })
    }

    /// One contrastive step on a batch of `2N` augmented views (`i` pairs with `i + N`).
    fn train_step(&mut self, views: &Tensor, temperature: f64) -> Result<f64> {
        self.zero_grad();
        let (h, etr) = self.encoder.forward_train(views);
        let (z, tr) = self.project(h);
        let (loss, dz) = nt_xent(&z, temperature)?;
        let da = self.head2.backward(&tr.a, &dz);
        let dz1 = ops::relu_backward(&tr.z1, &da);
        let dr = self.head1.backward(&tr.r, &dz1);
        let dh = ops::relu_backward(&tr.h, &dr);
        self.encoder.backward(&etr, &dh);
        Ok(loss)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        save_critic(dir.as_ref(), "feature_extractor", &self.config, self, &self.loss_history)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let (config, specs, loss) = read_critic_meta(dir.as_ref(), "feature_extractor")?;
        let mut fe = Self::new(&config)?;
        checkpoint::load_params(dir.as_ref(), &specs, fe.params_mut())?;
        fe.loss_history = loss;
        Ok(fe)
    }
}

impl Module for FeatureExtractor {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.head1.params());
        v.extend(self.head2.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.head1.params_mut());
        v.extend(self.head2.params_mut());
        v
    }
}

impl Embedder for FeatureExtractor {
    fn image_size(&self) -> usize {
        self.config.image_size
    }
    fn dim(&self) -> usize {
        self.config.feature_dim
    }
    fn embed_batch(&self, images: &[&Image]) -> Result<Vec<EmbeddingVector>> {
        encoder_embed(&self.encoder, self.config.image_size, images)
    }
}

pub(crate) fn encoder_embed(enc: &ConvEncoder, size: usize, images: &[&Image]) -> Result<Vec<EmbeddingVector>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    check_resolution(images, size)?;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let y = enc.forward(&images_to_tensor(chunk)?);
        for i in 0..y.n() {
            out.push(EmbeddingVector::raw(y.item(i).iter().map(|&v| v as f64).collect()));
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CriticMeta {
    kind: String,
    config: CriticConfig,
    params: Vec<ParamSpec>,
}

pub(crate) fn save_critic(dir: &Path, kind: &str, config: &CriticConfig, m: &dyn Module, loss: &[f64]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let params = checkpoint::save_module(dir, m)?;
    checkpoint::write_json(
        dir.join(METADATA_FILE),
        &CriticMeta {
            kind: kind.into(),
            config: config.clone(),
            params,
        },
    )?;
    checkpoint::write_loss_csv(dir.join(LOSS_FILE), loss)
}

pub(crate) fn read_critic_meta(dir: &Path, kind: &str) -> Result<(CriticConfig, Vec<ParamSpec>, Vec<f64>)> {
    let meta: CriticMeta = checkpoint::read_json(dir.join(METADATA_FILE))?;
    if meta.kind != kind {
        return Err(Error::Format(format!(
            "{} holds a {} checkpoint, expected {kind}",
            dir.display(),
            meta.kind
        )));
    }
    let loss_path = dir.join(LOSS_FILE);
    let loss = if loss_path.exists() {
        checkpoint::read_loss_csv(loss_path)?
    } else {
        Vec::new()
    };
    Ok((meta.config, meta.params, loss))
}

/// Normalized-temperature cross entropy over `2N` projections where row `i`
/// and row `i + N` are the positive pair. Returns the mean loss and its gradient.
pub fn nt_xent(z: &Tensor, temperature: f64) -> Result<(f64, Tensor)> {
    let m = z.n();
    if m < 2 || m % 2 != 0 {
        return Err(Error::Shape("contrastive batch needs an even number of >= 2 rows".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let half = m / 2;
    let d = z.item_len();
    let norms: Vec<f64> = (0..m)
        .map(|i| z.item(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt().max(1e-12))
        .collect();
    let u: Vec<Vec<f64>> = (0..m)
        .map(|i| z.item(i).iter().map(|&v| v as f64 / norms[i]).collect())
        .collect();
    let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut sim = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i..m {
            let s = dotp(&u[i], &u[j]) / temperature;
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    let mut loss = 0.0;
    let mut g = vec![vec![0.0; m]; m];
    for i in 0..m {
        let pos = if i < half { i + half } else { i - half };
        let mx = (0..m).filter(|&k| k != i).map(|k| sim[i][k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..m).filter(|&k| k != i).map(|k| (sim[i][k] - mx).exp()).sum();
        loss += -(sim[i][pos] - mx - denom.ln());
        for k in (0..m).filter(|&k| k != i) {
            let p = (sim[i][k] - mx).exp() / denom;
            g[i][k] = (p - if k == pos { 1.0 } else { 0.0 }) / m as f64;
        }
    }
    loss /= m as f64;
    let mut dz = Tensor::zeros(z.shape());
    for i in 0..m {
        // d sim_ik / d u_i = u_k / τ, counted through both (i,k) and (k,i)
        let mut du = vec![0.0; d];
        for k in 0..m {
            let w = (g[i][k] + g[k][i]) / temperature;
            if w != 0.0 {
                for (a, b) in du.iter_mut().zip(&u[k]) {
                    *a += w * b;
                }
            }
        }
        let proj = dotp(&u[i], &du);
        for (j, out) in dz.item_mut(i).iter_mut().enumerate() {
            *out = ((du[j] - u[i][j] * proj) / norms[i]) as f32;
        }
    }
    Ok((loss, dz))
}

/// Trains a feature extractor with two random augmentations of each image per step.
pub fn train_feature_extractor(
    images: &[Image],
    config: &CriticConfig,
    hyper: &ContrastiveHyper,
) -> Result<FeatureExtractor> {
    hyper.policy.validate()?;
    if images.len() < hyper.batch_size || hyper.batch_size < 2 {
        return Err(Error::Insufficient(format!(
            "corpus of {} images is smaller than one batch of {}",
            images.len(),
            hyper.batch_size
        )));
    }
    let refs: Vec<&Image> = images.iter().collect();
    check_resolution(&refs, config.image_size)?;
    let mut fe = FeatureExtractor::new(config)?;
    let mut opt = Adam::new(AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    for step in 0..hyper.steps {
        let picks = index::sample(&mut rng, images.len(), hyper.batch_size);
        let mut views: Vec<Image> = Vec::with_capacity(2 * hyper.batch_size);
        let mut second: Vec<Image> = Vec::with_capacity(hyper.batch_size);
        for i in picks.iter() {
            views.push(augment(&images[i], &hyper.policy.draw(&mut rng)));
            second.push(augment(&images[i], &hyper.policy.draw(&mut rng)));
        }
        views.extend(second);
        let vrefs: Vec<&Image> = views.iter().collect();
        let batch = images_to_tensor(&vrefs)?;
        let loss = fe.train_step(&batch, hyper.temperature)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        opt.step(&mut fe.params_mut());
        fe.loss_history.push(loss);
    }
    Ok(fe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn nt_xent_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Tensor::from_vec([6, 5, 1, 1], (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (_, dz) = nt_xent(&z, 0.5).unwrap();
        for idx in [0usize, 7, 13, 22, 29] {
            let mut zp = z.clone();
            zp.data_mut()[idx] += 1e-3;
            let mut zm = z.clone();
            zm.data_mut()[idx] -= 1e-3;
            let fd = (nt_xent(&zp, 0.5).unwrap().0 - nt_xent(&zm, 0.5).unwrap().0) / 2e-3;
            assert!((fd - dz.data()[idx] as f64).abs() < 1e-3, "{fd} vs {}", dz.data()[idx]);
        }
    }

    #[test]
    fn nt_xent_prefers_aligned_pairs() {
        let aligned = Tensor::from_vec([4, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let crossed = Tensor::from_vec([4, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(nt_xent(&aligned, 0.5).unwrap().0 < nt_xent(&crossed, 0.5).unwrap().0);
    }

    #[test]
    fn output_dimension_is_256() {
        let fe = FeatureExtractor::new(&CriticConfig {
            image_size: 16,
            width: 4,
            ..CriticConfig::default()
        })
        .unwrap();
        let e = fe.embed(&Image::blank(16, 16)).unwrap();
        assert_eq!(e.dim(), 256);
        assert!(e.values.iter().all(|v| v.is_finite()));
        assert!(fe.embed(&Image::blank(8, 8)).is_err());
    }
}
