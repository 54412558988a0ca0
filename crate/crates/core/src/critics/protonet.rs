use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentationPolicy};
use super::embedding::{squared_l2, Embedder, EmbeddingVector};
use super::simclr::{encoder_embed, read_critic_meta, save_critic, CriticConfig};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::models::images_to_tensor;
use crate::nn::{Adam, AdamConfig, ConvEncoder, Module, Param, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHyper {
    pub steps: usize,
    pub way: usize,
    pub queries_per_class: usize,
    pub lr: f32,
    pub policy: AugmentationPolicy,
    pub seed: u64,
}

impl Default for EpisodeHyper {
    fn default() -> Self {
        Self {
            steps: 2000,
            way: 20,
            queries_per_class: 5,
            lr: 1e-3,
            policy: AugmentationPolicy::default(),
            seed: 0,
        }
    }
}

/// Embedding network for nearest-prototype one-shot classification.
#[derive(Clone, Debug)]
pub struct PrototypeClassifier {
    config: CriticConfig,
    encoder: ConvEncoder,
    pub loss_history: Vec<f64>,
}

impl PrototypeClassifier {
    pub fn new(config: &CriticConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            encoder: ConvEncoder::new("encoder", config.image_size, config.width, config.feature_dim, &mut rng),
            config: config.clone(),
            loss_history: Vec::new(),
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        save_critic(dir.as_ref(), "prototype_classifier", &self.config, self, &self.loss_history)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let (config, specs, loss) = read_critic_meta(dir.as_ref(), "prototype_classifier")?;
        let mut pc = Self::new(&config)?;
        checkpoint::load_params(dir.as_ref(), &specs, pc.params_mut())?;
        pc.loss_history = loss;
        Ok(pc)
    }

    /// One episode: `way` support rows followed by `way · q` query rows, queries
    /// grouped by class. Returns the mean cross-entropy.
    fn episode_step(&mut self, batch: &Tensor, way: usize, q: usize) -> f64 {
        self.zero_grad();
        let (y, tr) = self.encoder.forward_train(batch);
        let d = y.item_len();
        let row = |i: usize| -> Vec<f64> { y.item(i).iter().map(|&v| v as f64).collect() };
        let protos: Vec<Vec<f64>> = (0..way).map(row).collect();
        let nq = way * q;
        let mut dy = Tensor::zeros(y.shape());
        let mut loss = 0.0;
        for qi in 0..nq {
            let target = qi / q;
            let query = row(way + qi);
            let logits: Vec<f64> = protos.iter().map(|p| -squared_l2(&query, p)).collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            loss += -(logits[target] - mx - z.ln());
            for (k, p) in protos.iter().enumerate() {
                let g = ((logits[k] - mx).exp() / z - if k == target { 1.0 } else { 0.0 }) / nq as f64;
                // logit = -|q - p|^2
                for j in 0..d {
                    let diff = query[j] - p[j];
                    dy.item_mut(way + qi)[j] += (-2.0 * g * diff) as f32;
                    dy.item_mut(k)[j] += (2.0 * g * diff) as f32;
                }
            }
        }
        self.encoder.backward(&tr, &dy);
        loss / nq as f64
    }
}

impl Module for PrototypeClassifier {
    fn params(&self) -> Vec<&Param> {
        self.encoder.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.encoder.params_mut()
    }
}

impl Embedder for PrototypeClassifier {
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

/// Draws one episode: per class one support image and `q` queries, all under a
/// single class-wide augmentation.
fn draw_episode<R: Rng>(
    classes: &[Vec<Image>],
    way: usize,
    q: usize,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Vec<Image> {
    let chosen = index::sample(rng, classes.len(), way).into_vec();
    let mut support = Vec::with_capacity(way);
    let mut queries = Vec::with_capacity(way * q);
    for &c in &chosen {
        let imgs = &classes[c];
        let aug = policy.draw(rng);
        let s = rng.gen_range(0..imgs.len());
        support.push(augment(&imgs[s], &aug));
        for _ in 0..q {
            let mut k = rng.gen_range(0..imgs.len());
            if imgs.len() > 1 {
                while k == s {
                    k = rng.gen_range(0..imgs.len());
                }
            }
            queries.push(augment(&imgs[k], &aug));
        }
    }
    support.extend(queries);
    support
}

/// Episodic prototypical training over labeled classes (each with ≥ 1 image).
pub fn train_prototype_classifier(
    classes: &[Vec<Image>],
    config: &CriticConfig,
    hyper: &EpisodeHyper,
) -> Result<PrototypeClassifier> {
    hyper.policy.validate()?;
    if hyper.way == 0 || classes.len() < hyper.way {
        return Err(Error::Insufficient(format!(
            "{} classes available for {}-way episodes",
            classes.len(),
            hyper.way
        )));
    }
    if classes.iter().any(|c| c.is_empty()) {
        return Err(Error::Insufficient("every class needs at least one image".into()));
    }
    let mut pc = PrototypeClassifier::new(config)?;
    let mut opt = Adam::new(AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let q = hyper.queries_per_class.max(1);
    for step in 0..hyper.steps {
        let imgs = draw_episode(classes, hyper.way, q, &hyper.policy, &mut rng);
        let refs: Vec<&Image> = imgs.iter().collect();
        let batch = images_to_tensor(&refs)?;
        let loss = pc.episode_step(&batch, hyper.way, q);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        opt.step(&mut pc.params_mut());
        pc.loss_history.push(loss);
    }
    Ok(pc)
}

/// Nearest-prototype lookup over a fixed support set.
#[derive(Clone, Debug)]
pub struct PrototypeSet<C> {
    ids: Vec<C>,
    protos: Vec<EmbeddingVector>,
}

impl<C: Ord + Clone> PrototypeSet<C> {
    pub fn new(embedder: &dyn Embedder, support: &[(C, Image)]) -> Result<Self> {
        let refs: Vec<&Image> = support.iter().map(|(_, im)| im).collect();
        let protos = embedder.embed_batch(&refs)?;
        Self::from_embeddings(support.iter().map(|(c, _)| c.clone()).collect(), protos)
    }

    pub fn from_embeddings(ids: Vec<C>, protos: Vec<EmbeddingVector>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("support set is empty".into()));
        }
        if ids.len() != protos.len() {
            return Err(Error::Shape("one embedding per support class required".into()));
        }
        let mut sorted = ids.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("support classes must be distinct".into()));
        }
        Ok(Self { ids, protos })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[C] {
        &self.ids
    }

    /// Squared Euclidean distance from `query` to every prototype, in `ids()` order.
    pub fn distances(&self, query: &EmbeddingVector) -> Vec<f64> {
        self.protos.iter().map(|p| squared_l2(&query.values, &p.values)).collect()
    }

    /// Class of the nearest prototype by squared Euclidean distance; ties go to the lowest id.
    pub fn classify(&self, query: &EmbeddingVector) -> C {
        let mut best: Option<(f64, &C)> = None;
        for (id, p) in self.ids.iter().zip(&self.protos) {
            let d = squared_l2(&query.values, &p.values);
            best = match best {
                Some((bd, bid)) if bd < d || (bd == d && bid <= id) => Some((bd, bid)),
                _ => Some((d, id)),
            };
        }
        best.expect("non-empty support").1.clone()
    }
}

pub fn one_shot_classify<C: Ord + Clone>(
    embedder: &dyn Embedder,
    query: &Image,
    support: &[(C, Image)],
) -> Result<C> {
    let set = PrototypeSet::new(embedder, support)?;
    Ok(set.classify(&embedder.embed(query)?))
}

/// Mean accuracy over `episodes` random `way`-way one-shot episodes without augmentation.
pub fn episode_accuracy(
    embedder: &dyn Embedder,
    classes: &[Vec<Image>],
    way: usize,
    queries_per_class: usize,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    if way == 0 || classes.len() < way {
        return Err(Error::Insufficient(format!("{} classes for {way}-way episodes", classes.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hits, mut total) = (0usize, 0usize);
    let identity = AugmentationPolicy::identity();
    for _ in 0..episodes {
        let imgs = draw_episode(classes, way, queries_per_class, &identity, &mut rng);
        let refs: Vec<&Image> = imgs.iter().collect();
        let embs = embedder.embed_batch(&refs)?;
        let set = PrototypeSet::from_embeddings((0..way).collect(), embs[..way].to_vec())?;
        for (qi, e) in embs[way..].iter().enumerate() {
            hits += (set.classify(e) == qi / queries_per_class) as usize;
            total += 1;
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}
