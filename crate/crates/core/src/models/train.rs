use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::checkpoint::ModelCheckpoint;
use super::config::{ConditioningMode, TrainHyper};
use super::context::images_to_tensor;
use super::unet::CondBatch;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{ops, Adam, AdamConfig, Module, Tensor};

/// Training pairs: every variation is tied to the exemplar of its concept.
#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    pub variations: Vec<Image>,
    pub exemplars: Vec<Image>,
    /// `exemplar_of[i]` indexes `exemplars` for `variations[i]`.
    pub exemplar_of: Vec<usize>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one concept; returns its exemplar index.
    pub fn push_concept(&mut self, exemplar: Image, variations: impl IntoIterator<Item = Image>) -> usize {
        let k = self.exemplars.len();
        self.exemplars.push(exemplar);
        for v in variations {
            self.variations.push(v);
            self.exemplar_of.push(k);
        }
        k
    }

    pub fn len(&self) -> usize {
        self.variations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variations.is_empty()
    }
}

/// Progress hook called after every optimizer step with `(step, loss)`.
pub type StepHook<'a> = &'a mut dyn FnMut(usize, f64);

/// Trains `ck` in place for `hyper.steps` steps of the noise-prediction objective.
///
/// Each step draws a batch of pairs, a uniform timestep and standard-normal
/// noise per item; with probability `drop_prob` an item's exemplar is replaced
/// by the blank image.
pub fn train_in_place(
    ck: &mut ModelCheckpoint,
    data: &TrainingSet,
    hyper: &TrainHyper,
    mut hook: Option<StepHook<'_>>,
) -> Result<()> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Insufficient("training set is empty".into()));
    }
    let s = ck.config.image_size;
    if data
        .variations
        .iter()
        .chain(&data.exemplars)
        .any(|im| im.width() != s || im.height() != s)
    {
        return Err(Error::Shape(format!("training images must be {s}x{s}")));
    }
    let mode = ck.config.conditioning_mode;
    let t_max = ck.schedule.steps();
    let sqrt_ab: Vec<f32> = ck.schedule.alpha_bars.iter().map(|a| a.sqrt() as f32).collect();
    let sqrt_1m: Vec<f32> = ck.schedule.alpha_bars.iter().map(|a| (1.0 - a).sqrt() as f32).collect();
    let signed = |im: &Image| -> Vec<f32> { im.pixels().iter().map(|v| 2.0 * v - 1.0).collect() };
    let var_signed: Vec<Vec<f32>> = data.variations.iter().map(signed).collect();
    let blank = Image::blank(s, s);

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut opt = Adam::new(AdamConfig {
        lr: hyper.lr,
        clip_norm: hyper.clip_norm,
        ..AdamConfig::default()
    });
    let b = hyper.batch_size;
    let plane = s * s;
    ck.training.loss_history.reserve(hyper.steps);

    for step in 0..hyper.steps {
        let mut x = Vec::with_capacity(b * plane);
        let mut eps = Vec::with_capacity(b * plane);
        let mut steps = Vec::with_capacity(b);
        let mut cond_imgs: Vec<&Image> = Vec::with_capacity(b);
        for _ in 0..b {
            let i = rng.gen_range(0..data.len());
            let t = rng.gen_range(0..t_max);
            let dropped = hyper.drop_prob > 0.0 && rng.gen::<f64>() < hyper.drop_prob;
            if dropped {
                ck.training.blank_substitutions += 1;
            }
            for &x0 in &var_signed[i] {
                let e: f32 = rng.sample(StandardNormal);
                x.push(sqrt_ab[t] * x0 + sqrt_1m[t] * e);
                eps.push(e);
            }
            steps.push(t);
            cond_imgs.push(if dropped { &blank } else { &data.exemplars[data.exemplar_of[i]] });
        }
        let x = Tensor::from_vec([b, 1, s, s], x)?;
        let eps = Tensor::from_vec([b, 1, s, s], eps)?;

        ck.denoiser.zero_grad();
        if let Some(enc) = &mut ck.context_encoder {
            enc.zero_grad();
        }
        let loss = match mode {
            ConditioningMode::Stack => {
                let ex = images_to_tensor(&cond_imgs)?;
                let (pred, tr) = ck.denoiser.forward_train(&x, &steps, CondBatch::Stack(&ex))?;
                let (loss, grad) = ops::mse_with_grad(&pred, &eps);
                check_loss(step, loss)?;
                ck.denoiser.backward(&tr, &grad);
                loss
            }
            ConditioningMode::None => {
                let (pred, tr) = ck.denoiser.forward_train(&x, &steps, CondBatch::None)?;
                let (loss, grad) = ops::mse_with_grad(&pred, &eps);
                check_loss(step, loss)?;
                ck.denoiser.backward(&tr, &grad);
                loss
            }
            ConditioningMode::Film => {
                let ex = images_to_tensor(&cond_imgs)?;
                let enc = ck.context_encoder.as_mut().expect("film checkpoint has an encoder");
                let (ctx, etr) = enc.net().forward_train(&ex);
                let (pred, tr) = ck.denoiser.forward_train(&x, &steps, CondBatch::Film(&ctx))?;
                let (loss, grad) = ops::mse_with_grad(&pred, &eps);
                check_loss(step, loss)?;
                let dctx = ck.denoiser.backward(&tr, &grad).expect("film backward yields a context gradient");
                enc.net_mut().backward(&etr, &dctx);
                loss
            }
        };
        opt.step(&mut ck.params_mut());
        ck.training.loss_history.push(loss);
        if let Some(h) = hook.as_mut() {
            h(step, loss);
        }
        if (step + 1) % 500 == 0 {
            tracing::debug!(step = step + 1, loss, "training");
        }
    }
    ck.training.steps += hyper.steps;
    ck.training.drop_prob = hyper.drop_prob;
    ck.training.lr = hyper.lr;
    ck.training.batch_size = hyper.batch_size;
    ck.training.seed = hyper.seed;
    Ok(())
}

fn check_loss(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { step, loss })
    }
}

/// Initializes a checkpoint from `config` and trains it.
pub fn train(
    data: &TrainingSet,
    config: &super::config::DenoiserConfig,
    schedule: crate::diffusion::ScheduleSpec,
    hyper: &TrainHyper,
) -> Result<ModelCheckpoint> {
    let mut ck = ModelCheckpoint::init(config, schedule)?;
    train_in_place(&mut ck, data, hyper, None)?;
    Ok(ck)
}
