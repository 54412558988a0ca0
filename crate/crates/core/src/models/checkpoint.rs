use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ConditioningMode, DenoiserConfig};
use super::context::{images_to_tensor, ContextEncoder};
use super::unet::{cond_batch, Denoiser};
use crate::checkpoint::{self, LOSS_FILE, METADATA_FILE};
use crate::diffusion::{NoiseSchedule, ScheduleSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Module, Param, ParamSpec, Tensor};

const KIND: &str = "denoiser";
const FORMAT_VERSION: u32 = 1;

/// What a single denoiser evaluation is conditioned on.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a> {
    /// A binary exemplar in ink space (0 blank, 1 ink). Stack mode.
    Exemplar(&'a Image),
    /// The null condition: a blank exemplar in stack mode, nothing otherwise.
    Null,
    /// A precomputed context vector. Film mode.
    Context(&'a [f32]),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub steps: usize,
    pub drop_prob: f64,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Number of training items whose exemplar was replaced by the blank image.
    pub blank_substitutions: u64,
    #[serde(skip)]
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: String,
    format_version: u32,
    config: DenoiserConfig,
    schedule: ScheduleSpec,
    alpha_bars: Vec<f64>,
    training: TrainingMeta,
    params: Vec<ParamSpec>,
}

/// A denoiser together with the schedule it was trained on.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub config: DenoiserConfig,
    pub schedule_spec: ScheduleSpec,
    pub schedule: NoiseSchedule,
    pub denoiser: Denoiser,
    /// Present in film mode.
    pub context_encoder: Option<ContextEncoder>,
    pub training: TrainingMeta,
}

impl ModelCheckpoint {
    /// Freshly initialized parameters.
    pub fn init(config: &DenoiserConfig, schedule_spec: ScheduleSpec) -> Result<Self> {
        let denoiser = Denoiser::new(config)?;
        let context_encoder = (config.conditioning_mode == ConditioningMode::Film).then(|| {
            ContextEncoder::new(
                config.image_size,
                config.context_encoder_width,
                config.context_dim,
                config.seed.wrapping_add(0x5eed),
            )
        });
        Ok(Self {
            config: config.clone(),
            schedule: schedule_spec.build()?,
            schedule_spec,
            denoiser,
            context_encoder,
            training: TrainingMeta::default(),
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.denoiser.params();
        if let Some(c) = &self.context_encoder {
            v.extend(c.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.denoiser.params_mut();
        if let Some(c) = &mut self.context_encoder {
            v.extend(c.params_mut());
        }
        v
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let specs = checkpoint::save_params(dir, &self.params())?;
        let meta = Metadata {
            kind: KIND.into(),
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            schedule: self.schedule_spec,
            alpha_bars: self.schedule.alpha_bars.clone(),
            training: self.training.clone(),
            params: specs,
        };
        checkpoint::write_json(dir.join(METADATA_FILE), &meta)?;
        checkpoint::write_loss_csv(dir.join(LOSS_FILE), &self.training.loss_history)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: Metadata = checkpoint::read_json(dir.join(METADATA_FILE))?;
        if meta.kind != KIND {
            return Err(Error::Format(format!("{} holds a {} checkpoint", dir.display(), meta.kind)));
        }
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {}", meta.format_version)));
        }
        let mut ck = Self::init(&meta.config, meta.schedule)?;
        if ck.schedule.alpha_bars.len() != meta.alpha_bars.len()
            || ck
                .schedule
                .alpha_bars
                .iter()
                .zip(&meta.alpha_bars)
                .any(|(a, b)| (a - b).abs() > 1e-15)
        {
            return Err(Error::Format("stored alpha_bar table disagrees with the schedule".into()));
        }
        checkpoint::load_params(dir, &meta.params, ck.params_mut())?;
        ck.training = meta.training;
        let loss = dir.join(LOSS_FILE);
        if loss.exists() {
            ck.training.loss_history = checkpoint::read_loss_csv(loss)?;
        }
        Ok(ck)
    }

    /// Context vector for a support set (film mode).
    pub fn context(&self, support: &[Image]) -> Result<Vec<f32>> {
        let enc = self
            .context_encoder
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("checkpoint has no context encoder".into()))?;
        super::context::encode_context(support, enc)
    }

    /// Builds the conditioning tensor for a batch of evaluations.
    pub(crate) fn cond_tensor(&self, conds: &[Conditioning<'_>]) -> Result<Option<Tensor>> {
        let s = self.config.image_size;
        match self.config.conditioning_mode {
            ConditioningMode::Stack => {
                let blank = Image::blank(s, s);
                let imgs = conds
                    .iter()
                    .map(|c| match c {
                        Conditioning::Exemplar(im) => {
                            if im.width() != s || im.height() != s {
                                Err(Error::Shape(format!("exemplar must be {s}x{s}")))
                            } else {
                                Ok(*im)
                            }
                        }
                        Conditioning::Null => Ok(&blank),
                        Conditioning::Context(_) => Err(Error::InvalidArgument(
                            "stack-mode model needs an exemplar, not a context vector".into(),
                        )),
                    })
                    .collect::<Result<Vec<&Image>>>()?;
                images_to_tensor(&imgs).map(Some)
            }
            ConditioningMode::Film => {
                let d = self.config.context_dim;
                let mut data = Vec::with_capacity(conds.len() * d);
                for c in conds {
                    match c {
                        Conditioning::Context(v) if v.len() == d => data.extend_from_slice(v),
                        Conditioning::Context(v) => {
                            return Err(Error::Shape(format!(
                                "context vector has {} entries, model expects {d}",
                                v.len()
                            )))
                        }
                        Conditioning::Exemplar(im) => {
                            data.extend(self.context(std::slice::from_ref(*im))?);
                        }
                        Conditioning::Null => data.extend(self.context(&[Image::blank(s, s)])?),
                    }
                }
                Tensor::from_rows(conds.len(), d, data).map(Some)
            }
            ConditioningMode::None => match conds.iter().all(|c| matches!(c, Conditioning::Null)) {
                true => Ok(None),
                false => Err(Error::InvalidArgument(
                    "unconditional model takes no exemplar or context".into(),
                )),
            },
        }
    }

    /// Batched noise prediction. `x_t` is `(n, 1, S, S)`.
    pub fn eps_batch(&self, x_t: &Tensor, steps: &[usize], conds: &[Conditioning<'_>]) -> Result<Tensor> {
        if conds.len() != x_t.n() {
            return Err(Error::Shape("one conditioning entry per batch item required".into()));
        }
        if let Some(&t) = steps.iter().find(|&&t| t >= self.schedule.steps()) {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside schedule of {} steps",
                self.schedule.steps()
            )));
        }
        let cond = self.cond_tensor(conds)?;
        self.denoiser
            .forward(x_t, steps, cond_batch(&cond, self.config.conditioning_mode))
    }
}

/// Noise prediction for a single `S×S` state in the `[-1, 1]` range.
pub fn eps_theta(ck: &ModelCheckpoint, x_t: &[f32], t: usize, cond: Conditioning<'_>) -> Result<Vec<f32>> {
    let s = ck.config.image_size;
    let x = Tensor::from_vec([1, 1, s, s], x_t.to_vec())?;
    Ok(ck.eps_batch(&x, &[t], &[cond])?.into_vec())
}
