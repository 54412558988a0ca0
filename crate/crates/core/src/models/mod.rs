//! Learned denoisers: exemplar-stacked and FiLM-conditioned variants, their
//! training loop and ancestral samplers with optional classifier-free guidance.

mod checkpoint;
mod config;
mod context;
mod film;
mod sample;
mod train;
mod unet;

pub use checkpoint::{eps_theta, Conditioning, ModelCheckpoint, TrainingMeta};
pub use config::{ConditioningMode, DenoiserConfig, TrainHyper};
pub use context::{encode_context, images_to_tensor, ContextEncoder, MAX_SUPPORT};
pub use film::{film_condition, FilmParams};
pub use sample::{renoise_trajectory, sample, sample_batch, sample_one, sample_plain, SampleOptions, SampleTrajectory};
pub use train::{train, train_in_place, StepHook, TrainingSet};
pub use unet::{CondBatch, Denoiser, DenoiserTrace};
