use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Conditioning, ModelCheckpoint};
use super::config::ConditioningMode;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::Tensor;

/// Items evaluated together in one denoiser call during batched sampling.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Guidance scale; `None` runs the plain conditional sampler (one branch only).
    pub gamma: Option<f64>,
    /// Keep every intermediate state and both noise predictions.
    pub record: bool,
    /// Clamp the implied `x0` to `[-1, 1]` before forming each reverse mean.
    pub clip_x0: bool,
}

impl SampleOptions {
    pub fn guided(gamma: f64) -> Self {
        Self {
            gamma: Some(gamma),
            record: true,
            clip_x0: false,
        }
    }

    pub fn plain() -> Self {
        Self {
            gamma: None,
            record: true,
            clip_x0: false,
        }
    }
}

/// One reverse-diffusion run. States and noise predictions run from `t = T−1` down to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrajectory {
    pub size: usize,
    /// Final state in `[-1, 1]`.
    pub final_state: Vec<f32>,
    /// `(t, x_t)` fed to the denoiser at each step.
    pub states: Vec<(usize, Vec<f32>)>,
    pub eps_cond: Vec<Vec<f32>>,
    /// Empty for the plain sampler.
    pub eps_uncond: Vec<Vec<f32>>,
}

impl SampleTrajectory {
    /// Final state mapped back to ink space `[0, 1]`.
    pub fn image(&self) -> Image {
        Image::square(self.size, self.final_state.clone())
            .expect("square state")
            .from_signed()
    }

    /// Final state thresholded to a binary sketch.
    pub fn binary_image(&self) -> Image {
        self.image().threshold(0.5)
    }

    pub fn has_uncond(&self) -> bool {
        !self.eps_uncond.is_empty() && self.eps_uncond.len() == self.eps_cond.len()
    }
}

fn check_request(ck: &ModelCheckpoint, cond: &Conditioning<'_>, opts: &SampleOptions) -> Result<()> {
    if let Some(g) = opts.gamma {
        if !(g >= 0.0) || !g.is_finite() {
            return Err(Error::InvalidArgument(format!("guidance scale must be >= 0, got {g}")));
        }
        if ck.config.conditioning_mode == ConditioningMode::None {
            return Err(Error::InvalidArgument("guided sampling needs a conditional model".into()));
        }
    }
    if ck.config.conditioning_mode == ConditioningMode::Stack && matches!(cond, Conditioning::Null) && opts.gamma.is_some() {
        return Err(Error::InvalidArgument("guided sampling in stack mode needs an exemplar".into()));
    }
    Ok(())
}

/// Guided ancestral sampling with `ε̂ = (1+γ)·ε(x_t, y) − γ·ε(x_t, ∅)`.
pub fn sample(ck: &ModelCheckpoint, cond: Conditioning<'_>, gamma: f64, seed: u64) -> Result<SampleTrajectory> {
    sample_one(ck, cond, seed, &SampleOptions::guided(gamma))
}

/// Plain conditional ancestral sampling: a single denoiser branch per step.
pub fn sample_plain(ck: &ModelCheckpoint, cond: Conditioning<'_>, seed: u64) -> Result<SampleTrajectory> {
    sample_one(ck, cond, seed, &SampleOptions::plain())
}

pub fn sample_one(
    ck: &ModelCheckpoint,
    cond: Conditioning<'_>,
    seed: u64,
    opts: &SampleOptions,
) -> Result<SampleTrajectory> {
    check_request(ck, &cond, opts)?;
    Ok(reverse_chunk(ck, &[(cond, seed)], opts)?.pop().expect("one trajectory"))
}

/// Samples many items, each with its own seed. Items are evaluated in small
/// batches; because every item owns its random stream and the network treats
/// batch items independently, results equal one-at-a-time sampling.
pub fn sample_batch(
    ck: &ModelCheckpoint,
    items: &[(Conditioning<'_>, u64)],
    opts: &SampleOptions,
) -> Result<Vec<SampleTrajectory>> {
    for (c, _) in items {
        check_request(ck, c, opts)?;
    }
    let chunks: Vec<Result<Vec<SampleTrajectory>>> = items
        .par_chunks(CHUNK)
        .map(|chunk| reverse_chunk(ck, chunk, opts))
        .collect();
    let mut out = Vec::with_capacity(items.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn reverse_chunk(
    ck: &ModelCheckpoint,
    items: &[(Conditioning<'_>, u64)],
    opts: &SampleOptions,
) -> Result<Vec<SampleTrajectory>> {
    let s = ck.config.image_size;
    let plane = s * s;
    let n = items.len();
    let sched = &ck.schedule;
    let t_max = sched.steps();
    let mut rngs: Vec<ChaCha8Rng> = items.iter().map(|(_, seed)| ChaCha8Rng::seed_from_u64(*seed)).collect();
    let mut xs: Vec<Vec<f32>> = rngs.iter_mut().map(|r| normal_vec(r, plane)).collect();
    let mut trajs: Vec<SampleTrajectory> = (0..n)
        .map(|_| SampleTrajectory {
            size: s,
            final_state: Vec::new(),
            states: Vec::new(),
            eps_cond: Vec::new(),
            eps_uncond: Vec::new(),
        })
        .collect();

    let mut conds: Vec<Conditioning<'_>> = items.iter().map(|(c, _)| *c).collect();
    if opts.gamma.is_some() {
        conds.extend(std::iter::repeat(Conditioning::Null).take(n));
    }
    let width = conds.len();
    // Conditioning inputs are fixed across steps; encode them once.
    let cond_tensor = ck.cond_tensor(&conds)?;

    for t in (0..t_max).rev() {
        let mut data = Vec::with_capacity(width * plane);
        for _ in 0..width / n {
            for x in &xs {
                data.extend_from_slice(x);
            }
        }
        let x_in = Tensor::from_vec([width, 1, s, s], data)?;
        let steps = vec![t; width];
        let eps = ck.denoiser.forward(&x_in, &steps, super::unet::cond_batch(&cond_tensor, ck.config.conditioning_mode))?;

        for i in 0..n {
            let ec = eps.item(i);
            let eps_hat: Vec<f32> = match opts.gamma {
                // exact replay of the conditional branch; (1+0)·a − 0·b can flip the sign of a zero
                None | Some(0.0) => ec.to_vec(),
                Some(g) => {
                    let eu = eps.item(n + i);
                    ec.iter()
                        .zip(eu)
                        .map(|(&c, &u)| ((1.0 + g) * c as f64 - g * u as f64) as f32)
                        .collect()
                }
            };
            if opts.record {
                trajs[i].states.push((t, xs[i].clone()));
                trajs[i].eps_cond.push(ec.to_vec());
                if opts.gamma.is_some() {
                    trajs[i].eps_uncond.push(eps.item(n + i).to_vec());
                }
            }
            if t == 0 {
                let x0 = sched.predict_x0_from_eps(&xs[i], &eps_hat, 0)?;
                xs[i] = x0.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            } else {
                let mean = if opts.clip_x0 {
                    let x0: Vec<f32> = sched
                        .predict_x0_from_eps(&xs[i], &eps_hat, t)?
                        .into_iter()
                        .map(|v| v.clamp(-1.0, 1.0))
                        .collect();
                    sched.posterior_mean_from_x0(&xs[i], &x0, t)?
                } else {
                    sched.posterior_mean_from_eps(&xs[i], &eps_hat, t)?
                };
                let sigma = sched.reverse_std(t) as f32;
                let z = normal_vec(&mut rngs[i], plane);
                xs[i] = mean.iter().zip(&z).map(|(m, z)| m + sigma * z).collect();
            }
        }
    }
    for (tr, x) in trajs.iter_mut().zip(xs) {
        tr.final_state = x;
    }
    Ok(trajs)
}

/// Re-noises a finished sample to every timestep with fresh noise and records
/// both noise predictions at each step (the alternative trajectory for
/// importance maps). `x0` is in ink space.
pub fn renoise_trajectory(
    ck: &ModelCheckpoint,
    x0: &Image,
    cond: Conditioning<'_>,
    seed: u64,
) -> Result<SampleTrajectory> {
    let s = ck.config.image_size;
    if x0.width() != s || x0.height() != s {
        return Err(Error::Shape(format!("sample must be {s}x{s}")));
    }
    check_request(ck, &cond, &SampleOptions::guided(0.0))?;
    let plane = s * s;
    let x0s: Vec<f32> = x0.pixels().iter().map(|v| 2.0 * v - 1.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cond_tensor = ck.cond_tensor(&[cond, Conditioning::Null])?;
    let mut tr = SampleTrajectory {
        size: s,
        final_state: x0s.clone(),
        states: Vec::new(),
        eps_cond: Vec::new(),
        eps_uncond: Vec::new(),
    };
    for t in (0..ck.schedule.steps()).rev() {
        let e = normal_vec(&mut rng, plane);
        let xt = ck.schedule.forward_marginal_sample(&x0s, t, &e)?;
        let mut data = xt.clone();
        data.extend_from_slice(&xt);
        let x_in = Tensor::from_vec([2, 1, s, s], data)?;
        let eps = ck.denoiser.forward(&x_in, &[t, t], super::unet::cond_batch(&cond_tensor, ck.config.conditioning_mode))?;
        tr.states.push((t, xt));
        tr.eps_cond.push(eps.item(0).to_vec());
        tr.eps_uncond.push(eps.item(1).to_vec());
    }
    Ok(tr)
}
