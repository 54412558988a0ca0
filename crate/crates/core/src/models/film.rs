use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{ops, Linear, Module, Param, Tensor};

/// Learnable maps from a conditioning vector to per-channel scale and shift.
///
/// `m(c) = 1 + W_m·c + b_m` and `b(c) = W_b·c + b_b`, so zero weights give
/// the identity modulation.
#[derive(Clone, Debug)]
pub struct FilmParams {
    pub scale: Linear,
    pub shift: Linear,
}

pub struct FilmTrace {
    u: Tensor,
    m: Tensor,
}

impl FilmParams {
    pub fn new<R: Rng>(name: &str, cond_dim: usize, channels: usize, rng: &mut R) -> Self {
        Self {
            scale: Linear::new(&format!("{name}.scale"), cond_dim, channels, rng),
            shift: Linear::new(&format!("{name}.shift"), cond_dim, channels, rng),
        }
    }

    pub fn cond_dim(&self) -> usize {
        self.scale.in_features()
    }

    pub fn channels(&self) -> usize {
        self.scale.out_features()
    }

    /// Per-channel `(m(c), b(c))`, each `(n, channels, 1, 1)`.
    pub fn scale_shift(&self, c: &Tensor) -> (Tensor, Tensor) {
        let m = self.scale.forward(c).map(|v| 1.0 + v);
        (m, self.shift.forward(c))
    }

    pub fn forward_train(&self, u: &Tensor, c: &Tensor) -> (Tensor, FilmTrace) {
        let (m, b) = self.scale_shift(c);
        let y = ops::modulate(u, &m, &b);
        (y, FilmTrace { u: u.clone(), m })
    }

    /// Returns `(du, dc)`.
    pub fn backward(&mut self, tr: &FilmTrace, c: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
        let (du, dm, db) = ops::modulate_backward(&tr.u, &tr.m, dy);
        let mut dc = self.scale.backward(c, &dm);
        dc.add_assign(&self.shift.backward(c, &db));
        (du, dc)
    }
}

impl Module for FilmParams {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.scale.params();
        v.extend(self.shift.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.scale.params_mut();
        v.extend(self.shift.params_mut());
        v
    }
}

/// Feature-wise affine modulation `m(c)·u + b(c)`, broadcast over each channel plane.
pub fn film_condition(u: &Tensor, c: &Tensor, params: &FilmParams) -> Result<Tensor> {
    if c.item_len() != params.cond_dim() {
        return Err(Error::Shape(format!(
            "context has {} features, FiLM expects {}",
            c.item_len(),
            params.cond_dim()
        )));
    }
    if u.c() != params.channels() || u.n() != c.n() {
        return Err(Error::Shape(format!(
            "feature map {:?} incompatible with FiLM over {} channels and {} contexts",
            u.shape(),
            params.channels(),
            c.n()
        )));
    }
    let (m, b) = params.scale_shift(c);
    Ok(ops::modulate(u, &m, &b))
}
