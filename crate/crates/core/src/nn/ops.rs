//! Parameter-free tensor operations with explicit backward passes.

use super::tensor::Tensor;

#[inline]
fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

pub fn silu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        let s = sigmoid(v);
        *g *= s * (1.0 + v * (1.0 - s));
    }
    dx
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[(p * 2 * h + y) * 2 * w + xx] = src[(p * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dy: &Tensor) -> Tensor {
    let [n, c, h2, w2] = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    let src = dy.data();
    let dst = dx.data_mut();
    for p in 0..n * c {
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[(p * h + y / 2) * w + xx / 2] += src[(p * h2 + y) * w2 + xx];
            }
        }
    }
    dx
}

/// Concatenates along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let [n, ca, h, w] = a.shape();
    assert_eq!([b.n(), b.h(), b.w()], [n, h, w], "concat spatial mismatch");
    let cb = b.c();
    let mut out = Tensor::zeros([n, ca + cb, h, w]);
    for i in 0..n {
        let dst = out.item_mut(i);
        dst[..ca * h * w].copy_from_slice(a.item(i));
        dst[ca * h * w..].copy_from_slice(b.item(i));
    }
    out
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels(dy: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let [n, c, h, w] = dy.shape();
    let mut da = Tensor::zeros([n, ca, h, w]);
    let mut db = Tensor::zeros([n, c - ca, h, w]);
    let cut = ca * h * w;
    for i in 0..n {
        let src = dy.item(i);
        da.item_mut(i).copy_from_slice(&src[..cut]);
        db.item_mut(i).copy_from_slice(&src[cut..]);
    }
    (da, db)
}

/// Adds a per-item, per-channel offset `e` of shape `(n, c, 1, 1)` to every pixel.
pub fn add_channel_bias(x: &Tensor, e: &Tensor) -> Tensor {
    let plane = x.plane();
    let mut out = x.clone();
    for i in 0..x.n() {
        let off = e.item(i);
        for (ch, chunk) in out.item_mut(i).chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v += off[ch]);
        }
    }
    out
}

/// Gradient of [`add_channel_bias`] with respect to the offset.
pub fn channel_sums(dy: &Tensor) -> Tensor {
    let plane = dy.plane();
    let mut de = Tensor::zeros([dy.n(), dy.c(), 1, 1]);
    for i in 0..dy.n() {
        let sums: Vec<f32> = dy.item(i).chunks(plane).map(|c| c.iter().sum()).collect();
        de.item_mut(i).copy_from_slice(&sums);
    }
    de
}

/// Feature-wise affine modulation: `scale · x + shift`, with `scale`/`shift` of shape `(n, c, 1, 1)`.
pub fn modulate(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Tensor {
    let plane = x.plane();
    let mut out = x.clone();
    for i in 0..x.n() {
        let (m, b) = (scale.item(i), shift.item(i));
        for (ch, chunk) in out.item_mut(i).chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v = m[ch] * *v + b[ch]);
        }
    }
    out
}

/// Returns `(dx, dscale, dshift)` for [`modulate`].
pub fn modulate_backward(x: &Tensor, scale: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let plane = x.plane();
    let [n, c, _, _] = x.shape();
    let mut dx = dy.clone();
    let mut dscale = Tensor::zeros([n, c, 1, 1]);
    for i in 0..n {
        let m = scale.item(i).to_vec();
        let xi = x.item(i).to_vec();
        let ds = dscale.item_mut(i);
        for (ch, chunk) in dx.item_mut(i).chunks_mut(plane).enumerate() {
            let mut acc = 0.0;
            for (j, g) in chunk.iter_mut().enumerate() {
                acc += *g * xi[ch * plane + j];
                *g *= m[ch];
            }
            ds[ch] = acc;
        }
    }
    (dx, dscale, channel_sums(dy))
}

/// Sinusoidal embedding of integer timesteps, shape `(n, dim, 1, 1)`.
pub fn timestep_embedding(steps: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = Tensor::zeros([steps.len(), dim, 1, 1]);
    for (i, &t) in steps.iter().enumerate() {
        let row = out.item_mut(i);
        for j in 0..half {
            let freq = (-(10_000f64.ln()) * j as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            row[j] = arg.sin() as f32;
            row[half + j] = arg.cos() as f32;
        }
    }
    out
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_with_grad(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let n = pred.data().len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = 0.0f64;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += (d as f64) * (d as f64);
        *g = (2.0 * d as f64 / n) as f32;
    }
    (loss / n, grad)
}
