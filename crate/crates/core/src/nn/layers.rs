use rand::Rng;

use super::gemm::sgemm;
use super::param::{Module, Param};
use super::tensor::Tensor;

/// 2-D convolution with square kernel, computed per batch item via im2col + GEMM.
///
/// Items never interact, so an item's output is bitwise independent of the
/// batch it was evaluated in.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((cin * k * k) as f32).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), vec![cout, cin, k, k], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![cout], bound, rng),
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, cols: &mut [f32]) {
        let (ho, wo) = self.out_hw(h, w);
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        let plane = ho * wo;
        for ci in 0..self.cin {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        let line = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            line.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *v = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, dx: &mut [f32]) {
        let (ho, wo) = self.out_hw(h, w);
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        let plane = ho * wo;
        for ci in 0..self.cin {
            let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.cin, "conv {} expects {} channels", self.weight.name, self.cin);
        let (ho, wo) = self.out_hw(h, w);
        let plane = ho * wo;
        let kk = self.cin * self.k * self.k;
        let mut out = Tensor::zeros([n, self.cout, ho, wo]);
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![0.0; kk * plane] };
        for i in 0..n {
            let y = out.item_mut(i);
            for (co, chunk) in y.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = self.bias.value[co]);
            }
            let src: &[f32] = if self.is_pointwise() {
                x.item(i)
            } else {
                self.im2col(x.item(i), h, w, &mut cols);
                &cols
            };
            sgemm(self.cout, kk, plane, &self.weight.value, false, src, false, y, 1.0);
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let [n, _, h, w] = x.shape();
        let (ho, wo) = self.out_hw(h, w);
        let plane = ho * wo;
        let kk = self.cin * self.k * self.k;
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![0.0; kk * plane] };
        let mut dcols = vec![0.0; kk * plane];
        for i in 0..n {
            let g = dy.item(i);
            for (co, chunk) in g.chunks(plane).enumerate() {
                self.bias.grad[co] += chunk.iter().sum::<f32>();
            }
            let src: &[f32] = if self.is_pointwise() {
                x.item(i)
            } else {
                self.im2col(x.item(i), h, w, &mut cols);
                &cols
            };
            sgemm(self.cout, plane, kk, g, false, src, true, &mut self.weight.grad, 1.0);
            if self.is_pointwise() {
                sgemm(kk, self.cout, plane, &self.weight.value, true, g, false, dx.item_mut(i), 0.0);
            } else {
                sgemm(kk, self.cout, plane, &self.weight.value, true, g, false, &mut dcols, 0.0);
                self.col2im(&dcols, h, w, dx.item_mut(i));
            }
        }
        dx
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Fully connected layer on `(n, features, 1, 1)` tensors.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    fin: usize,
    fout: usize,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, fin: usize, fout: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fin as f32).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), vec![fout, fin], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![fout], bound, rng),
            fin,
            fout,
        }
    }

    pub fn in_features(&self) -> usize {
        self.fin
    }

    pub fn out_features(&self) -> usize {
        self.fout
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let n = x.n();
        assert_eq!(x.item_len(), self.fin, "linear {} input width", self.weight.name);
        let mut out = Tensor::zeros([n, self.fout, 1, 1]);
        for i in 0..n {
            let y = out.item_mut(i);
            y.copy_from_slice(&self.bias.value);
            sgemm(1, self.fin, self.fout, x.item(i), false, &self.weight.value, true, y, 1.0);
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let n = x.n();
        for (b, g) in self.bias.grad.iter_mut().enumerate() {
            *g += (0..n).map(|i| dy.item(i)[b]).sum::<f32>();
        }
        sgemm(self.fout, n, self.fin, dy.data(), true, x.data(), false, &mut self.weight.grad, 1.0);
        let mut dx = Tensor::zeros(x.shape());
        sgemm(n, self.fout, self.fin, dy.data(), false, &self.weight.value, false, dx.data_mut(), 0.0);
        dx
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Group normalization with per-channel affine parameters.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: Param,
    pub beta: Param,
    groups: usize,
    eps: f32,
}

impl GroupNorm {
    pub fn new(name: &str, groups: usize, channels: usize) -> Self {
        assert!(channels % groups == 0, "channels {channels} not divisible by {groups} groups");
        Self {
            gamma: Param::constant(format!("{name}.gamma"), vec![channels], 1.0),
            beta: Param::constant(format!("{name}.beta"), vec![channels], 0.0),
            groups,
            eps: 1e-5,
        }
    }

    fn stats(&self, item: &[f32], g: usize, glen: usize) -> (f32, f32) {
        let seg = &item[g * glen..(g + 1) * glen];
        let mean = seg.iter().map(|&v| v as f64).sum::<f64>() / glen as f64;
        let var = seg.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / glen as f64;
        (mean as f32, (1.0 / (var + self.eps as f64).sqrt()) as f32)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let [n, c, _, _] = x.shape();
        let plane = x.plane();
        let cpg = c / self.groups;
        let glen = cpg * plane;
        let mut out = Tensor::zeros(x.shape());
        for i in 0..n {
            let src = x.item(i);
            let dst = out.item_mut(i);
            for g in 0..self.groups {
                let (mean, inv) = self.stats(src, g, glen);
                for ch in g * cpg..(g + 1) * cpg {
                    let (ga, be) = (self.gamma.value[ch], self.beta.value[ch]);
                    for p in ch * plane..(ch + 1) * plane {
                        dst[p] = (src[p] - mean) * inv * ga + be;
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let [n, c, _, _] = x.shape();
        let plane = x.plane();
        let cpg = c / self.groups;
        let glen = cpg * plane;
        let mut dx = Tensor::zeros(x.shape());
        let mut xhat = vec![0.0f32; glen];
        let mut dxhat = vec![0.0f32; glen];
        for i in 0..n {
            let src = x.item(i);
            let g_out = dy.item(i);
            let dst = dx.item_mut(i);
            for g in 0..self.groups {
                let (mean, inv) = self.stats(src, g, glen);
                let base = g * glen;
                let (mut s1, mut s2) = (0.0f64, 0.0f64);
                for j in 0..glen {
                    let ch = (base + j) / plane;
                    let xh = (src[base + j] - mean) * inv;
                    let d = g_out[base + j];
                    xhat[j] = xh;
                    self.gamma.grad[ch] += d * xh;
                    self.beta.grad[ch] += d;
                    let dxh = d * self.gamma.value[ch];
                    dxhat[j] = dxh;
                    s1 += dxh as f64;
                    s2 += (dxh * xh) as f64;
                }
                let m1 = (s1 / glen as f64) as f32;
                let m2 = (s2 / glen as f64) as f32;
                for j in 0..glen {
                    dst[base + j] = inv * (dxhat[j] - m1 - xhat[j] * m2);
                }
            }
        }
        dx
    }
}

impl Module for GroupNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
