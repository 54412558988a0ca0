//! Small residual encoder-decoder noise predictor with skip connections.
//!
//! One residual block per resolution level on the way down and on the way up,
//! a residual bottleneck block, stride-2 convolutions for downsampling and
//! nearest-neighbour upsampling followed by a convolution. The timestep
//! embedding enters every block, either as a per-channel offset (stack and
//! unconditional modes) or merged with the context vector and applied as a
//! FiLM modulation (film mode).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ConditioningMode, DenoiserConfig};
use super::film::{FilmParams, FilmTrace};
use crate::error::{Error, Result};
use crate::nn::{ops, Conv2d, GroupNorm, Linear, Module, Param, Tensor};

fn groups_for(channels: usize) -> usize {
    [8, 4, 2, 1]
        .into_iter()
        .find(|g| channels % g == 0 && channels / g >= 2)
        .unwrap_or(1)
}

#[derive(Clone, Debug)]
enum BlockCond {
    Offset(Linear),
    Film(FilmParams),
}

#[derive(Clone, Debug)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    cond: BlockCond,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

struct ResTrace {
    x: Tensor,
    n1: Tensor,
    a1: Tensor,
    film: Option<FilmTrace>,
    h2: Tensor,
    n2: Tensor,
    a2: Tensor,
}

impl ResBlock {
    fn new<R: Rng>(name: &str, cin: usize, cout: usize, emb_dim: usize, film: bool, rng: &mut R) -> Self {
        let cond = if film {
            BlockCond::Film(FilmParams::new(&format!("{name}.film"), emb_dim, cout, rng))
        } else {
            BlockCond::Offset(Linear::new(&format!("{name}.emb"), emb_dim, cout, rng))
        };
        Self {
            norm1: GroupNorm::new(&format!("{name}.norm1"), groups_for(cin), cin),
            conv1: Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, 1, 1, rng),
            cond,
            norm2: GroupNorm::new(&format!("{name}.norm2"), groups_for(cout), cout),
            conv2: Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, 1, 1, rng),
            skip: (cin != cout).then(|| Conv2d::new(&format!("{name}.skip"), cin, cout, 1, 1, 0, rng)),
        }
    }

    fn forward(&self, x: &Tensor, emb: &Tensor) -> (Tensor, ResTrace) {
        let n1 = self.norm1.forward(x);
        let a1 = ops::silu(&n1);
        let h1 = self.conv1.forward(&a1);
        let (h2, film) = match &self.cond {
            BlockCond::Offset(lin) => (ops::add_channel_bias(&h1, &lin.forward(emb)), None),
            BlockCond::Film(f) => {
                let (y, tr) = f.forward_train(&h1, emb);
                (y, Some(tr))
            }
        };
        let n2 = self.norm2.forward(&h2);
        let a2 = ops::silu(&n2);
        let mut out = self.conv2.forward(&a2);
        match &self.skip {
            Some(s) => out.add_assign(&s.forward(x)),
            None => out.add_assign(x),
        }
        let tr = ResTrace {
            x: x.clone(),
            n1,
            a1,
            film,
            h2,
            n2,
            a2,
        };
        (out, tr)
    }

    /// Returns the input gradient and adds the embedding gradient into `demb`.
    fn backward(&mut self, tr: &ResTrace, emb: &Tensor, dout: &Tensor, demb: &mut Tensor) -> Tensor {
        let da2 = self.conv2.backward(&tr.a2, dout);
        let dn2 = ops::silu_backward(&tr.n2, &da2);
        let dh2 = self.norm2.backward(&tr.h2, &dn2);
        let dh1 = match (&mut self.cond, &tr.film) {
            (BlockCond::Offset(lin), _) => {
                demb.add_assign(&lin.backward(emb, &ops::channel_sums(&dh2)));
                dh2
            }
            (BlockCond::Film(f), Some(ftr)) => {
                let (du, dc) = f.backward(ftr, emb, &dh2);
                demb.add_assign(&dc);
                du
            }
            (BlockCond::Film(_), None) => unreachable!("film block traced without film state"),
        };
        let da1 = self.conv1.backward(&tr.a1, &dh1);
        let dn1 = ops::silu_backward(&tr.n1, &da1);
        let mut dx = self.norm1.backward(&tr.x, &dn1);
        match &mut self.skip {
            Some(s) => dx.add_assign(&s.backward(&tr.x, dout)),
            None => dx.add_assign(dout),
        }
        dx
    }
}

impl Module for ResBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.norm1.params();
        v.extend(self.conv1.params());
        match &self.cond {
            BlockCond::Offset(l) => v.extend(l.params()),
            BlockCond::Film(f) => v.extend(f.params()),
        }
        v.extend(self.norm2.params());
        v.extend(self.conv2.params());
        if let Some(s) = &self.skip {
            v.extend(s.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.norm1.params_mut();
        v.extend(self.conv1.params_mut());
        match &mut self.cond {
            BlockCond::Offset(l) => v.extend(l.params_mut()),
            BlockCond::Film(f) => v.extend(f.params_mut()),
        }
        v.extend(self.norm2.params_mut());
        v.extend(self.conv2.params_mut());
        if let Some(s) = &mut self.skip {
            v.extend(s.params_mut());
        }
        v
    }
}

/// Conditioning tensors for a batch of denoiser evaluations.
#[derive(Clone, Copy, Debug)]
pub enum CondBatch<'a> {
    None,
    /// `(n, 1, S, S)` exemplars in the `[-1, 1]` range.
    Stack(&'a Tensor),
    /// `(n, context_dim, 1, 1)` context vectors.
    Film(&'a Tensor),
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    config: DenoiserConfig,
    time1: Linear,
    time2: Linear,
    merge: Option<Linear>,
    conv_in: Conv2d,
    down: Vec<ResBlock>,
    downsample: Vec<Conv2d>,
    mid: ResBlock,
    up: Vec<ResBlock>,
    upconv: Vec<Conv2d>,
    out_norm: GroupNorm,
    conv_out: Conv2d,
}

pub struct DenoiserTrace {
    te: Tensor,
    t1: Tensor,
    t1a: Tensor,
    merge_in: Option<Tensor>,
    emb: Tensor,
    emb_act: Tensor,
    input: Tensor,
    down: Vec<ResTrace>,
    down_x: Vec<Tensor>,
    mid: ResTrace,
    up: Vec<ResTrace>,
    up_x: Vec<Tensor>,
    out_x: Tensor,
    out_n: Tensor,
    out_a: Tensor,
}

impl Denoiser {
    pub fn new(config: &DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let ch = config.level_channels();
        let e = config.time_embed_dim;
        let film = config.conditioning_mode == ConditioningMode::Film;
        let levels = ch.len();
        let conv_in = Conv2d::new("conv_in", config.input_channels(), ch[0], 3, 1, 1, &mut rng);
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        for i in 0..levels {
            let cin = if i == 0 { ch[0] } else { ch[i - 1] };
            down.push(ResBlock::new(&format!("down{i}"), cin, ch[i], e, film, &mut rng));
            if i + 1 < levels {
                downsample.push(Conv2d::new(&format!("downsample{i}"), ch[i], ch[i], 3, 2, 1, &mut rng));
            }
        }
        let mid = ResBlock::new("mid", ch[levels - 1], ch[levels - 1], e, film, &mut rng);
        let mut up = Vec::new();
        let mut upconv = Vec::new();
        for i in 0..levels {
            up.push(ResBlock::new(&format!("up{i}"), 2 * ch[i], ch[i], e, film, &mut rng));
            if i > 0 {
                upconv.push(Conv2d::new(&format!("upconv{i}"), ch[i], ch[i - 1], 3, 1, 1, &mut rng));
            }
        }
        Ok(Self {
            time1: Linear::new("time1", e, e, &mut rng),
            time2: Linear::new("time2", e, e, &mut rng),
            merge: film.then(|| Linear::new("merge", e + config.context_dim, e, &mut rng)),
            conv_in,
            down,
            downsample,
            mid,
            up,
            upconv,
            out_norm: GroupNorm::new("out_norm", groups_for(ch[0]), ch[0]),
            conv_out: Conv2d::new("conv_out", ch[0], 1, 3, 1, 1, &mut rng),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    fn check_inputs(&self, x_t: &Tensor, steps: &[usize], cond: CondBatch<'_>) -> Result<()> {
        let s = self.config.image_size;
        if x_t.shape()[1..] != [1, s, s] {
            return Err(Error::Shape(format!(
                "denoiser expects (n, 1, {s}, {s}) input, got {:?}",
                x_t.shape()
            )));
        }
        if steps.len() != x_t.n() {
            return Err(Error::Shape("one timestep per batch item required".into()));
        }
        match (self.config.conditioning_mode, cond) {
            (ConditioningMode::Stack, CondBatch::Stack(e)) if e.shape() == x_t.shape() => Ok(()),
            (ConditioningMode::Film, CondBatch::Film(c))
                if c.n() == x_t.n() && c.item_len() == self.config.context_dim =>
            {
                Ok(())
            }
            (ConditioningMode::None, CondBatch::None) => Ok(()),
            (mode, _) => Err(Error::InvalidArgument(format!(
                "conditioning input does not match {mode:?} mode or has the wrong shape"
            ))),
        }
    }

    pub fn forward(&self, x_t: &Tensor, steps: &[usize], cond: CondBatch<'_>) -> Result<Tensor> {
        Ok(self.forward_train(x_t, steps, cond)?.0)
    }

    pub fn forward_train(
        &self,
        x_t: &Tensor,
        steps: &[usize],
        cond: CondBatch<'_>,
    ) -> Result<(Tensor, DenoiserTrace)> {
        self.check_inputs(x_t, steps, cond)?;
        let te = ops::timestep_embedding(steps, self.config.time_embed_dim);
        let t1 = self.time1.forward(&te);
        let t1a = ops::silu(&t1);
        let temb = self.time2.forward(&t1a);
        let (emb, merge_in) = match (&self.merge, cond) {
            (Some(m), CondBatch::Film(c)) => {
                let mi = ops::concat_channels(&temb, c);
                (m.forward(&mi), Some(mi))
            }
            _ => (temb, None),
        };
        let emb_act = ops::silu(&emb);
        let input = match cond {
            CondBatch::Stack(e) => ops::concat_channels(x_t, e),
            _ => x_t.clone(),
        };

        let levels = self.down.len();
        let mut h = self.conv_in.forward(&input);
        let mut down_tr = Vec::with_capacity(levels);
        let mut down_x = Vec::with_capacity(levels.saturating_sub(1));
        let mut skips = Vec::with_capacity(levels);
        for i in 0..levels {
            let (o, tr) = self.down[i].forward(&h, &emb_act);
            down_tr.push(tr);
            skips.push(o.clone());
            h = if i + 1 < levels {
                let y = self.downsample[i].forward(&o);
                down_x.push(o);
                y
            } else {
                o
            };
        }
        let (mut h, mid_tr) = self.mid.forward(&h, &emb_act);
        let mut up_tr: Vec<Option<ResTrace>> = (0..levels).map(|_| None).collect();
        let mut up_x: Vec<Tensor> = Vec::new();
        for i in (0..levels).rev() {
            let cat = ops::concat_channels(&h, &skips[i]);
            let (o, tr) = self.up[i].forward(&cat, &emb_act);
            up_tr[i] = Some(tr);
            h = if i > 0 {
                let u = ops::upsample2(&o);
                let y = self.upconv[i - 1].forward(&u);
                up_x.push(u);
                y
            } else {
                o
            };
        }
        up_x.reverse(); // index i-1 holds the upsampled input of upconv[i-1]
        let out_n = self.out_norm.forward(&h);
        let out_a = ops::silu(&out_n);
        let y = self.conv_out.forward(&out_a);
        let trace = DenoiserTrace {
            te,
            t1,
            t1a,
            merge_in,
            emb,
            emb_act,
            input,
            down: down_tr,
            down_x,
            mid: mid_tr,
            up: up_tr.into_iter().map(|t| t.expect("every level traced")).collect(),
            up_x,
            out_x: h,
            out_n,
            out_a,
        };
        Ok((y, trace))
    }

    /// Backpropagates `dy` through a traced forward pass, accumulating parameter
    /// gradients. Returns the context gradient in film mode.
    pub fn backward(&mut self, tr: &DenoiserTrace, dy: &Tensor) -> Option<Tensor> {
        let levels = self.down.len();
        let mut demb = Tensor::zeros(tr.emb_act.shape());
        let da = self.conv_out.backward(&tr.out_a, dy);
        let dn = ops::silu_backward(&tr.out_n, &da);
        let mut dh = self.out_norm.backward(&tr.out_x, &dn);

        let mut dskips: Vec<Option<Tensor>> = (0..levels).map(|_| None).collect();
        for i in 0..levels {
            if i > 0 {
                // dh is the gradient at the output of upconv[i-1]
                let du = self.upconv[i - 1].backward(&tr.up_x[i - 1], &dh);
                dh = ops::upsample2_backward(&du);
            }
            let dcat = self.up[i].backward(&tr.up[i], &tr.emb_act, &dh, &mut demb);
            let (dprev, dskip) = ops::split_channels(&dcat, dcat.c() / 2);
            dskips[i] = Some(dskip);
            dh = dprev;
        }
        dh = self.mid.backward(&tr.mid, &tr.emb_act, &dh, &mut demb);
        for i in (0..levels).rev() {
            let mut g = if i + 1 < levels {
                self.downsample[i].backward(&tr.down_x[i], &dh)
            } else {
                dh
            };
            g.add_assign(dskips[i].as_ref().expect("skip gradient"));
            dh = self.down[i].backward(&tr.down[i], &tr.emb_act, &g, &mut demb);
        }
        let _ = self.conv_in.backward(&tr.input, &dh);

        let demb_pre = ops::silu_backward(&tr.emb, &demb);
        let (dtemb, dctx) = match (&mut self.merge, &tr.merge_in) {
            (Some(m), Some(mi)) => {
                let dmi = m.backward(mi, &demb_pre);
                let (dt, dc) = ops::split_channels(&dmi, self.config.time_embed_dim);
                (dt, Some(dc))
            }
            _ => (demb_pre, None),
        };
        let dt1a = self.time2.backward(&tr.t1a, &dtemb);
        let dt1 = ops::silu_backward(&tr.t1, &dt1a);
        let _ = self.time1.backward(&tr.te, &dt1);
        dctx
    }
}

impl Module for Denoiser {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.time1.params();
        v.extend(self.time2.params());
        if let Some(m) = &self.merge {
            v.extend(m.params());
        }
        v.extend(self.conv_in.params());
        for b in &self.down {
            v.extend(b.params());
        }
        for c in &self.downsample {
            v.extend(c.params());
        }
        v.extend(self.mid.params());
        for b in &self.up {
            v.extend(b.params());
        }
        for c in &self.upconv {
            v.extend(c.params());
        }
        v.extend(self.out_norm.params());
        v.extend(self.conv_out.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.time1.params_mut();
        v.extend(self.time2.params_mut());
        if let Some(m) = &mut self.merge {
            v.extend(m.params_mut());
        }
        v.extend(self.conv_in.params_mut());
        for b in &mut self.down {
            v.extend(b.params_mut());
        }
        for c in &mut self.downsample {
            v.extend(c.params_mut());
        }
        v.extend(self.mid.params_mut());
        for b in &mut self.up {
            v.extend(b.params_mut());
        }
        for c in &mut self.upconv {
            v.extend(c.params_mut());
        }
        v.extend(self.out_norm.params_mut());
        v.extend(self.conv_out.params_mut());
        v
    }
}

pub(crate) fn cond_batch(cond: &Option<Tensor>, mode: ConditioningMode) -> CondBatch<'_> {
    match (cond, mode) {
        (Some(c), ConditioningMode::Stack) => CondBatch::Stack(c),
        (Some(c), ConditioningMode::Film) => CondBatch::Film(c),
        _ => CondBatch::None,
    }
}
