//! Single-channel floating-point images and portable-graymap I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Row-major grayscale image.
///
/// Sketch images use `0.0` for blank canvas and `1.0` for ink. Diffusion code
/// works on the `[-1, 1]` mapping of the same values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn square(size: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(size, size, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.data
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Maps `[0, 1]` ink values to the `[-1, 1]` diffusion range.
    pub fn to_signed(&self) -> Image {
        self.map(|v| 2.0 * v - 1.0)
    }

    /// Inverse of [`Image::to_signed`], clamped to `[0, 1]`.
    pub fn from_signed(&self) -> Image {
        self.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn threshold(&self, level: f32) -> Image {
        self.map(|v| if v >= level { 1.0 } else { 0.0 })
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Box-filter resampling: each output pixel is the exact area-weighted mean
    /// of the input pixels it covers.
    pub fn resize_area(&self, width: usize, height: usize) -> Image {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let spans_x = area_spans(self.width, width, sx);
        let spans_y = area_spans(self.height, height, sy);
        let mut out = Image::blank(width, height);
        for (oy, ys) in spans_y.iter().enumerate() {
            for (ox, xs) in spans_x.iter().enumerate() {
                let mut acc = 0.0f64;
                for &(iy, wy) in ys {
                    for &(ix, wx) in xs {
                        acc += self.get(ix, iy) as f64 * wx * wy;
                    }
                }
                out.set(ox, oy, (acc / (sx * sy)) as f32);
            }
        }
        out
    }

    /// Bilinear resampling with pixel-centre alignment and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let mut out = Image::blank(width, height);
        for oy in 0..height {
            let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            for ox in 0..width {
                let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                out.set(ox, oy, self.sample_bilinear(fx, fy));
            }
        }
        out
    }

    /// Bilinear lookup at fractional coordinates; points outside the image read as `outside`.
    pub fn sample_bilinear_or(&self, fx: f32, fy: f32, outside: f32) -> f32 {
        if fx < -0.5
            || fy < -0.5
            || fx > self.width as f32 - 0.5
            || fy > self.height as f32 - 0.5
        {
            return outside;
        }
        self.sample_bilinear(
            fx.clamp(0.0, (self.width - 1) as f32),
            fy.clamp(0.0, (self.height - 1) as f32),
        )
    }

    fn sample_bilinear(&self, fx: f32, fy: f32) -> f32 {
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (ax, ay) = (fx - x0 as f32, fy - y0 as f32);
        let top = self.get(x0, y0) * (1.0 - ax) + self.get(x1, y0) * ax;
        let bottom = self.get(x0, y1) * (1.0 - ax) + self.get(x1, y1) * ax;
        top * (1.0 - ay) + bottom * ay
    }

    /// Writes a binary PGM (`P5`). Values are clamped to `[0, 1]` and scaled to
    /// `maxval` (255 for 8-bit, 65535 for 16-bit big-endian samples).
    pub fn write_pgm<W: Write>(&self, mut w: W, maxval: u16) -> Result<()> {
        if maxval == 0 {
            return Err(invalid("PGM maxval must be positive"));
        }
        write!(w, "P5\n{} {}\n{}\n", self.width, self.height, maxval)?;
        let scale = maxval as f32;
        if maxval < 256 {
            let bytes: Vec<u8> = self
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * scale).round() as u8)
                .collect();
            w.write_all(&bytes)?;
        } else {
            let mut bytes = Vec::with_capacity(self.data.len() * 2);
            for &v in &self.data {
                let q = (v.clamp(0.0, 1.0) * scale).round() as u16;
                bytes.extend_from_slice(&q.to_be_bytes());
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(file), maxval)
    }

    /// Reads a binary (`P5`) or ASCII (`P2`) PGM, normalizing to `[0, 1]`.
    pub fn read_pgm<R: Read>(r: R) -> Result<Image> {
        let mut r = BufReader::new(r);
        let magic = next_token(&mut r)?;
        let width: usize = parse_token(&mut r)?;
        let height: usize = parse_token(&mut r)?;
        let maxval: u32 = parse_token(&mut r)?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
        }
        let n = width * height;
        let scale = maxval as f32;
        let data = match magic.as_str() {
            "P5" => {
                let bpp = if maxval < 256 { 1 } else { 2 };
                let mut buf = vec![0u8; n * bpp];
                r.read_exact(&mut buf)?;
                if bpp == 1 {
                    buf.iter().map(|&b| b as f32 / scale).collect()
                } else {
                    buf.chunks_exact(2)
                        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / scale)
                        .collect()
                }
            }
            "P2" => (0..n)
                .map(|_| parse_token::<u32>(&mut r).map(|v| v as f32 / scale))
                .collect::<Result<Vec<_>>>()?,
            other => return Err(Error::Format(format!("unsupported PGM magic {other:?}"))),
        };
        Image::new(width, height, data)
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
        Image::read_pgm(std::fs::File::open(path)?)
    }
}

fn area_spans(src: usize, dst: usize, scale: f64) -> Vec<Vec<(usize, f64)>> {
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = lo + scale;
            let mut v = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if w > 0.0 {
                    v.push((i, w));
                }
                i += 1;
            }
            v
        })
        .collect()
}

fn next_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(Error::Format("unexpected end of PGM header".into()));
    }
    Ok(tok)
}

fn parse_token<T: std::str::FromStr>(r: &mut impl BufRead) -> Result<T> {
    let tok = next_token(r)?;
    tok.parse()
        .map_err(|_| Error::Format(format!("bad PGM number {tok:?}")))
}

/// Normalized 1-D Gaussian kernel of odd `size`. `sigma = None` uses the
/// conventional `0.3·((size−1)/2 − 1) + 0.8`.
pub fn gaussian_kernel(size: usize, sigma: Option<f64>) -> Result<Vec<f64>> {
    if size == 0 || size % 2 == 0 {
        return Err(invalid(format!("kernel size must be odd, got {size}")));
    }
    let sigma = sigma.unwrap_or(0.3 * ((size as f64 - 1.0) * 0.5 - 1.0) + 0.8);
    if sigma <= 0.0 {
        return Err(invalid("kernel sigma must be positive"));
    }
    let r = (size / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Separable Gaussian blur with zero padding outside the image.
pub fn gaussian_blur(img: &Image, size: usize, sigma: Option<f64>) -> Result<Image> {
    let k = gaussian_kernel(size, sigma)?;
    let r = (size / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * img.get(xx as usize, y) as f64;
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = Image::blank(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out.set(x, y, acc as f32);
        }
    }
    Ok(out)
}
