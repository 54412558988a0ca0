use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;

/// Random geometric augmentation ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    /// Rotation drawn uniformly from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    /// Translation along each axis drawn from `[-translation_px, translation_px]`.
    pub translation_px: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            rotation_deg: 180.0,
            translation_px: 10.0,
            zoom_min: 0.5,
            zoom_max: 1.5,
            hflip: true,
            vflip: true,
        }
    }
}

impl AugmentationPolicy {
    /// No augmentation at all.
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            translation_px: 0.0,
            zoom_min: 1.0,
            zoom_max: 1.0,
            hflip: false,
            vflip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation_deg) {
            return Err(invalid("rotation range must lie within [0, 180] degrees"));
        }
        if !(0.0..=10.0).contains(&self.translation_px) {
            return Err(invalid("translation range must lie within [0, 10] pixels"));
        }
        if !(0.5 <= self.zoom_min && self.zoom_min <= self.zoom_max && self.zoom_max <= 1.5) {
            return Err(invalid("zoom range must satisfy 0.5 <= min <= max <= 1.5"));
        }
        Ok(())
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> AugmentParams {
        let sym = |rng: &mut R, r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        AugmentParams {
            angle_deg: sym(rng, self.rotation_deg),
            tx: sym(rng, self.translation_px),
            ty: sym(rng, self.translation_px),
            zoom: if self.zoom_max > self.zoom_min {
                rng.gen_range(self.zoom_min..=self.zoom_max)
            } else {
                self.zoom_min
            },
            hflip: self.hflip && rng.gen_bool(0.5),
            vflip: self.vflip && rng.gen_bool(0.5),
        }
    }
}

/// One concrete draw from an [`AugmentationPolicy`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub angle_deg: f64,
    pub tx: f64,
    pub ty: f64,
    pub zoom: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            angle_deg: 0.0,
            tx: 0.0,
            ty: 0.0,
            zoom: 1.0,
            hflip: false,
            vflip: false,
        }
    }
}

/// Applies flip, zoom and rotation about the image centre, then translation.
/// Uncovered pixels read as blank.
pub fn augment(img: &Image, p: &AugmentParams) -> Image {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = p.angle_deg.to_radians().sin_cos();
    let mut out = Image::blank(w, h);
    for oy in 0..h {
        for ox in 0..w {
            // inverse map: undo translation, rotation, zoom, then flips
            let dx = ox as f64 - cx - p.tx;
            let dy = oy as f64 - cy - p.ty;
            let mut sx = (c * dx + s * dy) / p.zoom;
            let mut sy = (-s * dx + c * dy) / p.zoom;
            if p.hflip {
                sx = -sx;
            }
            if p.vflip {
                sy = -sy;
            }
            let v = img.sample_bilinear_or((sx + cx) as f32, (sy + cy) as f32, 0.0);
            out.set(ox, oy, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dot_image() -> Image {
        let mut im = Image::blank(9, 9);
        im.set(6, 4, 1.0);
        im
    }

    #[test]
    fn identity_is_exact() {
        let im = dot_image();
        assert_eq!(augment(&im, &AugmentParams::identity()), im);
    }

    #[test]
    fn quarter_turn_moves_pixel() {
        let p = AugmentParams {
            angle_deg: 90.0,
            ..AugmentParams::identity()
        };
        let out = augment(&dot_image(), &p);
        // (6,4) is 2 px right of centre; a quarter turn puts it 2 px below
        assert!((out.get(4, 6) - 1.0).abs() < 1e-5, "{:?}", out.pixels());
    }

    #[test]
    fn translation_and_flip() {
        let p = AugmentParams {
            tx: 1.0,
            hflip: true,
            ..AugmentParams::identity()
        };
        let out = augment(&dot_image(), &p);
        assert_eq!(out.get(3, 4), 1.0);
    }

    #[test]
    fn draws_respect_policy_bounds() {
        let pol = AugmentationPolicy::default();
        pol.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let p = pol.draw(&mut rng);
            assert!(p.angle_deg.abs() <= 180.0 && p.tx.abs() <= 10.0 && p.ty.abs() <= 10.0);
            assert!((0.5..=1.5).contains(&p.zoom));
        }
        let bad = AugmentationPolicy {
            rotation_deg: 200.0,
            ..pol
        };
        assert!(bad.validate().is_err());
    }
}
