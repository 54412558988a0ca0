use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Side of the square canvas used by the simplified stroke format.
pub const SOURCE_CANVAS: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polyline {
    pub xs: Vec<i32>,
    pub ys: Vec<i32>,
}

impl Polyline {
    pub fn new(xs: Vec<i32>, ys: Vec<i32>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Shape(format!("{} x vs {} y coordinates", xs.len(), ys.len())));
        }
        if xs.is_empty() {
            return Err(Error::InvalidArgument("polyline without points".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn points(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrokeDrawing {
    pub category: String,
    pub strokes: Vec<Polyline>,
    pub source_id: String,
    /// Side of the square source canvas.
    pub canvas: usize,
}

impl StrokeDrawing {
    pub fn new(category: &str, strokes: Vec<Polyline>, source_id: &str, canvas: usize) -> Result<Self> {
        let d = Self {
            category: category.into(),
            strokes,
            source_id: source_id.into(),
            canvas,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas == 0 {
            return Err(Error::InvalidArgument("canvas must be positive".into()));
        }
        let c = self.canvas as i32;
        for s in &self.strokes {
            if s.xs.is_empty() || s.xs.len() != s.ys.len() {
                return Err(Error::Shape(format!("malformed stroke in drawing {}", self.source_id)));
            }
            if s.points().any(|(x, y)| x < 0 || y < 0 || x >= c || y >= c) {
                return Err(Error::InvalidArgument(format!(
                    "drawing {} leaves the {c}x{c} canvas",
                    self.source_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct NdjsonRecord {
    word: String,
    drawing: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    key_id: Option<serde_json::Value>,
}

/// Reads one drawing per line (`word`, `drawing` as `[[x...], [y...]]` stroke
/// pairs). Extra per-stroke arrays such as timings are ignored; blank lines are skipped.
pub fn parse_ndjson(reader: impl BufRead, canvas: usize) -> Result<Vec<StrokeDrawing>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NdjsonRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        let strokes = rec
            .drawing
            .iter()
            .map(|s| {
                if s.len() < 2 {
                    return Err(Error::Format(format!("line {}: stroke lacks x or y array", lineno + 1)));
                }
                let conv = |v: &[f64]| v.iter().map(|&c| c.round() as i32).collect::<Vec<_>>();
                Polyline::new(conv(&s[0]), conv(&s[1]))
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let source_id = match rec.key_id {
            Some(serde_json::Value::String(s)) => s,
            Some(v) => v.to_string(),
            None => format!("line{}", lineno + 1),
        };
        let d = StrokeDrawing::new(&rec.word, strokes, &source_id, canvas)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        out.push(d);
    }
    Ok(out)
}

/// Integer points of the segment from `a` to `b`, endpoints included.
pub fn bresenham(a: (i32, i32), b: (i32, i32)) -> Vec<(i32, i32)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - x).abs();
    let dy = -(b.1 - y).abs();
    let sx = if x < b.0 { 1 } else { -1 };
    let sy = if y < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut pts = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        pts.push((x, y));
        if (x, y) == b {
            return pts;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Width in source pixels of the square pen: wide enough that every pen
/// position fully covers at least one output pixel.
pub fn pen_width(canvas: usize, size: usize) -> usize {
    ((2 * canvas) as f64 / size as f64).ceil().max(1.0) as usize
}

/// Draws the polylines on the source canvas, area-downsamples to `size` and
/// thresholds at 0.5. Ink is 1 on a 0 background.
pub fn rasterize(drawing: &StrokeDrawing, size: usize) -> Result<Image> {
    if size == 0 {
        return Err(Error::InvalidArgument("output size must be positive".into()));
    }
    if drawing.strokes.is_empty() {
        return Err(Error::InvalidArgument(format!("drawing {} has no strokes", drawing.source_id)));
    }
    drawing.validate()?;
    let c = drawing.canvas;
    let w = pen_width(c, size) as i32;
    let lo = -(w - 1) / 2;
    let mut canvas = Image::blank(c, c);
    let mut stamp = |x: i32, y: i32| {
        for yy in (y + lo).max(0)..(y + lo + w).min(c as i32) {
            for xx in (x + lo).max(0)..(x + lo + w).min(c as i32) {
                canvas.set(xx as usize, yy as usize, 1.0);
            }
        }
    };
    for s in &drawing.strokes {
        let pts: Vec<(i32, i32)> = s.points().collect();
        if pts.len() == 1 {
            stamp(pts[0].0, pts[0].1);
        }
        for seg in pts.windows(2) {
            for (x, y) in bresenham(seg[0], seg[1]) {
                stamp(x, y);
            }
        }
    }
    Ok(if c == size { canvas } else { canvas.resize_area(size, size).threshold(0.5) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_stroke(xs: Vec<i32>, ys: Vec<i32>) -> StrokeDrawing {
        StrokeDrawing::new("t", vec![Polyline::new(xs, ys).unwrap()], "0", SOURCE_CANVAS).unwrap()
    }

    fn lit(img: &Image) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.get(x, y) > 0.5 {
                    v.push((x, y));
                }
            }
        }
        v
    }

    #[test]
    fn bresenham_octants() {
        assert_eq!(bresenham((0, 0), (3, 1)), vec![(0, 0), (1, 0), (2, 1), (3, 1)]);
        assert_eq!(bresenham((2, 2), (2, 2)), vec![(2, 2)]);
        let back = bresenham((5, 7), (-1, 2));
        assert_eq!((back[0], *back.last().unwrap()), ((5, 7), (-1, 2)));
        assert_eq!(back.len(), 7);
    }

    #[test]
    fn single_point_lights_one_neighborhood() {
        let img = rasterize(&one_stroke(vec![128], vec![128]), 48).unwrap();
        assert_eq!((img.width(), img.height()), (48, 48));
        let px = lit(&img);
        assert!(!px.is_empty());
        // all lit pixels are within one 3x3 neighbourhood of the point's cell (24, 24)
        assert!(px.iter().all(|&(x, y)| x.abs_diff(24) <= 1 && y.abs_diff(24) <= 1), "{px:?}");
        assert!(img.pixels().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn diagonal_is_a_monotone_staircase() {
        let img = rasterize(&one_stroke(vec![0, 255], vec![0, 255]), 48).unwrap();
        let px = lit(&img);
        // line oracle at the output resolution
        let oracle = bresenham((0, 0), (47, 47));
        for &(x, y) in &oracle {
            assert_eq!(img.get(x as usize, y as usize), 1.0, "oracle pixel ({x},{y}) unlit");
        }
        assert!(px.iter().all(|&(x, y)| x.abs_diff(y) <= 1));
        let mut prev = 0;
        for y in 0..48 {
            let row: Vec<usize> = px.iter().filter(|p| p.1 == y).map(|p| p.0).collect();
            let first = *row.iter().min().unwrap();
            assert!(first >= prev);
            prev = first;
        }
    }

    #[test]
    fn deterministic_and_validated() {
        let d = one_stroke(vec![10, 200, 40], vec![30, 90, 250]);
        assert_eq!(rasterize(&d, 48).unwrap(), rasterize(&d, 48).unwrap());
        let empty = StrokeDrawing::new("t", vec![], "e", SOURCE_CANVAS).unwrap();
        assert!(rasterize(&empty, 48).is_err());
        assert!(Polyline::new(vec![1], vec![]).is_err());
        assert!(StrokeDrawing::new("t", vec![Polyline::new(vec![256], vec![0]).unwrap()], "x", 256).is_err());
    }

    #[test]
    fn ndjson_simplified_format() {
        let text = r#"{"word":"cat","key_id":"123","drawing":[[[0,10,20],[5,5,30]],[[100],[100]]]}

{"word":"dog","drawing":[[[1,2],[3,4],[0,16]]]}"#;
        let ds = parse_ndjson(text.as_bytes(), SOURCE_CANVAS).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].source_id, "123");
        assert_eq!(ds[0].strokes[1].xs, vec![100]);
        assert_eq!(ds[1].category, "dog");
        assert_eq!(ds[1].source_id, "line3");
        assert!(parse_ndjson(r#"{"word":"x","drawing":[[[1,2]]]}"#.as_bytes(), 256).is_err());
    }
}
