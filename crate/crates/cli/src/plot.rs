//! Label-free PNG charts. The numbers behind every chart are written next to
//! it as CSV, so the images carry no text and need no font backend.

use std::path::Path;

use plotters::prelude::*;

pub struct Series {
    pub points: Vec<(f64, f64)>,
    /// Optional quadratic `[c0, c1, c2]` drawn over the point range.
    pub fit: Option<[f64; 3]>,
}

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

pub fn scatter_png(path: &Path, series: &[Series]) -> anyhow::Result<()> {
    let xs = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let ys = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    {
        let root = BitMapBackend::new(path, (640, 480)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .margin(20)
            .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)?;
        chart
            .configure_mesh()
            .x_labels(0)
            .y_labels(0)
            .light_line_style(WHITE)
            .draw()?;
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart.draw_series(s.points.iter().map(|&(x, y)| Circle::new((x, y), 4, color.filled())))?;
            if let Some([c0, c1, c2]) = s.fit {
                let (lo, hi) = bounds(s.points.iter().map(|p| p.0));
                let line = (0..=100).map(|k| {
                    let x = lo + (hi - lo) * k as f64 / 100.0;
                    (x, c0 + c1 * x + c2 * x * x)
                });
                chart.draw_series(LineSeries::new(line, color.stroke_width(2)))?;
            }
        }
        root.present()?;
    }
    Ok(())
}
