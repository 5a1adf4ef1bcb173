//! Synthetic test cards.
//!
//! The palm-like cards are stand-ins for biometric captures: `print_card`
//! has thin, high-contrast creases on a light field and `vein_card` has
//! broad, soft vessels on a mid-gray field. Both are min-max normalized and
//! quantized to 10 bits so they round-trip through RAW10 and PGM exactly.

use crate::{BitDepth, GrayImage, Result};

/// Quadratic Bézier stroke: control points in unit coordinates, Gaussian
/// cross-section of width `sigma` pixels and peak darkening `depth`.
struct Stroke {
    p: [(f64, f64); 3],
    sigma: f64,
    depth: f64,
}

impl Stroke {
    fn distance(&self, x: f64, y: f64, w: f64, h: f64) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..=96 {
            let t = i as f64 / 96.0;
            let u = 1.0 - t;
            let bx = u * u * self.p[0].0 + 2.0 * u * t * self.p[1].0 + t * t * self.p[2].0;
            let by = u * u * self.p[0].1 + 2.0 * u * t * self.p[1].1 + t * t * self.p[2].1;
            best = best.min(((x - bx * w).powi(2) + (y - by * h).powi(2)).sqrt());
        }
        best
    }

    fn shade(&self, x: f64, y: f64, w: f64, h: f64) -> f64 {
        let d = self.distance(x, y, w, h);
        self.depth * (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

fn render(width: usize, height: usize, background: impl Fn(f64, f64) -> f64, strokes: &[Stroke]) -> Result<GrayImage> {
    let (w, h) = (width as f64, height as f64);
    let raw: Vec<f64> = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .map(|(r, c)| {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let dark: f64 = strokes.iter().map(|s| s.shade(x, y, w, h)).sum();
            background(x / w, y / h) - dark
        })
        .collect();
    let norm = GrayImage::normalized(width, height, &raw, BitDepth::Ten)?;
    quantize(norm)
}

fn quantize(img: GrayImage) -> Result<GrayImage> {
    let max = BitDepth::Ten.max_value() as f64;
    let px = img.quantized().into_iter().map(|q| q as f64 / max).collect();
    GrayImage::new(img.width(), img.height(), px, BitDepth::Ten)
}

pub fn print_card(width: usize, height: usize) -> Result<GrayImage> {
    let major = |p, s| Stroke { p, sigma: s, depth: 0.8 };
    let minor = |p| Stroke { p, sigma: 0.6, depth: 0.35 };
    let strokes = [
        // three principal creases
        major([(0.05, 0.30), (0.45, 0.18), (0.95, 0.28)], 0.9),
        major([(0.05, 0.45), (0.40, 0.40), (0.80, 0.62)], 0.9),
        major([(0.30, 0.08), (0.12, 0.55), (0.40, 0.95)], 1.0),
        // finer secondary lines
        minor([(0.55, 0.05), (0.60, 0.50), (0.70, 0.95)]),
        minor([(0.20, 0.70), (0.55, 0.75), (0.95, 0.85)]),
        minor([(0.60, 0.35), (0.75, 0.40), (0.95, 0.45)]),
        minor([(0.45, 0.55), (0.55, 0.62), (0.60, 0.80)]),
        minor([(0.75, 0.05), (0.80, 0.15), (0.95, 0.12)]),
        minor([(0.05, 0.85), (0.15, 0.80), (0.25, 0.95)]),
        minor([(0.35, 0.25), (0.45, 0.30), (0.50, 0.45)]),
        minor([(0.80, 0.55), (0.85, 0.70), (0.80, 0.95)]),
        minor([(0.10, 0.10), (0.20, 0.15), (0.15, 0.25)]),
    ];
    render(width, height, |x, y| 0.9 - 0.05 * ((x - 0.5).powi(2) + (y - 0.5).powi(2)), &strokes)
}

pub fn vein_card(width: usize, height: usize) -> Result<GrayImage> {
    let vessel = |p, s, d| Stroke { p, sigma: s, depth: d };
    let strokes = [
        vessel([(0.20, 0.00), (0.30, 0.50), (0.25, 1.00)], 2.6, 0.35),
        vessel([(0.70, 0.00), (0.55, 0.45), (0.75, 1.00)], 2.4, 0.35),
        vessel([(0.27, 0.45), (0.45, 0.35), (0.60, 0.40)], 1.8, 0.25),
        vessel([(0.28, 0.75), (0.50, 0.70), (0.70, 0.80)], 1.8, 0.25),
        vessel([(0.60, 0.30), (0.80, 0.20), (1.00, 0.25)], 1.6, 0.2),
    ];
    render(width, height, |x, y| 0.55 + 0.08 * (y - 0.5) - 0.05 * (x - 0.5).powi(2), &strokes)
}

/// Row-major ramp over the full 10-bit range: `p = round(i * 1023 / (wh - 1))`
/// for raster index `i`.
pub fn ramp_card(width: usize, height: usize) -> Result<GrayImage> {
    let n = (width * height).max(2) - 1;
    let max = BitDepth::Ten.max_value() as f64;
    GrayImage::from_fn(width, height, BitDepth::Ten, |r, c| {
        ((r * width + c) as f64 * max / n as f64).round() / max
    })
}
