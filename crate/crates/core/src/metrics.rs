//! Full-reference image quality metrics and the two no-reference image
//! statistics used by band validation.

use serde::{Deserialize, Serialize};

use crate::{Error, GrayImage, Result};

/// PSNR for intensities in `[0, 1]`. Identical images yield `f64::INFINITY`.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.same_dims(b)?;
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.pixels().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let half = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

/// Mean of the local SSIM map over every position where the window fits
/// entirely inside the image (dynamic range L = 1).
pub fn ssim_with(a: &GrayImage, b: &GrayImage, params: &SsimParams) -> Result<f64> {
    a.same_dims(b)?;
    let (w, h) = a.dims();
    let win = params.window;
    if w < win || h < win {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} smaller than {win}x{win} SSIM window"
        )));
    }
    let taps = params.taps();
    let c1 = params.k1 * params.k1;
    let c2 = params.k2 * params.k2;
    let x = a.pixels();
    let y = b.pixels();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();

    let mu_x = filter_valid(x, w, h, &taps);
    let mu_y = filter_valid(y, w, h, &taps);
    let e_xx = filter_valid(&xx, w, h, &taps);
    let e_yy = filter_valid(&yy, w, h, &taps);
    let e_xy = filter_valid(&xy, w, h, &taps);

    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cxy = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Separable correlation with `taps`, keeping only fully covered positions.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; ow * h];
    for r in 0..h {
        let line = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().zip(&line[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

/// Shannon entropy (nats) of a 256-bin histogram over `[0, 1]`.
pub fn image_entropy(img: &GrayImage) -> f64 {
    let mut hist = [0usize; 256];
    for &v in img.pixels() {
        hist[((v * 256.0) as usize).min(255)] += 1;
    }
    let n = img.pixels().len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Central-difference gradient magnitude at every pixel, with one-sided
/// differences on the border. Single-pixel axes contribute zero.
pub fn gradient_magnitude(img: &GrayImage) -> Vec<f64> {
    let (gx, gy) = gradient_components(img);
    gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect()
}

/// Horizontal and vertical derivatives used by [`gradient_magnitude`].
pub(crate) fn gradient_components(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = img.dims();
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            gx.push(diff(w, c, |i| img.get(r, i)));
            gy.push(diff(h, r, |i| img.get(i, c)));
        }
    }
    (gx, gy)
}

fn diff(len: usize, i: usize, at: impl Fn(usize) -> f64) -> f64 {
    if len < 2 {
        0.0
    } else if i == 0 {
        at(1) - at(0)
    } else if i == len - 1 {
        at(i) - at(i - 1)
    } else {
        (at(i + 1) - at(i - 1)) / 2.0
    }
}

/// Mean gradient magnitude.
pub fn edge_intensity(img: &GrayImage) -> f64 {
    let g = gradient_magnitude(img);
    g.iter().sum::<f64>() / g.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `+inf` (serialized as `null` in JSON) when the images are identical.
    pub psnr_db: f64,
    pub ssim: f64,
    pub entropy_nats: f64,
    pub edge_intensity: f64,
}

impl MetricReport {
    /// Full-reference metrics of `test` against `reference`, plus the
    /// no-reference statistics of `test`.
    pub fn compute(test: &GrayImage, reference: &GrayImage) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(test, reference)?,
            ssim: ssim(test, reference)?,
            entropy_nats: image_entropy(test),
            edge_intensity: edge_intensity(test),
        })
    }
}
