//! Weighted fusion of per-band reconstructions.
//!
//! The fused image is `I = Σ α_i B_i` with `α` on the unit simplex, chosen to
//! minimize
//!
//! ```text
//! J(α) = Σ_{p ∈ U} (I[p] - v_target)² + λ Φ(I),   Φ(I) = -mean_{p ∈ E} |∇I[p]|
//! ```
//!
//! where `U` is a mask of uniform regions and `E` the union of each band's
//! strong-edge pixels. Different bands see different bit groups of the pixel
//! word, so a combination can restore gray levels that collapse in any one.

use serde::{Deserialize, Serialize};

use crate::dsp::{median, percentile};
use crate::metrics::gradient_components;
use crate::{BitDepth, Error, GrayImage, Result};

/// Marks pixels whose local variance over a `window × window` neighborhood
/// (clipped at the border) is below `var_threshold`.
pub fn segment_uniform(image: &GrayImage, window: usize, var_threshold: f64) -> Result<Vec<bool>> {
    let (w, h) = image.dims();
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("window must be odd and >= 3, got {window}")));
    }
    if window > w || window > h {
        return Err(Error::InvalidArgument(format!(
            "window {window} larger than image {w}x{h}"
        )));
    }
    let half = window / 2;
    let mut mask = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let (r0, r1) = (r.saturating_sub(half), (r + half).min(h - 1));
            let (c0, c1) = (c.saturating_sub(half), (c + half).min(w - 1));
            let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    let v = image.get(rr, cc);
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
            let mean = s / n;
            let var = (s2 / n - mean * mean).max(0.0);
            mask.push(var < var_threshold);
        }
    }
    Ok(mask)
}

/// Soft-thresholds deviations from the uniform-region mean `μ`:
/// `x ↦ μ + sign(x - μ) · max(|x - μ| - τσ, 0)`, clamped to `[0, 1]`.
/// Without a mask (or with an empty one) `μ` is the global mean.
pub fn amplitude_threshold(band: &GrayImage, tau: f64, sigma_est: f64, mask: Option<&[bool]>) -> Result<GrayImage> {
    if !(tau >= 0.0 && sigma_est >= 0.0) {
        return Err(Error::InvalidArgument("tau and sigma must be non-negative".into()));
    }
    let mu = masked_mean(band, mask);
    let cut = tau * sigma_est;
    let px = band
        .pixels()
        .iter()
        .map(|&x| {
            let d = x - mu;
            (mu + d.signum() * (d.abs() - cut).max(0.0)).clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::new(band.width(), band.height(), px, band.bit_depth())
}

/// Mean of the masked pixels, accumulated relative to the first one so a
/// constant region yields its value exactly.
fn masked_mean(img: &GrayImage, mask: Option<&[bool]>) -> f64 {
    let all = vec![true; img.pixels().len()];
    let m = match mask {
        Some(m) if m.iter().any(|&b| b) => m,
        _ => &all,
    };
    let mut sel = img.pixels().iter().zip(m).filter(|(_, &b)| b).map(|(v, _)| *v);
    let x0 = sel.next().unwrap_or(0.0);
    let (s, n) = sel.fold((0.0, 1.0), |(s, n), v| (s + (v - x0), n + 1.0));
    x0 + s / n
}

/// Noise level of the masked pixels by median absolute deviation.
pub fn estimate_noise_sigma(img: &GrayImage, mask: Option<&[bool]>) -> f64 {
    let vals: Vec<f64> = match mask {
        Some(m) if m.iter().any(|&b| b) => img
            .pixels()
            .iter()
            .zip(m)
            .filter(|(_, &b)| b)
            .map(|(v, _)| *v)
            .collect(),
        _ => img.pixels().to_vec(),
    };
    let med = median(&vals);
    let dev: Vec<f64> = vals.iter().map(|v| (v - med).abs()).collect();
    median(&dev) / 0.6745
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionProblem {
    pub bands: Vec<GrayImage>,
    pub uniform_mask: Vec<bool>,
    pub v_target: f64,
    pub lambda: f64,
    pub noise_threshold_tau: f64,
}

pub const DEFAULT_LAMBDA: f64 = 0.1;
const MAX_ITERS: usize = 500;
const GRAD_TOL: f64 = 1e-8;

impl FusionProblem {
    /// Problem with the default target: the median of the uniform region in
    /// the band with the largest energy.
    pub fn with_default_target(bands: Vec<GrayImage>, uniform_mask: Vec<bool>, lambda: f64, tau: f64) -> Result<Self> {
        let v_target = default_v_target(&bands, &uniform_mask)?;
        Ok(Self {
            bands,
            uniform_mask,
            v_target,
            lambda,
            noise_threshold_tau: tau,
        })
    }

    fn validate(&self) -> Result<()> {
        let first = self
            .bands
            .first()
            .ok_or_else(|| Error::InvalidArgument("fusion needs at least one band".into()))?;
        for b in &self.bands[1..] {
            first.same_dims(b)?;
        }
        if self.uniform_mask.len() != first.pixels().len() {
            return Err(Error::DimensionMismatch(format!(
                "uniform mask has {} entries for a {}x{} image",
                self.uniform_mask.len(),
                first.width(),
                first.height()
            )));
        }
        if !self.uniform_mask.iter().any(|&b| b) {
            return Err(Error::NoUniformRegion);
        }
        if !(self.lambda >= 0.0 && self.noise_threshold_tau >= 0.0 && self.v_target.is_finite()) {
            return Err(Error::InvalidArgument("lambda and tau must be non-negative, v_target finite".into()));
        }
        Ok(())
    }
}

pub fn default_v_target(bands: &[GrayImage], mask: &[bool]) -> Result<f64> {
    let best = bands
        .iter()
        .max_by(|a, b| energy(a).total_cmp(&energy(b)))
        .ok_or_else(|| Error::InvalidArgument("fusion needs at least one band".into()))?;
    let vals: Vec<f64> = best
        .pixels()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .collect();
    if vals.is_empty() {
        return Err(Error::NoUniformRegion);
    }
    Ok(median(&vals))
}

fn energy(img: &GrayImage) -> f64 {
    img.pixels().iter().map(|v| v * v).sum()
}

/// Precomputed per-band quantities for evaluating `J` and its gradient.
struct Model {
    bands: Vec<Vec<f64>>,
    gx: Vec<Vec<f64>>,
    gy: Vec<Vec<f64>>,
    uniform: Vec<usize>,
    edges: Vec<usize>,
    v_target: f64,
    lambda: f64,
}

impl Model {
    fn new(p: &FusionProblem, bands: &[GrayImage]) -> Self {
        let n = bands[0].pixels().len();
        let (gx, gy): (Vec<_>, Vec<_>) = bands.iter().map(gradient_components).unzip();
        let mut in_edges = vec![false; n];
        for (x, y) in gx.iter().zip(&gy) {
            let mag: Vec<f64> = x.iter().zip(y).map(|(a, b)| a.hypot(*b)).collect();
            let cut = percentile(&mag, 75.0);
            for (e, m) in in_edges.iter_mut().zip(&mag) {
                *e |= *m > cut;
            }
        }
        Self {
            bands: bands.iter().map(|b| b.pixels().to_vec()).collect(),
            gx,
            gy,
            uniform: (0..n).filter(|&i| p.uniform_mask[i]).collect(),
            edges: (0..n).filter(|&i| in_edges[i]).collect(),
            v_target: p.v_target,
            lambda: p.lambda,
        }
    }

    fn combine(&self, planes: &[Vec<f64>], alpha: &[f64], i: usize) -> f64 {
        planes.iter().zip(alpha).map(|(b, a)| a * b[i]).sum()
    }

    fn value(&self, alpha: &[f64]) -> f64 {
        let fidelity: f64 = self
            .uniform
            .iter()
            .map(|&i| (self.combine(&self.bands, alpha, i) - self.v_target).powi(2))
            .sum();
        fidelity + self.lambda * self.phi(alpha)
    }

    fn phi(&self, alpha: &[f64]) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .edges
            .iter()
            .map(|&i| self.combine(&self.gx, alpha, i).hypot(self.combine(&self.gy, alpha, i)))
            .sum();
        -s / self.edges.len() as f64
    }

    fn gradient(&self, alpha: &[f64]) -> Vec<f64> {
        let k = alpha.len();
        let mut g = vec![0.0; k];
        for &i in &self.uniform {
            let r = 2.0 * (self.combine(&self.bands, alpha, i) - self.v_target);
            for (gj, b) in g.iter_mut().zip(&self.bands) {
                *gj += r * b[i];
            }
        }
        if self.lambda > 0.0 && !self.edges.is_empty() {
            let scale = -self.lambda / self.edges.len() as f64;
            for &i in &self.edges {
                let x = self.combine(&self.gx, alpha, i);
                let y = self.combine(&self.gy, alpha, i);
                let m = x.hypot(y);
                if m > 0.0 {
                    for j in 0..k {
                        g[j] += scale * (x * self.gx[j][i] + y * self.gy[j][i]) / m;
                    }
                }
            }
        }
        g
    }
}

/// Euclidean projection onto the unit simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Projected gradient descent with backtracking from `start`.
fn descend(model: &Model, start: Vec<f64>) -> (Vec<f64>, f64, usize) {
    let mut alpha = start;
    let mut f = model.value(&alpha);
    let mut step = 1.0;
    let mut iters = 0;
    for it in 0..MAX_ITERS {
        iters = it + 1;
        let g = model.gradient(&alpha);
        let stationarity: f64 = project_simplex(&alpha.iter().zip(&g).map(|(a, g)| a - g).collect::<Vec<_>>())
            .iter()
            .zip(&alpha)
            .map(|(p, a)| (p - a).powi(2))
            .sum::<f64>()
            .sqrt();
        if stationarity < GRAD_TOL {
            break;
        }
        step *= 2.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = project_simplex(&alpha.iter().zip(&g).map(|(a, g)| a - step * g).collect::<Vec<_>>());
            let d: Vec<f64> = cand.iter().zip(&alpha).map(|(c, a)| c - a).collect();
            let lin: f64 = g.iter().zip(&d).map(|(g, d)| g * d).sum();
            let quad: f64 = d.iter().map(|v| v * v).sum::<f64>() / (2.0 * step);
            let fc = model.value(&cand);
            if fc <= f + lin + quad && fc <= f {
                moved = fc < f || d.iter().any(|&v| v != 0.0);
                alpha = cand;
                f = fc;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    (alpha, f, iters)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub image: GrayImage,
    pub weights: FusionWeights,
    pub objective: f64,
    /// `J(e_i)` for each single-band vertex.
    pub vertex_objectives: Vec<f64>,
    pub iterations: usize,
}

/// Solves the fusion problem; the result is never worse under `J` than the
/// best single band.
pub fn fuse(problem: &FusionProblem) -> Result<FusionResult> {
    problem.validate()?;
    let bands: Vec<GrayImage> = if problem.noise_threshold_tau > 0.0 {
        problem
            .bands
            .iter()
            .map(|b| {
                let m = Some(problem.uniform_mask.as_slice());
                amplitude_threshold(b, problem.noise_threshold_tau, estimate_noise_sigma(b, m), m)
            })
            .collect::<Result<_>>()?
    } else {
        problem.bands.clone()
    };
    let model = Model::new(problem, &bands);
    let k = bands.len();
    let vertex = |i: usize| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let vertex_objectives: Vec<f64> = (0..k).map(|i| model.value(&vertex(i))).collect();
    if vertex_objectives.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fusion objective".into()));
    }

    let (mut alpha, mut f, mut iterations) = descend(&model, vec![1.0 / k as f64; k]);
    let (best_v, &fv) = vertex_objectives
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    if !(f <= fv) {
        let (a2, f2, it2) = descend(&model, vertex(best_v));
        iterations += it2;
        if f2 <= fv {
            (alpha, f) = (a2, f2);
        } else {
            (alpha, f) = (vertex(best_v), fv);
        }
    }
    if !f.is_finite() {
        return Err(Error::NonFinite("fusion objective".into()));
    }

    let n = bands[0].pixels().len();
    let px = (0..n).map(|i| model.combine(&model.bands, &alpha, i)).collect();
    let image = GrayImage::clamped(bands[0].width(), bands[0].height(), px, BitDepth::Ten)?;
    Ok(FusionResult {
        image,
        weights: FusionWeights { alpha },
        objective: f,
        vertex_objectives,
        iterations,
    })
}

/// `J(α)` as minimized by [`fuse`].
pub fn objective(problem: &FusionProblem, alpha: &[f64]) -> Result<f64> {
    problem.validate()?;
    if alpha.len() != problem.bands.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} bands",
            alpha.len(),
            problem.bands.len()
        )));
    }
    let bands: Vec<GrayImage> = if problem.noise_threshold_tau > 0.0 {
        let m = Some(problem.uniform_mask.as_slice());
        problem
            .bands
            .iter()
            .map(|b| amplitude_threshold(b, problem.noise_threshold_tau, estimate_noise_sigma(b, m), m))
            .collect::<Result<_>>()?
    } else {
        problem.bands.clone()
    };
    Ok(Model::new(problem, &bands).value(alpha))
}
