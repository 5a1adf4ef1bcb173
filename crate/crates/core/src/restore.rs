//! Variational restoration: `min_x ||φ(x) - y||² + λ P(x)`.
//!
//! The prior is pluggable through [`PriorSpec`]; the shipped prior is
//! anisotropic total variation, solved by proximal gradient steps whose
//! proximal operator is computed by fast gradient projection on the dual.

use serde::{Deserialize, Serialize};

use crate::{BitDepth, Error, GrayImage, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ForwardModel {
    Identity,
    /// Square `size × size` kernel, row-major, applied with symmetric
    /// (edge-repeating) reflection at the border.
    Blur { size: usize, kernel: Vec<f64> },
}

impl ForwardModel {
    /// 3×3 binomial blur.
    pub fn blur3() -> Self {
        let t = [1.0, 2.0, 1.0];
        let kernel = t.iter().flat_map(|a| t.iter().map(move |b| a * b / 16.0)).collect();
        ForwardModel::Blur { size: 3, kernel }
    }

    fn validate(&self) -> Result<()> {
        if let ForwardModel::Blur { size, kernel } = self {
            if size % 2 == 0 || kernel.len() != size * size {
                return Err(Error::InvalidArgument(format!(
                    "blur kernel must be odd-sized and square, got size {size} with {} taps",
                    kernel.len()
                )));
            }
            if kernel.iter().any(|k| !k.is_finite()) || (kernel.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument("blur kernel must be finite and sum to 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSpec {
    TotalVariation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestorationProblem {
    pub y: GrayImage,
    pub lambda: f64,
    /// Measurement noise level; informational for the TV baseline, which
    /// folds it into `lambda`.
    pub noise_sigma_y: f64,
    pub forward_model: ForwardModel,
    pub iterations: usize,
}

impl RestorationProblem {
    pub fn denoise(y: GrayImage, lambda: f64, iterations: usize) -> Self {
        Self {
            y,
            lambda,
            noise_sigma_y: 0.0,
            forward_model: ForwardModel::Identity,
            iterations,
        }
    }

    fn validate(&self) -> Result<()> {
        self.forward_model.validate()?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        if self.y.pixels().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement".into()));
        }
        Ok(())
    }
}

struct Grid {
    w: usize,
    h: usize,
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

impl Grid {
    fn apply(&self, model: &ForwardModel, x: &[f64]) -> Vec<f64> {
        match model {
            ForwardModel::Identity => x.to_vec(),
            ForwardModel::Blur { size, kernel } => {
                let half = (*size / 2) as isize;
                let mut out = vec![0.0; x.len()];
                for r in 0..self.h {
                    for c in 0..self.w {
                        let mut acc = 0.0;
                        for a in 0..*size {
                            let rr = reflect(r as isize + a as isize - half, self.h);
                            for b in 0..*size {
                                let cc = reflect(c as isize + b as isize - half, self.w);
                                acc += kernel[a * size + b] * x[rr * self.w + cc];
                            }
                        }
                        out[r * self.w + c] = acc;
                    }
                }
                out
            }
        }
    }

    fn adjoint(&self, model: &ForwardModel, v: &[f64]) -> Vec<f64> {
        match model {
            ForwardModel::Identity => v.to_vec(),
            ForwardModel::Blur { size, kernel } => {
                let half = (*size / 2) as isize;
                let mut out = vec![0.0; v.len()];
                for r in 0..self.h {
                    for c in 0..self.w {
                        let val = v[r * self.w + c];
                        for a in 0..*size {
                            let rr = reflect(r as isize + a as isize - half, self.h);
                            for b in 0..*size {
                                let cc = reflect(c as isize + b as isize - half, self.w);
                                out[rr * self.w + cc] += kernel[a * size + b] * val;
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Upper bound on the Lipschitz constant of `∇||φx - y||²`, from
    /// `||K||₂² <= ||K||₁ ||K||∞`.
    fn lipschitz(&self, model: &ForwardModel) -> f64 {
        match model {
            ForwardModel::Identity => 2.0,
            ForwardModel::Blur { size, kernel } => {
                let abs = ForwardModel::Blur {
                    size: *size,
                    kernel: kernel.iter().map(|k| k.abs()).collect(),
                };
                let ones = vec![1.0; self.w * self.h];
                let col = self.adjoint(&abs, &ones).into_iter().fold(0.0, f64::max);
                let row = self.apply(&abs, &ones).into_iter().fold(0.0, f64::max);
                2.0 * col * row
            }
        }
    }

    /// Forward differences with a zero difference past the last row/column.
    fn grad(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (w, h) = (self.w, self.h);
        let mut dx = vec![0.0; w * h];
        let mut dy = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w {
                    dx[i] = x[i + 1] - x[i];
                }
                if r + 1 < h {
                    dy[i] = x[i + w] - x[i];
                }
            }
        }
        (dx, dy)
    }

    /// Adjoint of [`Grid::grad`] (negative divergence).
    fn grad_adjoint(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let mut out = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w {
                    out[i] -= p[i];
                    out[i + 1] += p[i];
                }
                if r + 1 < h {
                    out[i] -= q[i];
                    out[i + w] += q[i];
                }
            }
        }
        out
    }

    fn tv(&self, x: &[f64]) -> f64 {
        let (dx, dy) = self.grad(x);
        dx.iter().chain(&dy).map(|v| v.abs()).sum()
    }

    /// `argmin_x ½||x - z||² + mu · TV(x)`, warm-started from and updating
    /// the dual variables `dual`.
    fn tv_prox(&self, z: &[f64], mu: f64, iters: usize, dual: &mut (Vec<f64>, Vec<f64>)) -> Vec<f64> {
        if mu == 0.0 {
            return z.to_vec();
        }
        let (mut p, mut q) = dual.clone();
        let (mut rp, mut rq) = (p.clone(), q.clone());
        let mut t = 1.0f64;
        let step = 1.0 / (8.0 * mu);
        let primal = |p: &[f64], q: &[f64]| -> Vec<f64> {
            let d = self.grad_adjoint(p, q);
            z.iter().zip(&d).map(|(zi, di)| zi - mu * di).collect()
        };
        for _ in 0..iters {
            let x = primal(&rp, &rq);
            let (gx, gy) = self.grad(&x);
            let np: Vec<f64> = rp.iter().zip(&gx).map(|(a, g)| (a + step * g).clamp(-1.0, 1.0)).collect();
            let nq: Vec<f64> = rq.iter().zip(&gy).map(|(a, g)| (a + step * g).clamp(-1.0, 1.0)).collect();
            let nt = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let m = (t - 1.0) / nt;
            rp = np.iter().zip(&p).map(|(a, b)| a + m * (a - b)).collect();
            rq = nq.iter().zip(&q).map(|(a, b)| a + m * (a - b)).collect();
            p = np;
            q = nq;
            t = nt;
        }
        let x = primal(&p, &q);
        *dual = (p, q);
        x
    }
}

fn grid_of(problem: &RestorationProblem) -> Grid {
    Grid {
        w: problem.y.width(),
        h: problem.y.height(),
    }
}

fn value(grid: &Grid, problem: &RestorationProblem, x: &[f64]) -> f64 {
    let fx = grid.apply(&problem.forward_model, x);
    let data: f64 = fx.iter().zip(problem.y.pixels()).map(|(a, b)| (a - b).powi(2)).sum();
    data + problem.lambda * grid.tv(x)
}

/// `||φ(x) - y||² + λ TV(x)`.
pub fn objective(x: &GrayImage, problem: &RestorationProblem, prior: PriorSpec) -> Result<f64> {
    x.same_dims(&problem.y)?;
    let PriorSpec::TotalVariation = prior;
    Ok(value(&grid_of(problem), problem, x.pixels()))
}

/// Gradient of the data term `||φ(x) - y||²`.
pub fn data_gradient(x: &GrayImage, problem: &RestorationProblem) -> Result<Vec<f64>> {
    x.same_dims(&problem.y)?;
    problem.forward_model.validate()?;
    Ok(data_grad(&grid_of(problem), problem, x.pixels()))
}

fn data_grad(grid: &Grid, problem: &RestorationProblem, x: &[f64]) -> Vec<f64> {
    let fx = grid.apply(&problem.forward_model, x);
    let r: Vec<f64> = fx.iter().zip(problem.y.pixels()).map(|(a, b)| 2.0 * (a - b)).collect();
    grid.adjoint(&problem.forward_model, &r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Restored {
    pub image: GrayImage,
    /// Objective after each accepted iteration, starting with the initial point.
    pub trace: Vec<f64>,
}

const INNER_ITERS: usize = 50;
const MAX_RETRIES: usize = 4;
/// Residual increases below this relative size are inexact-prox noise at
/// convergence, not divergence.
const CONVERGED_RTOL: f64 = 1e-9;

/// Proximal gradient descent from `x = y` with step `1 / L`.
///
/// An inexact proximal step can raise the objective; such a step is retried
/// with more inner iterations, and a persistent increase beyond rounding
/// level is reported as divergence. The result is clamped to `[0, 1]`.
pub fn restore(problem: &RestorationProblem, prior: PriorSpec) -> Result<Restored> {
    problem.validate()?;
    let PriorSpec::TotalVariation = prior;
    let grid = grid_of(problem);
    let step = 1.0 / grid.lipschitz(&problem.forward_model);
    let mut x = problem.y.pixels().to_vec();
    let mut f = value(&grid, problem, &x);
    let mut trace = vec![f];
    let n = x.len();
    let mut dual = (vec![0.0; n], vec![0.0; n]);
    for iteration in 0..problem.iterations {
        let g = data_grad(&grid, problem, &x);
        let z: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let mut inner = INNER_ITERS;
        let mut accepted = None;
        for _ in 0..=MAX_RETRIES {
            let mut trial = dual.clone();
            let cand = grid.tv_prox(&z, step * problem.lambda, inner, &mut trial);
            let fc = value(&grid, problem, &cand);
            if !fc.is_finite() {
                return Err(Error::NonFinite(format!("objective at iteration {iteration}")));
            }
            if fc <= f {
                dual = trial;
                accepted = Some((cand, fc));
                break;
            }
            inner *= 2;
        }
        match accepted {
            Some((cand, fc)) => {
                let stalled = fc == f;
                x = cand;
                f = fc;
                trace.push(f);
                if stalled {
                    break;
                }
            }
            None => {
                let cand = grid.tv_prox(&z, step * problem.lambda, inner / 2, &mut dual.clone());
                let fc = value(&grid, problem, &cand);
                if fc - f <= CONVERGED_RTOL * f.abs().max(1.0) {
                    // no further progress at rounding level
                    break;
                }
                trace.push(fc);
                return Err(Error::Divergence { iteration, trace });
            }
        }
    }
    let image = GrayImage::clamped(problem.y.width(), problem.y.height(), x, BitDepth::Ten)?;
    Ok(Restored { image, trace })
}
