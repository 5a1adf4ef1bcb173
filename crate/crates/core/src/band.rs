//! Two-stage search for sub-bands that carry image leakage.
//!
//! Stage 1 screens each sub-band on signal statistics (energy, spectral
//! entropy, envelope autocorrelation). Survivors are rasterized and stage 2
//! screens the reconstructed image on entropy and edge intensity.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{autocorrelation, percentile};
use crate::metrics::{edge_intensity, image_entropy};
use crate::raster::{average_frames, detect_sync, envelope, RasterParams, SyncConfig};
use crate::{Error, GrayImage, IqTrace, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub energy: f64,
    pub spectral_entropy: f64,
    pub autocorr_peak: f64,
}

/// Signal statistics of one capture. Band edges default to the capture's
/// `center ± sample_rate / 2`.
pub fn band_stats(trace: &IqTrace) -> Result<BandStats> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    let samples: Vec<Complex64> = trace
        .samples()
        .iter()
        .map(|s| Complex64::new(s.re as f64, s.im as f64))
        .collect();
    let energy: f64 = samples.iter().map(|s| s.norm_sqr()).sum();
    let half = trace.sample_rate_hz() / 2.0;
    let mut stats = BandStats {
        f_low_hz: trace.center_frequency_hz() - half,
        f_high_hz: trace.center_frequency_hz() + half,
        energy,
        spectral_entropy: 0.0,
        autocorr_peak: 0.0,
    };
    if energy == 0.0 {
        return Ok(stats);
    }
    stats.spectral_entropy = spectral_entropy(samples);
    let env: Vec<f64> = trace.samples().iter().map(|s| s.norm() as f64).collect();
    stats.autocorr_peak = autocorr_peak(&env);
    Ok(stats)
}

fn spectral_entropy(mut buf: Vec<Complex64>) -> f64 {
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let power: Vec<f64> = buf.iter().map(|v| v.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let h: f64 = power
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum();
    h.max(0.0)
}

/// `max |r[k] / r[0]|` over lags `1..=N/2` of the mean-removed envelope.
pub fn autocorr_peak(env: &[f64]) -> f64 {
    let n = env.len();
    if n < 2 {
        return 0.0;
    }
    let mean = env.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = env.iter().map(|v| v - mean).collect();
    let r = autocorrelation(&centered);
    if r[0] <= 0.0 {
        return 0.0;
    }
    r[1..=n / 2]
        .iter()
        .map(|v| (v / r[0]).abs())
        .fold(0.0, f64::max)
        .min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub image_entropy: f64,
    pub edge_intensity: f64,
}

impl ImageStats {
    pub fn of(image: &GrayImage) -> Self {
        Self {
            image_entropy: image_entropy(image),
            edge_intensity: edge_intensity(image),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub theta_e: f64,
    pub theta_a: f64,
    pub theta_h: f64,
    #[serde(default = "default_img_entropy")]
    pub theta_img_entropy: f64,
    #[serde(default = "default_edge")]
    pub theta_edge: f64,
}

/// Stage-2 defaults reject flat or near-binary reconstructions.
pub const DEFAULT_IMG_ENTROPY: f64 = 1.0;
pub const DEFAULT_EDGE: f64 = 0.01;

fn default_img_entropy() -> f64 {
    DEFAULT_IMG_ENTROPY
}

fn default_edge() -> f64 {
    DEFAULT_EDGE
}

impl Thresholds {
    /// Accepts every band.
    pub fn vacuous() -> Self {
        Self {
            theta_e: f64::NEG_INFINITY,
            theta_a: f64::NEG_INFINITY,
            theta_h: f64::INFINITY,
            theta_img_entropy: f64::NEG_INFINITY,
            theta_edge: f64::NEG_INFINITY,
        }
    }

    /// Stage-1 thresholds at the 90th (energy, autocorrelation) and 10th
    /// (spectral entropy) percentiles of noise-only captures, which should
    /// match the sub-band captures in length and sample rate.
    pub fn calibrate(noise: &[IqTrace]) -> Result<Self> {
        if noise.is_empty() {
            return Err(Error::InvalidArgument("no calibration captures".into()));
        }
        let stats: Vec<BandStats> = noise.iter().map(band_stats).collect::<Result<_>>()?;
        let pick = |f: fn(&BandStats) -> f64, q: f64| {
            percentile(&stats.iter().map(f).collect::<Vec<_>>(), q)
        };
        Ok(Self {
            theta_e: pick(|s| s.energy, 90.0),
            theta_a: pick(|s| s.autocorr_peak, 90.0),
            theta_h: pick(|s| s.spectral_entropy, 10.0),
            theta_img_entropy: DEFAULT_IMG_ENTROPY,
            theta_edge: DEFAULT_EDGE,
        })
    }

    pub fn stage1(&self, s: &BandStats) -> bool {
        s.energy > self.theta_e && s.autocorr_peak > self.theta_a && s.spectral_entropy < self.theta_h
    }

    pub fn stage2(&self, s: &ImageStats) -> bool {
        s.image_entropy > self.theta_img_entropy && s.edge_intensity > self.theta_edge
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    RejectedStage1,
    RejectedStage2,
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub stats: BandStats,
    pub image_stats: Option<ImageStats>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Supplies a capture for a sub-band.
pub trait SpectrumSource {
    fn capture(&mut self, f_low_hz: f64, f_high_hz: f64) -> Result<IqTrace>;
}

/// How stage 2 reconstructs a candidate band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconParams {
    #[serde(default)]
    pub sync: SyncConfig,
    pub raster: RasterParams,
    #[serde(default = "one")]
    pub envelope_width: usize,
}

fn one() -> usize {
    1
}

/// Contiguous sub-bands of `band_width_hz` covering `[f_min, f_max]`; a
/// trailing partial band is dropped.
pub fn partition(range: (f64, f64), band_width_hz: f64) -> Result<Vec<(f64, f64)>> {
    let (f_min, f_max) = range;
    if !(band_width_hz > 0.0) || !(f_max > f_min) {
        return Err(Error::InvalidArgument(format!(
            "need band width > 0 and f_max > f_min, got {band_width_hz}, [{f_min}, {f_max}]"
        )));
    }
    let n = ((f_max - f_min) / band_width_hz + 1e-9).floor() as usize;
    Ok((0..n)
        .map(|i| {
            let lo = f_min + i as f64 * band_width_hz;
            (lo, lo + band_width_hz)
        })
        .collect())
}

/// Runs both screening stages over every sub-band, in frequency order.
pub fn scan(
    source: &mut dyn SpectrumSource,
    range: (f64, f64),
    band_width_hz: f64,
    thresholds: &Thresholds,
    recon: &ReconParams,
) -> Result<Vec<BandReport>> {
    let bands = partition(range, band_width_hz)?;
    Ok(bands
        .into_iter()
        .map(|(lo, hi)| evaluate(source.capture(lo, hi), lo, hi, thresholds, recon))
        .collect())
}

/// Screens captures that each already cover one sub-band; edges come from
/// each capture's center frequency and sample rate.
pub fn scan_traces(traces: &[IqTrace], thresholds: &Thresholds, recon: &ReconParams) -> Vec<BandReport> {
    let mut reports: Vec<BandReport> = traces
        .iter()
        .map(|t| {
            let half = t.sample_rate_hz() / 2.0;
            let (lo, hi) = (t.center_frequency_hz() - half, t.center_frequency_hz() + half);
            evaluate(Ok(t.clone()), lo, hi, thresholds, recon)
        })
        .collect();
    reports.sort_by(|a, b| a.stats.f_low_hz.total_cmp(&b.stats.f_low_hz));
    reports
}

fn evaluate(
    capture: Result<IqTrace>,
    lo: f64,
    hi: f64,
    thresholds: &Thresholds,
    recon: &ReconParams,
) -> BandReport {
    let blank_stats = BandStats {
        f_low_hz: lo,
        f_high_hz: hi,
        energy: 0.0,
        spectral_entropy: 0.0,
        autocorr_peak: 0.0,
    };
    let stage1_reject = |stats, msg: String| BandReport {
        stats,
        image_stats: None,
        verdict: Verdict::RejectedStage1,
        diagnostic: Some(msg),
    };
    let trace = match capture {
        Ok(t) => t,
        Err(e) => return stage1_reject(blank_stats, format!("capture failed: {e}")),
    };
    let mut stats = match band_stats(&trace) {
        Ok(s) => s,
        Err(e) => return stage1_reject(blank_stats, format!("statistics failed: {e}")),
    };
    stats.f_low_hz = lo;
    stats.f_high_hz = hi;
    if !thresholds.stage1(&stats) {
        return BandReport {
            stats,
            image_stats: None,
            verdict: Verdict::RejectedStage1,
            diagnostic: None,
        };
    }
    match reconstruct(&trace, recon) {
        Ok(img) => {
            let s = ImageStats::of(&img);
            BandReport {
                stats,
                image_stats: Some(s),
                verdict: if thresholds.stage2(&s) {
                    Verdict::Accepted
                } else {
                    Verdict::RejectedStage2
                },
                diagnostic: None,
            }
        }
        Err(e) => {
            let zero = ImageStats {
                image_entropy: 0.0,
                edge_intensity: 0.0,
            };
            // an unreconstructable band still passed stage 1, so it gets
            // (zero) image statistics; vacuous thresholds accept it
            BandReport {
                stats,
                image_stats: Some(zero),
                verdict: if thresholds.stage2(&zero) {
                    Verdict::Accepted
                } else {
                    Verdict::RejectedStage2
                },
                diagnostic: Some(format!("reconstruction failed: {e}")),
            }
        }
    }
}

pub fn reconstruct(trace: &IqTrace, recon: &ReconParams) -> Result<GrayImage> {
    let env = envelope(trace, recon.envelope_width);
    let sync = detect_sync(&env, trace.sample_rate_hz(), &recon.sync)?;
    average_frames(&env, &sync, &recon.raster)
}

pub fn accepted(reports: &[BandReport]) -> Vec<&BandReport> {
    reports.iter().filter(|r| r.verdict == Verdict::Accepted).collect()
}
