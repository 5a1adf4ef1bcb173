//! Raster reconstruction from a leakage envelope.
//!
//! The envelope of a captured band is cut into frames at detected blanking
//! transitions, each frame is cut into lines at the line period, and each
//! line's active span is resampled onto the output pixel grid.
//!
//! Receiver/link clock drift `δ` makes the observed periods
//! `nominal / (1 + δ)`. [`SyncModel`] stores nominal periods together with
//! the drift estimate; rasterization re-anchors on a detected frame start
//! every `1 / (|δ| · frame_period)` frames (the point where accumulated slip
//! reaches one sample) and extrapolates with the drift-corrected period in
//! between.

use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::dsp::{autocorrelation, linear_fit, median, percentile};
use crate::image::min_max;
use crate::{BitDepth, Error, GrayImage, IqTrace, Result};

/// `|s[n]|`, optionally smoothed by a centered moving average of `width`
/// samples with edge replication. `width <= 1` disables smoothing.
pub fn envelope(trace: &IqTrace, width: usize) -> Vec<f64> {
    let mag: Vec<f64> = trace.samples().iter().map(|s: &Complex32| s.norm() as f64).collect();
    smooth(&mag, width)
}

pub fn smooth(x: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 || x.is_empty() {
        return x.to_vec();
    }
    let n = x.len() as isize;
    let left = (width as isize - 1) / 2;
    (0..n)
        .map(|i| {
            (0..width as isize)
                .map(|k| x[(i - left + k).clamp(0, n - 1) as usize])
                .sum::<f64>()
                / width as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum BlankThreshold {
    /// Midpoint of the 5th and 50th envelope percentiles.
    PercentileMidpoint,
    /// Otsu's split of a 256-bin envelope histogram.
    Otsu,
    Fixed(f64),
}

impl BlankThreshold {
    pub fn resolve(&self, env: &[f64]) -> f64 {
        match *self {
            BlankThreshold::PercentileMidpoint => {
                0.5 * (percentile(env, 5.0) + percentile(env, 50.0))
            }
            BlankThreshold::Otsu => otsu(env),
            BlankThreshold::Fixed(v) => v,
        }
    }
}

fn otsu(env: &[f64]) -> f64 {
    let (lo, hi) = min_max(env);
    if hi <= lo {
        return hi;
    }
    let bins = 256;
    let width = (hi - lo) / bins as f64;
    let mut hist = vec![0f64; bins];
    for &v in env {
        hist[(((v - lo) / width) as usize).min(bins - 1)] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, h)| i as f64 * h).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_i) = (-1.0, 0);
    for (i, &h) in hist.iter().enumerate() {
        w0 += h;
        sum0 += i as f64 * h;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_i = i;
        }
    }
    lo + (best_i as f64 + 1.0) * width
}

/// Blanking indicator: `true` where the envelope is below `theta`.
pub fn blanking_indicator(env: &[f64], theta: f64) -> Vec<bool> {
    env.iter().map(|&v| v < theta).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncConfig {
    #[serde(default = "default_threshold")]
    pub threshold: BlankThreshold,
    /// Shortest blanking run (samples) that delimits a frame. `None` picks
    /// half of the longest run.
    #[serde(default)]
    pub min_gap: Option<usize>,
    /// Active bursts shorter than this are treated as noise inside blanking.
    #[serde(default = "default_min_active")]
    pub min_active: usize,
    /// Frame period the link is specified to run at, in receiver samples.
    /// Needed to estimate drift.
    #[serde(default)]
    pub nominal_frame_period: Option<f64>,
    /// Known line period in receiver samples; otherwise estimated from the
    /// envelope autocorrelation.
    #[serde(default)]
    pub nominal_line_period: Option<f64>,
}

fn default_threshold() -> BlankThreshold {
    BlankThreshold::PercentileMidpoint
}

fn default_min_active() -> usize {
    3
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            min_gap: None,
            min_active: default_min_active(),
            nominal_frame_period: None,
            nominal_line_period: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncModel {
    /// Nominal (drift-free) line period in receiver samples.
    pub line_period_samples: f64,
    /// Nominal (drift-free) frame period in receiver samples.
    pub frame_period_samples: f64,
    pub theta_blank: f64,
    /// Relative link clock rate error, `(f_link - f_rx) / f_rx`.
    pub drift_estimate: f64,
    /// First active sample after each frame-delimiting blanking run.
    pub frame_starts: Vec<usize>,
}

impl SyncModel {
    /// Manual model: frames assumed at `first_start + k * frame_period`.
    pub fn manual(
        line_period: f64,
        frame_period: f64,
        theta_blank: f64,
        first_start: usize,
        frames: usize,
    ) -> Result<Self> {
        if !(line_period > 0.0 && frame_period >= line_period) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < line period <= frame period, got {line_period}, {frame_period}"
            )));
        }
        let frame_starts = (0..frames)
            .map(|k| first_start + (k as f64 * frame_period).round() as usize)
            .collect();
        Ok(Self {
            line_period_samples: line_period,
            frame_period_samples: frame_period,
            theta_blank,
            drift_estimate: 0.0,
            frame_starts,
        })
    }

    pub fn observed_line_period(&self) -> f64 {
        self.line_period_samples / (1.0 + self.drift_estimate)
    }

    pub fn observed_frame_period(&self) -> f64 {
        self.frame_period_samples / (1.0 + self.drift_estimate)
    }

    /// Frames between re-anchoring on detected starts; `None` without drift.
    pub fn realign_period(&self) -> Option<usize> {
        if self.drift_estimate == 0.0 {
            return None;
        }
        let n = 1.0 / (self.drift_estimate.abs() * self.frame_period_samples);
        Some((n.floor() as usize).max(1))
    }
}

/// Detects frame boundaries, the line period and the clock drift.
pub fn detect_sync(env: &[f64], sample_rate_hz: f64, cfg: &SyncConfig) -> Result<SyncModel> {
    if !(sample_rate_hz > 0.0) {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    if env.len() < 2 {
        return Err(Error::NoFrameBoundaries);
    }
    let theta = cfg.threshold.resolve(env);
    let blank = blanking_indicator(env, theta);
    let runs = blanking_runs(&blank, cfg.min_active);
    let longest = runs.iter().map(|&(s, e)| e - s).max().unwrap_or(0);
    if longest == 0 {
        return Err(Error::NoFrameBoundaries);
    }
    let min_gap = cfg.min_gap.unwrap_or(longest.div_ceil(2)).max(1);
    // a frame starts where a long blanking run hands over to activity
    let frame_starts: Vec<usize> = runs
        .iter()
        .filter(|&&(s, e)| e - s >= min_gap && e < env.len())
        .map(|&(_, e)| e)
        .collect();
    if frame_starts.is_empty() {
        return Err(Error::NoFrameBoundaries);
    }
    if frame_starts.len() < 2 {
        return Err(Error::TooFewFrames {
            needed: 2,
            found: frame_starts.len(),
        });
    }

    let ks: Vec<f64> = (0..frame_starts.len()).map(|k| k as f64).collect();
    let ts: Vec<f64> = frame_starts.iter().map(|&t| t as f64).collect();
    let (_, observed_frame) = linear_fit(&ks, &ts);
    let (frame_period, drift) = match cfg.nominal_frame_period {
        Some(nominal) => (nominal, nominal / observed_frame - 1.0),
        None => (observed_frame, 0.0),
    };

    let line_period = match cfg.nominal_line_period {
        Some(l) => l,
        None => estimate_line_period(env, observed_frame)? * (1.0 + drift),
    };
    if line_period > frame_period {
        return Err(Error::InvalidArgument(format!(
            "line period {line_period} exceeds frame period {frame_period}"
        )));
    }
    Ok(SyncModel {
        line_period_samples: line_period,
        frame_period_samples: frame_period,
        theta_blank: theta,
        drift_estimate: drift,
        frame_starts,
    })
}

/// Half-open blanking runs `[start, end)`, with active bursts shorter than
/// `min_active` absorbed into the surrounding blanking.
fn blanking_runs(blank: &[bool], min_active: usize) -> Vec<(usize, usize)> {
    let mut raw = Vec::new();
    let mut i = 0;
    while i < blank.len() {
        if blank[i] {
            let s = i;
            while i < blank.len() && blank[i] {
                i += 1;
            }
            raw.push((s, i));
        } else {
            i += 1;
        }
    }
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(raw.len());
    for (s, e) in raw {
        match merged.last_mut() {
            Some(last) if s - last.1 < min_active => last.1 = e,
            _ => merged.push((s, e)),
        }
    }
    merged
}

/// Line period from the autocorrelation of the mean-removed envelope: the
/// first strong peak gives a coarse period, which is refined on the highest
/// multiple that still fits in half a frame.
fn estimate_line_period(env: &[f64], frame_period: f64) -> Result<f64> {
    let mean = env.iter().sum::<f64>() / env.len() as f64;
    let centered: Vec<f64> = env.iter().map(|v| v - mean).collect();
    let n = centered.len() as f64;
    // undo the triangular taper of the biased estimate so that later
    // multiples of the line period are not penalized
    let r: Vec<f64> = autocorrelation(&centered)
        .into_iter()
        .enumerate()
        .map(|(k, v)| v * n / (n - k as f64))
        .collect();
    let max_lag = ((frame_period / 2.0) as usize).min(r.len().saturating_sub(2));
    if max_lag < 4 || r[0] <= 0.0 {
        return Err(Error::InvalidArgument("envelope too short to estimate line period".into()));
    }
    // skip the zero-lag lobe
    let mut lag = 1;
    while lag < max_lag && r[lag + 1] < r[lag] {
        lag += 1;
    }
    let first_valley = lag;
    let strongest = r[first_valley..=max_lag]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let coarse = (first_valley + 1..max_lag)
        .find(|&k| r[k] >= r[k - 1] && r[k] >= r[k + 1] && r[k] >= 0.8 * strongest)
        .ok_or_else(|| Error::InvalidArgument("no periodic line structure in envelope".into()))?;

    let multiple = (max_lag / coarse).max(1);
    let center = multiple * coarse;
    let half = (coarse / 2).max(1);
    let lo = center.saturating_sub(half).max(1);
    let hi = (center + half).min(max_lag);
    let peak = (lo..=hi).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
    let refined = if peak > 0 && peak + 1 < r.len() {
        let (a, b, c) = (r[peak - 1], r[peak], r[peak + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            peak as f64 + 0.5 * (a - c) / denom
        } else {
            peak as f64
        }
    } else {
        peak as f64
    };
    Ok(refined / multiple as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Nearest,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterParams {
    pub out_width: usize,
    pub out_height: usize,
    pub frames_to_average: usize,
    #[serde(default = "default_interp")]
    pub interpolation: Interpolation,
    /// Start of the active (pixel) span within a line, as a fraction of the line period.
    #[serde(default)]
    pub active_offset: f64,
    /// Length of the active span as a fraction of the line period.
    #[serde(default = "one")]
    pub active_fraction: f64,
    #[serde(default = "yes")]
    pub drift_correction: bool,
}

fn default_interp() -> Interpolation {
    Interpolation::Linear
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl RasterParams {
    pub fn new(out_width: usize, out_height: usize, frames_to_average: usize) -> Self {
        Self {
            out_width,
            out_height,
            frames_to_average,
            interpolation: Interpolation::Linear,
            active_offset: 0.0,
            active_fraction: 1.0,
            drift_correction: true,
        }
    }

    /// Restricts the resampled span to the pixel payload of a known line layout.
    pub fn with_active_window(mut self, offset: f64, fraction: f64) -> Self {
        self.active_offset = offset;
        self.active_fraction = fraction;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.out_width == 0 || self.out_height == 0 || self.frames_to_average == 0 {
            return Err(Error::InvalidArgument(
                "raster dimensions and frame count must be positive".into(),
            ));
        }
        if !(self.active_fraction > 0.0 && self.active_offset >= 0.0)
            || self.active_offset + self.active_fraction > 1.0 + 1e-12
        {
            return Err(Error::InvalidArgument(format!(
                "active window [{}, +{}] must lie within one line",
                self.active_offset, self.active_fraction
            )));
        }
        Ok(())
    }
}

/// Integer base plus fractional offset, so that shifting the envelope by a
/// whole number of samples shifts every sampling position exactly.
#[derive(Debug, Clone, Copy)]
struct Origin {
    base: usize,
    offset: f64,
}

fn frame_origin(sync: &SyncModel, params: &RasterParams, k: usize) -> Result<(Origin, f64)> {
    if k >= sync.frame_starts.len() {
        return Err(Error::TooFewFrames {
            needed: k + 1,
            found: sync.frame_starts.len(),
        });
    }
    if !params.drift_correction {
        return Ok((
            Origin {
                base: sync.frame_starts[0],
                offset: k as f64 * sync.frame_period_samples,
            },
            sync.line_period_samples,
        ));
    }
    let anchor = match sync.realign_period() {
        Some(n) => (k / n) * n,
        None => 0,
    };
    Ok((
        Origin {
            base: sync.frame_starts[anchor],
            offset: (k - anchor) as f64 * sync.observed_frame_period(),
        },
        sync.observed_line_period(),
    ))
}

/// Un-normalized frame raster, row-major.
pub(crate) fn rasterize_raw(
    env: &[f64],
    sync: &SyncModel,
    params: &RasterParams,
    k: usize,
) -> Result<Vec<f64>> {
    params.validate()?;
    let (origin, line) = frame_origin(sync, params, k)?;
    let (w, h) = (params.out_width, params.out_height);
    let span = params.active_fraction * line;
    let pitch = span / w as f64;

    let last = origin.offset + (h - 1) as f64 * line + params.active_offset * line + (w as f64 - 0.5) * pitch;
    let end = origin.base + last.ceil().max(0.0) as usize + 1;
    if end > env.len() {
        return Err(Error::FrameOutOfRange {
            frame: k,
            start: origin.base + origin.offset.max(0.0) as usize,
            end,
            len: env.len(),
        });
    }

    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        let row0 = origin.offset + r as f64 * line + params.active_offset * line;
        for c in 0..w {
            let x = row0 + (c as f64 + 0.5) * pitch;
            out.push(sample_at(env, origin.base, x, params.interpolation));
        }
    }
    Ok(out)
}

fn sample_at(env: &[f64], base: usize, x: f64, interp: Interpolation) -> f64 {
    match interp {
        Interpolation::Nearest => env[base + x.round().max(0.0) as usize],
        Interpolation::Linear => {
            let i = x.floor();
            let frac = x - i;
            let i = base + i.max(0.0) as usize;
            if frac == 0.0 || i + 1 >= env.len() {
                env[i]
            } else {
                env[i] * (1.0 - frac) + env[i + 1] * frac
            }
        }
    }
}

/// Frame `k` resampled to the output grid and min-max normalized.
pub fn rasterize(env: &[f64], sync: &SyncModel, params: &RasterParams, k: usize) -> Result<GrayImage> {
    let raw = rasterize_raw(env, sync, params, k)?;
    GrayImage::normalized(params.out_width, params.out_height, &raw, BitDepth::Ten)
}

/// Mean of the first `frames_to_average` normalized frames (fewer if the
/// capture is shorter). This is also the naive mixed reconstruction of an
/// interleaved capture.
pub fn average_frames(env: &[f64], sync: &SyncModel, params: &RasterParams) -> Result<GrayImage> {
    let usable = usable_frames(env, sync, params);
    if usable == 0 {
        return Err(Error::TooFewFrames { needed: 1, found: 0 });
    }
    let n = params.frames_to_average.min(usable);
    let frames: Vec<usize> = (0..n).collect();
    mean_of_frames(env, sync, params, &frames)
}

pub(crate) fn mean_of_frames(
    env: &[f64],
    sync: &SyncModel,
    params: &RasterParams,
    frames: &[usize],
) -> Result<GrayImage> {
    let mut acc = vec![0.0; params.out_width * params.out_height];
    for &k in frames {
        let img = rasterize(env, sync, params, k)?;
        for (a, v) in acc.iter_mut().zip(img.pixels()) {
            *a += v;
        }
    }
    let n = frames.len() as f64;
    GrayImage::clamped(
        params.out_width,
        params.out_height,
        acc.into_iter().map(|v| v / n).collect(),
        BitDepth::Ten,
    )
}

/// Number of leading frames that fit entirely inside the envelope.
pub fn usable_frames(env: &[f64], sync: &SyncModel, params: &RasterParams) -> usize {
    (0..sync.frame_starts.len())
        .take_while(|&k| rasterize_raw(env, sync, params, k).is_ok())
        .count()
}

/// Median absolute deviation noise estimate of an envelope segment.
pub fn robust_sigma(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev) / 0.6745
}
