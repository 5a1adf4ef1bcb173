//! Forward emission model: packet stream to per-band complex baseband.
//!
//! Each band trace is `noise + offset + H_band[encoded stream]`, observed by a
//! receiver whose sample clock differs from the link clock by `drift_ppm`.
//!
//! Two transfer models are available. [`EmissionMode::NrzPhysical`] drives the
//! raw bit stream as a ±1 NRZ waveform through an ideal FFT-mask band-pass and
//! downconverts it. [`EmissionMode::BitgroupAnalytic`] replaces the physics by
//! an explicit per-pixel envelope `w_msb * (p >> 2) / 255 + w_lsb * (p & 3) / 3`,
//! which makes the sensitivity of each band to the two RAW10 remainder bits a
//! controlled quantity.

use num_complex::{Complex32, Complex64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::csi2::{payload_bits, padded_width, LineTiming, PacketStream};
use crate::{CaptureMeta, Error, IqTrace, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionMode {
    NrzPhysical,
    BitgroupAnalytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    /// Envelope weight of the eight high bits (analytic mode only).
    #[serde(default = "one")]
    pub w_msb: f64,
    /// Envelope weight of the two low bits (analytic mode only).
    #[serde(default)]
    pub w_lsb: f64,
}

fn one() -> f64 {
    1.0
}

impl BandSpec {
    pub fn new(f_low_hz: f64, f_high_hz: f64) -> Self {
        Self {
            f_low_hz,
            f_high_hz,
            w_msb: 1.0,
            w_lsb: 0.0,
        }
    }

    pub fn with_weights(mut self, w_msb: f64, w_lsb: f64) -> Self {
        self.w_msb = w_msb;
        self.w_lsb = w_lsb;
        self
    }

    pub fn center_hz(&self) -> f64 {
        0.5 * (self.f_low_hz + self.f_high_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionConfig {
    pub bands: Vec<BandSpec>,
    pub sdr_sample_rate_hz: f64,
    /// Per-component standard deviation of the complex white noise.
    pub noise_sigma: f64,
    /// Real additive offset on the received baseband.
    #[serde(default)]
    pub clock_offset: f64,
    /// Link clock relative to receiver clock, in parts per million.
    #[serde(default)]
    pub drift_ppm: f64,
    pub mode: EmissionMode,
}

impl EmissionConfig {
    pub fn drift(&self) -> f64 {
        self.drift_ppm * 1e-6
    }

    /// Link bits per receiver sample, including drift.
    pub fn bits_per_sample(&self, timing: &LineTiming) -> f64 {
        (1.0 + self.drift()) * timing.bit_rate_hz / self.sdr_sample_rate_hz
    }

    /// Receiver sample index at which link bit `bit` is observed.
    pub fn bit_to_sample(&self, timing: &LineTiming, bit: f64) -> f64 {
        bit / self.bits_per_sample(timing)
    }

    /// Drift-free receiver samples per link bit.
    pub fn nominal_samples_per_bit(&self, timing: &LineTiming) -> f64 {
        self.sdr_sample_rate_hz / timing.bit_rate_hz
    }

    fn validate(&self, timing: &LineTiming) -> Result<()> {
        timing.validate()?;
        if !(self.sdr_sample_rate_hz.is_finite() && self.sdr_sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument("receiver sample rate must be positive".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise sigma must be non-negative".into()));
        }
        if !self.clock_offset.is_finite() || !self.drift_ppm.is_finite() || self.drift() <= -1.0 {
            return Err(Error::InvalidArgument("offset and drift must be finite".into()));
        }
        let nyquist = timing.bit_rate_hz / 2.0;
        for (i, b) in self.bands.iter().enumerate() {
            if !(b.f_low_hz >= 0.0 && b.f_low_hz < b.f_high_hz) {
                return Err(Error::InvalidArgument(format!(
                    "band {i}: need 0 <= f_low < f_high, got [{}, {}]",
                    b.f_low_hz, b.f_high_hz
                )));
            }
            if b.f_high_hz > nyquist {
                return Err(Error::InvalidArgument(format!(
                    "band {i}: f_high {} Hz above bit-level Nyquist {} Hz",
                    b.f_high_hz, nyquist
                )));
            }
        }
        Ok(())
    }
}

/// Simulates one band. Noise is drawn from `seed` on a per-band stream, so the
/// result equals the corresponding entry of [`simulate_all`].
pub fn simulate_band(
    stream: &PacketStream,
    timing: &LineTiming,
    cfg: &EmissionConfig,
    band_index: usize,
    seed: u64,
) -> Result<IqTrace> {
    cfg.validate(timing)?;
    let band = cfg.bands.get(band_index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "band index {band_index} out of range ({} bands)",
            cfg.bands.len()
        ))
    })?;
    let waveform = match cfg.mode {
        EmissionMode::NrzPhysical => nrz_baseband(&stream.bits, timing.bit_rate_hz, band),
        EmissionMode::BitgroupAnalytic => bitgroup_envelope(stream, timing, band),
    };
    let mut out = resample_box(&waveform, cfg.bits_per_sample(timing));
    let mut rng = band_rng(seed, band_index);
    add_noise(&mut out, cfg.noise_sigma, cfg.clock_offset, &mut rng);
    let samples = out.iter().map(|v| Complex32::new(v.re as f32, v.im as f32)).collect();
    let mut meta = CaptureMeta::new(cfg.sdr_sample_rate_hz, band.center_hz());
    meta.device_label = format!("simulated band {band_index}");
    IqTrace::new(samples, meta)
}

pub fn simulate_all(
    stream: &PacketStream,
    timing: &LineTiming,
    cfg: &EmissionConfig,
    seed: u64,
) -> Result<Vec<IqTrace>> {
    (0..cfg.bands.len())
        .map(|i| simulate_band(stream, timing, cfg, i, seed))
        .collect()
}

/// A band that carries only receiver noise, e.g. a decoy or calibration capture.
pub fn noise_trace(
    len: usize,
    sample_rate_hz: f64,
    center_frequency_hz: f64,
    noise_sigma: f64,
    clock_offset: f64,
    seed: u64,
) -> Result<IqTrace> {
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    let mut rng = band_rng(seed, u64::MAX as usize);
    add_noise(&mut out, noise_sigma, clock_offset, &mut rng);
    let samples = out.iter().map(|v| Complex32::new(v.re as f32, v.im as f32)).collect();
    let mut meta = CaptureMeta::new(sample_rate_hz, center_frequency_hz);
    meta.device_label = "noise".into();
    IqTrace::new(samples, meta)
}

fn band_rng(seed: u64, band_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(band_index as u64);
    rng
}

fn add_noise(out: &mut [Complex64], sigma: f64, offset: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        for v in out.iter_mut() {
            *v += Complex64::new(normal.sample(rng) + offset, normal.sample(rng));
        }
    } else if offset != 0.0 {
        for v in out.iter_mut() {
            v.re += offset;
        }
    }
}

/// Band-passes the ±1 NRZ waveform by FFT masking and shifts the band center
/// to DC. Output is sampled at the bit rate.
fn nrz_baseband(bits: &[u8], bit_rate_hz: f64, band: &BandSpec) -> Vec<Complex64> {
    let n = bits.len();
    let mut spec: Vec<Complex64> = bits
        .iter()
        .map(|&b| Complex64::new(if b != 0 { 1.0 } else { -1.0 }, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut spec);

    let df = bit_rate_hz / n as f64;
    let shift = (band.center_hz() / df).round() as i64;
    let mut base = vec![Complex64::new(0.0, 0.0); n];
    for (k, &x) in spec.iter().enumerate().take(n / 2 + 1) {
        let f = k as f64 * df;
        if f < band.f_low_hz || f > band.f_high_hz {
            continue;
        }
        // one-sided spectrum: double everything except DC and Nyquist
        let gain = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
        let j = (k as i64 - shift).rem_euclid(n as i64) as usize;
        base[j] += x * gain;
    }
    planner.plan_fft_inverse(n).process(&mut base);
    let scale = 1.0 / n as f64;
    base.iter_mut().for_each(|v| *v *= scale);
    base
}

/// Per-bit envelope of the analytic bit-group model.
fn bitgroup_envelope(stream: &PacketStream, timing: &LineTiming, band: &BandSpec) -> Vec<Complex64> {
    let mut env = vec![Complex64::new(0.0, 0.0); stream.bits.len()];
    let sync_level = Complex64::new(band.w_msb + band.w_lsb, 0.0);
    let pw = padded_width(stream.width);
    let payload = payload_bits(stream.width);
    for line in 0..stream.line_starts.len() {
        let ls = stream.line_starts[line];
        env[ls - timing.header_bits..ls].fill(sync_level);
        env[ls + payload..ls + payload + timing.trailer_bits].fill(sync_level);
        let pixels = stream.line_pixels(line);
        for (c, &p) in pixels.iter().enumerate().take(pw) {
            let amp = if c < stream.width {
                band.w_msb * (p >> 2) as f64 / 255.0 + band.w_lsb * (p & 3) as f64 / 3.0
            } else {
                0.0
            };
            env[ls + 10 * c..ls + 10 * (c + 1)].fill(Complex64::new(amp, 0.0));
        }
    }
    env
}

/// Resamples a piecewise-constant waveform (one value per bit) to the
/// receiver clock. Sample `n` is the mean of the waveform over the window of
/// width `bits_per_sample` centered on bit time `n * bits_per_sample`; the
/// box average doubles as the anti-alias low-pass.
fn resample_box(w: &[Complex64], bits_per_sample: f64) -> Vec<Complex64> {
    let n_bits = w.len();
    let mut prefix = Vec::with_capacity(n_bits + 1);
    let mut acc = Complex64::new(0.0, 0.0);
    prefix.push(acc);
    for &v in w {
        acc += v;
        prefix.push(acc);
    }
    let integral = |x: f64| -> Complex64 {
        if x <= 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if x >= n_bits as f64 {
            return prefix[n_bits];
        }
        let i = x.floor() as usize;
        prefix[i] + w[i] * (x - i as f64)
    };
    let r = bits_per_sample;
    let count = ((n_bits as f64 - r / 2.0) / r).floor().max(0.0) as usize + 1;
    (0..count)
        .map(|n| {
            let c = n as f64 * r;
            (integral(c + r / 2.0) - integral(c - r / 2.0)) / r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi2::{packetize, Schedule};
    use crate::{BitDepth, GrayImage};

    fn analytic_cfg(bands: Vec<BandSpec>) -> EmissionConfig {
        EmissionConfig {
            bands,
            sdr_sample_rate_hz: 20e6,
            noise_sigma: 0.0,
            clock_offset: 0.0,
            drift_ppm: 0.0,
            mode: EmissionMode::BitgroupAnalytic,
        }
    }

    fn stream_of(img: &GrayImage, frames: usize) -> (PacketStream, LineTiming) {
        let timing = LineTiming::default_for_width(100e6, img.width());
        let frames: Vec<_> = (0..frames).map(|_| img.clone()).collect();
        (packetize(&frames, &timing, Schedule::Single).unwrap(), timing)
    }

    fn envelope(t: &IqTrace) -> Vec<f64> {
        t.samples().iter().map(|s| s.norm() as f64).collect()
    }

    #[test]
    fn zero_stream_is_silent() {
        let img = GrayImage::constant(8, 4, 0.0).unwrap();
        let timing = LineTiming {
            bit_rate_hz: 100e6,
            header_bits: 0,
            trailer_bits: 0,
            line_blank_bits: 16,
            frame_blank_bits: 64,
        };
        let s = packetize(&[img], &timing, Schedule::Single).unwrap();
        let mut cfg = analytic_cfg(vec![BandSpec::new(10e6, 20e6)]);
        let t = simulate_band(&s, &timing, &cfg, 0, 1).unwrap();
        assert!(envelope(&t).iter().all(|&v| v == 0.0));
        // an all -1 NRZ level has only a DC component, outside this band
        cfg.mode = EmissionMode::NrzPhysical;
        let t = simulate_band(&s, &timing, &cfg, 0, 1).unwrap();
        assert!(envelope(&t).iter().all(|&v| v < 1e-9));
    }

    #[test]
    fn msb_band_ignores_low_bits() {
        let a = GrayImage::constant(8, 4, 0b1111111100 as f64 / 1023.0).unwrap();
        let b = GrayImage::constant(8, 4, 0b1111111111 as f64 / 1023.0).unwrap();
        let cfg = analytic_cfg(vec![BandSpec::new(1e6, 2e6).with_weights(1.0, 0.0)]);
        let (sa, timing) = stream_of(&a, 1);
        let (sb, _) = stream_of(&b, 1);
        let ta = simulate_band(&sa, &timing, &cfg, 0, 3).unwrap();
        let tb = simulate_band(&sb, &timing, &cfg, 0, 3).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn lsb_band_depends_only_on_low_bits() {
        let base = GrayImage::from_fn(8, 4, BitDepth::Ten, |r, c| ((r * 8 + c) * 29 % 1024) as f64 / 1023.0).unwrap();
        // change the high bits but keep the low two
        let edited = GrayImage::from_fn(8, 4, BitDepth::Ten, |r, c| {
            let p = (base.get(r, c) * 1023.0).round() as u16;
            (((p + 400) % 1024) & !3 | (p & 3)) as f64 / 1023.0
        })
        .unwrap();
        let cfg = analytic_cfg(vec![
            BandSpec::new(1e6, 2e6).with_weights(1.0, 0.0),
            BandSpec::new(2e6, 3e6).with_weights(0.0, 1.0),
        ]);
        let (s1, timing) = stream_of(&base, 1);
        let (s2, _) = stream_of(&edited, 1);
        let a = simulate_all(&s1, &timing, &cfg, 5).unwrap();
        let b = simulate_all(&s2, &timing, &cfg, 5).unwrap();
        assert_eq!(a[1], b[1]);
        assert_ne!(a[0], b[0]);
    }

    #[test]
    fn blanking_noise_variance_is_two_sigma_squared() {
        let img = GrayImage::constant(8, 2, 0.5).unwrap();
        let timing = LineTiming {
            bit_rate_hz: 100e6,
            header_bits: 8,
            trailer_bits: 8,
            line_blank_bits: 16,
            frame_blank_bits: 100_000,
        };
        let s = packetize(&[img], &timing, Schedule::Single).unwrap();
        let mut cfg = analytic_cfg(vec![BandSpec::new(1e6, 2e6)]);
        cfg.noise_sigma = 0.1;
        let t = simulate_band(&s, &timing, &cfg, 0, 11).unwrap();
        // the leading frame blank spans 20000 receiver samples
        let seg = &t.samples()[100..19_900];
        assert!(seg.len() >= 10_000);
        let n = seg.len() as f64;
        let mr = seg.iter().map(|v| v.re as f64).sum::<f64>() / n;
        let mi = seg.iter().map(|v| v.im as f64).sum::<f64>() / n;
        let var = seg
            .iter()
            .map(|v| (v.re as f64 - mr).powi(2) + (v.im as f64 - mi).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!((var / 0.02 - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn determinism_and_independent_band_noise() {
        let img = GrayImage::from_fn(8, 4, BitDepth::Ten, |r, c| (r + c) as f64 / 10.0).unwrap();
        let (s, timing) = stream_of(&img, 2);
        let mut cfg = analytic_cfg(vec![BandSpec::new(1e6, 2e6), BandSpec::new(1e6, 2e6)]);
        cfg.noise_sigma = 0.05;
        let a = simulate_all(&s, &timing, &cfg, 42).unwrap();
        let b = simulate_all(&s, &timing, &cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_eq!(simulate_band(&s, &timing, &cfg, 1, 42).unwrap(), a[1]);
    }

    #[test]
    fn nrz_fundamental_band_dominates_guard_band() {
        // 0b1010101010 packs to 0xAA everywhere: a pure alternating pattern
        let img = GrayImage::constant(16, 8, 682.0 / 1023.0).unwrap();
        let (s, timing) = stream_of(&img, 1);
        let mut cfg = analytic_cfg(vec![BandSpec::new(45e6, 50e6), BandSpec::new(20e6, 25e6)]);
        cfg.mode = EmissionMode::NrzPhysical;
        let traces = simulate_all(&s, &timing, &cfg, 0).unwrap();
        let spb = cfg.nominal_samples_per_bit(&timing);
        let energy = |t: &IqTrace| -> f64 {
            (0..s.height)
                .map(|l| {
                    let a = (s.line_starts[l] as f64 * spb).ceil() as usize;
                    let b = ((s.line_starts[l] + payload_bits(16)) as f64 * spb) as usize;
                    t.samples()[a..b].iter().map(|v| v.norm_sqr() as f64).sum::<f64>()
                })
                .sum()
        };
        let fundamental = energy(&traces[0]);
        let guard = energy(&traces[1]);
        assert!(fundamental >= 10.0 * guard, "{fundamental} vs {guard}");
    }

    #[test]
    fn drift_shifts_frame_starts_linearly() {
        let img = GrayImage::constant(8, 2, 0.5).unwrap();
        let (s, timing) = stream_of(&img, 6);
        let mut cfg = analytic_cfg(vec![BandSpec::new(1e6, 2e6)]);
        cfg.drift_ppm = 100.0;
        let frame_bits = timing.bits_per_frame(8, 2) as f64;
        let nominal = frame_bits * cfg.nominal_samples_per_bit(&timing);
        let slip = |k: usize| {
            let drifted = cfg.bit_to_sample(&timing, s.frame_starts[k] as f64);
            let undrifted = s.frame_starts[k] as f64 * cfg.nominal_samples_per_bit(&timing);
            undrifted - drifted
        };
        for k in 1..6 {
            let expected = k as f64 * nominal * 1e-4;
            assert!(((slip(k) - slip(0)) - expected).abs() <= 0.01 * expected);
        }
    }

    #[test]
    fn band_above_nyquist_rejected() {
        let img = GrayImage::constant(4, 1, 0.5).unwrap();
        let (s, timing) = stream_of(&img, 1);
        let cfg = analytic_cfg(vec![BandSpec::new(40e6, 60e6)]);
        assert!(simulate_band(&s, &timing, &cfg, 0, 0).is_err());
        assert!(simulate_band(&s, &timing, &analytic_cfg(vec![]), 0, 0).is_err());
    }
}
