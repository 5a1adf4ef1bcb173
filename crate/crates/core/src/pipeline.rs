//! End-to-end runs driven by a TOML config: simulate, scan, reconstruct,
//! demux, fuse, restore and score against ground truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::band::{self, BandReport, ReconParams, SpectrumSource, Thresholds, Verdict};
use crate::csi2::{packetize, LineTiming, PacketStream, Schedule};
use crate::demux::{auto_parity, demux, misalignment_error, aligned_error, ParityDecision};
use crate::emission::{noise_trace, simulate_band, BandSpec, EmissionConfig, EmissionMode};
use crate::fusion::{fuse, segment_uniform, FusionProblem, FusionWeights, DEFAULT_LAMBDA};
use crate::image::{read_pgm, write_pgm};
use crate::iq::write_atomic;
use crate::metrics::MetricReport;
use crate::raster::{average_frames, detect_sync, envelope, Interpolation, RasterParams, SyncConfig, SyncModel};
use crate::restore::{restore, ForwardModel, PriorSpec, RestorationProblem};
use crate::{Error, GrayImage, IqTrace, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds every random draw of the run.
    pub seed: u64,
    pub paths: PathsConfig,
    pub simulate: SimulateConfig,
    pub scan: ScanConfig,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
    #[serde(default)]
    pub demux: DemuxConfig,
    #[serde(default)]
    pub fuse: FuseConfig,
    #[serde(default)]
    pub restore: RestoreConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Ground-truth print card (PGM), relative to the config file.
    pub print: PathBuf,
    pub vein: PathBuf,
    /// Output directory, relative to the config file unless overridden.
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Total frames transmitted, alternating print and vein.
    pub frames: usize,
    pub bit_rate_hz: f64,
    /// Line/frame timing; defaults to [`LineTiming::default_for_width`].
    #[serde(default)]
    pub timing: Option<LineTiming>,
    pub sdr_sample_rate_hz: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub clock_offset: f64,
    #[serde(default)]
    pub drift_ppm: f64,
    pub mode: EmissionMode,
    pub bands: Vec<BandSpec>,
    /// Frames dropped before the capture starts; odd values make the first
    /// captured frame a vein frame.
    #[serde(default)]
    pub skip_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub band_width_hz: f64,
    /// Explicit thresholds; otherwise calibrated on noise-only captures.
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
    #[serde(default = "default_calibration")]
    pub calibration_captures: usize,
}

fn default_calibration() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    #[serde(default = "default_frames")]
    pub frames_to_average: usize,
    #[serde(default = "default_envelope_width")]
    pub envelope_width: usize,
    #[serde(default = "default_interp")]
    pub interpolation: Interpolation,
    /// Use the link's nominal line/frame timing (enables drift estimation
    /// and restricts resampling to the pixel payload).
    #[serde(default = "yes")]
    pub known_timing: bool,
    #[serde(default = "yes")]
    pub drift_correction: bool,
    #[serde(default)]
    pub sync: SyncConfig,
}

fn default_frames() -> usize {
    8
}

fn default_envelope_width() -> usize {
    1
}

fn default_interp() -> Interpolation {
    Interpolation::Linear
}

fn yes() -> bool {
    true
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            frames_to_average: default_frames(),
            envelope_width: default_envelope_width(),
            interpolation: default_interp(),
            known_timing: true,
            drift_correction: true,
            sync: SyncConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParityChoice {
    Fixed(u8),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemuxConfig {
    #[serde(default = "auto_parity_choice")]
    pub parity: ParityChoice,
}

fn auto_parity_choice() -> ParityChoice {
    ParityChoice::Auto(AutoTag::Auto)
}

impl Default for DemuxConfig {
    fn default() -> Self {
        Self {
            parity: auto_parity_choice(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_var")]
    pub var_threshold: f64,
    /// Fixed target level; otherwise derived from the uniform region.
    #[serde(default)]
    pub v_target: Option<f64>,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_window() -> usize {
    5
}

fn default_var() -> f64 {
    0.002
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            tau: 0.0,
            window: default_window(),
            var_threshold: default_var(),
            v_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestoreConfig {
    #[serde(default = "default_restore_lambda")]
    pub lambda: f64,
    #[serde(default = "default_iters")]
    pub iterations: usize,
    #[serde(default = "default_forward")]
    pub forward_model: ForwardModel,
}

fn default_restore_lambda() -> f64 {
    0.02
}

fn default_iters() -> usize {
    50
}

fn default_forward() -> ForwardModel {
    ForwardModel::Identity
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            lambda: default_restore_lambda(),
            iterations: default_iters(),
            forward_model: default_forward(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::format(path, msg),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the config's canonical JSON form (all defaults filled in).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn emission(&self) -> EmissionConfig {
        EmissionConfig {
            bands: self.simulate.bands.clone(),
            sdr_sample_rate_hz: self.simulate.sdr_sample_rate_hz,
            noise_sigma: self.simulate.noise_sigma,
            clock_offset: self.simulate.clock_offset,
            drift_ppm: self.simulate.drift_ppm,
            mode: self.simulate.mode,
        }
    }

    pub fn timing(&self, width: usize) -> LineTiming {
        self.simulate
            .timing
            .unwrap_or_else(|| LineTiming::default_for_width(self.simulate.bit_rate_hz, width))
    }
}

/// Truth cards and the transmitted stream.
pub struct Scene {
    pub print: GrayImage,
    pub vein: GrayImage,
    pub timing: LineTiming,
    pub stream: PacketStream,
}

impl Scene {
    pub fn new(print: GrayImage, vein: GrayImage, cfg: &PipelineConfig) -> Result<Self> {
        print.same_dims(&vein)?;
        let timing = cfg.timing(print.width());
        let total = cfg.simulate.frames + cfg.simulate.skip_frames;
        let frames: Vec<GrayImage> = (0..total)
            .map(|k| if k % 2 == 0 { print.clone() } else { vein.clone() })
            .collect();
        let mut stream = packetize(&frames, &timing, Schedule::Alternating)?;
        if cfg.simulate.skip_frames > 0 {
            stream = stream.skip_frames(cfg.simulate.skip_frames, &timing)?;
        }
        Ok(Self {
            print,
            vein,
            timing,
            stream,
        })
    }
}

/// Serves simulated captures: sub-bands that coincide with an emission band
/// carry leakage, everything else is receiver noise.
pub struct SimulatedSpectrum<'a> {
    pub scene: &'a Scene,
    pub emission: EmissionConfig,
    pub seed: u64,
    len: usize,
}

impl<'a> SimulatedSpectrum<'a> {
    pub fn new(scene: &'a Scene, emission: EmissionConfig, seed: u64) -> Result<Self> {
        let probe = EmissionConfig {
            bands: vec![BandSpec::new(0.0, scene.timing.bit_rate_hz / 2.0)],
            noise_sigma: 0.0,
            ..emission.clone()
        };
        let len = simulate_band(&scene.stream, &scene.timing, &probe, 0, 0)?.len();
        Ok(Self {
            scene,
            emission,
            seed,
            len,
        })
    }

    /// Emission band whose center falls inside `[lo, hi)`.
    pub fn leaky_band(&self, lo: f64, hi: f64) -> Option<usize> {
        self.emission
            .bands
            .iter()
            .position(|b| (lo..hi).contains(&b.center_hz()))
    }

    /// Noise-only capture matching the sub-band captures in length and rate.
    pub fn noise(&self, center_hz: f64, stream: u64) -> Result<IqTrace> {
        noise_trace(
            self.len,
            self.emission.sdr_sample_rate_hz,
            center_hz,
            self.emission.noise_sigma,
            self.emission.clock_offset,
            derive_seed(self.seed, stream),
        )
    }
}

/// Independent seed for a sub-stream of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

impl SpectrumSource for SimulatedSpectrum<'_> {
    fn capture(&mut self, lo: f64, hi: f64) -> Result<IqTrace> {
        match self.leaky_band(lo, hi) {
            Some(i) => simulate_band(&self.scene.stream, &self.scene.timing, &self.emission, i, self.seed),
            None => {
                let mut t = self.noise(0.5 * (lo + hi), lo.to_bits())?;
                let mut meta = t.meta().clone();
                meta.device_label = format!("noise {lo}..{hi} Hz");
                t = IqTrace::new(t.samples().to_vec(), meta)?;
                Ok(t)
            }
        }
    }
}

/// Raster parameters and sync config implied by the reconstruct section.
pub fn recon_params(cfg: &PipelineConfig, scene: &Scene) -> ReconParams {
    let (w, h) = scene.print.dims();
    let mut raster = RasterParams::new(w, h, cfg.reconstruct.frames_to_average);
    raster.interpolation = cfg.reconstruct.interpolation;
    raster.drift_correction = cfg.reconstruct.drift_correction;
    let mut sync = cfg.reconstruct.sync.clone();
    if cfg.reconstruct.known_timing {
        let t = &scene.timing;
        let line = t.bits_per_line(w) as f64;
        raster = raster.with_active_window(t.header_bits as f64 / line, 10.0 * w as f64 / line);
        let spb = cfg.emission().nominal_samples_per_bit(t);
        sync.nominal_line_period.get_or_insert(line * spb);
        sync.nominal_frame_period.get_or_insert(t.bits_per_frame(w, h) as f64 * spb);
    }
    ReconParams {
        sync,
        raster,
        envelope_width: cfg.reconstruct.envelope_width,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BandRecon {
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub sync: SyncModel,
    pub parity: Option<ParityDecision>,
    pub print_ssim: f64,
    pub vein_ssim: f64,
    pub naive_ssim_print: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModalityReport {
    pub fused_weights: FusionWeights,
    pub fused: MetricReport,
    pub restored: MetricReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub stages: Stages,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stages {
    pub simulate: SimulateSummary,
    pub scan: Vec<BandReport>,
    pub thresholds: Thresholds,
    pub reconstruct: Vec<BandRecon>,
    pub demux: DemuxSummary,
    pub print: ModalityReport,
    pub vein: ModalityReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub frames: usize,
    pub samples_per_capture: usize,
    pub true_drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemuxSummary {
    pub parity_offset: u8,
    pub decision: Option<ParityDecision>,
    pub misalignment_error: f64,
    pub aligned_error: f64,
}

/// Runs every stage. Paths in the config are resolved against `base`;
/// `output_dir` overrides the configured output directory.
pub fn run(cfg: &PipelineConfig, base: &Path, output_dir: Option<&Path>) -> Result<Manifest> {
    let out = output_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| base.join(&cfg.paths.output_dir));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut inputs = BTreeMap::new();
    let mut load = |p: &Path| -> Result<GrayImage> {
        let path = base.join(p);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        inputs.insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        read_pgm(&path)
    };
    let print = load(&cfg.paths.print).map_err(|e| e.in_stage("simulate"))?;
    let vein = load(&cfg.paths.vein).map_err(|e| e.in_stage("simulate"))?;
    let scene = Scene::new(print, vein, cfg).map_err(|e| e.in_stage("simulate"))?;
    let emission = cfg.emission();
    let mut spectrum =
        SimulatedSpectrum::new(&scene, emission.clone(), cfg.seed).map_err(|e| e.in_stage("simulate"))?;
    let mut outputs = Vec::new();

    // scan
    let recon = recon_params(cfg, &scene);
    let thresholds = match cfg.scan.thresholds {
        Some(t) => t,
        None => {
            let cal: Vec<IqTrace> = (0..cfg.scan.calibration_captures as u64)
                .map(|i| spectrum.noise(0.0, u64::MAX - i))
                .collect::<Result<_>>()
                .map_err(|e| e.in_stage("scan"))?;
            Thresholds::calibrate(&cal).map_err(|e| e.in_stage("scan"))?
        }
    };
    let reports = band::scan(
        &mut spectrum,
        (cfg.scan.f_min_hz, cfg.scan.f_max_hz),
        cfg.scan.band_width_hz,
        &thresholds,
        &recon,
    )
    .map_err(|e| e.in_stage("scan"))?;
    let scan_path = out.join("scan.json");
    write_json(&scan_path, &reports).map_err(|e| e.in_stage("scan"))?;
    outputs.push(scan_path);
    let accepted: Vec<&BandReport> = reports.iter().filter(|r| r.verdict == Verdict::Accepted).collect();
    if accepted.is_empty() {
        return Err(Error::InvalidArgument("no informative band found".into()).in_stage("scan"));
    }

    // reconstruct + demux per accepted band
    let mut envs = Vec::new();
    for r in &accepted {
        let trace = spectrum
            .capture(r.stats.f_low_hz, r.stats.f_high_hz)
            .map_err(|e| e.in_stage("reconstruct"))?;
        let iq_path = out.join(format!("band_{:.0}.iq", 0.5 * (r.stats.f_low_hz + r.stats.f_high_hz)));
        crate::iq::write_iq(&trace, &iq_path).map_err(|e| e.in_stage("reconstruct"))?;
        outputs.push(iq_path);
        let env = envelope(&trace, recon.envelope_width);
        let sync =
            detect_sync(&env, trace.sample_rate_hz(), &recon.sync).map_err(|e| e.in_stage("reconstruct"))?;
        envs.push((r.stats, env, sync));
    }
    // parity from the strongest band, applied to all bands
    let strongest = (0..envs.len())
        .max_by(|&a, &b| envs[a].0.energy.total_cmp(&envs[b].0.energy))
        .unwrap();
    let (decision, parity) = match cfg.demux.parity {
        ParityChoice::Fixed(p) if p <= 1 => (None, p),
        ParityChoice::Fixed(p) => {
            return Err(Error::Config(format!("parity must be 0, 1 or \"auto\", got {p}")).in_stage("demux"))
        }
        ParityChoice::Auto(_) => {
            let (_, env, sync) = &envs[strongest];
            let d = auto_parity(env, sync, &recon.raster).map_err(|e| e.in_stage("demux"))?;
            (Some(d), d.parity_offset)
        }
    };
    let mut band_recons = Vec::new();
    let mut prints = Vec::new();
    let mut veins = Vec::new();
    let mut strongest_demux = None;
    for (i, (stats, env, sync)) in envs.iter().enumerate() {
        let d = demux(env, sync, &recon.raster, parity).map_err(|e| e.in_stage("demux"))?;
        let mut naive_params = recon.raster;
        naive_params.frames_to_average = 2 * recon.raster.frames_to_average;
        let naive = average_frames(env, sync, &naive_params).map_err(|e| e.in_stage("reconstruct"))?;
        let score = |a: &GrayImage, b: &GrayImage| crate::metrics::ssim(a, b).map_err(|e| e.in_stage("metrics"));
        band_recons.push(BandRecon {
            f_low_hz: stats.f_low_hz,
            f_high_hz: stats.f_high_hz,
            sync: sync.clone(),
            parity: if i == strongest { decision } else { None },
            print_ssim: score(&d.print_image, &scene.print)?,
            vein_ssim: score(&d.vein_image, &scene.vein)?,
            naive_ssim_print: score(&naive, &scene.print)?,
        });
        prints.push(d.print_image.clone());
        veins.push(d.vein_image.clone());
        if i == strongest {
            strongest_demux = Some(d);
        }
    }
    let sd = strongest_demux.expect("strongest band demuxed");
    let demux_summary = DemuxSummary {
        parity_offset: parity,
        decision,
        misalignment_error: misalignment_error(&sd, &scene.print, &scene.vein).map_err(|e| e.in_stage("demux"))?,
        aligned_error: aligned_error(&sd, &scene.print, &scene.vein).map_err(|e| e.in_stage("demux"))?,
    };

    let mut modality = |name: &str, bands: Vec<GrayImage>, truth: &GrayImage| -> Result<ModalityReport> {
        let fused = fuse_bands(cfg, bands, strongest).map_err(|e| e.in_stage("fuse"))?;
        let fused_path = out.join(format!("{name}_fused.pgm"));
        write_pgm(&fused.0, &fused_path).map_err(|e| e.in_stage("fuse"))?;
        let problem = RestorationProblem {
            y: fused.0.clone(),
            lambda: cfg.restore.lambda,
            noise_sigma_y: 0.0,
            forward_model: cfg.restore.forward_model.clone(),
            iterations: cfg.restore.iterations,
        };
        let restored = restore(&problem, PriorSpec::TotalVariation).map_err(|e| e.in_stage("restore"))?;
        let restored_path = out.join(format!("{name}_restored.pgm"));
        write_pgm(&restored.image, &restored_path).map_err(|e| e.in_stage("restore"))?;
        outputs.push(fused_path);
        outputs.push(restored_path);
        Ok(ModalityReport {
            fused_weights: fused.1,
            fused: MetricReport::compute(&fused.0, truth).map_err(|e| e.in_stage("metrics"))?,
            restored: MetricReport::compute(&restored.image, truth).map_err(|e| e.in_stage("metrics"))?,
        })
    };
    let print_report = modality("print", prints, &scene.print)?;
    let vein_report = modality("vein", veins, &scene.vein)?;

    let manifest_path = out.join("manifest.json");
    outputs.push(manifest_path.clone());
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: cfg.clone(),
        inputs,
        outputs,
        stages: Stages {
            simulate: SimulateSummary {
                frames: scene.stream.frame_count(),
                samples_per_capture: spectrum.len,
                true_drift: emission.drift(),
            },
            scan: reports,
            thresholds,
            reconstruct: band_recons,
            demux: demux_summary,
            print: print_report,
            vein: vein_report,
        },
    };
    write_json(&manifest_path, &manifest).map_err(|e| e.in_stage("metrics"))?;
    Ok(manifest)
}

/// Fuses per-band images with the uniform mask taken from `reference`.
pub fn fuse_bands(cfg: &PipelineConfig, bands: Vec<GrayImage>, reference: usize) -> Result<(GrayImage, FusionWeights)> {
    let mask = segment_uniform(&bands[reference], cfg.fuse.window, cfg.fuse.var_threshold)?;
    let problem = match cfg.fuse.v_target {
        Some(v) => FusionProblem {
            bands,
            uniform_mask: mask,
            v_target: v,
            lambda: cfg.fuse.lambda,
            noise_threshold_tau: cfg.fuse.tau,
        },
        None => FusionProblem::with_default_target(bands, mask, cfg.fuse.lambda, cfg.fuse.tau)?,
    };
    let r = fuse(&problem)?;
    Ok((r.image, r.weights))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push(b'\n');
    write_atomic(path, &text)
}

/// The bundled demo: dual-modal 64×64 cards, two leaky bands, noise 0.05,
/// 50 ppm drift.
pub fn demo_config() -> PipelineConfig {
    PipelineConfig {
        seed: 7,
        paths: PathsConfig {
            print: "print.pgm".into(),
            vein: "vein.pgm".into(),
            output_dir: default_out(),
        },
        simulate: SimulateConfig {
            frames: 20,
            bit_rate_hz: 100e6,
            timing: None,
            sdr_sample_rate_hz: 20e6,
            noise_sigma: 0.05,
            clock_offset: 0.0,
            drift_ppm: 50.0,
            mode: EmissionMode::BitgroupAnalytic,
            bands: vec![
                BandSpec::new(10e6, 15e6).with_weights(1.0, 0.0),
                BandSpec::new(25e6, 30e6).with_weights(0.6, 0.4),
            ],
            skip_frames: 0,
        },
        scan: ScanConfig {
            f_min_hz: 0.0,
            f_max_hz: 40e6,
            band_width_hz: 5e6,
            thresholds: None,
            calibration_captures: default_calibration(),
        },
        reconstruct: ReconstructConfig::default(),
        demux: DemuxConfig::default(),
        fuse: FuseConfig::default(),
        restore: RestoreConfig::default(),
    }
}

/// Writes the demo cards and config into `dir`.
pub fn write_demo(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_pgm(&crate::demo::print_card(64, 64)?, dir.join("print.pgm"))?;
    write_pgm(&crate::demo::vein_card(64, 64)?, dir.join("vein.pgm"))?;
    let text = demo_config().to_toml()?;
    write_atomic(&dir.join("demo.toml"), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_hash_tracks_fields() {
        let cfg = demo_config();
        let text = cfg.to_toml().unwrap();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.fuse.lambda = 0.2;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_and_missing_seed_rejected() {
        let text = demo_config().to_toml().unwrap();
        let extra = format!("{text}\n[bogus]\nx = 1\n");
        assert!(PipelineConfig::from_toml(&extra).is_err());
        let no_seed: String = text.lines().filter(|l| !l.starts_with("seed")).collect::<Vec<_>>().join("\n");
        assert!(PipelineConfig::from_toml(&no_seed).is_err());
    }

    #[test]
    fn parity_choice_parses() {
        let text = demo_config().to_toml().unwrap();
        assert!(text.contains("parity = \"auto\""), "{text}");
        let fixed = text.replace("parity = \"auto\"", "parity = 1");
        assert_eq!(PipelineConfig::from_toml(&fixed).unwrap().demux.parity, ParityChoice::Fixed(1));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(3, 4), derive_seed(3, 4));
    }
}
