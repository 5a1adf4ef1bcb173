use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use csileak::band::{self, ReconParams, Thresholds};
use csileak::demux::{auto_parity, demux};
use csileak::emission::simulate_all;
use csileak::fusion::{fuse, segment_uniform, FusionProblem};
use csileak::image::{read_pgm, write_pgm};
use csileak::iq::{read_iq, write_iq};
use csileak::metrics::MetricReport;
use csileak::pipeline::{self, PipelineConfig, Scene};
use csileak::raster::{average_frames, detect_sync, envelope, Interpolation, RasterParams, SyncConfig, SyncModel};
use csileak::restore::{restore, ForwardModel, PriorSpec, RestorationProblem};

#[derive(Parser)]
#[command(name = "csileak", version, about = "Image recovery from CSI-2 link emissions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate per-band captures of the configured scene.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Locate informative sub-bands.
    Scan(ScanArgs),
    /// Rasterize one capture.
    Reconstruct {
        #[command(flatten)]
        raster: RasterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split an interleaved capture into print and vein images.
    Demux {
        #[command(flatten)]
        raster: RasterArgs,
        /// `auto`, `0` or `1`.
        #[arg(long, default_value = "auto")]
        parity: String,
        /// Output prefix; writes `<prefix>_print.pgm` and `<prefix>_vein.pgm`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse per-band reconstructions.
    Fuse(FuseArgs),
    /// Total-variation restoration.
    Restore {
        input: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        lambda: f64,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, value_enum, default_value_t = Forward::Identity)]
        forward: Forward,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quality metrics of an image against a reference.
    Metrics { test: PathBuf, reference: PathBuf },
    /// Run all stages from a config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the bundled demo cards and config.
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Forward {
    Identity,
    Blur3,
}

#[derive(Args)]
struct RasterArgs {
    #[arg(long)]
    iq: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Detect sync from the envelope (default).
    #[arg(long, conflicts_with = "sync_manual")]
    sync_auto: bool,
    /// `line_period,frame_period,theta_blank` in samples.
    #[arg(long, value_name = "L,P,THETA")]
    sync_manual: Option<String>,
    /// First sample of frame 0 for manual sync.
    #[arg(long, default_value_t = 0)]
    first_frame: usize,
    /// Pixel span within a line as `offset,fraction` of the line period.
    #[arg(long, value_name = "OFFSET,FRACTION")]
    active: Option<String>,
    #[arg(long)]
    nearest: bool,
    #[arg(long, default_value_t = 1)]
    smooth: usize,
}

#[derive(Args)]
struct ScanArgs {
    /// Simulated sweep of the configured scene.
    #[arg(long, conflicts_with = "iq")]
    config: Option<PathBuf>,
    /// Captured sub-bands, one file each.
    #[arg(long, num_args = 1..)]
    iq: Vec<PathBuf>,
    /// Noise-only captures for threshold calibration (file mode).
    #[arg(long, num_args = 1..)]
    calibration: Vec<PathBuf>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(required = true, num_args = 1..)]
    images: Vec<PathBuf>,
    #[arg(long, default_value_t = csileak::fusion::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// `auto` or a level in [0, 1].
    #[arg(long, default_value = "auto")]
    v_target: String,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 0.002)]
    var_threshold: f64,
    #[arg(long)]
    out: PathBuf,
    /// Weights report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Scan(args) => scan(args),
        Command::Reconstruct { raster, out } => {
            let (env, sync, params) = prepare(&raster).context("stage reconstruct")?;
            let img = average_frames(&env, &sync, &params).context("stage reconstruct")?;
            write_pgm(&img, &out)?;
            Ok(())
        }
        Command::Demux { raster, parity, out } => {
            let (env, sync, params) = prepare(&raster).context("stage demux")?;
            let parity = match parity.as_str() {
                "auto" => {
                    let d = auto_parity(&env, &sync, &params).context("stage demux")?;
                    if d.warning {
                        eprintln!("warning: parity ambiguous (variance gap {:.3})", d.variance_gap);
                    }
                    d.parity_offset
                }
                "0" => 0,
                "1" => 1,
                other => bail!("--parity must be auto, 0 or 1, got {other}"),
            };
            let r = demux(&env, &sync, &params, parity).context("stage demux")?;
            write_pgm(&r.print_image, suffixed(&out, "_print.pgm"))?;
            write_pgm(&r.vein_image, suffixed(&out, "_vein.pgm"))?;
            println!(
                "{}",
                serde_json::json!({"parity_offset": parity, "n_print": r.n_print, "n_vein": r.n_vein})
            );
            Ok(())
        }
        Command::Fuse(args) => fuse_cmd(args),
        Command::Restore { input, lambda, iters, forward, out } => {
            let y = read_pgm(&input)?;
            let problem = RestorationProblem {
                y,
                lambda,
                noise_sigma_y: 0.0,
                forward_model: match forward {
                    Forward::Identity => ForwardModel::Identity,
                    Forward::Blur3 => ForwardModel::blur3(),
                },
                iterations: iters,
            };
            let r = restore(&problem, PriorSpec::TotalVariation).context("stage restore")?;
            write_pgm(&r.image, &out)?;
            Ok(())
        }
        Command::Metrics { test, reference } => {
            let report = MetricReport::compute(&read_pgm(&test)?, &read_pgm(&reference)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Pipeline { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let m = pipeline::run(&cfg, base, out.as_deref())?;
            println!(
                "{}",
                serde_json::json!({
                    "config_hash": m.config_hash,
                    "ssim_print": m.stages.print.restored.ssim,
                    "ssim_vein": m.stages.vein.restored.ssim,
                })
            );
            Ok(())
        }
        Command::Demo { out } => Ok(pipeline::write_demo(&out)?),
    }
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn pair(text: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("{what}: expected {n} comma-separated numbers"))?;
    if v.len() != n {
        bail!("{what}: expected {n} comma-separated numbers, got {}", v.len());
    }
    Ok(v)
}

fn prepare(a: &RasterArgs) -> Result<(Vec<f64>, SyncModel, RasterParams)> {
    let trace = read_iq(&a.iq)?;
    let env = envelope(&trace, a.smooth);
    let mut params = RasterParams::new(a.width, a.height, a.frames);
    if a.nearest {
        params.interpolation = Interpolation::Nearest;
    }
    if let Some(w) = &a.active {
        let v = pair(w, 2, "--active")?;
        params = params.with_active_window(v[0], v[1]);
    }
    let sync = match &a.sync_manual {
        Some(s) => {
            let v = pair(s, 3, "--sync-manual")?;
            let frames = ((env.len().saturating_sub(a.first_frame)) as f64 / v[1]).floor() as usize;
            SyncModel::manual(v[0], v[1], v[2], a.first_frame, frames.max(1))?
        }
        None => detect_sync(&env, trace.sample_rate_hz(), &SyncConfig::default())?,
    };
    Ok((env, sync, params))
}

fn simulate(config: &Path, out: &Path) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let print = read_pgm(base.join(&cfg.paths.print))?;
    let vein = read_pgm(base.join(&cfg.paths.vein))?;
    let scene = Scene::new(print, vein, &cfg).context("stage simulate")?;
    let traces = simulate_all(&scene.stream, &scene.timing, &cfg.emission(), cfg.seed).context("stage simulate")?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (i, t) in traces.iter().enumerate() {
        write_iq(t, out.join(format!("band{i}.iq")))?;
    }
    Ok(())
}

fn scan(args: ScanArgs) -> Result<()> {
    let reports = if let Some(config) = &args.config {
        let cfg = PipelineConfig::load(config)?;
        let base = config.parent().unwrap_or(Path::new("."));
        let scene = Scene::new(read_pgm(base.join(&cfg.paths.print))?, read_pgm(base.join(&cfg.paths.vein))?, &cfg)?;
        let recon = pipeline::recon_params(&cfg, &scene);
        let mut source = pipeline::SimulatedSpectrum::new(&scene, cfg.emission(), cfg.seed)?;
        let thresholds = match cfg.scan.thresholds {
            Some(t) => t,
            None => {
                let cal = (0..cfg.scan.calibration_captures as u64)
                    .map(|i| source.noise(0.0, u64::MAX - i))
                    .collect::<csileak::Result<Vec<_>>>()?;
                Thresholds::calibrate(&cal)?
            }
        };
        band::scan(&mut source, (cfg.scan.f_min_hz, cfg.scan.f_max_hz), cfg.scan.band_width_hz, &thresholds, &recon)
            .context("stage scan")?
    } else {
        if args.iq.is_empty() {
            bail!("scan needs --config or --iq");
        }
        if args.calibration.is_empty() {
            bail!("file mode needs --calibration captures");
        }
        let cal = args.calibration.iter().map(read_iq).collect::<csileak::Result<Vec<_>>>()?;
        let thresholds = Thresholds::calibrate(&cal)?;
        let recon = ReconParams {
            sync: SyncConfig::default(),
            raster: RasterParams::new(args.width, args.height, args.frames),
            envelope_width: 1,
        };
        let traces = args.iq.iter().map(read_iq).collect::<csileak::Result<Vec<_>>>()?;
        band::scan_traces(&traces, &thresholds, &recon)
    };
    let text = serde_json::to_string_pretty(&reports)?;
    match args.out {
        Some(p) => std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn fuse_cmd(a: FuseArgs) -> Result<()> {
    let bands = a.images.iter().map(read_pgm).collect::<csileak::Result<Vec<_>>>()?;
    let reference = (0..bands.len())
        .max_by(|&x, &y| {
            let e = |i: usize| bands[i].pixels().iter().map(|v| v * v).sum::<f64>();
            e(x).total_cmp(&e(y))
        })
        .unwrap();
    let mask = segment_uniform(&bands[reference], a.window, a.var_threshold).context("stage fuse")?;
    let problem = match a.v_target.as_str() {
        "auto" => FusionProblem::with_default_target(bands, mask, a.lambda, a.tau)?,
        v => FusionProblem {
            bands,
            uniform_mask: mask,
            v_target: v.parse().with_context(|| format!("--v-target: not a number: {v}"))?,
            lambda: a.lambda,
            noise_threshold_tau: a.tau,
        },
    };
    let r = fuse(&problem).context("stage fuse")?;
    write_pgm(&r.image, &a.out)?;
    let report = serde_json::json!({
        "alpha": r.weights.alpha,
        "objective": r.objective,
        "vertex_objectives": r.vertex_objectives,
    });
    match a.report {
        Some(p) => std::fs::write(&p, serde_json::to_string_pretty(&report)? + "\n")?,
        None => println!("{report}"),
    }
    Ok(())
}
