//! Command-line pipeline: `simulate`, `basis`, `flow`, `restore`, `evaluate`.
//!
//! Every command reads an optional JSON config with one section per stage;
//! flags override config keys. Errors map to stable exit codes (see
//! [`Error::exit_code`]).

mod config;

pub use config::{BasisSection, Config, SimulateSection, TiltSection};

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaussian2d::GaussianSet;
use crate::imgcore::{read_image, write_flow, write_image, write_planes, Image};
use crate::kernelbasis::{build_pca_basis, Kernel, KernelBasis};
use crate::metrics::{gcl, psnr, ssim};
use crate::restore::{restore_sequence, RestoreOutput};
use crate::tiltcorrect::{correct_reference, Reference};
use crate::turbsim::{degrade_sequence, natural_scene, sample_ensemble};

#[derive(Debug, Parser)]
#[command(name = "turbsplat", version, about = "Turbulence simulation and Gaussian-splat restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// JSON config with `simulate`, `basis`, `tiltcorrect` and `restore` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on one thread with a fixed reduction order.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Degrade a clean image into a tilt+blur bundle.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output bundle directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of frames.
        #[arg(long)]
        frames: Option<usize>,
        /// Region grid, `GWxGH` or `N`.
        #[arg(long, value_parser = parse_grid)]
        region_grid: Option<(usize, usize)>,
        /// Clean image (.png or .f32); a synthetic scene is used otherwise.
        #[arg(long)]
        clean: Option<PathBuf>,
    },
    /// Build a PCA kernel basis.
    Basis {
        #[command(flatten)]
        common: Common,
        /// Output basis file (.f32).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_components: Option<usize>,
        /// Kernel ensemble (.f32 planes with a `{support, count}` sidecar);
        /// sampled from the turbulence model otherwise.
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Estimate per-frame flows and the tilt-corrected reference.
    Flow {
        #[command(flatten)]
        common: Common,
        /// Bundle directory or frame files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Use only the first N frames.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        ref_index: Option<usize>,
    },
    /// Restore a frame sequence.
    Restore {
        #[command(flatten)]
        common: Common,
        /// Bundle directory or frame files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Basis written by `basis`.
        #[arg(long)]
        basis: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        ref_index: Option<usize>,
        #[arg(long, value_parser = parse_grid)]
        region_grid: Option<(usize, usize)>,
        #[arg(long)]
        n_components: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Ground truth for scoring; `clean.f32` in a bundle is used by default.
        #[arg(long)]
        clean: Option<PathBuf>,
    },
    /// Score images against a reference and write a metrics CSV.
    Evaluate {
        #[command(flatten)]
        common: Common,
        reference: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Method label for the CSV rows.
        #[arg(long, default_value = "turbsplat")]
        method: String,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad grid '{s}': {e}"));
    let (gw, gh) = match s.split_once(['x', 'X']) {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let n = parse(s)?;
            (n, n)
        }
    };
    if gw == 0 || gh == 0 {
        return Err(format!("grid '{s}' must be non-empty"));
    }
    Ok((gw, gh))
}

/// Parse `args` (including the program name) and run. Returns the process
/// exit code; messages go to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    let common = match &cmd {
        Command::Simulate { common, .. }
        | Command::Basis { common, .. }
        | Command::Flow { common, .. }
        | Command::Restore { common, .. }
        | Command::Evaluate { common, .. } => common.clone(),
    };
    let mut cfg = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    let body = move |out: &mut Vec<u8>| match cmd {
        Command::Simulate {
            out: dir,
            frames,
            region_grid,
            clean,
            ..
        } => {
            if let Some(n) = frames {
                cfg.simulate.n_frames = n;
            }
            if region_grid.is_some() {
                cfg.simulate.region_grid = region_grid;
            }
            cmd_simulate(&cfg, clean.as_deref(), &dir, out)
        }
        Command::Basis {
            out: path,
            n_components,
            ensemble,
            ..
        } => {
            if let Some(k) = n_components {
                cfg.basis.n_components = k;
            }
            cmd_basis(&cfg, ensemble.as_deref(), &path, out)
        }
        Command::Flow {
            inputs,
            out: dir,
            frames,
            ref_index,
            ..
        } => {
            if let Some(i) = ref_index {
                cfg.tiltcorrect.reference = Reference::Frame(i);
            }
            cmd_flow(&cfg, &inputs, frames, &dir, out)
        }
        Command::Restore {
            inputs,
            basis,
            out: dir,
            frames,
            ref_index,
            region_grid,
            n_components,
            lambda,
            clean,
            ..
        } => {
            if let Some(i) = ref_index {
                cfg.tiltcorrect.reference = Reference::Frame(i);
            }
            if region_grid.is_some() {
                cfg.restore.region_grid = region_grid;
            }
            if let Some(k) = n_components {
                cfg.restore.n_components = k;
            }
            if let Some(l) = lambda {
                cfg.restore.lambda = l;
            }
            cmd_restore(&cfg, &inputs, frames, &basis, clean.as_deref(), &dir, out)
        }
        Command::Evaluate {
            reference,
            images,
            method,
            out: path,
            ..
        } => cmd_evaluate(&reference, &images, &method, &path, out),
    };
    // commands print into a buffer so they can run inside a worker pool
    let mut buf = Vec::new();
    let res = if common.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| body(&mut buf))
    } else {
        body(&mut buf)
    };
    out.write_all(&buf).map_err(|e| Error::io("<stdout>", e))?;
    res
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

/// Writes `clean.f32`, `frame_%03d.f32`, `tilt_%03d.flo32`, `kernels.json`
/// and `params.json` into `dir`.
pub fn cmd_simulate(cfg: &Config, clean: Option<&Path>, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let sim = &cfg.simulate;
    if sim.n_frames == 0 {
        return Err(Error::InvalidArgument("n_frames must be at least 1".into()));
    }
    sim.turbulence.validate()?;
    let clean = match clean {
        Some(p) => read_image(p)?,
        None => natural_scene(sim.width, sim.height, sim.channels, sim.turbulence.seed)?,
    };
    let grid = sim.grid_for(clean.width(), clean.height());
    let seq = degrade_sequence(&clean, &sim.turbulence, sim.n_frames, grid)?;
    create_dir(dir)?;
    write_image(&clean, &dir.join("clean.f32"))?;
    for (t, (f, tilt)) in seq.frames.iter().zip(&seq.tilts).enumerate() {
        write_image(f, &dir.join(format!("frame_{t:03}.f32")))?;
        write_flow(tilt, &dir.join(format!("tilt_{t:03}.flo32")))?;
    }
    #[derive(Serialize)]
    struct Kernels<'a> {
        grid: (usize, usize),
        support: usize,
        frames: &'a [Vec<crate::turbsim::KernelParams>],
    }
    write_json(
        &dir.join("kernels.json"),
        &Kernels {
            grid,
            support: seq.support,
            frames: &seq.kernels,
        },
    )?;
    write_json(&dir.join("params.json"), sim)?;
    say(
        out,
        format_args!(
            "wrote {} frames of {}x{} (grid {}x{}) to {}",
            sim.n_frames,
            clean.width(),
            clean.height(),
            grid.0,
            grid.1,
            dir.display()
        ),
    )
}

#[derive(Debug, serde::Deserialize)]
struct EnsembleHeader {
    support: usize,
    count: usize,
}

fn read_ensemble(path: &Path) -> Result<Vec<Kernel>> {
    let (h, data): (EnsembleHeader, Vec<f32>) = crate::imgcore::read_planes(path)?;
    let d = h.support * h.support;
    if h.count == 0 || data.len() != d * h.count {
        return Err(Error::DimensionMismatch(format!(
            "{}: {} kernels of support {} need {} samples, payload has {}",
            path.display(),
            h.count,
            h.support,
            d * h.count,
            data.len()
        )));
    }
    data.chunks_exact(d)
        .map(|c| Kernel::new(h.support, c.iter().map(|&v| v as f64).collect()))
        .collect()
}

pub fn cmd_basis(cfg: &Config, ensemble: Option<&Path>, path: &Path, out: &mut dyn Write) -> Result<()> {
    let kernels = match ensemble {
        Some(p) => read_ensemble(p)?,
        None => {
            let t = &cfg.simulate.turbulence;
            t.validate()?;
            sample_ensemble(t, cfg.basis.ensemble_size, t.kernel_support)?
        }
    };
    let basis = build_pca_basis(&kernels, cfg.basis.n_components)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    basis.save(path)?;
    say(
        out,
        format_args!(
            "basis: {} kernels, support {}, {} components -> {}",
            kernels.len(),
            basis.support(),
            basis.n_components(),
            path.display()
        ),
    )
}

/// Frames plus the bundle's clean image when present.
fn load_frames(inputs: &[PathBuf], limit: Option<usize>) -> Result<(Vec<Image>, Option<PathBuf>)> {
    let (paths, clean) = if inputs.len() == 1 && inputs[0].is_dir() {
        let dir = &inputs[0];
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.starts_with("frame_") && (name.ends_with(".f32") || name.ends_with(".png"))
            })
            .collect();
        paths.sort();
        let clean = dir.join("clean.f32");
        (paths, clean.exists().then_some(clean))
    } else {
        (inputs.to_vec(), None)
    };
    let take = limit.unwrap_or(paths.len()).min(paths.len());
    if take == 0 {
        return Err(Error::InvalidArgument("no input frames".into()));
    }
    let frames = paths[..take].iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    Ok((frames, clean))
}

/// Writes `flow_%03d.flo32`, `mean_flow.flo32` and `corrected.f32`.
pub fn cmd_flow(
    cfg: &Config,
    inputs: &[PathBuf],
    limit: Option<usize>,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let (frames, _) = load_frames(inputs, limit)?;
    let tc = &cfg.tiltcorrect;
    tc.flow.validate()?;
    let c = correct_reference(&frames, tc.reference, &tc.flow)?;
    create_dir(dir)?;
    for (t, f) in c.flows.iter().enumerate() {
        write_flow(f, &dir.join(format!("flow_{t:03}.flo32")))?;
    }
    write_flow(&c.mean_flow, &dir.join("mean_flow.flo32"))?;
    write_image(&c.image, &dir.join("corrected.f32"))?;
    say(
        out,
        format_args!(
            "flow: {} frames, mean-flow rms {:.4} px{} -> {}",
            frames.len(),
            c.mean_flow.rms(0),
            if c.unreliable { " (some estimates unreliable)" } else { "" },
            dir.display()
        ),
    )
}

#[derive(Serialize)]
struct WeightsHeader {
    grid: (usize, usize),
    n_frames: usize,
    n_components: usize,
}

/// Writes `restored.f32`, `restored.png`, `corrected.f32`, `trace.csv`,
/// `gaussians.json` and `weights.f32`.
pub fn cmd_restore(
    cfg: &Config,
    inputs: &[PathBuf],
    limit: Option<usize>,
    basis_path: &Path,
    clean: Option<&Path>,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let basis = KernelBasis::load(basis_path)?;
    let (frames, bundle_clean) = load_frames(inputs, limit)?;
    let truth = match clean.map(Path::to_path_buf).or(bundle_clean) {
        Some(p) => Some(read_image(&p)?),
        None => None,
    };
    let mut rc = cfg.restore.clone();
    rc.reference = cfg.tiltcorrect.reference;
    rc.flow = cfg.tiltcorrect.flow.clone();
    let RestoreOutput {
        corrected, optimized, ..
    } = restore_sequence(&frames, &basis, &rc, truth.as_ref())?;

    create_dir(dir)?;
    write_image(&optimized.restored, &dir.join("restored.f32"))?;
    write_image(&optimized.restored, &dir.join("restored.png"))?;
    write_image(&corrected, &dir.join("corrected.f32"))?;
    write_trace(&dir.join("trace.csv"), &optimized.trace)?;
    write_gaussians(&dir.join("gaussians.json"), &optimized.state.set)?;
    let w = &optimized.state.weights;
    write_planes(
        &dir.join("weights.f32"),
        &WeightsHeader {
            grid: w.grid(),
            n_frames: w.n_frames(),
            n_components: w.n_components(),
        },
        &w.data().iter().map(|&v| v as f32).collect::<Vec<_>>(),
    )?;

    let last = optimized.trace.last().map_or(f64::NAN, |r| r.loss);
    say(out, format_args!("frames: {}", frames.len()))?;
    say(out, format_args!("iterations: {}", optimized.state.iteration))?;
    say(out, format_args!("final loss: {last:.6e}"))?;
    if let Some(t) = &truth {
        let n = frames.len() as f64;
        let mut dp = 0.0;
        let mut ds = 0.0;
        for f in &frames {
            dp += psnr(f, t)?;
            ds += ssim(f, t)?;
        }
        say(out, format_args!("degraded psnr: {:.4} ssim: {:.4}", dp / n, ds / n))?;
        say(
            out,
            format_args!(
                "restored psnr: {:.4} ssim: {:.4}",
                psnr(&optimized.restored, t)?,
                ssim(&optimized.restored, t)?
            ),
        )?;
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{}: csv: {other:?}", path.display())),
    }
}

fn write_trace(path: &Path, trace: &[crate::restore::TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["iteration", "loss", "best_loss", "psnr"])
        .map_err(|e| csv_error(path, e))?;
    for r in trace {
        let psnr = r.psnr.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.iteration.to_string(), r.loss.to_string(), r.best.to_string(), psnr])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_gaussians(path: &Path, set: &GaussianSet) -> Result<()> {
    let mut text = set.to_json()?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One CSV row per image: `method,image,psnr,ssim,gcl,brisque`.
pub fn cmd_evaluate(
    reference: &Path,
    images: &[PathBuf],
    method: &str,
    path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let r = read_image(reference)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["method", "image", "psnr", "ssim", "gcl", "brisque"])
        .map_err(|e| csv_error(path, e))?;
    for p in images {
        let img = read_image(p)?;
        let (ps, ss, g) = (psnr(&img, &r)?, ssim(&img, &r)?, gcl(&img)?);
        let name = p.display().to_string();
        w.write_record([method, &name, &ps.to_string(), &ss.to_string(), &g.to_string(), "n/a"])
            .map_err(|e| csv_error(path, e))?;
        say(out, format_args!("{name}: psnr {ps:.4} ssim {ss:.4} gcl {g:.6}"))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
