//! `cbct`: phantom → projections → noise → reconstruction → metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cbct::io::{self, Axis};
use cbct::metrics::{self, Region};
use cbct::noise;
use cbct::phantom::{self, PhantomSpec};
use cbct::solvers::{self, Algorithm, IterationTrace, Preset, ReconConfig};
use cbct::{ConeBeamGeometry, Error, ProjectionStack, Volume};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  bad command line
  3  unknown name (algorithm, preset, phantom spec, axis)
  4  malformed config, header or geometry
  5  invalid parameter value
  6  dimension mismatch or index out of range
  7  MLEM-TV convergence constraint violated (alpha < s_min/6)
  8  solver diverged (watchdog)
  9  file i/o failure
 10  payload checksum or size mismatch
 11  degenerate or negative input data";

#[derive(Parser)]
#[command(name = "cbct", version, about = "Cone-beam CT simulation and reconstruction", after_help = EXIT_CODES)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize a phantom on the geometry's ROI grid.
    Phantom(PhantomArgs),
    /// Forward-project a volume to line integrals.
    Project(ProjectArgs),
    /// Simulate Poisson and electronic noise on line integrals.
    Noise(NoiseArgs),
    /// Reconstruct a volume from projections.
    Reconstruct(ReconstructArgs),
    /// Compare a volume to a reference.
    Metrics(MetricsArgs),
    /// Run every method on one dataset and tabulate NRMSE, PSNR and SSIM.
    Compare(CompareArgs),
    /// Turn cost traces into cost-vs-iteration and cost-vs-time tables.
    TracePlotData(TraceArgs),
}

#[derive(Args)]
struct SliceArgs {
    /// Also write an 8-bit PGM slice, `AXIS:INDEX` with AXIS in axial|coronal|sagittal.
    #[arg(long, requires = "slice_out")]
    slice: Option<String>,
    /// Display window `LO,HI` (default: volume min,max).
    #[arg(long, allow_hyphen_values = true)]
    window: Option<String>,
    #[arg(long)]
    slice_out: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    /// Built-in name (default-jaw, wide-jaw) or path to a TOML spec.
    #[arg(long, default_value = "default-jaw")]
    spec: String,
    #[arg(long)]
    geometry: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    slice: SliceArgs,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    geometry: PathBuf,
    /// Volume on the geometry's ROI grid.
    #[arg(long)]
    volume: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long)]
    input: PathBuf,
    /// Incident photons per ray.
    #[arg(long, default_value_t = noise::DEFAULT_I0)]
    i0: f64,
    /// Electronic noise standard deviation, counts.
    #[arg(long, default_value_t = noise::DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep every k-th view after adding noise.
    #[arg(long, default_value_t = 1)]
    subsample: usize,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Parameter preset: phantom (default), experimental-low-dose, experimental-ultra-low-dose.
    #[arg(long)]
    preset: Option<String>,
    /// TOML solver config; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    tv_iterations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Lateral extension margin in voxels.
    #[arg(long)]
    margin: Option<usize>,
    /// Record the cost every k iterations.
    #[arg(long)]
    log_every: Option<usize>,
    /// Write zero in the trace's wall-clock column so repeated runs are
    /// byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// fdk, sirt, mlem, sirt-tv, mlem-tv or kl-tv.
    #[arg(long)]
    algo: String,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(short, long)]
    out: PathBuf,
    /// Cost trace (TSV); defaults to OUT with a `.trace.tsv` suffix.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    slice: SliceArgs,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// CNR object box `s0:s1,r0:r1,c0:c1` (needs --background).
    #[arg(long, requires = "background")]
    object: Option<String>,
    /// CNR background box.
    #[arg(long, requires = "object")]
    background: Option<String>,
    /// Pearson correlation boxes, repeatable as `NAME=BOX`.
    #[arg(long = "corr")]
    corr: Vec<String>,
    /// Use the squared SSIM constants instead of the unsquared ones.
    #[arg(long)]
    standard_ssim: bool,
    /// Emit tab-separated `metric value` lines instead of a table.
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value = "phantom")]
    preset: String,
    /// Per-method override `ALGO.KEY=VALUE` (keys: iterations, tv_iterations, alpha, lambda).
    #[arg(long = "set")]
    set: Vec<String>,
    /// Applied to every iterative method.
    #[arg(long)]
    margin: Option<usize>,
    /// Zero the wall-clock column of the written traces.
    #[arg(long)]
    no_timing: bool,
    /// Writes volumes, traces and `compare.tsv` here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    /// Traces as `LABEL=PATH` or `PATH` (label from the file name).
    #[arg(required = true)]
    traces: Vec<String>,
    /// Output prefix; writes PREFIX.iterations.tsv and PREFIX.time.tsv.
    /// Without it both tables go to stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Divide each trace by its first finite cost.
    #[arg(long)]
    relative: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(5);
        }
    }
    let result = match cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Project(a) => cmd_project(a),
        Command::Noise(a) => cmd_noise(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Compare(a) => cmd_compare(a),
        Command::TracePlotData(a) => cmd_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Unknown { .. } => 3,
        Error::Format { .. } | Error::Geometry(_) => 4,
        Error::Parameter { .. } => 5,
        Error::DimensionMismatch { .. } | Error::IndexOutOfRange { .. } => 6,
        Error::ConvergenceConstraint { .. } => 7,
        Error::Diverged { .. } => 8,
        Error::Io { .. } => 9,
        Error::Checksum { .. } | Error::PayloadSize { .. } => 10,
        Error::NegativeInput { .. } | Error::Degenerate { .. } => 11,
        _ => 1,
    }
}

fn read_text(path: &Path) -> cbct::Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> cbct::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn bad_flag(what: &str, reason: String) -> Error {
    Error::Format {
        what: what.to_string(),
        reason,
    }
}

fn load_geometry(path: &Path) -> cbct::Result<ConeBeamGeometry> {
    ConeBeamGeometry::from_toml_str(&read_text(path)?)
}

/// Projections plus the geometry with the angle list from their header.
fn load_projections(input: &Path, geometry: &Path) -> cbct::Result<(ProjectionStack, ConeBeamGeometry)> {
    let geom = load_geometry(geometry)?;
    let (p, angles) = io::read_projections(input)?;
    let geom = geom.with_angles(angles)?;
    if p.dims() != geom.projection_dims() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?} (geometry)", geom.projection_dims()),
            actual: format!("{:?} (projections)", p.dims()),
        });
    }
    Ok((p, geom))
}

fn maybe_export_slice(vol: &Volume, args: &SliceArgs) -> cbct::Result<()> {
    let (Some(spec), Some(out)) = (&args.slice, &args.slice_out) else {
        return Ok(());
    };
    let (axis, index) = spec
        .split_once(':')
        .ok_or_else(|| bad_flag("--slice", format!("expected AXIS:INDEX, got `{spec}`")))?;
    let axis = Axis::parse(axis)?;
    let index = index
        .parse()
        .map_err(|_| bad_flag("--slice", format!("bad index `{index}`")))?;
    let window = match &args.window {
        Some(w) => {
            let (lo, hi) = w
                .split_once(',')
                .ok_or_else(|| bad_flag("--window", format!("expected LO,HI, got `{w}`")))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| bad_flag("--window", format!("bad number `{s}`")))
            };
            (num(lo)?, num(hi)?)
        }
        None => (vol.min(), vol.max()),
    };
    io::export_slice(vol, axis, index, window, out)
}

fn cmd_phantom(a: PhantomArgs) -> cbct::Result<()> {
    let geom = load_geometry(&a.geometry)?;
    let spec = if phantom::BUILTIN.contains(&a.spec.as_str()) {
        PhantomSpec::builtin(&a.spec)?
    } else if Path::new(&a.spec).exists() {
        PhantomSpec::from_toml_str(&read_text(Path::new(&a.spec))?)?
    } else {
        return Err(Error::Unknown {
            what: "phantom spec",
            name: a.spec,
        });
    };
    let vol = phantom::generate_phantom(&spec, geom.volume_dims, geom.voxel_size)?;
    io::write_volume(&a.out, &vol)?;
    maybe_export_slice(&vol, &a.slice)?;
    println!("wrote {} ({:?} voxels of {} mm)", a.out.display(), vol.dims(), vol.voxel_size);
    Ok(())
}

fn cmd_project(a: ProjectArgs) -> cbct::Result<()> {
    let geom = load_geometry(&a.geometry)?.with_margin(0);
    let vol = io::read_volume(&a.volume)?;
    let p = cbct::projector::forward_project(&vol, &geom)?;
    io::write_projections(&a.out, &p, &geom.angles)?;
    println!("wrote {} ({:?})", a.out.display(), p.dims());
    Ok(())
}

fn cmd_noise(a: NoiseArgs) -> cbct::Result<()> {
    let (p, angles) = io::read_projections(&a.input)?;
    let noisy = noise::simulate_noise(&p, a.i0, a.sigma, a.seed)?;
    let (out, angles) = if a.subsample > 1 {
        let [n, rows, cols] = noisy.dims();
        if a.subsample > n {
            return Err(Error::Parameter {
                name: "subsample",
                reason: format!("{} exceeds the {n} available views", a.subsample),
            });
        }
        let keep: Vec<usize> = (0..n).step_by(a.subsample).collect();
        let data = keep.iter().flat_map(|&v| noisy.view(v).iter().copied()).collect();
        (
            ProjectionStack::from_vec([keep.len(), rows, cols], noisy.domain, data)?,
            keep.iter().map(|&v| angles[v]).collect(),
        )
    } else {
        (noisy, angles)
    };
    io::write_projections(&a.out, &out, &angles)?;
    println!("wrote {} ({} views)", a.out.display(), out.n_angles());
    Ok(())
}

fn solver_config(algo: Algorithm, s: &SolverArgs) -> cbct::Result<ReconConfig> {
    let preset = match &s.preset {
        Some(name) => Preset::parse(name)?,
        None => Preset::Phantom,
    };
    let mut cfg = ReconConfig::preset(preset, algo);
    if let Some(path) = &s.config {
        cfg = ReconConfig::from_toml_str(&read_text(path)?)?;
        cfg.algorithm = algo;
    }
    if let Some(v) = s.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = s.tv_iterations {
        cfg.tv_iterations = v;
    }
    if let Some(v) = s.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = s.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = s.margin {
        cfg.extension_margin = Some(v);
    }
    if let Some(v) = s.log_every {
        cfg.log_every = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn strip_timing(mut trace: IterationTrace, strip: bool) -> IterationTrace {
    if strip {
        trace.records.iter_mut().for_each(|r| r.seconds = 0.0);
    }
    trace
}

fn trace_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".trace.tsv");
    PathBuf::from(s)
}

fn cmd_reconstruct(a: ReconstructArgs) -> cbct::Result<()> {
    let algo = Algorithm::parse(&a.algo)?;
    let cfg = solver_config(algo, &a.solver)?;
    let (p, geom) = load_projections(&a.input, &a.geometry)?;
    let (vol, trace) = solvers::reconstruct(&p, &geom, &cfg)?;
    let trace = strip_timing(trace, a.solver.no_timing);
    io::write_volume(&a.out, &vol)?;
    let tp = a.trace.unwrap_or_else(|| trace_path(&a.out));
    write_text(&tp, &trace.to_tsv())?;
    maybe_export_slice(&vol, &a.slice)?;
    match trace.last() {
        Some(last) => println!(
            "{}: {} iterations, final cost {:.6e}, wrote {} and {}",
            algo.label(),
            last.iteration,
            last.cost,
            a.out.display(),
            tp.display()
        ),
        None => println!("{}: wrote {} and {}", algo.label(), a.out.display(), tp.display()),
    }
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> cbct::Result<()> {
    let f = io::read_volume(&a.volume)?;
    let r = io::read_volume(&a.reference)?;
    let constants = if a.standard_ssim {
        metrics::SsimConstants::Standard
    } else {
        metrics::SsimConstants::Unsquared
    };
    let mut rows: Vec<(String, f64)> = vec![
        ("NRMSE".into(), metrics::nrmse(&f, &r)?),
        ("PSNR".into(), metrics::psnr(&f, &r)?),
        ("SSIM".into(), metrics::ssim_global_with(&f, &r, constants)?),
        ("Corr".into(), metrics::pearson(&f, &r, None)?),
    ];
    if let (Some(obj), Some(bg)) = (&a.object, &a.background) {
        rows.push(("CNR".into(), metrics::cnr(&f, Region::parse(obj)?, Region::parse(bg)?)?));
    }
    for c in &a.corr {
        let (name, boxed) = c
            .split_once('=')
            .ok_or_else(|| bad_flag("--corr", format!("expected NAME=BOX, got `{c}`")))?;
        rows.push((format!("Corr {name}"), metrics::pearson(&f, &r, Some(Region::parse(boxed)?))?));
    }
    let mut out = String::new();
    for (k, v) in &rows {
        if a.tsv {
            let _ = writeln!(out, "{k}\t{v:.10e}");
        } else {
            let _ = writeln!(out, "{k:<12} {v:>12.6}");
        }
    }
    print!("{out}");
    Ok(())
}

/// Rows of the comparison table, in display order.
const COMPARE_ORDER: [Algorithm; 5] = [
    Algorithm::Fdk,
    Algorithm::SirtTv,
    Algorithm::Mlem,
    Algorithm::MlemTv,
    Algorithm::KlTv,
];

fn apply_override(cfgs: &mut [(Algorithm, ReconConfig)], item: &str) -> cbct::Result<()> {
    let bad = |reason: String| bad_flag("--set", reason);
    let (lhs, value) = item
        .split_once('=')
        .ok_or_else(|| bad(format!("expected ALGO.KEY=VALUE, got `{item}`")))?;
    let (algo, key) = lhs
        .split_once('.')
        .ok_or_else(|| bad(format!("expected ALGO.KEY=VALUE, got `{item}`")))?;
    let algo = Algorithm::parse(algo)?;
    let cfg = &mut cfgs
        .iter_mut()
        .find(|(a, _)| *a == algo)
        .ok_or_else(|| bad(format!("{} is not compared", algo.name())))?
        .1;
    let num = || value.parse::<f64>().map_err(|_| bad(format!("bad number `{value}`")));
    let int = || value.parse::<usize>().map_err(|_| bad(format!("bad integer `{value}`")));
    match key {
        "iterations" => cfg.iterations = int()?,
        "tv_iterations" => cfg.tv_iterations = int()?,
        "alpha" => cfg.alpha = num()?,
        "lambda" => cfg.lambda = num()?,
        _ => {
            return Err(Error::Unknown {
                what: "override key",
                name: key.to_string(),
            })
        }
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> cbct::Result<()> {
    let preset = Preset::parse(&a.preset)?;
    let (p, geom) = load_projections(&a.input, &a.geometry)?;
    let reference = io::read_volume(&a.reference)?;
    let mut cfgs: Vec<(Algorithm, ReconConfig)> = COMPARE_ORDER
        .iter()
        .map(|&algo| {
            let mut c = ReconConfig::preset(preset, algo);
            c.extension_margin = a.margin.or(c.extension_margin);
            (algo, c)
        })
        .collect();
    for item in &a.set {
        apply_override(&mut cfgs, item)?;
    }
    let mut tsv = String::from("method\tNRMSE\tPSNR\tSSIM\n");
    let mut table = format!("{:<10} {:>10} {:>10} {:>10}\n", "Method", "NRMSE", "PSNR", "SSIM");
    for (algo, cfg) in &cfgs {
        cfg.validate()?;
        let (vol, trace) = solvers::reconstruct(&p, &geom, cfg)?;
        let trace = strip_timing(trace, a.no_timing);
        let r = metrics::report(&vol, &reference)?;
        let _ = writeln!(tsv, "{}\t{:.6e}\t{:.6e}\t{:.6e}", algo.label(), r.nrmse, r.psnr, r.ssim);
        let _ = writeln!(table, "{:<10} {:>10.4} {:>10.2} {:>10.4}", algo.label(), r.nrmse, r.psnr, r.ssim);
        if let Some(dir) = &a.out_dir {
            io::write_volume(dir.join(format!("{}.raw", algo.name())), &vol)?;
            if algo.is_iterative() {
                write_text(&dir.join(format!("{}.trace.tsv", algo.name())), &trace.to_tsv())?;
            }
        }
    }
    if let Some(dir) = &a.out_dir {
        write_text(&dir.join("compare.tsv"), &tsv)?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_trace(a: TraceArgs) -> cbct::Result<()> {
    let mut iters = String::from("method\titeration\tcost\n");
    let mut times = String::from("method\tseconds\tcost\n");
    for item in &a.traces {
        let (label, path) = match item.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let path = PathBuf::from(item);
                let stem = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.trim_end_matches(".tsv").trim_end_matches(".trace").to_string())
                    .unwrap_or_else(|| item.clone());
                (stem, path)
            }
        };
        let trace = IterationTrace::from_tsv(&read_text(&path)?)?;
        let norm = if a.relative {
            trace
                .costs()
                .into_iter()
                .find(|c| c.is_finite() && *c != 0.0)
                .unwrap_or(1.0)
        } else {
            1.0
        };
        for r in &trace.records {
            let _ = writeln!(iters, "{label}\t{}\t{:.10e}", r.iteration, r.cost / norm);
            let _ = writeln!(times, "{label}\t{:.6}\t{:.10e}", r.seconds, r.cost / norm);
        }
    }
    match &a.out {
        Some(prefix) => {
            let with = |suffix: &str| {
                let mut s = prefix.as_os_str().to_owned();
                s.push(suffix);
                PathBuf::from(s)
            };
            write_text(&with(".iterations.tsv"), &iters)?;
            write_text(&with(".time.tsv"), &times)?;
        }
        None => print!("{iters}\n{times}"),
    }
    Ok(())
}
