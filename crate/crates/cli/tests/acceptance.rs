//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.
//!
//! `ACCEPTANCE_ONLY=3,10` runs a subset.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cbct::geometry::{full_circle, ConeBeamGeometry};
use cbct::metrics::{self, Region};
use cbct::noise;
use cbct::phantom::{generate_phantom, PhantomSpec};
use cbct::solvers::{self, kl_dual_update, Algorithm, Preset, ReconConfig, SystemOps};
use cbct::tvops::{active_min, divergence, gradient, GradientField};
use cbct::{Domain, Error, ProjectionStack, Projector, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3], voxel_size: f64) -> Volume {
    Volume::from_fn(dims, voxel_size, |_, _, _| rng.random::<f64>())
}

fn jaw_data(geom: &ConeBeamGeometry) -> (Volume, ProjectionStack) {
    let truth = generate_phantom(&PhantomSpec::default_jaw(), geom.grid_dims(), geom.voxel_size).unwrap();
    let p = Projector::new(geom).unwrap().forward(&truth).unwrap();
    (truth, p)
}

fn nonincreasing(costs: &[f64], rel: f64) -> Option<usize> {
    costs.windows(2).position(|w| !(w[1] <= w[0] + rel * w[0].abs()))
}

fn adjointness() -> Outcome {
    let geom = ConeBeamGeometry::desk(32, 32, 20, 48, 48, 3.63);
    let a = Projector::new(&geom).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let f = random_volume(&mut rng, geom.grid_dims(), geom.voxel_size);
        let g_data = (0..geom.projection_dims().iter().product::<usize>())
            .map(|_| rng.random::<f64>())
            .collect();
        let g = ProjectionStack::from_vec(geom.projection_dims(), Domain::LineIntegral, g_data).unwrap();
        let lhs = a.forward(&f).unwrap().dot(&g);
        let rhs = f.dot(&a.back(&g).unwrap());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 30.0,
        format!("20 pairs, worst relative gap {worst:.2e}, {secs:.1} s"),
    )
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dims = [16, 16, 16];
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let f = Volume::from_fn(dims, 1.0, |_, _, _| rng.random_range(-1.0..1.0));
        let mut phi = GradientField::zeros(dims);
        for c in phi.components.iter_mut() {
            c.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let lhs = phi.dot(&gradient(&f));
        let rhs = -divergence(&phi).dot(&f);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    check(worst < 1e-10, format!("10 random pairs on 16^3, worst relative gap {worst:.2e}"))
}

fn mlem_monotone() -> Outcome {
    let geom = ConeBeamGeometry::desk(16, 16, 30, 24, 24, 7.26);
    let (_, p) = jaw_data(&geom);
    let ops = SystemOps::new(&geom).unwrap();
    let cfg = ReconConfig {
        algorithm: Algorithm::Mlem,
        iterations: 100,
        ..Default::default()
    };
    let (_, trace) = solvers::run_with(&ops, &p, &cfg).map_err(|e| e.to_string())?;
    let c = trace.costs();
    match nonincreasing(&c, 1e-9) {
        None => check(c.len() == 101, format!("KL {:.3e} -> {:.3e} over 100 steps", c[0], c[100])),
        Some(i) => Err(format!("KL rose at step {i}: {:.12e} -> {:.12e}", c[i], c[i + 1])),
    }
}

fn mlem_tv_convergence() -> Outcome {
    let geom = ConeBeamGeometry::new(401.07, 564.3, 12, 12, 1.4, full_circle(16), [8, 8, 8], 1.0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let truth = Volume::from_fn(geom.grid_dims(), 1.0, |i, j, k| {
        let base = if (2..6).contains(&i) && (2..6).contains(&j) && (2..6).contains(&k) { 1.0 } else { 0.2 };
        base + 0.05 * rng.random::<f64>()
    });
    let ops = SystemOps::new(&geom).unwrap();
    let p = ops.forward(&truth).unwrap();
    let s_min = active_min(&ops.masked_sensitivity(0.02)).unwrap();
    let mut cfg = ReconConfig {
        algorithm: Algorithm::MlemTv,
        iterations: 100,
        alpha: 0.5 * s_min / 6.0,
        tv_iterations: 200,
        fista: false,
        ..Default::default()
    };
    let (_, trace) = solvers::run_with(&ops, &p, &cfg).map_err(|e| e.to_string())?;
    let c = trace.costs();
    if let Some(i) = nonincreasing(&c, 1e-9) {
        return Err(format!("cost rose at step {i}: {:.12e} -> {:.12e}", c[i], c[i + 1]));
    }
    cfg.alpha = s_min / 6.0;
    let guarded = matches!(
        solvers::run_with(&ops, &p, &cfg),
        Err(Error::ConvergenceConstraint { .. })
    );
    check(
        guarded,
        format!(
            "cost {:.4e} -> {:.4e} over 100 steps; alpha = s_min/6 rejected: {guarded}",
            c[0], c[100]
        ),
    )
}

fn consistency() -> Outcome {
    let geom = ConeBeamGeometry::desk(32, 32, 60, 40, 52, 3.63);
    let (truth, p) = jaw_data(&geom);
    let ops = SystemOps::new(&geom).unwrap();
    // the TV weight is relative to the mean sensitivity of the active voxels
    let s = ops.masked_sensitivity(0.02);
    let active: Vec<f64> = s.data.iter().copied().filter(|&v| v > 0.0).collect();
    let scale = active.iter().sum::<f64>() / active.len() as f64;
    let mut lines = Vec::new();
    let mut ok = true;
    for algo in [Algorithm::SirtTv, Algorithm::Mlem, Algorithm::KlTv] {
        let mut cfg = ReconConfig::preset(Preset::Phantom, algo);
        cfg.log_every = cfg.iterations;
        cfg.alpha = match algo {
            Algorithm::SirtTv => 0.0,
            Algorithm::KlTv => 1e-4 * scale,
            _ => cfg.alpha,
        };
        let start = Instant::now();
        let (rec, _) = solvers::run_with(&ops, &p, &cfg).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let e = metrics::nrmse(&rec, &truth).unwrap();
        ok &= e < 0.05 && secs < 300.0;
        lines.push(format!("{} {} it {e:.4} ({secs:.0} s)", algo.label(), cfg.iterations));
    }
    check(ok, format!("{}; scale {scale:.1}", lines.join(", ")))
}

// Shared 96x96x64 acquisition for the ordering criterion.
const ORDER_GEOMETRY: &str = include_str!("../../../configs/desk-96.toml");

/// (algorithm, iterations, alpha) per method, FDK first. Preset alphas,
/// iteration counts cut to fit the time limit on one core.
const ORDER_RUNS: [(Algorithm, usize, f64); 5] = [
    (Algorithm::Fdk, 1, 0.0),
    (Algorithm::SirtTv, 100, 5e-5),
    (Algorithm::Mlem, 100, 0.0),
    (Algorithm::MlemTv, 100, 0.1),
    (Algorithm::KlTv, 500, 0.1),
];

fn ordering() -> Outcome {
    let start = Instant::now();
    let geom = ConeBeamGeometry::from_toml_str(ORDER_GEOMETRY).unwrap();
    let (truth, clean) = jaw_data(&geom);
    let p = noise::simulate_noise(&clean, 1e4, 5.0, 7).unwrap();
    let mut e = [0.0; 5];
    for (slot, &(algo, iterations, alpha)) in ORDER_RUNS.iter().enumerate() {
        let cfg = ReconConfig {
            iterations,
            alpha,
            log_every: iterations,
            ..ReconConfig::preset(Preset::Phantom, algo)
        };
        let (rec, _) = solvers::reconstruct(&p, &geom, &cfg).map_err(|e| e.to_string())?;
        e[slot] = metrics::nrmse(&rec, &truth).unwrap();
    }
    let [fdk, sirt_tv, mlem, mlem_tv, kl_tv] = e;
    let secs = start.elapsed().as_secs_f64();
    let ordered = mlem_tv.max(kl_tv) < sirt_tv && sirt_tv < mlem && mlem < fdk;
    let margin = [sirt_tv, mlem_tv, kl_tv].iter().all(|&t| t <= 0.7 * mlem);
    check(
        ordered && margin && secs < 900.0,
        format!(
            "FDK {fdk:.4}, SIRT-TV {sirt_tv:.4}, MLEM {mlem:.4}, MLEM-TV {mlem_tv:.4}, KL-TV {kl_tv:.4}; \
             ordered {ordered}, TV <= 0.7 MLEM {margin}, {secs:.0} s"
        ),
    )
}

fn truncation() -> Outcome {
    // the grid and the detector both cover an 82.5 mm ROI; the head is 110 mm wide
    let roi = ConeBeamGeometry::desk(24, 16, 48, 24, 24, 82.5 / 24.0 * 564.30 / 401.07);
    let spec = PhantomSpec::wide_jaw();
    let pad = 32;
    let full = roi.with_margin(pad);
    let big = generate_phantom(&spec, full.grid_dims(), full.voxel_size).unwrap();
    let p = Projector::new(&full).unwrap().forward(&big).unwrap();
    let truth = big.crop_lateral(pad);
    let mut e = [0.0; 2];
    for (slot, margin) in [0, pad].into_iter().enumerate() {
        let cfg = ReconConfig {
            algorithm: Algorithm::KlTv,
            iterations: 300,
            alpha: 0.05,
            extension_margin: Some(margin),
            log_every: 300,
            ..Default::default()
        };
        let (rec, _) = solvers::reconstruct(&p, &roi, &cfg).map_err(|e| e.to_string())?;
        e[slot] = metrics::nrmse(&rec, &truth).unwrap();
    }
    check(e[1] < e[0], format!("ROI NRMSE margin 0: {:.4}, margin {pad}: {:.4}", e[0], e[1]))
}

fn noise_statistics() -> Outcome {
    let (views, rows, cols) = (10, 100, 1000);
    let p_value: f64 = 0.7;
    let p = ProjectionStack::filled([views, rows, cols], Domain::LineIntegral, p_value);
    let counts = noise::simulate_counts(&p, 1e4, 0.0, 21).unwrap();
    let mean = counts.data.iter().sum::<f64>() / counts.data.len() as f64;
    let expected = 1e4 * (-p_value).exp();
    let rel = (mean - expected).abs() / expected;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let varied = ProjectionStack::from_vec(
        [views, rows, cols],
        Domain::LineIntegral,
        (0..views * rows * cols).map(|_| rng.random_range(0.0..3.0)).collect(),
    )
    .unwrap();
    let low = noise::simulate_noise(&varied, 50.0, 5.0, 23).unwrap();
    let min = low.data.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        rel < 0.01 && min >= 0.0,
        format!("Poisson mean {mean:.2} vs {expected:.2} (rel {rel:.1e}) over 1e6 pixels; min log output {min}"),
    )
}

fn metric_self_tests() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dims = [8, 8, 8];
    let f = random_volume(&mut rng, dims, 1.0);
    let mut fails = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64, tol: f64| {
        if !((got - want).abs() <= tol) {
            fails.push(format!("{name}: {got} vs {want}"));
        }
    };
    expect("nrmse(f,f)", metrics::nrmse(&f, &f).unwrap(), 0.0, 0.0);
    expect("pearson(f,f)", metrics::pearson(&f, &f, None).unwrap(), 1.0, 1e-12);
    expect("ssim(f,f)", metrics::ssim_global(&f, &f).unwrap(), 1.0, 1e-12);
    // range 1 and MSE 1/100 gives exactly 20 dB
    let reference = Volume::from_fn([1, 1, 4], 1.0, |_, _, k| if k == 0 { 1.0 } else { 0.0 });
    let shifted = Volume::from_fn([1, 1, 4], 1.0, |_, _, k| reference.data[k] + 0.1);
    expect("psnr 20 dB", metrics::psnr(&shifted, &reference).unwrap(), 20.0, 1e-12);

    for _ in 0..5 {
        let a = random_volume(&mut rng, dims, 1.0);
        let b = random_volume(&mut rng, dims, 1.0);
        let n = a.len() as f64;
        let diff2: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
        let ref2: f64 = b.data.iter().map(|y| y * y).sum();
        expect("nrmse", metrics::nrmse(&a, &b).unwrap(), (diff2 / ref2).sqrt(), 1e-10);
        let range = b.max() - b.min();
        expect("psnr", metrics::psnr(&a, &b).unwrap(), 10.0 * (range * range / (diff2 / n)).log10(), 1e-10);
        let (ma, mb) = (a.data.iter().sum::<f64>() / n, b.data.iter().sum::<f64>() / n);
        let va = a.data.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb = b.data.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
        let cov = a.data.iter().zip(&b.data).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let (c1, c2) = (0.01 * range, 0.03 * range);
        let ssim = (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        expect("ssim", metrics::ssim_global(&a, &b).unwrap(), ssim, 1e-10);
        expect("pearson", metrics::pearson(&a, &b, None).unwrap(), cov / (va * vb).sqrt(), 1e-10);
        let (obj, bg) = (Region::parse("0:4,0:8,0:8").unwrap(), Region::parse("4:8,0:8,0:8").unwrap());
        let half = a.len() / 2;
        let mo = a.data[..half].iter().sum::<f64>() / half as f64;
        let mbg = a.data[half..].iter().sum::<f64>() / half as f64;
        let sd = (a.data[half..].iter().map(|x| (x - mbg).powi(2)).sum::<f64>() / (half as f64 - 1.0)).sqrt();
        expect("cnr", metrics::cnr(&a, obj, bg).unwrap(), 20.0 * ((mo - mbg).abs() / sd).log10(), 1e-10);
    }
    check(fails.is_empty(), if fails.is_empty() {
        "identities, 20 dB case and five brute-force pairs on 8^3 agree".into()
    } else {
        fails.join("; ")
    })
}

fn dual_step_unit_value() -> Outcome {
    let y = kl_dual_update(0.0, 1.0, 2.0, 1.0);
    let want = 0.5 * (3.0 - 5f64.sqrt());
    check((y - want).abs() < 1e-12, format!("{y:.15} vs {want:.15}"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cbct")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("cbct {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let geom = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk-32.toml");
    let f = |name: &str| dir.join(name).to_str().unwrap().to_string();
    run_cli(&["--threads", threads, "phantom", "--geometry", geom, "-o", &f("ph.raw")])?;
    run_cli(&["--threads", threads, "project", "--geometry", geom, "--volume", &f("ph.raw"), "-o", &f("clean.raw")])?;
    run_cli(&["--threads", threads, "noise", "--input", &f("clean.raw"), "--seed", "42", "-o", &f("noisy.raw")])?;
    for algo in ["fdk", "mlem-tv", "kl-tv"] {
        run_cli(&[
            "--threads", threads, "reconstruct", "--geometry", geom, "--input", &f("noisy.raw"), "--algo", algo,
            "--iterations", "20", "--no-timing", "-o", &f(&format!("{algo}.raw")),
        ])?;
    }
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    Ok(files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path(), "1")?;
    let second = pipeline(b.path(), "3")?;
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        first.len() == second.len() && differing.is_empty(),
        format!("{} files byte-identical across runs with 1 and 3 threads; differing: {differing:?}", first.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("operator adjointness", adjointness),
        ("gradient/divergence duality", duality),
        ("MLEM monotonicity", mlem_monotone),
        ("MLEM-TV convergence property", mlem_tv_convergence),
        ("consistency recovery", consistency),
        ("ordering reproduction", ordering),
        ("truncation handling", truncation),
        ("noise statistics", noise_statistics),
        ("metric self-tests", metric_self_tests),
        ("KL-TV dual-step unit value", dual_step_unit_value),
        ("determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let took = Duration::from_secs_f64(start.elapsed().as_secs_f64());
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{took:.1?}]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{took:.1?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
