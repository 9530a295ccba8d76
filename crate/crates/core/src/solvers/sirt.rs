//! SIRT and SIRT-TV (SIRT steps alternating with Chambolle TV denoising,
//! FISTA-relaxed).

use crate::error::{Error, Result};
use crate::tvops::{chambolle_denoise, tv_value};
use crate::volume::{ProjectionStack, Volume};

use super::config::{Algorithm, ReconConfig};
use super::fista::{extrapolate, Momentum};
use super::trace::Recorder;
use super::{cost_ls_from, divide, IterationTrace, SystemOps};

/// One SIRT update; also returns `Af` for the input volume.
fn sirt_update(ops: &SystemOps, f: &Volume, p: &ProjectionStack, lambda: f64) -> Result<(Volume, ProjectionStack)> {
    let af = ops.forward(f)?;
    let residual: Vec<f64> = p.data.iter().zip(&af.data).map(|(a, b)| a - b).collect();
    let weighted = ProjectionStack::from_vec(p.dims(), p.domain, divide(&residual, &ops.ray_sums.data))?;
    let back = ops.back(&weighted)?;
    let correction = divide(&back.data, &ops.sensitivity.data);
    let data = f
        .data
        .iter()
        .zip(&correction)
        .map(|(v, c)| v + lambda * c)
        .collect();
    Ok((Volume::from_vec(f.dims(), f.voxel_size, data)?, af))
}

/// `f + λ · (1/A*1) · A*[(p - Af) / A1]`.
pub fn sirt_step(ops: &SystemOps, f: &Volume, p: &ProjectionStack, lambda: f64) -> Result<Volume> {
    ops.check_projections(p)?;
    if !(lambda >= 0.0) {
        return Err(Error::param("lambda", "must be ≥ 0"));
    }
    Ok(sirt_update(ops, f, p, lambda)?.0)
}

/// Plain SIRT with the configured FISTA relaxation (SIRT-TV with `α = 0`).
pub fn run_sirt(ops: &SystemOps, p: &ProjectionStack, config: &ReconConfig) -> Result<(Volume, IterationTrace)> {
    let cfg = ReconConfig {
        alpha: 0.0,
        ..config.clone()
    };
    sirt_loop(ops, p, &cfg, "SIRT")
}

/// SIRT-TV. Records `½‖Af - p‖² + α TV(f)` of the volume entering each SIRT
/// step, then of the returned volume.
pub fn run_sirt_tv(ops: &SystemOps, p: &ProjectionStack, config: &ReconConfig) -> Result<(Volume, IterationTrace)> {
    sirt_loop(ops, p, config, Algorithm::SirtTv.label())
}

fn sirt_loop(
    ops: &SystemOps,
    p: &ProjectionStack,
    config: &ReconConfig,
    name: &'static str,
) -> Result<(Volume, IterationTrace)> {
    ops.check_projections(p)?;
    let alpha = config.alpha;
    let mut rec = Recorder::new(name, config.log_every, Some(config.watchdog));
    let dims = ops.projector.volume_dims();
    let vs = ops.geometry().voxel_size;
    let mut f = Volume::zeros(dims, vs);
    let mut relaxed = f.clone();
    let mut momentum = Momentum::new();
    let tv = |v: &Volume| if alpha > 0.0 { alpha * tv_value(v) } else { 0.0 };

    for n in 0..config.iterations {
        let (half, af) = sirt_update(ops, &relaxed, p, config.lambda)?;
        if rec.wants(n) {
            rec.record(n, cost_ls_from(p, &af)? + tv(&relaxed))?;
        }
        let next = if alpha > 0.0 {
            chambolle_denoise(&half, alpha, config.tv_iterations, config.chambolle_tau)?
        } else {
            half
        };
        relaxed = if config.fista {
            let beta = momentum.advance();
            Volume::from_vec(dims, vs, extrapolate(&next.data, &f.data, beta))?
        } else {
            next.clone()
        };
        f = next;
    }
    let af = ops.forward(&f)?;
    rec.record(config.iterations, cost_ls_from(p, &af)? + tv(&f))?;
    Ok((f, rec.trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{full_circle, ConeBeamGeometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (SystemOps, Volume, ProjectionStack) {
        let g = ConeBeamGeometry::new(401.07, 564.3, 10, 12, 1.4, full_circle(12), [6, 8, 8], 1.0, 0).unwrap();
        let ops = SystemOps::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Volume::from_fn(g.grid_dims(), 1.0, |_, _, _| rng.random::<f64>());
        let p = ops.forward(&f).unwrap();
        (ops, f, p)
    }

    #[test]
    fn fixed_point_and_zero_step() {
        let (ops, f, p) = setup();
        let same = sirt_step(&ops, &f, &p, 0.8).unwrap();
        for (a, b) in same.data.iter().zip(&f.data) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = Volume::zeros(f.dims(), 1.0);
        assert_eq!(sirt_step(&ops, &g, &p, 0.0).unwrap(), g);
    }

    #[test]
    fn step_decreases_residual() {
        let (ops, f, p) = setup();
        let mut g = Volume::zeros(f.dims(), 1.0);
        let mut prev = cost_ls_from(&p, &ops.forward(&g).unwrap()).unwrap();
        for _ in 0..10 {
            g = sirt_step(&ops, &g, &p, 0.8).unwrap();
            let c = cost_ls_from(&p, &ops.forward(&g).unwrap()).unwrap();
            assert!(c < prev);
            prev = c;
        }
    }

    #[test]
    fn plain_sirt_is_monotone_without_fista() {
        let (ops, _, p) = setup();
        let cfg = ReconConfig {
            algorithm: Algorithm::Sirt,
            iterations: 30,
            fista: false,
            ..Default::default()
        };
        let (_, trace) = run_sirt(&ops, &p, &cfg).unwrap();
        let c = trace.costs();
        assert_eq!(c.len(), 31);
        assert!(c.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn vanishing_alpha_matches_plain_sirt() {
        let (ops, _, p) = setup();
        let cfg = ReconConfig {
            algorithm: Algorithm::SirtTv,
            iterations: 15,
            tv_iterations: 7,
            ..Default::default()
        };
        let (plain, _) = run_sirt(&ops, &p, &cfg).unwrap();
        let (tiny, _) = run_sirt_tv(&ops, &p, &ReconConfig { alpha: 1e-13, ..cfg.clone() }).unwrap();
        let (zero, _) = run_sirt_tv(&ops, &p, &ReconConfig { alpha: 0.0, ..cfg }).unwrap();
        assert_eq!(zero, plain);
        for (a, b) in tiny.data.iter().zip(&plain.data) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
