//! Reconstruction algorithms and their shared machinery.
//!
//! Iterative solvers run on the geometry's reconstruction grid (ROI plus the
//! lateral extension margin); [`reconstruct`] picks the margin from the
//! config, runs the solver and crops the ROI back out.

pub mod config;
pub mod fdk;
pub mod fista;
mod kl_tv;
mod mlem;
mod sirt;
mod trace;

use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;
use crate::projector::Projector;
use crate::volume::{guarded_div, ProjectionStack, Volume, GUARD};

pub use config::{Algorithm, FdkOptions, Preset, RampWindow, ReconConfig, Watchdog};
pub use fdk::run_fdk;
pub use kl_tv::{kl_dual_update, run_kl_tv};
pub use mlem::{mlem_step, run_mlem, run_mlem_tv};
pub use sirt::{run_sirt, run_sirt_tv, sirt_step};
pub use trace::{IterationTrace, TraceRecord};

/// Projector plus the row sums `A1` and column sums `s = A*1` that every
/// iterative solver needs.
#[derive(Debug, Clone)]
pub struct SystemOps {
    pub projector: Projector,
    pub ray_sums: ProjectionStack,
    pub sensitivity: Volume,
}

impl SystemOps {
    pub fn new(geom: &ConeBeamGeometry) -> Result<Self> {
        let projector = Projector::new(geom)?;
        let ray_sums = projector.ray_sums();
        let sensitivity = projector.sensitivity();
        Ok(Self {
            projector,
            ray_sums,
            sensitivity,
        })
    }

    pub fn geometry(&self) -> &ConeBeamGeometry {
        self.projector.geometry()
    }

    pub fn forward(&self, f: &Volume) -> Result<ProjectionStack> {
        self.projector.forward(f)
    }

    pub fn back(&self, g: &ProjectionStack) -> Result<Volume> {
        self.projector.back(g)
    }

    /// Sensitivity with voxels below `floor × max(s)` set to zero.
    pub fn masked_sensitivity(&self, floor: f64) -> Volume {
        let cut = floor * self.sensitivity.max();
        let mut s = self.sensitivity.clone();
        s.data.iter_mut().for_each(|v| {
            if *v < cut || *v <= GUARD {
                *v = 0.0
            }
        });
        s
    }

    fn check_projections(&self, p: &ProjectionStack) -> Result<()> {
        p.same_shape(&self.ray_sums)
    }

    /// `KL(p, Af)` over the rays that intersect the grid (`A1 > 0`). Rays
    /// that miss it carry no information about `f`.
    pub fn kl_cost(&self, p: &ProjectionStack, af: &ProjectionStack) -> Result<f64> {
        kl_masked(p, af, Some(&self.ray_sums))
    }
}

/// `½‖Af - p‖²` from a precomputed `Af`.
pub fn cost_ls_from(p: &ProjectionStack, af: &ProjectionStack) -> Result<f64> {
    p.same_shape(af)?;
    Ok(0.5 * p.data.iter().zip(&af.data).map(|(a, b)| (b - a) * (b - a)).sum::<f64>())
}

/// `½‖Af - p‖²`.
pub fn cost_ls(p: &ProjectionStack, f: &Volume, geom: &ConeBeamGeometry) -> Result<f64> {
    let af = Projector::new(geom)?.forward(f)?;
    cost_ls_from(p, &af)
}

/// `KL(p, Af) = Σ p ln p - p ln Af + Af - p` from a precomputed `Af`, with
/// `0 ln 0 = 0`. Entries with `Af ≤ 0 < p` make the cost `+∞`.
pub fn cost_kl_from(p: &ProjectionStack, af: &ProjectionStack) -> Result<f64> {
    kl_masked(p, af, None)
}

fn kl_masked(p: &ProjectionStack, af: &ProjectionStack, ray_sums: Option<&ProjectionStack>) -> Result<f64> {
    p.same_shape(af)?;
    check_nonnegative("projections", &p.data)?;
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.data.iter().zip(&af.data).enumerate() {
        if ray_sums.is_some_and(|r| r.data[i] <= GUARD) {
            continue;
        }
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            acc += pi * (pi / qi).ln() + qi - pi;
        } else {
            acc += qi;
        }
    }
    Ok(acc)
}

/// `KL(p, Af)` over the rays that intersect the grid of `geom`.
pub fn cost_kl(p: &ProjectionStack, f: &Volume, geom: &ConeBeamGeometry) -> Result<f64> {
    check_nonnegative("volume", &f.data)?;
    let projector = Projector::new(geom)?;
    let af = projector.forward(f)?;
    kl_masked(p, &af, Some(&projector.ray_sums()))
}

pub(crate) fn check_nonnegative(what: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().enumerate().find(|(_, v)| **v < 0.0) {
        Some((index, &value)) => Err(Error::NegativeInput { what, index, value }),
        None => Ok(()),
    }
}

/// Element-wise `num / den` with the guarded-division convention.
pub(crate) fn divide(num: &[f64], den: &[f64]) -> Vec<f64> {
    num.iter().zip(den).map(|(&a, &b)| guarded_div(a, b)).collect()
}

/// Runs `config.algorithm` on `geom` extended by the configured margin and
/// returns the cropped ROI with the cost trace (empty for FDK).
pub fn reconstruct(
    p: &ProjectionStack,
    geom: &ConeBeamGeometry,
    config: &ReconConfig,
) -> Result<(Volume, IterationTrace)> {
    config.validate()?;
    if config.algorithm == Algorithm::Fdk {
        let roi = geom.with_margin(0);
        return Ok((run_fdk(p, &roi, config)?, IterationTrace::default()));
    }
    let margin = config.extension_margin.unwrap_or(geom.extension_margin);
    let grid = geom.with_margin(margin);
    let ops = SystemOps::new(&grid)?;
    let (vol, trace) = run_with(&ops, p, config)?;
    Ok((vol.crop_lateral(margin), trace))
}

/// Dispatches an iterative solver on an existing operator set (no cropping).
pub fn run_with(ops: &SystemOps, p: &ProjectionStack, config: &ReconConfig) -> Result<(Volume, IterationTrace)> {
    match config.algorithm {
        Algorithm::Fdk => Ok((run_fdk(p, ops.geometry(), config)?, IterationTrace::default())),
        Algorithm::Sirt => run_sirt(ops, p, config),
        Algorithm::SirtTv => run_sirt_tv(ops, p, config),
        Algorithm::Mlem => run_mlem(ops, p, config),
        Algorithm::MlemTv => run_mlem_tv(ops, p, config),
        Algorithm::KlTv => run_kl_tv(ops, p, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::full_circle;
    use crate::volume::Domain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack(data: Vec<f64>) -> ProjectionStack {
        ProjectionStack::from_vec([1, 1, data.len()], Domain::LineIntegral, data).unwrap()
    }

    #[test]
    fn kl_cost_cases() {
        let p = stack(vec![1.0, 2.0, 0.5]);
        assert_eq!(cost_kl_from(&p, &p).unwrap(), 0.0);
        let zero = stack(vec![0.0, 0.0, 0.0]);
        let af = stack(vec![0.3, 1.2, 2.0]);
        assert!((cost_kl_from(&zero, &af).unwrap() - 3.5).abs() < 1e-15);
        assert_eq!(cost_kl_from(&p, &stack(vec![0.0, 1.0, 1.0])).unwrap(), f64::INFINITY);
        assert!(cost_kl_from(&stack(vec![-1.0, 0.0, 0.0]), &af).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pv: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 3.0).collect();
        let qv: Vec<f64> = (0..50).map(|_| 0.1 + rng.random::<f64>() * 3.0).collect();
        let brute: f64 = pv
            .iter()
            .zip(&qv)
            .map(|(p, q)| p * p.ln() - p * q.ln() + q - p)
            .sum();
        let got = cost_kl_from(&stack(pv), &stack(qv)).unwrap();
        assert!((got - brute).abs() < 1e-12 * brute.abs());
    }

    #[test]
    fn kl_cost_skips_rays_that_miss_the_grid() {
        // a wide detector: the outer columns never meet the volume
        let g = ConeBeamGeometry::new(401.07, 564.3, 4, 40, 2.0, full_circle(3), [4, 4, 4], 1.0, 0).unwrap();
        let ops = SystemOps::new(&g).unwrap();
        assert!(ops.ray_sums.data.iter().any(|&r| r == 0.0));
        let f = Volume::filled(g.grid_dims(), 1.0, 0.5);
        let af = ops.forward(&f).unwrap();
        let p = ProjectionStack::filled(af.dims(), Domain::LineIntegral, 0.3);
        assert_eq!(cost_kl_from(&p, &af).unwrap(), f64::INFINITY);
        let masked = ops.kl_cost(&p, &af).unwrap();
        let brute: f64 = (0..p.data.len())
            .filter(|&i| ops.ray_sums.data[i] > 0.0)
            .map(|i| 0.3 * (0.3 / af.data[i]).ln() + af.data[i] - 0.3)
            .sum();
        assert!(masked.is_finite());
        assert!((masked - brute).abs() < 1e-12 * brute.abs());
        assert_eq!(cost_kl(&p, &f, &g).unwrap(), masked);
    }

    #[test]
    fn ls_cost_cases() {
        let p = stack(vec![1.0, 2.0]);
        assert_eq!(cost_ls_from(&p, &p).unwrap(), 0.0);
        assert_eq!(cost_ls_from(&p, &stack(vec![0.0, 0.0])).unwrap(), 2.5);
        assert!(cost_ls_from(&p, &stack(vec![0.0])).is_err());

        let g = ConeBeamGeometry::new(401.07, 564.3, 6, 8, 1.5, full_circle(4), [4, 5, 5], 1.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Volume::from_fn(g.grid_dims(), 1.0, |_, _, _| rng.random());
        let pr = ProjectionStack::from_vec(
            g.projection_dims(),
            Domain::LineIntegral,
            (0..4 * 6 * 8).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let af = Projector::new(&g).unwrap().forward(&f).unwrap();
        let brute: f64 = (0..af.data.len()).map(|i| (af.data[i] - pr.data[i]).powi(2)).sum::<f64>() / 2.0;
        assert!((cost_ls(&pr, &f, &g).unwrap() - brute).abs() < 1e-12 * brute);
        let zero_p = ProjectionStack::zeros(g.projection_dims(), Domain::LineIntegral);
        assert_eq!(cost_ls(&zero_p, &Volume::zeros(g.grid_dims(), 1.0), &g).unwrap(), 0.0);
    }
}
