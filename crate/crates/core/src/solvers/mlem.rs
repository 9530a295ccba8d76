//! MLEM and MLEM-TV (EM steps alternating with a weighted-KL TV denoising
//! M-step).

use crate::error::Result;
use crate::tvops::{check_klw_constraint, klw_denoise, tv_value, KlwOptions};
use crate::volume::{ProjectionStack, Volume, GUARD};

use super::config::{Algorithm, ReconConfig};
use super::fista::Momentum;
use super::trace::Recorder;
use super::{check_nonnegative, divide, IterationTrace, SystemOps};

/// One EM update against sensitivity `s`; also returns `Af`.
fn mlem_update(ops: &SystemOps, f: &Volume, p: &ProjectionStack, s: &Volume) -> Result<(Volume, ProjectionStack)> {
    let af = ops.forward(f)?;
    let ratio = ProjectionStack::from_vec(p.dims(), p.domain, divide(&p.data, &af.data))?;
    let back = ops.back(&ratio)?;
    let scale = divide(&f.data, &s.data);
    let data = scale.iter().zip(&back.data).map(|(a, b)| a * b).collect();
    Ok((Volume::from_vec(f.dims(), f.voxel_size, data)?, af))
}

/// `(f / A*1) · A*[p / Af]` with guarded divisions.
pub fn mlem_step(ops: &SystemOps, f: &Volume, p: &ProjectionStack) -> Result<Volume> {
    ops.check_projections(p)?;
    check_nonnegative("volume", &f.data)?;
    check_nonnegative("projections", &p.data)?;
    Ok(mlem_update(ops, f, p, &ops.sensitivity)?.0)
}

fn initial_volume(ops: &SystemOps, p: &ProjectionStack, s: &Volume, value: Option<f64>) -> Volume {
    let value = value.unwrap_or_else(|| {
        let total: f64 = ops.ray_sums.data.iter().sum();
        let v = p.data.iter().sum::<f64>() / total;
        if v > GUARD { v } else { 1.0 }
    });
    let mut f = Volume::zeros(s.dims(), s.voxel_size);
    f.data
        .iter_mut()
        .zip(&s.data)
        .for_each(|(v, &sv)| *v = if sv > GUARD { value } else { 0.0 });
    f
}

/// Plain MLEM. Records `KL(p, Af)` for every iterate, starting from the
/// uniform initial volume.
pub fn run_mlem(ops: &SystemOps, p: &ProjectionStack, config: &ReconConfig) -> Result<(Volume, IterationTrace)> {
    ops.check_projections(p)?;
    check_nonnegative("projections", &p.data)?;
    let s = ops.masked_sensitivity(config.sensitivity_floor);
    let mut rec = Recorder::new(Algorithm::Mlem.label(), config.log_every, Some(config.watchdog));
    let mut f = initial_volume(ops, p, &s, config.initial_value);
    for n in 0..config.iterations {
        let (next, af) = mlem_update(ops, &f, p, &s)?;
        if rec.wants(n) {
            rec.record(n, ops.kl_cost(p, &af)?)?;
        }
        f = next;
    }
    let af = ops.forward(&f)?;
    rec.record(config.iterations, ops.kl_cost(p, &af)?)?;
    Ok((f, rec.trace))
}

/// MLEM-TV. The constraint `α < s_min/6` is checked once up front on the
/// active (floor-masked) sensitivity. Records `KL(p, Af) + α TV(f)` of the
/// volume entering each E-step, then of the returned volume.
pub fn run_mlem_tv(ops: &SystemOps, p: &ProjectionStack, config: &ReconConfig) -> Result<(Volume, IterationTrace)> {
    ops.check_projections(p)?;
    check_nonnegative("projections", &p.data)?;
    let alpha = config.alpha;
    let s = ops.masked_sensitivity(config.sensitivity_floor);
    if alpha > 0.0 {
        check_klw_constraint(&s, alpha)?;
    }
    let opts = KlwOptions {
        alpha,
        n_iter: config.tv_iterations,
        precondition: config.precondition,
        accelerate: config.inner_fista,
    };
    let tv = |v: &Volume| if alpha > 0.0 { alpha * tv_value(v) } else { 0.0 };
    let mut rec = Recorder::new(Algorithm::MlemTv.label(), config.log_every, Some(config.watchdog));
    let mut f = initial_volume(ops, p, &s, config.initial_value);
    let mut relaxed = f.clone();
    let mut momentum = Momentum::new();
    for n in 0..config.iterations {
        let (half, af) = mlem_update(ops, &relaxed, p, &s)?;
        if rec.wants(n) {
            rec.record(n, ops.kl_cost(p, &af)? + tv(&relaxed))?;
        }
        let next = if alpha > 0.0 {
            klw_denoise(&half, &s, opts)?
        } else {
            half
        };
        relaxed = if config.fista {
            let beta = momentum.advance();
            let data = next
                .data
                .iter()
                .zip(&f.data)
                .map(|(a, b)| (a + beta * (a - b)).max(0.0))
                .collect();
            Volume::from_vec(next.dims(), next.voxel_size, data)?
        } else {
            next.clone()
        };
        f = next;
    }
    let af = ops.forward(&f)?;
    rec.record(config.iterations, ops.kl_cost(p, &af)? + tv(&f))?;
    Ok((f, rec.trace))
}
