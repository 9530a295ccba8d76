//! Discrete gradient, divergence, total variation and the two dual TV
//! denoisers used between data-fidelity steps.
//!
//! The gradient uses forward differences with a zero last row along each
//! axis. The divergence is its negative adjoint, so
//! `<φ, ∇f>_Y = -<div φ, f>` holds exactly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::solvers::fista::Momentum;
use crate::volume::{guarded_div, Volume, GUARD};

/// Per-voxel 3-vector field: the codomain of [`gradient`].
///
/// Component 0 differentiates along slices, 1 along rows, 2 along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    dims: [usize; 3],
    pub components: [Vec<f64>; 3],
}

impl GradientField {
    pub fn zeros(dims: [usize; 3]) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            components: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// `<φ, ψ>_Y`.
    pub fn dot(&self, other: &GradientField) -> f64 {
        (0..3)
            .map(|c| crate::volume::dot(&self.components[c], &other.components[c]))
            .sum()
    }

    /// Euclidean norm of the 3-vector at linear offset `o`.
    #[inline]
    pub fn magnitude_at(&self, o: usize) -> f64 {
        let [a, b, c] = &self.components;
        (a[o] * a[o] + b[o] * b[o] + c[o] * c[o]).sqrt()
    }
}

pub fn gradient(vol: &Volume) -> GradientField {
    let dims = vol.dims();
    let mut g = GradientField::zeros(dims);
    gradient_into(&vol.data, dims, &mut g);
    g
}

fn gradient_into(f: &[f64], dims: [usize; 3], g: &mut GradientField) {
    let [m, n, p] = dims;
    let (si, sj) = (n * p, p);
    let [g0, g1, g2] = &mut g.components;
    g0.par_chunks_mut(si)
        .zip(g1.par_chunks_mut(si))
        .zip(g2.par_chunks_mut(si))
        .enumerate()
        .for_each(|(i, ((c0, c1), c2))| {
            for j in 0..n {
                for k in 0..p {
                    let o = i * si + j * sj + k;
                    let l = j * sj + k;
                    let v = f[o];
                    c0[l] = if i + 1 < m { f[o + si] - v } else { 0.0 };
                    c1[l] = if j + 1 < n { f[o + sj] - v } else { 0.0 };
                    c2[l] = if k + 1 < p { f[o + 1] - v } else { 0.0 };
                }
            }
        });
}

/// One axis of the divergence stencil: `φ_i - φ_{i-1}` with the first and
/// last rows handled as one-sided terms.
#[inline(always)]
fn div_term(phi: &[f64], o: usize, idx: usize, len: usize, stride: usize) -> f64 {
    if len == 1 {
        // first and last row coincide: φ_1 - φ_0 with both absent
        0.0
    } else if idx == 0 {
        phi[o]
    } else if idx + 1 == len {
        -phi[o - stride]
    } else {
        phi[o] - phi[o - stride]
    }
}

pub fn divergence(field: &GradientField) -> Volume {
    let dims = field.dims();
    let mut out = vec![0.0; dims.iter().product()];
    divergence_into(field, &mut out);
    Volume::from_vec(dims, 1.0, out).expect("dims match")
}

fn divergence_into(field: &GradientField, out: &mut [f64]) {
    let [m, n, p] = field.dims();
    let (si, sj) = (n * p, p);
    let [c0, c1, c2] = &field.components;
    out.par_chunks_mut(si).enumerate().for_each(|(i, slab)| {
        for j in 0..n {
            for k in 0..p {
                let o = i * si + j * sj + k;
                slab[j * sj + k] =
                    div_term(c0, o, i, m, si) + div_term(c1, o, j, n, sj) + div_term(c2, o, k, p, 1);
            }
        }
    });
}

/// `Σ |(∇f)_{ijk}|`.
pub fn tv_value(vol: &Volume) -> f64 {
    let g = gradient(vol);
    (0..vol.len()).map(|o| g.magnitude_at(o)).sum()
}

/// `|∇| f`: the gradient stencil with absolute-valued coefficients.
pub fn gradient_abs(vol: &Volume) -> GradientField {
    let dims = vol.dims();
    let [m, n, p] = dims;
    let (si, sj) = (n * p, p);
    let f = &vol.data;
    let mut g = GradientField::zeros(dims);
    for i in 0..m {
        for j in 0..n {
            for k in 0..p {
                let o = i * si + j * sj + k;
                if i + 1 < m {
                    g.components[0][o] = f[o + si].abs() + f[o].abs();
                }
                if j + 1 < n {
                    g.components[1][o] = f[o + sj].abs() + f[o].abs();
                }
                if k + 1 < p {
                    g.components[2][o] = f[o + 1].abs() + f[o].abs();
                }
            }
        }
    }
    g
}

/// `|div| φ`: the divergence stencil with absolute-valued coefficients.
pub fn divergence_abs(field: &GradientField) -> Volume {
    let dims = field.dims();
    let [m, n, p] = dims;
    let (si, sj) = (n * p, p);
    let term = |phi: &[f64], o: usize, idx: usize, len: usize, stride: usize| -> f64 {
        if len == 1 {
            0.0
        } else if idx == 0 {
            phi[o].abs()
        } else if idx + 1 == len {
            phi[o - stride].abs()
        } else {
            phi[o].abs() + phi[o - stride].abs()
        }
    };
    let [c0, c1, c2] = &field.components;
    Volume::from_fn(dims, 1.0, |i, j, k| {
        let o = i * si + j * sj + k;
        term(c0, o, i, m, si) + term(c1, o, j, n, sj) + term(c2, o, k, p, 1)
    })
}

/// Upper bound (exclusive) on the Chambolle step for 3D images.
pub const CHAMBOLLE_TAU_MAX: f64 = 1.0 / 12.0;
/// Default Chambolle step.
pub const CHAMBOLLE_TAU: f64 = 0.08;

/// Solves `min_f ½‖f - g‖² + α TV(f)` with Chambolle's dual fixed-point
/// iteration started at `φ = 0`; returns `g - α div φ`.
pub fn chambolle_denoise(vol: &Volume, alpha: f64, n_iter: usize, tau: f64) -> Result<Volume> {
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", format!("must be > 0, got {alpha}")));
    }
    if !(tau > 0.0 && tau < CHAMBOLLE_TAU_MAX) {
        return Err(Error::param("tau", format!("must lie in (0, 1/12), got {tau}")));
    }
    if n_iter == 0 {
        return Err(Error::param("n_iter", "must be at least 1"));
    }
    let dims = vol.dims();
    let len = vol.len();
    let mut phi = GradientField::zeros(dims);
    let mut w = vec![0.0; len];
    let mut grad = GradientField::zeros(dims);
    let inv_alpha = 1.0 / alpha;
    for _ in 0..n_iter {
        divergence_into(&phi, &mut w);
        w.par_iter_mut()
            .zip(vol.data.par_iter())
            .for_each(|(d, g)| *d -= g * inv_alpha);
        gradient_into(&w, dims, &mut grad);
        let [p0, p1, p2] = &mut phi.components;
        let [q0, q1, q2] = &grad.components;
        p0.par_iter_mut()
            .zip(p1.par_iter_mut())
            .zip(p2.par_iter_mut())
            .enumerate()
            .for_each(|(o, ((a, b), c))| {
                let (x, y, z) = (q0[o], q1[o], q2[o]);
                let den = 1.0 + tau * (x * x + y * y + z * z).sqrt();
                *a = (*a + tau * x) / den;
                *b = (*b + tau * y) / den;
                *c = (*c + tau * z) / den;
            });
    }
    divergence_into(&phi, &mut w);
    let data = vol.data.iter().zip(&w).map(|(g, d)| g - alpha * d).collect();
    Volume::from_vec(dims, vol.voxel_size, data)
}

/// `½‖f - g‖² + α TV(f)`.
pub fn rof_objective(f: &Volume, g: &Volume, alpha: f64) -> f64 {
    let d: f64 = f.data.iter().zip(&g.data).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * d + alpha * tv_value(f)
}

/// Options for [`klw_denoise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlwOptions {
    pub alpha: f64,
    pub n_iter: usize,
    /// Replace the scalar dual step with the voxel-wise preconditioner.
    pub precondition: bool,
    /// FISTA extrapolation on the dual sequence.
    pub accelerate: bool,
}

/// Smallest sensitivity over active voxels (`s > GUARD`).
pub fn active_min(s: &Volume) -> Option<f64> {
    s.data
        .iter()
        .copied()
        .filter(|&v| v > GUARD)
        .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.min(v))))
}

/// Checks `α < s_min / 6` over active voxels.
pub fn check_klw_constraint(s: &Volume, alpha: f64) -> Result<f64> {
    let s_min = active_min(s).ok_or_else(|| Error::Degenerate {
        metric: "sensitivity",
        reason: "no voxel has positive sensitivity".into(),
    })?;
    if alpha >= s_min / 6.0 {
        return Err(Error::ConvergenceConstraint {
            alpha,
            s_min,
            bound: s_min / 6.0,
        });
    }
    Ok(s_min)
}

/// Weighted-KL TV denoising step of MLEM-TV:
/// `argmin_{f ≥ 0} <f, s> - <ln f, s·g> + α TV(f)` computed through its dual,
/// returning `s·g / (s + α div φ*)`.
///
/// Voxels with `s ≤ GUARD` are inactive and come out as 0.
pub fn klw_denoise(vol_half: &Volume, s: &Volume, opts: KlwOptions) -> Result<Volume> {
    vol_half.same_shape(s)?;
    let KlwOptions {
        alpha,
        n_iter,
        precondition,
        accelerate,
    } = opts;
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", format!("must be > 0, got {alpha}")));
    }
    if n_iter == 0 {
        return Err(Error::param("n_iter", "must be at least 1"));
    }
    if let Some((index, &value)) = vol_half.data.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeInput {
            what: "half-step volume",
            index,
            value,
        });
    }
    let s_min = check_klw_constraint(s, alpha)?;

    let dims = vol_half.dims();
    let len = vol_half.len();
    let active: Vec<bool> = s.data.iter().map(|&v| v > GUARD).collect();
    // s·g, zero on inactive voxels
    let sg: Vec<f64> = s
        .data
        .iter()
        .zip(&vol_half.data)
        .zip(&active)
        .map(|((&sv, &g), &a)| if a { sv * g } else { 0.0 })
        .collect();

    let step: Vec<f64> = if precondition {
        sg.iter()
            .zip(&s.data)
            .map(|(&w, &sv)| {
                let num = 0.9 * (sv - 6.0 * alpha).powi(2);
                guarded_div(num, 12.0 * alpha * w)
            })
            .collect()
    } else {
        let sg_max = sg.iter().copied().fold(0.0, f64::max);
        let lh = 12.0 * alpha * alpha * sg_max / (s_min - 6.0 * alpha).powi(2);
        let tau = if lh > 0.0 { 0.9 * alpha / lh } else { 0.0 };
        vec![tau; len]
    };

    let candidate = |div: &[f64], out: &mut [f64]| {
        out.par_iter_mut().enumerate().for_each(|(o, f)| {
            *f = if active[o] {
                guarded_div(sg[o], s.data[o] + alpha * div[o])
            } else {
                0.0
            };
        });
    };

    let mut phi = GradientField::zeros(dims);
    // extrapolated dual point, only used when accelerating
    let mut psi = GradientField::zeros(dims);
    let mut next = GradientField::zeros(dims);
    let mut div = vec![0.0; len];
    let mut cand = vec![0.0; len];
    let mut z = GradientField::zeros(dims);
    let mut momentum = Momentum::new();
    for _ in 0..n_iter {
        let src = if accelerate { &psi } else { &phi };
        divergence_into(src, &mut div);
        candidate(&div, &mut cand);
        gradient_into(&cand, dims, &mut z);
        {
            let [s0, s1, s2] = &src.components;
            let [z0, z1, z2] = &z.components;
            let [n0, n1, n2] = &mut next.components;
            n0.par_iter_mut()
                .zip(n1.par_iter_mut())
                .zip(n2.par_iter_mut())
                .enumerate()
                .for_each(|(o, ((a, b), c))| {
                    let t = step[o];
                    let (x, y, w) = (z0[o], z1[o], z2[o]);
                    let den = 1.0 + t * (x * x + y * y + w * w).sqrt();
                    *a = (s0[o] - t * x) / den;
                    *b = (s1[o] - t * y) / den;
                    *c = (s2[o] - t * w) / den;
                });
        }
        if accelerate {
            let beta = momentum.advance();
            let [q0, q1, q2] = &mut psi.components;
            let [n0, n1, n2] = &next.components;
            let [r0, r1, r2] = &phi.components;
            q0.par_iter_mut()
                .zip(q1.par_iter_mut())
                .zip(q2.par_iter_mut())
                .enumerate()
                .for_each(|(o, ((a, b), c))| {
                    let mut v = [
                        n0[o] + beta * (n0[o] - r0[o]),
                        n1[o] + beta * (n1[o] - r1[o]),
                        n2[o] + beta * (n2[o] - r2[o]),
                    ];
                    // keep the extrapolated point in the unit ball so the
                    // denominator s + α div ψ stays above s - 6α
                    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if norm > 1.0 {
                        v.iter_mut().for_each(|x| *x /= norm);
                    }
                    *a = v[0];
                    *b = v[1];
                    *c = v[2];
                });
        }
        std::mem::swap(&mut phi, &mut next);
    }
    divergence_into(&phi, &mut div);
    candidate(&div, &mut cand);
    Volume::from_vec(dims, vol_half.voxel_size, cand)
}

/// `<f, s> - <ln f, s·g> + α TV(f)` over voxels with `s > GUARD`.
///
/// Returns `+∞` when `f` vanishes on a voxel where `s·g > 0`.
pub fn klw_objective(f: &Volume, vol_half: &Volume, s: &Volume, alpha: f64) -> f64 {
    let mut acc = 0.0;
    for o in 0..f.len() {
        let sv = s.data[o];
        if sv <= GUARD {
            continue;
        }
        let w = sv * vol_half.data[o];
        acc += f.data[o] * sv;
        if w > 0.0 {
            if f.data[o] <= 0.0 {
                return f64::INFINITY;
            }
            acc -= w * f.data[o].ln();
        }
    }
    acc + alpha * tv_value(f)
}
