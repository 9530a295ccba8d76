//! Low-dose acquisition simulation: Beer-Lambert intensities, Poisson photon
//! noise, additive Gaussian electronic noise, and the log transform back to
//! line integrals.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;
use crate::volume::{Domain, ProjectionStack};

/// Photon-count floor applied before the logarithm.
pub const COUNT_FLOOR: f64 = 1.0;
pub const DEFAULT_I0: f64 = 1e4;
pub const DEFAULT_SIGMA: f64 = 5.0;

/// Poisson mean above which a normal approximation replaces exact sampling
/// (the exact sampler is limited to means below about 1.8e19).
const POISSON_NORMAL_ABOVE: f64 = 1e15;

fn view_rng(seed: u64, view: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // one independent stream per view keeps parallel output reproducible
    rng.set_stream(view as u64);
    rng
}

/// Draws detector counts `n ~ Poisson(i0·exp(-p))` plus `N(0, σ_g²)`,
/// without flooring. Returned in the intensity domain.
pub fn simulate_counts(p: &ProjectionStack, i0: f64, sigma_g: f64, seed: u64) -> Result<ProjectionStack> {
    if p.domain != Domain::LineIntegral {
        return Err(Error::param("projections", "expected line integrals"));
    }
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(Error::param("i0", format!("must be > 0, got {i0}")));
    }
    if !(sigma_g >= 0.0 && sigma_g.is_finite()) {
        return Err(Error::param("sigma_g", format!("must be ≥ 0, got {sigma_g}")));
    }
    if let Some((index, &value)) = p.data.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeInput {
            what: "clean projections",
            index,
            value,
        });
    }
    let [_, rows, cols] = p.dims();
    let per_view = (rows * cols).max(1);
    let mut out = vec![0.0; p.data.len()];
    let gauss = Normal::new(0.0, sigma_g).expect("σ_g validated");
    out.par_chunks_mut(per_view).enumerate().for_each(|(a, chunk)| {
        let mut rng = view_rng(seed, a);
        let clean = &p.data[a * per_view..(a + 1) * per_view];
        for (m, &pi) in chunk.iter_mut().zip(clean) {
            let lambda = i0 * (-pi).exp();
            let n = if lambda <= 0.0 {
                0.0
            } else if lambda > POISSON_NORMAL_ABOVE {
                lambda + lambda.sqrt() * Normal::new(0.0, 1.0).unwrap().sample(&mut rng)
            } else {
                Poisson::new(lambda).expect("positive mean").sample(&mut rng)
            };
            *m = if sigma_g > 0.0 { n + gauss.sample(&mut rng) } else { n };
        }
    });
    ProjectionStack::from_vec(p.dims(), Domain::Intensity, out)
}

/// Converts detector counts back to non-negative line integrals:
/// `max(0, -ln(max(m, 1) / i0))`.
pub fn counts_to_line_integrals(m: &ProjectionStack, i0: f64) -> Result<ProjectionStack> {
    if m.domain != Domain::Intensity {
        return Err(Error::param("counts", "expected intensity-domain data"));
    }
    if !(i0 > 0.0) {
        return Err(Error::param("i0", "must be > 0"));
    }
    let data = m
        .data
        .iter()
        .map(|&c| (-(c.max(COUNT_FLOOR) / i0).ln()).max(0.0))
        .collect();
    ProjectionStack::from_vec(m.dims(), Domain::LineIntegral, data)
}

/// Full noise chain on clean line integrals; deterministic for a given seed.
pub fn simulate_noise(p: &ProjectionStack, i0: f64, sigma_g: f64, seed: u64) -> Result<ProjectionStack> {
    counts_to_line_integrals(&simulate_counts(p, i0, sigma_g, seed)?, i0)
}

/// Keeps every `factor`-th view starting with the first.
pub fn subsample_views(
    p: &ProjectionStack,
    geom: &ConeBeamGeometry,
    factor: usize,
) -> Result<(ProjectionStack, ConeBeamGeometry)> {
    if p.dims() != geom.projection_dims() {
        return Err(Error::dims(geom.projection_dims(), p.dims()));
    }
    let n = geom.n_angles();
    if factor == 0 {
        return Err(Error::param("factor", "must be ≥ 1"));
    }
    if factor > n {
        return Err(Error::param("factor", format!("{factor} exceeds the {n} available views")));
    }
    let keep: Vec<usize> = (0..n).step_by(factor).collect();
    let angles = keep.iter().map(|&a| geom.angles[a]).collect();
    let data = keep.iter().flat_map(|&a| p.view(a).iter().copied()).collect();
    let [_, rows, cols] = p.dims();
    let stack = ProjectionStack::from_vec([keep.len(), rows, cols], p.domain, data)?;
    Ok((stack, geom.with_angles(angles)?))
}
