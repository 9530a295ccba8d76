//! Image-quality metrics against a reference volume.
//!
//! `Δ` is always the data range `max(f_ref) - min(f_ref)` of the reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Value returned by [`psnr`] for identical inputs.
pub const PSNR_CAP: f64 = 200.0;

/// Half-open voxel-index box `[start, end)` in `(slice, row, col)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub start: [usize; 3],
    pub end: [usize; 3],
}

impl Region {
    pub fn new(start: [usize; 3], end: [usize; 3]) -> Self {
        Self { start, end }
    }

    pub fn whole(dims: [usize; 3]) -> Self {
        Self::new([0; 3], dims)
    }

    pub fn len(&self) -> usize {
        (0..3).map(|a| self.end[a].saturating_sub(self.start[a])).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parses `s0:s1,r0:r1,c0:c1`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Format {
            what: "region".into(),
            reason: format!("expected `s0:s1,r0:r1,c0:c1`, got `{text}`"),
        };
        let parts: Vec<&str> = text.split(',').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut start = [0; 3];
        let mut end = [0; 3];
        for (a, part) in parts.iter().enumerate() {
            let (lo, hi) = part.split_once(':').ok_or_else(bad)?;
            start[a] = lo.trim().parse().map_err(|_| bad())?;
            end[a] = hi.trim().parse().map_err(|_| bad())?;
        }
        Ok(Self { start, end })
    }

    fn check(&self, dims: [usize; 3]) -> Result<()> {
        for a in 0..3 {
            if self.end[a] > dims[a] || self.start[a] >= self.end[a] {
                return Err(Error::param(
                    "region",
                    format!("{:?}..{:?} is empty or outside {:?}", self.start, self.end, dims),
                ));
            }
        }
        Ok(())
    }

    fn offsets(&self, dims: [usize; 3]) -> impl Iterator<Item = usize> + '_ {
        let Region { start, end } = *self;
        (start[0]..end[0]).flat_map(move |i| {
            (start[1]..end[1]).flat_map(move |j| (start[2]..end[2]).map(move |k| (i * dims[1] + j) * dims[2] + k))
        })
    }

    /// Values of `vol` inside the box.
    pub fn values(&self, vol: &Volume) -> Result<Vec<f64>> {
        self.check(vol.dims())?;
        Ok(self.offsets(vol.dims()).map(|o| vol.data[o]).collect())
    }
}

fn same_dims(f: &Volume, f_ref: &Volume) -> Result<()> {
    if f.dims() != f_ref.dims() {
        return Err(Error::dims(f_ref.dims(), f.dims()));
    }
    Ok(())
}

fn data_range(f_ref: &Volume) -> f64 {
    f_ref.max() - f_ref.min()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `‖f - f_ref‖ / ‖f_ref‖`.
pub fn nrmse(f: &Volume, f_ref: &Volume) -> Result<f64> {
    same_dims(f, f_ref)?;
    let den = f_ref.norm();
    if !(den > 0.0) {
        return Err(Error::Degenerate {
            metric: "nrmse",
            reason: "reference has zero norm".into(),
        });
    }
    let num = f.data.iter().zip(&f_ref.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// `10 log₁₀(Δ² / MSE)`, capped at [`PSNR_CAP`] dB.
pub fn psnr(f: &Volume, f_ref: &Volume) -> Result<f64> {
    same_dims(f, f_ref)?;
    let range = data_range(f_ref);
    if !(range > 0.0) {
        return Err(Error::Degenerate {
            metric: "psnr",
            reason: "reference has zero data range".into(),
        });
    }
    let mse = f.data.iter().zip(&f_ref.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / f.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (range * range / mse).log10()).min(PSNR_CAP))
}

/// Stabilizing constants for [`ssim_global_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimConstants {
    /// `c₁ = 0.01 Δ`, `c₂ = 0.03 Δ`.
    #[default]
    Unsquared,
    /// Conventional `c₁ = (0.01 Δ)²`, `c₂ = (0.03 Δ)²`.
    Standard,
}

/// Single global SSIM from whole-volume moments with `c₁ = 0.01Δ` and
/// `c₂ = 0.03Δ` (unsquared). Population variances and covariance.
pub fn ssim_global(f: &Volume, f_ref: &Volume) -> Result<f64> {
    ssim_global_with(f, f_ref, SsimConstants::Unsquared)
}

pub fn ssim_global_with(f: &Volume, f_ref: &Volume, constants: SsimConstants) -> Result<f64> {
    same_dims(f, f_ref)?;
    let range = data_range(f_ref);
    let (c1, c2) = match constants {
        SsimConstants::Unsquared => (0.01 * range, 0.03 * range),
        SsimConstants::Standard => ((0.01 * range).powi(2), (0.03 * range).powi(2)),
    };
    let n = f.len() as f64;
    let (mx, my) = (mean(&f.data), mean(&f_ref.data));
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in f.data.iter().zip(&f_ref.data) {
        let (dx, dy) = (a - mx, b - my);
        vx += dx * dx;
        vy += dy * dy;
        cxy += dx * dy;
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
    let den = (mx * mx + my * my + c1) * (vx + vy + c2);
    if den == 0.0 {
        // both volumes identically zero
        return Ok(if num == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(num / den)
}

/// `20 log₁₀(|μ_obj - μ_bg| / σ_bg)` with the sample standard deviation of
/// the background patch. Equal means give `-∞`.
pub fn cnr(f: &Volume, object: Region, background: Region) -> Result<f64> {
    let obj = object.values(f)?;
    let bg = background.values(f)?;
    if bg.len() < 2 {
        return Err(Error::Degenerate {
            metric: "cnr",
            reason: "background patch needs at least 2 voxels".into(),
        });
    }
    let (mo, mb) = (mean(&obj), mean(&bg));
    let sd = (bg.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (bg.len() - 1) as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate {
            metric: "cnr",
            reason: "background standard deviation is zero".into(),
        });
    }
    let contrast = (mo - mb).abs();
    if contrast == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(20.0 * (contrast / sd).log10())
}

/// Pearson correlation over `region` (whole volume if `None`), with `J - 1`
/// normalization of both covariance and variances.
pub fn pearson(f: &Volume, f_ref: &Volume, region: Option<Region>) -> Result<f64> {
    same_dims(f, f_ref)?;
    let region = region.unwrap_or_else(|| Region::whole(f.dims()));
    let x = region.values(f)?;
    let y = region.values(f_ref)?;
    pearson_slices(&x, &y)
}

fn pearson_slices(x: &[f64], y: &[f64]) -> Result<f64> {
    let j = x.len();
    if j < 2 {
        return Err(Error::Degenerate {
            metric: "pearson",
            reason: "region needs at least 2 voxels".into(),
        });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let d = (j - 1) as f64;
    let (cov, sx, sy) = (sxy / d, (sxx / d).sqrt(), (syy / d).sqrt());
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::Degenerate {
            metric: "pearson",
            reason: "zero variance".into(),
        });
    }
    Ok(cov / (sx * sy))
}

/// NRMSE, PSNR and SSIM of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Report {
    pub nrmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn report(f: &Volume, f_ref: &Volume) -> Result<Report> {
    Ok(Report {
        nrmse: nrmse(f, f_ref)?,
        psnr: psnr(f, f_ref)?,
        ssim: ssim_global(f, f_ref)?,
    })
}
