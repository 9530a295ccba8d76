//! Feldkamp-Davis-Kress cone-beam filtered backprojection for a flat
//! detector and a circular source orbit.
//!
//! Projections are rescaled to a virtual detector through the rotation axis,
//! cosine weighted, ramp filtered row by row, then backprojected voxel by
//! voxel with the `(D/U)²` distance weight.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::geometry::{voxel_center, ConeBeamGeometry};
use crate::volume::{Domain, ProjectionStack, Volume};

use super::config::{FdkOptions, RampWindow, ReconConfig};

/// FDK onto the geometry's grid (ROI plus extension margin).
pub fn run_fdk(p: &ProjectionStack, geom: &ConeBeamGeometry, config: &ReconConfig) -> Result<Volume> {
    fdk(p, geom, config.fdk)
}

pub fn fdk(p: &ProjectionStack, geom: &ConeBeamGeometry, opts: FdkOptions) -> Result<Volume> {
    geom.validate()?;
    if p.domain != Domain::LineIntegral {
        return Err(Error::param("projections", "FDK needs line-integral projections"));
    }
    if p.dims() != geom.projection_dims() {
        return Err(Error::dims(geom.projection_dims(), p.dims()));
    }
    let na = geom.n_angles();
    if na < 2 {
        return Err(Error::param("angles", format!("FDK needs at least 2 views, got {na}")));
    }
    let (rows, cols) = (geom.detector_rows, geom.detector_cols);
    let dso = geom.source_to_axis;
    let dsd = geom.source_to_detector;
    let mag = dso / dsd;
    let du = geom.pixel_size * mag;
    let dtheta = (geom.angles[na - 1] - geom.angles[0]) / (na - 1) as f64;
    // Parker weights resolve redundancy themselves; a full orbit counts every ray twice
    let redundancy = if opts.parker { 1.0 } else { 0.5 };

    let half_fan = (cols as f64 * geom.pixel_size / 2.0 / dsd).atan();
    let filter = RampFilter::new(cols, du, opts.window);
    let mut filtered = vec![0.0; p.data.len()];
    filtered
        .par_chunks_mut(rows * cols)
        .enumerate()
        .for_each(|(a, out)| {
            let view = p.view(a);
            let beta = geom.angles[a] - geom.angles[0];
            let mut line = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    let (u, v) = geom.pixel_offset(r, c);
                    let (u, v) = (u * mag, v * mag);
                    let mut w = dso / (dso * dso + u * u + v * v).sqrt();
                    if opts.parker {
                        let gamma = (u / dso).atan();
                        w *= parker_weight(beta, gamma, half_fan);
                    }
                    line[c] = w * view[r * cols + c];
                }
                filter.apply(&line, &mut out[r * cols..(r + 1) * cols]);
            }
        });

    let dims = geom.grid_dims();
    let vs = geom.voxel_size;
    let trig: Vec<(f64, f64)> = geom.angles.iter().map(|t| t.sin_cos()).collect();
    let plane = dims[1] * dims[2];
    let mut data = vec![0.0; dims.iter().product()];
    data.par_chunks_mut(plane).enumerate().for_each(|(i, slab)| {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let [x, y, z] = voxel_center(dims, vs, i, j, k);
                let mut acc = 0.0;
                for (a, &(s, c)) in trig.iter().enumerate() {
                    let depth = dso - (x * c + y * s);
                    if depth <= 0.0 {
                        continue;
                    }
                    let t = -x * s + y * c;
                    let scale = dso / depth;
                    let col = t * scale / du + (cols as f64 - 1.0) / 2.0;
                    let row = z * scale / du + (rows as f64 - 1.0) / 2.0;
                    acc += scale * scale * bilinear(&filtered[a * rows * cols..(a + 1) * rows * cols], rows, cols, row, col);
                }
                slab[j * dims[2] + k] = redundancy * dtheta * acc;
            }
        }
    });
    Volume::from_vec(dims, vs, data)
}

fn bilinear(img: &[f64], rows: usize, cols: usize, r: f64, c: f64) -> f64 {
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |ri: isize, ci: isize| -> f64 {
        if ri < 0 || ci < 0 || ri >= rows as isize || ci >= cols as isize {
            0.0
        } else {
            img[ri as usize * cols + ci as usize]
        }
    };
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}

/// Parker short-scan weight for source angle `beta` (from the scan start)
/// and fan angle `gamma`, with half fan angle `delta`.
pub fn parker_weight(beta: f64, gamma: f64, delta: f64) -> f64 {
    // the conjugate of (β, γ) is (β + π - 2γ, -γ) in this frame, so the
    // textbook formula applies to -γ
    let g = -gamma;
    if beta < 0.0 {
        0.0
    } else if beta <= 2.0 * (delta - g) {
        let x = PI / 4.0 * beta / (delta - g);
        x.sin().powi(2)
    } else if beta <= PI - 2.0 * g {
        1.0
    } else if beta <= PI + 2.0 * delta {
        let x = PI / 4.0 * (PI + 2.0 * delta - beta) / (delta + g);
        x.sin().powi(2)
    } else {
        0.0
    }
}

/// Discrete ramp filter applied by zero-padded FFT convolution with the
/// band-limited spatial kernel.
struct RampFilter {
    n: usize,
    size: usize,
    spectrum: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl RampFilter {
    fn new(n: usize, spacing: f64, window: RampWindow) -> Self {
        let size = (2 * n).next_power_of_two().max(2);
        let mut kernel = vec![Complex::new(0.0, 0.0); size];
        for (idx, slot) in kernel.iter_mut().enumerate() {
            // circular index → signed lag
            let k = if idx <= size / 2 { idx as isize } else { idx as isize - size as isize };
            let h = if k == 0 {
                1.0 / (4.0 * spacing * spacing)
            } else if k % 2 != 0 {
                -1.0 / (PI * PI * (k * k) as f64 * spacing * spacing)
            } else {
                0.0
            };
            // the convolution integral contributes one more factor of the spacing
            *slot = Complex::new(h * spacing, 0.0);
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        forward.process(&mut kernel);
        let spectrum = kernel
            .iter()
            .enumerate()
            .map(|(idx, h)| {
                let k = if idx <= size / 2 { idx as f64 } else { size as f64 - idx as f64 };
                // normalized frequency in [0, 1] where 1 is Nyquist
                let w = k / (size as f64 / 2.0);
                let win = match window {
                    RampWindow::RamLak => 1.0,
                    RampWindow::SheppLogan => {
                        let a = PI * w / 2.0;
                        if a == 0.0 { 1.0 } else { a.sin() / a }
                    }
                    RampWindow::Hann => 0.5 * (1.0 + (PI * w).cos()),
                };
                h.re * win
            })
            .collect();
        Self {
            n,
            size,
            spectrum,
            forward,
            inverse,
        }
    }

    fn apply(&self, input: &[f64], out: &mut [f64]) {
        let mut buf = vec![Complex::new(0.0, 0.0); self.size];
        for (b, &x) in buf.iter_mut().zip(input) {
            b.re = x;
        }
        self.forward.process(&mut buf);
        for (b, &h) in buf.iter_mut().zip(&self.spectrum) {
            *b *= h;
        }
        self.inverse.process(&mut buf);
        let norm = 1.0 / self.size as f64;
        for (o, b) in out.iter_mut().zip(&buf[..self.n]) {
            *o = b.re * norm;
        }
    }
}
