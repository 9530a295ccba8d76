//! Matched ray-driven forward projector `A` and back-projector `A*`.
//!
//! Joseph-style traversal: each ray is cut by the planes of voxel centers
//! perpendicular to its dominant axis. At each plane the volume is sampled
//! bilinearly in the two remaining axes (zero outside the grid) and weighted
//! by the ray length between consecutive planes, so `a_ij` has units of
//! length and `Af` is a line integral. The back-projector scatters with
//! exactly the same weights, making it the transpose of the forward
//! discretization up to floating-point rounding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;
use crate::volume::{Domain, ProjectionStack, Volume};

/// Views are split into at most this many groups for back-projection; each
/// group accumulates into its own buffer and buffers are summed in order.
const BACKPROJECT_GROUPS: usize = 8;

/// Operator pair bound to one geometry and its reconstruction grid.
#[derive(Debug, Clone)]
pub struct Projector {
    geom: ConeBeamGeometry,
    dims: [usize; 3],
}

/// Per-ray plane walk in array index space.
#[derive(Debug, Clone, Copy)]
struct Traversal {
    /// Array axis stepped plane by plane (0 slice, 1 row, 2 col).
    major: usize,
    /// The two interpolated array axes.
    minor: [usize; 2],
    /// First and one-past-last plane index.
    planes: [usize; 2],
    /// Minor-axis index coordinates at plane 0 and their per-plane increments.
    origin: [f64; 2],
    slope: [f64; 2],
    /// Ray length between consecutive planes, mm.
    length: f64,
}

impl Projector {
    pub fn new(geom: &ConeBeamGeometry) -> Result<Self> {
        geom.validate()?;
        Ok(Self {
            dims: geom.grid_dims(),
            geom: geom.clone(),
        })
    }

    pub fn geometry(&self) -> &ConeBeamGeometry {
        &self.geom
    }

    pub fn volume_dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn projection_dims(&self) -> [usize; 3] {
        self.geom.projection_dims()
    }

    fn check_volume(&self, vol: &Volume) -> Result<()> {
        if vol.dims() != self.dims {
            return Err(Error::dims(self.dims, vol.dims()));
        }
        if (vol.voxel_size - self.geom.voxel_size).abs() > 1e-9 * self.geom.voxel_size {
            return Err(Error::DimensionMismatch {
                expected: format!("voxel size {}", self.geom.voxel_size),
                actual: format!("voxel size {}", vol.voxel_size),
            });
        }
        Ok(())
    }

    fn check_projections(&self, proj: &ProjectionStack) -> Result<()> {
        let expected = self.projection_dims();
        if proj.dims() != expected {
            return Err(Error::dims(expected, proj.dims()));
        }
        Ok(())
    }

    fn traverse(&self, theta: f64, row: usize, col: usize) -> Option<Traversal> {
        let ray = self.geom.ray_at(theta, row, col);
        let vs = self.geom.voxel_size;
        // world axis a maps to array axis 2 - a (x → col, y → row, z → slice)
        let d = [ray.direction[2], ray.direction[1], ray.direction[0]];
        let o = [ray.origin[2], ray.origin[1], ray.origin[0]];
        let major = (0..3)
            .max_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()))
            .expect("three axes");
        let minor = match major {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        };
        let center = |a: usize| (self.dims[a] as f64 - 1.0) / 2.0;
        // ray parameter at plane index c: t(c) = t0 + c·dt
        let dt = vs / d[major];
        let t0 = (-center(major) * vs - o[major]) / d[major];
        let mut lo = 0.0f64;
        let mut hi = self.dims[major] as f64 - 1.0;
        let mut origin = [0.0; 2];
        let mut slope = [0.0; 2];
        for (m, &a) in minor.iter().enumerate() {
            origin[m] = (o[a] + t0 * d[a]) / vs + center(a);
            slope[m] = dt * d[a] / vs;
            // bilinear support is the open interval (-1, n)
            let n = self.dims[a] as f64;
            if slope[m].abs() < 1e-15 {
                if origin[m] <= -1.0 || origin[m] >= n {
                    return None;
                }
                continue;
            }
            let (ca, cb) = ((-1.0 - origin[m]) / slope[m], (n - origin[m]) / slope[m]);
            lo = lo.max(ca.min(cb));
            hi = hi.min(ca.max(cb));
        }
        let first = lo.ceil().max(0.0);
        let last = hi.floor();
        if last < first {
            return None;
        }
        Some(Traversal {
            major,
            minor,
            planes: [first as usize, last as usize + 1],
            origin,
            slope,
            length: dt.abs(),
        })
    }

    /// Calls `visit(offset, weight)` for every voxel touched on every plane
    /// of the traversal. Weights exclude the plane length.
    #[inline(always)]
    fn walk(&self, tr: &Traversal, mut visit: impl FnMut(usize, f64)) {
        let stride = [self.dims[1] * self.dims[2], self.dims[2], 1];
        let (a, b) = (tr.minor[0], tr.minor[1]);
        let (na, nb) = (self.dims[a] as isize, self.dims[b] as isize);
        for c in tr.planes[0]..tr.planes[1] {
            let qa = tr.origin[0] + c as f64 * tr.slope[0];
            let qb = tr.origin[1] + c as f64 * tr.slope[1];
            // q > -1 on every plane of the traversal, so truncation is floor
            let (ia, ib) = ((qa + 1.0) as isize - 1, (qb + 1.0) as isize - 1);
            let (wa, wb) = (qa - ia as f64, qb - ib as f64);
            let base = c * stride[tr.major];
            if ia >= 0 && ia + 1 < na && ib >= 0 && ib + 1 < nb {
                let o = base + ia as usize * stride[a] + ib as usize * stride[b];
                visit(o, (1.0 - wa) * (1.0 - wb));
                visit(o + stride[b], (1.0 - wa) * wb);
                visit(o + stride[a], wa * (1.0 - wb));
                visit(o + stride[a] + stride[b], wa * wb);
                continue;
            }
            for (da, wa) in [(0, 1.0 - wa), (1, wa)] {
                let i = ia + da;
                if i < 0 || i >= na || wa == 0.0 {
                    continue;
                }
                let row = base + i as usize * stride[a];
                for (db, wb) in [(0, 1.0 - wb), (1, wb)] {
                    let j = ib + db;
                    if j < 0 || j >= nb {
                        continue;
                    }
                    let w = wa * wb;
                    if w != 0.0 {
                        visit(row + j as usize * stride[b], w);
                    }
                }
            }
        }
    }

    /// `A f`: line integrals of `vol` along every ray.
    pub fn forward(&self, vol: &Volume) -> Result<ProjectionStack> {
        self.check_volume(vol)?;
        let [na, rows, cols] = self.projection_dims();
        let mut out = vec![0.0; na * rows * cols];
        out.par_chunks_mut(rows * cols)
            .zip(self.geom.angles.par_iter())
            .for_each(|(view, &theta)| {
                for row in 0..rows {
                    for col in 0..cols {
                        if let Some(tr) = self.traverse(theta, row, col) {
                            let mut acc = 0.0;
                            self.walk(&tr, |o, w| acc += w * vol.data[o]);
                            view[row * cols + col] = tr.length * acc;
                        }
                    }
                }
            });
        ProjectionStack::from_vec([na, rows, cols], Domain::LineIntegral, out)
    }

    /// `A* g`: transpose of [`forward`](Self::forward).
    pub fn back(&self, proj: &ProjectionStack) -> Result<Volume> {
        self.check_projections(proj)?;
        let [na, rows, cols] = self.projection_dims();
        let n_vox: usize = self.dims.iter().product();
        let groups = BACKPROJECT_GROUPS.min(na);
        let per = na.div_ceil(groups);
        let partial: Vec<Vec<f64>> = (0..groups)
            .into_par_iter()
            .map(|g| {
                let mut acc = vec![0.0; n_vox];
                for a in (g * per)..((g + 1) * per).min(na) {
                    let theta = self.geom.angles[a];
                    let view = proj.view(a);
                    for row in 0..rows {
                        for col in 0..cols {
                            let v = view[row * cols + col];
                            if v == 0.0 {
                                continue;
                            }
                            if let Some(tr) = self.traverse(theta, row, col) {
                                let hv = tr.length * v;
                                self.walk(&tr, |o, w| acc[o] += hv * w);
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let mut iter = partial.into_iter();
        let mut data = iter.next().unwrap_or_else(|| vec![0.0; n_vox]);
        for p in iter {
            data.iter_mut().zip(&p).for_each(|(d, x)| *d += x);
        }
        Volume::from_vec(self.dims, self.geom.voxel_size, data)
    }

    /// `s = A* 1`.
    pub fn sensitivity(&self) -> Volume {
        let ones = ProjectionStack::filled(self.projection_dims(), Domain::LineIntegral, 1.0);
        self.back(&ones).expect("dims match by construction")
    }

    /// `A 1`: total intersection weight of each ray with the grid.
    pub fn ray_sums(&self) -> ProjectionStack {
        let ones = Volume::filled(self.dims, self.geom.voxel_size, 1.0);
        self.forward(&ones).expect("dims match by construction")
    }
}

/// `A f` for the grid described by `geom` (ROI plus extension margin).
pub fn forward_project(vol: &Volume, geom: &ConeBeamGeometry) -> Result<ProjectionStack> {
    Projector::new(geom)?.forward(vol)
}

/// `A* g` onto the grid described by `geom`.
pub fn back_project(proj: &ProjectionStack, geom: &ConeBeamGeometry) -> Result<Volume> {
    Projector::new(geom)?.back(proj)
}

pub fn sensitivity(geom: &ConeBeamGeometry) -> Result<Volume> {
    Ok(Projector::new(geom)?.sensitivity())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::full_circle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(n_views: usize) -> ConeBeamGeometry {
        ConeBeamGeometry::new(401.07, 564.30, 12, 14, 1.2, full_circle(n_views), [8, 10, 10], 1.0, 0).unwrap()
    }

    fn random_vol(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Volume {
        Volume::from_fn(dims, 1.0, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn zero_in_zero_out() {
        let g = small(5);
        let p = Projector::new(&g).unwrap();
        let f = p.forward(&Volume::zeros(g.grid_dims(), 1.0)).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
        let b = p.back(&ProjectionStack::zeros(g.projection_dims(), Domain::LineIntegral)).unwrap();
        assert!(b.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_in_volume() {
        let g = small(4);
        let p = Projector::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_vol(g.grid_dims(), &mut rng);
        let mut f3 = f.clone();
        f3.scale(3.0);
        let (a, b) = (p.forward(&f).unwrap(), p.forward(&f3).unwrap());
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((3.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn adjoint_dot_product() {
        let g = small(6);
        let p = Projector::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let f = random_vol(g.grid_dims(), &mut rng);
            let gp = ProjectionStack::from_vec(
                g.projection_dims(),
                Domain::LineIntegral,
                (0..g.projection_dims().iter().product::<usize>()).map(|_| rng.random::<f64>() - 0.5).collect(),
            )
            .unwrap();
            let lhs = p.forward(&f).unwrap().dot(&gp);
            let rhs = f.dot(&p.back(&gp).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn rejects_wrong_dims() {
        let g = small(2);
        assert!(forward_project(&Volume::zeros([8, 10, 11], 1.0), &g).is_err());
        assert!(forward_project(&Volume::zeros([8, 10, 10], 0.5), &g).is_err());
        assert!(back_project(&ProjectionStack::zeros([3, 12, 14], Domain::LineIntegral), &g).is_err());
    }

    #[test]
    fn single_pixel_backprojects_along_its_ray() {
        let g = small(1);
        let p = Projector::new(&g).unwrap();
        let mut proj = ProjectionStack::zeros(g.projection_dims(), Domain::LineIntegral);
        let (row, col) = (3, 9);
        proj.data[row * 14 + col] = 1.0;
        let b = p.back(&proj).unwrap();
        let ray = g.ray_for(0, row, col).unwrap();
        let dims = g.grid_dims();
        let mut hit = 0;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    if b[(i, j, k)] == 0.0 {
                        continue;
                    }
                    hit += 1;
                    // distance from voxel center to the ray must be below the
                    // bilinear footprint radius (√2 voxels)
                    let c = g.voxel_center(dims, i, j, k);
                    let w = [c[0] - ray.origin[0], c[1] - ray.origin[1], c[2] - ray.origin[2]];
                    let t: f64 = (0..3).map(|a| w[a] * ray.direction[a]).sum();
                    let d2: f64 = (0..3).map(|a| (w[a] - t * ray.direction[a]).powi(2)).sum();
                    assert!(d2.sqrt() < 2f64.sqrt() * g.voxel_size + 1e-9);
                }
            }
        }
        assert!(hit > 0);
    }

    #[test]
    fn nonnegativity_preserved() {
        let g = small(3);
        let p = Projector::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_vol(g.grid_dims(), &mut rng);
        assert!(p.forward(&f).unwrap().data.iter().all(|&v| v >= 0.0));
        let s = p.sensitivity();
        assert!(s.data.iter().all(|&v| v >= 0.0));
        // central voxel is seen by every view
        assert!(s[(4, 5, 5)] > 0.0);
    }

    #[test]
    fn cube_chord_along_central_ray() {
        // odd detector so the middle pixel sits on the central ray
        let g = ConeBeamGeometry::new(401.07, 564.30, 9, 9, 1.0, vec![0.3], [24, 24, 24], 1.0, 0).unwrap();
        let dims = g.grid_dims();
        let cube = Volume::from_fn(dims, 1.0, |i, j, k| {
            let inside = |x: usize| (2..22).contains(&x);
            if inside(i) && inside(j) && inside(k) { 1.0 } else { 0.0 }
        });
        let p = Projector::new(&g).unwrap().forward(&cube).unwrap();
        // analytic chord of the 20 mm cube [-10, 10]³ along the central ray
        let ray = g.ray_for(0, 4, 4).unwrap();
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if ray.direction[a].abs() < 1e-15 {
                continue;
            }
            let (ta, tb) = ((-10.0 - ray.origin[a]) / ray.direction[a], (10.0 - ray.origin[a]) / ray.direction[a]);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        let chord = t1 - t0;
        let got = p.data[4 * 9 + 4];
        assert!((got - chord).abs() / chord < 0.02, "{got} vs {chord}");
    }

    #[test]
    fn single_view_support_is_the_cone_footprint() {
        let g = ConeBeamGeometry::new(401.07, 564.30, 10, 12, 2.0, vec![0.7], [16, 20, 20], 1.0, 0).unwrap();
        let s = Projector::new(&g).unwrap().sensitivity();
        let dims = g.grid_dims();
        let (half_w, half_h) = (6.0 * 2.0, 5.0 * 2.0);
        let (sn, cs) = 0.7f64.sin_cos();
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let c = g.voxel_center(dims, i, j, k);
                    let depth = g.source_to_axis - (c[0] * cs + c[1] * sn);
                    let mag = g.source_to_detector / depth;
                    let u = (-c[0] * sn + c[1] * cs) * mag;
                    let v = c[2] * mag;
                    // slack: the bilinear footprint spans √2 voxels, magnified
                    let slack = 2f64.sqrt() * g.voxel_size * mag;
                    let inside = u.abs() < half_w - slack && v.abs() < half_h - slack;
                    let outside = u.abs() > half_w + slack || v.abs() > half_h + slack;
                    let seen = s[(i, j, k)] > 0.0;
                    assert!(!(inside && !seen), "voxel {i},{j},{k} unseen");
                    assert!(!(outside && seen), "voxel {i},{j},{k} seen outside");
                }
            }
        }
    }
}
