//! Dense volumes and projection stacks.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Dense 3D scalar field stored `(slice, row, col)` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    pub voxel_size: f64,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3], voxel_size: f64) -> Self {
        Self::filled(dims, voxel_size, 0.0)
    }

    pub fn filled(dims: [usize; 3], voxel_size: f64, value: f64) -> Self {
        Self {
            dims,
            voxel_size,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 3], voxel_size: f64, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::dims(n, data.len()));
        }
        Ok(Self {
            dims,
            voxel_size,
            data,
        })
    }

    pub fn from_fn(dims: [usize; 3], voxel_size: f64, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self {
            dims,
            voxel_size,
            data,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn same_shape(&self, other: &Volume) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dims(self.dims, other.dims));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Volume) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// Central crop removing `margin` voxels on each lateral side.
    pub fn crop_lateral(&self, margin: usize) -> Volume {
        if margin == 0 {
            return self.clone();
        }
        let [m, r, c] = self.dims;
        let dims = [m, r - 2 * margin, c - 2 * margin];
        Volume::from_fn(dims, self.voxel_size, |i, j, k| {
            self[(i, j + margin, k + margin)]
        })
    }

    /// Inverse of [`crop_lateral`](Self::crop_lateral): zero padding.
    pub fn pad_lateral(&self, margin: usize) -> Volume {
        if margin == 0 {
            return self.clone();
        }
        let [m, r, c] = self.dims;
        let dims = [m, r + 2 * margin, c + 2 * margin];
        Volume::from_fn(dims, self.voxel_size, |i, j, k| {
            if j < margin || k < margin || j >= r + margin || k >= c + margin {
                0.0
            } else {
                self[(i, j - margin, k - margin)]
            }
        })
    }
}

impl Index<(usize, usize, usize)> for Volume {
    type Output = f64;
    fn index(&self, (i, j, k): (usize, usize, usize)) -> &f64 {
        &self.data[self.offset(i, j, k)]
    }
}

impl IndexMut<(usize, usize, usize)> for Volume {
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut f64 {
        let o = self.offset(i, j, k);
        &mut self.data[o]
    }
}

/// Which physical quantity a projection stack holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Detected intensities (photon counts).
    Intensity,
    /// Log-transformed line integrals `-ln(I / I0)`.
    LineIntegral,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Intensity => "intensity",
            Domain::LineIntegral => "line_integral",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "intensity" => Ok(Domain::Intensity),
            "line_integral" => Ok(Domain::LineIntegral),
            other => Err(Error::Unknown {
                what: "projection domain",
                name: other.to_string(),
            }),
        }
    }
}

/// One detector image per source angle, stored `(angle, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    dims: [usize; 3],
    pub domain: Domain,
    pub data: Vec<f64>,
}

impl ProjectionStack {
    pub fn zeros(dims: [usize; 3], domain: Domain) -> Self {
        Self::filled(dims, domain, 0.0)
    }

    pub fn filled(dims: [usize; 3], domain: Domain, value: f64) -> Self {
        Self {
            dims,
            domain,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 3], domain: Domain, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::dims(n, data.len()));
        }
        Ok(Self { dims, domain, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn n_angles(&self) -> usize {
        self.dims[0]
    }

    pub fn view(&self, a: usize) -> &[f64] {
        let n = self.dims[1] * self.dims[2];
        &self.data[a * n..(a + 1) * n]
    }

    pub fn dot(&self, other: &ProjectionStack) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn same_shape(&self, other: &ProjectionStack) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dims(self.dims, other.dims));
        }
        Ok(())
    }
}

/// Sequential dot product (fixed summation order).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Element-wise `num / den`, defined as 0 wherever `den < GUARD`.
pub(crate) fn guarded_div(num: f64, den: f64) -> f64 {
    if den < GUARD {
        0.0
    } else {
        num / den
    }
}

/// Denominators below this are treated as zero.
pub const GUARD: f64 = 1e-12;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_inverts_pad() {
        let v = Volume::from_fn([2, 3, 4], 1.0, |i, j, k| (i * 100 + j * 10 + k) as f64);
        let p = v.pad_lateral(2);
        assert_eq!(p.dims(), [2, 7, 8]);
        assert_eq!(p[(1, 2, 2)], v[(1, 0, 0)]);
        assert_eq!(p[(0, 0, 0)], 0.0);
        assert_eq!(p.crop_lateral(2), v);
    }

    #[test]
    fn shape_checks() {
        assert!(Volume::from_vec([2, 2, 2], 1.0, vec![0.0; 7]).is_err());
        assert!(ProjectionStack::from_vec([1, 2, 2], Domain::LineIntegral, vec![0.0; 4]).is_ok());
        assert_eq!(Domain::parse("intensity").unwrap(), Domain::Intensity);
        assert!(Domain::parse("counts").is_err());
    }
}
