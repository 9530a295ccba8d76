//! Circular cone-beam acquisition geometry.
//!
//! World frame: the rotation axis is `z`, the reconstruction grid is centered
//! on the origin and the source sits on `+x` at angle zero, moving
//! counter-clockwise. The detector is flat, perpendicular to the central ray
//! and centered on it. Detector columns run along the tangential direction
//! `(-sin θ, cos θ, 0)`, detector rows run along `+z`.
//!
//! Volume arrays are indexed `(slice, row, col)` with slices along `z`, rows
//! along `y` and columns along `x`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// A single ray from the source through a detector pixel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    /// Unit direction.
    pub direction: Point3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Point3 {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeBeamGeometry {
    /// Source to rotation axis distance, mm.
    pub source_to_axis: f64,
    /// Source to detector plane distance, mm.
    pub source_to_detector: f64,
    pub detector_rows: usize,
    pub detector_cols: usize,
    /// Square detector pixel pitch, mm.
    pub pixel_size: f64,
    /// Source angles in radians, strictly increasing.
    pub angles: Vec<f64>,
    /// Region-of-interest grid `(slices, rows, cols)`.
    pub volume_dims: [usize; 3],
    /// Cubic voxel pitch, mm.
    pub voxel_size: f64,
    /// Voxels added on each lateral side (rows and cols) of the ROI.
    pub extension_margin: usize,
}

impl ConeBeamGeometry {
    /// Builds and validates a geometry.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source_to_axis: f64,
        source_to_detector: f64,
        detector_rows: usize,
        detector_cols: usize,
        pixel_size: f64,
        angles: Vec<f64>,
        volume_dims: [usize; 3],
        voxel_size: f64,
        extension_margin: usize,
    ) -> Result<Self> {
        let g = Self {
            source_to_axis,
            source_to_detector,
            detector_rows,
            detector_cols,
            pixel_size,
            angles,
            volume_dims,
            voxel_size,
            extension_margin,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Geometry(m));
        if !(self.source_to_axis > 0.0 && self.source_to_detector > self.source_to_axis) {
            return bad(format!(
                "need source_to_detector > source_to_axis > 0, got {} and {}",
                self.source_to_detector, self.source_to_axis
            ));
        }
        if self.detector_rows == 0 || self.detector_cols == 0 {
            return bad("detector must have at least one row and column".into());
        }
        if self.volume_dims.iter().any(|&d| d == 0) {
            return bad(format!("volume dims must be positive, got {:?}", self.volume_dims));
        }
        if !(self.pixel_size > 0.0 && self.voxel_size > 0.0) {
            return bad("pixel_size and voxel_size must be positive".into());
        }
        if self.angles.is_empty() {
            return bad("at least one angle is required".into());
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return bad("angles must be finite".into());
        }
        if self.angles.windows(2).any(|w| w[1] <= w[0]) {
            return bad("angles must be strictly increasing".into());
        }
        let span = self.angles[self.angles.len() - 1] - self.angles[0];
        if span > 2.0 * PI + 1e-9 {
            return bad(format!("angular span {span} exceeds 2π"));
        }
        Ok(())
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    /// Reconstruction grid dims including the lateral extension margin.
    pub fn grid_dims(&self) -> [usize; 3] {
        let m = 2 * self.extension_margin;
        [
            self.volume_dims[0],
            self.volume_dims[1] + m,
            self.volume_dims[2] + m,
        ]
    }

    pub fn projection_dims(&self) -> [usize; 3] {
        [self.n_angles(), self.detector_rows, self.detector_cols]
    }

    /// Same acquisition with a different extension margin.
    pub fn with_margin(&self, margin: usize) -> Self {
        Self {
            extension_margin: margin,
            ..self.clone()
        }
    }

    /// Same acquisition restricted to a subset of angle indices.
    pub fn with_angles(&self, angles: Vec<f64>) -> Result<Self> {
        let g = Self {
            angles,
            ..self.clone()
        };
        g.validate()?;
        Ok(g)
    }

    fn check_angle(&self, angle_index: usize) -> Result<f64> {
        self.angles
            .get(angle_index)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                what: "angle",
                index: angle_index,
                len: self.angles.len(),
            })
    }

    fn check_pixel(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.detector_rows {
            return Err(Error::IndexOutOfRange {
                what: "detector row",
                index: row,
                len: self.detector_rows,
            });
        }
        if col >= self.detector_cols {
            return Err(Error::IndexOutOfRange {
                what: "detector column",
                index: col,
                len: self.detector_cols,
            });
        }
        Ok(())
    }

    pub fn source_position(&self, angle_index: usize) -> Result<Point3> {
        let theta = self.check_angle(angle_index)?;
        Ok(self.source_at(theta))
    }

    pub(crate) fn source_at(&self, theta: f64) -> Point3 {
        let (s, c) = theta.sin_cos();
        [self.source_to_axis * c, self.source_to_axis * s, 0.0]
    }

    /// Signed detector coordinates `(u, v)` in mm of a pixel center, relative
    /// to the detector center. `u` is tangential, `v` is along the axis.
    pub fn pixel_offset(&self, row: usize, col: usize) -> (f64, f64) {
        let u = (col as f64 - (self.detector_cols as f64 - 1.0) / 2.0) * self.pixel_size;
        let v = (row as f64 - (self.detector_rows as f64 - 1.0) / 2.0) * self.pixel_size;
        (u, v)
    }

    pub fn detector_pixel_center(&self, angle_index: usize, row: usize, col: usize) -> Result<Point3> {
        let theta = self.check_angle(angle_index)?;
        self.check_pixel(row, col)?;
        Ok(self.pixel_center_at(theta, row, col))
    }

    pub(crate) fn pixel_center_at(&self, theta: f64, row: usize, col: usize) -> Point3 {
        let (s, c) = theta.sin_cos();
        let (u, v) = self.pixel_offset(row, col);
        // detector center lies on the central ray, past the axis
        let d = self.source_to_detector - self.source_to_axis;
        [-d * c - u * s, -d * s + u * c, v]
    }

    pub fn ray_for(&self, angle_index: usize, row: usize, col: usize) -> Result<Ray> {
        let theta = self.check_angle(angle_index)?;
        self.check_pixel(row, col)?;
        Ok(self.ray_at(theta, row, col))
    }

    pub(crate) fn ray_at(&self, theta: f64, row: usize, col: usize) -> Ray {
        let origin = self.source_at(theta);
        let target = self.pixel_center_at(theta, row, col);
        let d = [
            target[0] - origin[0],
            target[1] - origin[1],
            target[2] - origin[2],
        ];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        Ray {
            origin,
            direction: [d[0] / n, d[1] / n, d[2] / n],
        }
    }

    /// Radius of the cylinder seen by every view (the transaxial field of view).
    pub fn fov_radius(&self) -> f64 {
        let half = self.detector_cols as f64 * self.pixel_size / 2.0;
        self.source_to_axis * (half / self.source_to_detector).atan().sin()
    }

    /// World coordinates of a voxel center on the grid returned by [`grid_dims`](Self::grid_dims).
    pub fn voxel_center(&self, dims: [usize; 3], slice: usize, row: usize, col: usize) -> Point3 {
        voxel_center(dims, self.voxel_size, slice, row, col)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: GeometryFile = toml::from_str(text).map_err(|e| Error::Format {
            what: "geometry config".into(),
            reason: e.to_string(),
        })?;
        file.into_geometry()
    }

    pub fn to_toml_string(&self) -> String {
        let file = GeometryFile {
            source_to_axis: self.source_to_axis,
            source_to_detector: self.source_to_detector,
            detector_rows: self.detector_rows,
            detector_cols: self.detector_cols,
            pixel_size: self.pixel_size,
            angles: AngleSpec::List(self.angles.iter().map(|&a| AngleValue::Radians(a)).collect()),
            volume_dims: self.volume_dims,
            voxel_size: self.voxel_size,
            extension_margin: self.extension_margin,
        };
        toml::to_string(&file).expect("geometry serializes")
    }

    /// Dental-scanner distances, scaled down to a desktop-sized problem.
    ///
    /// The grid spans 82.5 mm laterally whatever its resolution; `slices`
    /// sets the axial extent at the same pitch.
    pub fn desk(n: usize, slices: usize, n_views: usize, det_rows: usize, det_cols: usize, pixel_size: f64) -> Self {
        let voxel_size = 82.5 / n as f64;
        Self::new(
            401.07,
            564.30,
            det_rows,
            det_cols,
            pixel_size,
            full_circle(n_views),
            [slices, n, n],
            voxel_size,
            0,
        )
        .expect("desk geometry is valid")
    }
}

pub(crate) fn voxel_center(dims: [usize; 3], voxel_size: f64, slice: usize, row: usize, col: usize) -> Point3 {
    [
        (col as f64 - (dims[2] as f64 - 1.0) / 2.0) * voxel_size,
        (row as f64 - (dims[1] as f64 - 1.0) / 2.0) * voxel_size,
        (slice as f64 - (dims[0] as f64 - 1.0) / 2.0) * voxel_size,
    ]
}

/// `count` equispaced angles over a full turn, endpoint excluded.
pub fn full_circle(count: usize) -> Vec<f64> {
    angle_range(0.0, 2.0 * PI, count)
}

/// `count` equispaced angles `start + k·span/count`.
pub fn angle_range(start: f64, span: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| start + span * k as f64 / count as f64)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryFile {
    source_to_axis: f64,
    source_to_detector: f64,
    detector_rows: usize,
    detector_cols: usize,
    pixel_size: f64,
    volume_dims: [usize; 3],
    voxel_size: f64,
    #[serde(default)]
    extension_margin: usize,
    angles: AngleSpec,
}

impl GeometryFile {
    fn into_geometry(self) -> Result<ConeBeamGeometry> {
        let angles = match self.angles {
            AngleSpec::List(v) => v.iter().map(AngleValue::radians).collect::<Result<Vec<_>>>()?,
            AngleSpec::Range { start, span, count } => {
                angle_range(start.radians()?, span.radians()?, count)
            }
        };
        ConeBeamGeometry::new(
            self.source_to_axis,
            self.source_to_detector,
            self.detector_rows,
            self.detector_cols,
            self.pixel_size,
            angles,
            self.volume_dims,
            self.voxel_size,
            self.extension_margin,
        )
    }
}

/// Either an explicit list or `{ start, span, count }` (endpoint excluded).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum AngleSpec {
    List(Vec<AngleValue>),
    Range {
        #[serde(default = "AngleValue::zero")]
        start: AngleValue,
        span: AngleValue,
        count: usize,
    },
}

/// A bare number is radians; strings carry a `rad`, `deg` or `°` suffix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum AngleValue {
    Radians(f64),
    Text(String),
}

impl AngleValue {
    fn zero() -> Self {
        AngleValue::Radians(0.0)
    }

    fn radians(&self) -> Result<f64> {
        match self {
            AngleValue::Radians(r) => Ok(*r),
            AngleValue::Text(s) => parse_angle(s),
        }
    }
}

pub fn parse_angle(text: &str) -> Result<f64> {
    let t = text.trim();
    let err = || Error::Format {
        what: "angle".into(),
        reason: format!("cannot parse `{text}`, expected e.g. `1.57`, `1.57rad` or `90deg`"),
    };
    let (num, scale) = if let Some(n) = t.strip_suffix("deg") {
        (n, PI / 180.0)
    } else if let Some(n) = t.strip_suffix('°') {
        (n, PI / 180.0)
    } else if let Some(n) = t.strip_suffix("rad") {
        (n, 1.0)
    } else {
        (t, 1.0)
    };
    num.trim().parse::<f64>().map(|v| v * scale).map_err(|_| err())
}
