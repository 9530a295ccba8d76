//! Parametric jaw phantom built from cylinders and elliptical arch bands.
//!
//! Densities are in arbitrary units (soft tissue 1, bone and teeth 2,
//! metal 8). The voxelized volume multiplies them by `attenuation_scale`
//! (mm⁻¹ per unit) so line integrals land in a realistic range.
//!
//! Primitives nest in a fixed order: head, spine, jaw bone, teeth, cavity.
//! Each voxel takes the density of the innermost (last) primitive that
//! contains its center.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::voxel_center;
use crate::volume::Volume;

pub const SOFT_TISSUE: f64 = 1.0;
pub const BONE: f64 = 2.0;
pub const METAL: f64 = 8.0;

/// Upright cylinder along `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cylinder {
    /// `[x, y, z]` in mm.
    pub center: [f64; 3],
    pub radius: f64,
    pub height: f64,
    pub density: f64,
}

impl Cylinder {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius && (p[2] - self.center[2]).abs() <= self.height / 2.0
    }

    pub fn volume(&self) -> f64 {
        PI * self.radius * self.radius * self.height
    }
}

/// Teeth and bone laid along two elliptical arcs in the axial plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JawSpec {
    /// Ellipse center `[x, y]` in mm.
    pub center: [f64; 2],
    /// Semi-axes `[a, b]` along x and y in mm.
    pub semi_axes: [f64; 2],
    /// Arc parameter range in degrees, `0` along +x, `90` toward +y.
    pub arc_degrees: [f64; 2],
    pub upper_teeth: usize,
    pub lower_teeth: usize,
    pub tooth_radius: f64,
    pub tooth_height: f64,
    pub tooth_density: f64,
    /// `z` of the upper and lower tooth centers.
    pub upper_z: f64,
    pub lower_z: f64,
    /// Half width of the bone band in normalized elliptical radius.
    pub bone_half_width: f64,
    pub bone_height: f64,
    pub bone_density: f64,
    /// `z` of the upper and lower bone band centers.
    pub upper_bone_z: f64,
    pub lower_bone_z: f64,
}

/// Low-density void inside one tooth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySpec {
    pub tooth: usize,
    pub radius: f64,
    pub height: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    #[serde(default)]
    pub background: f64,
    #[serde(default = "default_scale")]
    pub attenuation_scale: f64,
    #[serde(default)]
    pub head: Option<Cylinder>,
    #[serde(default)]
    pub spine: Option<Cylinder>,
    #[serde(default)]
    pub jaw: Option<JawSpec>,
    /// Tooth indices (upper arc first, then lower) made of metal.
    #[serde(default)]
    pub metal_teeth: Vec<usize>,
    #[serde(default = "default_metal")]
    pub metal_density: f64,
    #[serde(default)]
    pub cavity: Option<CavitySpec>,
}

fn default_scale() -> f64 {
    0.02
}

fn default_metal() -> f64 {
    METAL
}

impl Default for PhantomSpec {
    /// Background only.
    fn default() -> Self {
        Self {
            background: 0.0,
            attenuation_scale: default_scale(),
            head: None,
            spine: None,
            jaw: None,
            metal_teeth: Vec::new(),
            metal_density: METAL,
            cavity: None,
        }
    }
}

/// Names accepted by [`PhantomSpec::builtin`].
pub const BUILTIN: [&str; 2] = ["default-jaw", "wide-jaw"];

impl PhantomSpec {
    /// Head, spine, both jaws with 16 + 15 teeth, three metal lower molars
    /// and a cavity in an upper premolar. Fits a grid 82.5 mm across.
    pub fn default_jaw() -> Self {
        let upper = 16;
        Self {
            background: 0.0,
            attenuation_scale: default_scale(),
            head: Some(Cylinder {
                center: [0.0, 0.0, 0.0],
                radius: 38.0,
                height: 50.0,
                density: SOFT_TISSUE,
            }),
            spine: Some(Cylinder {
                center: [0.0, -25.0, 0.0],
                radius: 7.0,
                height: 50.0,
                density: BONE,
            }),
            jaw: Some(JawSpec {
                center: [0.0, -4.0],
                semi_axes: [24.0, 26.0],
                arc_degrees: [-15.0, 195.0],
                upper_teeth: upper,
                lower_teeth: 15,
                tooth_radius: 2.2,
                tooth_height: 10.0,
                tooth_density: BONE,
                upper_z: 8.0,
                lower_z: -8.0,
                bone_half_width: 0.14,
                bone_height: 10.0,
                bone_density: BONE,
                upper_bone_z: 12.0,
                lower_bone_z: -12.0,
            }),
            // the first three teeth of the lower arc sit at its back end
            metal_teeth: vec![upper, upper + 1, upper + 2],
            metal_density: METAL,
            cavity: Some(CavitySpec {
                tooth: 3,
                radius: 1.0,
                height: 4.0,
                density: 0.5,
            }),
        }
    }

    /// The default jaw inside a head wider than the 82.5 mm grid, for
    /// truncation experiments.
    pub fn wide_jaw() -> Self {
        let mut spec = Self::default_jaw();
        if let Some(head) = spec.head.as_mut() {
            head.radius = 55.0;
        }
        spec
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "default-jaw" => Ok(Self::default_jaw()),
            "wide-jaw" => Ok(Self::wide_jaw()),
            _ => Err(Error::Unknown {
                what: "phantom spec",
                name: name.to_string(),
            }),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Format {
            what: "phantom spec".into(),
            reason: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("phantom spec serializes")
    }

    pub fn n_teeth(&self) -> usize {
        self.jaw.as_ref().map_or(0, |j| j.upper_teeth + j.lower_teeth)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite and ≥ 0, got {v}")))
            }
        };
        nonneg("background", self.background)?;
        nonneg("metal_density", self.metal_density)?;
        if !(self.attenuation_scale > 0.0 && self.attenuation_scale.is_finite()) {
            return Err(Error::param("attenuation_scale", "must be > 0"));
        }
        for c in [&self.head, &self.spine].into_iter().flatten() {
            nonneg("density", c.density)?;
            if !(c.radius > 0.0 && c.height > 0.0) {
                return Err(Error::param("cylinder", "radius and height must be > 0"));
            }
        }
        if let Some(j) = &self.jaw {
            nonneg("tooth_density", j.tooth_density)?;
            nonneg("bone_density", j.bone_density)?;
            if !(j.semi_axes[0] > 0.0 && j.semi_axes[1] > 0.0) {
                return Err(Error::param("semi_axes", "must be > 0"));
            }
            if !(j.tooth_radius > 0.0 && j.tooth_height > 0.0) {
                return Err(Error::param("tooth", "radius and height must be > 0"));
            }
            if !(j.bone_half_width >= 0.0 && j.bone_height >= 0.0) {
                return Err(Error::param("bone", "width and height must be ≥ 0"));
            }
        }
        let n = self.n_teeth();
        for &t in &self.metal_teeth {
            if t >= n {
                return Err(Error::IndexOutOfRange {
                    what: "metal tooth",
                    index: t,
                    len: n,
                });
            }
        }
        if let Some(c) = &self.cavity {
            if c.tooth >= n {
                return Err(Error::IndexOutOfRange {
                    what: "cavity tooth",
                    index: c.tooth,
                    len: n,
                });
            }
            if self.metal_teeth.contains(&c.tooth) {
                return Err(Error::param("cavity", "cannot sit inside a metal tooth"));
            }
            nonneg("cavity density", c.density)?;
        }
        Ok(())
    }

    /// Flattened list of primitives in nesting order (outermost first).
    pub fn primitives(&self) -> Vec<Primitive> {
        let mut out = Vec::new();
        if let Some(h) = self.head {
            out.push(Primitive::Cylinder(h));
        }
        if let Some(s) = self.spine {
            out.push(Primitive::Cylinder(s));
        }
        if let Some(j) = &self.jaw {
            for z in [j.upper_bone_z, j.lower_bone_z] {
                out.push(Primitive::ArchBand {
                    center: j.center,
                    semi_axes: j.semi_axes,
                    arc: [j.arc_degrees[0].to_radians(), j.arc_degrees[1].to_radians()],
                    half_width: j.bone_half_width,
                    z,
                    height: j.bone_height,
                    density: j.bone_density,
                });
            }
            let teeth = tooth_cylinders(j, &self.metal_teeth, self.metal_density);
            if let Some(c) = self.cavity {
                let t = teeth[c.tooth];
                out.extend(teeth.into_iter().map(Primitive::Cylinder));
                out.push(Primitive::Cylinder(Cylinder {
                    center: t.center,
                    radius: c.radius,
                    height: c.height,
                    density: c.density,
                }));
            } else {
                out.extend(teeth.into_iter().map(Primitive::Cylinder));
            }
        }
        out
    }
}

/// Tooth cylinders, upper arc then lower arc, each at equal arc length.
pub fn tooth_cylinders(jaw: &JawSpec, metal: &[usize], metal_density: f64) -> Vec<Cylinder> {
    let mut teeth = Vec::with_capacity(jaw.upper_teeth + jaw.lower_teeth);
    for (count, z) in [(jaw.upper_teeth, jaw.upper_z), (jaw.lower_teeth, jaw.lower_z)] {
        for [x, y] in arc_points(jaw.center, jaw.semi_axes, jaw.arc_degrees, count) {
            let index = teeth.len();
            teeth.push(Cylinder {
                center: [x, y, z],
                radius: jaw.tooth_radius,
                height: jaw.tooth_height,
                density: if metal.contains(&index) { metal_density } else { jaw.tooth_density },
            });
        }
    }
    teeth
}

/// `count` points at equal arc length along an elliptical arc, endpoints
/// included (a single point sits at the middle).
pub fn arc_points(center: [f64; 2], semi_axes: [f64; 2], arc_degrees: [f64; 2], count: usize) -> Vec<[f64; 2]> {
    if count == 0 {
        return Vec::new();
    }
    let [a, b] = semi_axes;
    let (t0, t1) = (arc_degrees[0].to_radians(), arc_degrees[1].to_radians());
    // cumulative arc length on a fine parameter grid
    let steps = 4096;
    let mut length = Vec::with_capacity(steps + 1);
    length.push(0.0);
    for s in 1..=steps {
        let tm = t0 + (t1 - t0) * (s as f64 - 0.5) / steps as f64;
        let speed = ((a * tm.sin()).powi(2) + (b * tm.cos()).powi(2)).sqrt();
        length.push(length[s - 1] + speed * (t1 - t0) / steps as f64);
    }
    let total = length[steps];
    (0..count)
        .map(|i| {
            let target = if count == 1 { total / 2.0 } else { total * i as f64 / (count - 1) as f64 };
            let s = length.partition_point(|&l| l < target).clamp(1, steps);
            let frac = (target - length[s - 1]) / (length[s] - length[s - 1]);
            let t = t0 + (t1 - t0) * (s as f64 - 1.0 + frac) / steps as f64;
            [center[0] + a * t.cos(), center[1] + b * t.sin()]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Cylinder(Cylinder),
    /// Points whose normalized elliptical radius is within `half_width` of 1
    /// and whose arc parameter lies in `arc`, inside a `z` slab.
    ArchBand {
        center: [f64; 2],
        semi_axes: [f64; 2],
        arc: [f64; 2],
        half_width: f64,
        z: f64,
        height: f64,
        density: f64,
    },
}

impl Primitive {
    pub fn density(&self) -> f64 {
        match self {
            Primitive::Cylinder(c) => c.density,
            Primitive::ArchBand { density, .. } => *density,
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            Primitive::Cylinder(c) => c.contains(p),
            Primitive::ArchBand {
                center,
                semi_axes,
                arc,
                half_width,
                z,
                height,
                ..
            } => {
                if (p[2] - z).abs() > height / 2.0 {
                    return false;
                }
                let u = (p[0] - center[0]) / semi_axes[0];
                let v = (p[1] - center[1]) / semi_axes[1];
                let r = (u * u + v * v).sqrt();
                if (r - 1.0).abs() > half_width {
                    return false;
                }
                // compare angles on the unrolled range starting at arc[0]
                let t = v.atan2(u);
                let rel = (t - arc[0]).rem_euclid(2.0 * PI);
                rel <= arc[1] - arc[0]
            }
        }
    }
}

/// Voxelizes `spec` on a centered grid. Values are densities times
/// `attenuation_scale`.
pub fn generate_phantom(spec: &PhantomSpec, dims: [usize; 3], voxel_size: f64) -> Result<Volume> {
    spec.validate()?;
    if dims.contains(&0) {
        return Err(Error::param("dims", "must be positive"));
    }
    if !(voxel_size > 0.0) {
        return Err(Error::param("voxel_size", "must be > 0"));
    }
    let labels = label_volume(spec, dims, voxel_size);
    let prims = spec.primitives();
    let scale = spec.attenuation_scale;
    let data = labels
        .par_iter()
        .map(|l| match l {
            Some(i) => prims[*i as usize].density() * scale,
            None => spec.background * scale,
        })
        .collect();
    Volume::from_vec(dims, voxel_size, data)
}

/// Index into [`PhantomSpec::primitives`] of the innermost primitive at each
/// voxel center.
pub fn label_volume(spec: &PhantomSpec, dims: [usize; 3], voxel_size: f64) -> Vec<Option<u32>> {
    let prims = spec.primitives();
    let plane = dims[1] * dims[2];
    let mut labels = vec![None; dims.iter().product()];
    labels.par_chunks_mut(plane).enumerate().for_each(|(i, slab)| {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let p = voxel_center(dims, voxel_size, i, j, k);
                slab[j * dims[2] + k] = prims.iter().rposition(|q| q.contains(p)).map(|x| x as u32);
            }
        }
    });
    labels
}
