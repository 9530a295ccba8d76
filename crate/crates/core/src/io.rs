//! Raw little-endian `f32` payloads with a text sidecar header, and 8-bit
//! PGM slice export.
//!
//! A file `name.raw` is described by `name.raw.hdr`, one `key value` pair
//! per line:
//!
//! ```text
//! format cbct-raw 1
//! kind volume
//! dims 2 2 2
//! voxel_size 1
//! units mm^-1
//! dtype f32le
//! order slice,row,col
//! sha256 <hex digest of the payload>
//! ```
//!
//! Projection stacks use `kind projections`, `order view,row,col`, and add
//! `domain` (`line_integral` or `intensity`) and `angles` (radians,
//! space-separated) in place of `voxel_size` and `units`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume::{Domain, ProjectionStack, Volume};

const MAGIC: &str = "cbct-raw 1";
pub const VOLUME_UNITS: &str = "mm^-1";

/// Sidecar header path for a payload path.
pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn encode(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn decode(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

fn fmt_dims(d: [usize; 3]) -> String {
    format!("{} {} {}", d[0], d[1], d[2])
}

pub fn volume_header(vol: &Volume, payload: &[u8]) -> String {
    format!(
        "format {MAGIC}\nkind volume\ndims {}\nvoxel_size {}\nunits {VOLUME_UNITS}\ndtype f32le\norder slice,row,col\nsha256 {}\n",
        fmt_dims(vol.dims()),
        vol.voxel_size,
        sha256_hex(payload)
    )
}

pub fn projection_header(p: &ProjectionStack, angles: &[f64], payload: &[u8]) -> String {
    let angles: Vec<String> = angles.iter().map(|a| a.to_string()).collect();
    format!(
        "format {MAGIC}\nkind projections\ndims {}\ndomain {}\nangles {}\ndtype f32le\norder view,row,col\nsha256 {}\n",
        fmt_dims(p.dims()),
        p.domain.as_str(),
        angles.join(" "),
        sha256_hex(payload)
    )
}

fn write_pair(path: &Path, payload: &[u8], header: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let hp = header_path(path);
    fs::write(&hp, header).map_err(|e| Error::io(hp, e))
}

pub fn write_volume(path: impl AsRef<Path>, vol: &Volume) -> Result<()> {
    let payload = encode(&vol.data);
    write_pair(path.as_ref(), &payload, &volume_header(vol, &payload))
}

/// `angles` are stored in the header; their count must match the stack.
pub fn write_projections(path: impl AsRef<Path>, p: &ProjectionStack, angles: &[f64]) -> Result<()> {
    if angles.len() != p.n_angles() {
        return Err(Error::dims(p.n_angles(), angles.len()));
    }
    let payload = encode(&p.data);
    write_pair(path.as_ref(), &payload, &projection_header(p, angles, &payload))
}

struct Header {
    path: PathBuf,
    fields: HashMap<String, String>,
}

impl Header {
    fn read(path: &Path) -> Result<Self> {
        let hp = header_path(path);
        let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
        let mut fields = HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let h = Self { path: hp, fields };
        if h.get("format")? != MAGIC {
            return Err(h.bad(format!("unsupported format `{}`", h.get("format")?)));
        }
        if h.get("dtype")? != "f32le" {
            return Err(h.bad("dtype must be f32le"));
        }
        Ok(h)
    }

    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            what: format!("header {}", self.path.display()),
            reason: reason.into(),
        }
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| self.bad(format!("missing `{key}`")))
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        let got = self.get("kind")?;
        if got != kind {
            return Err(self.bad(format!("expected kind `{kind}`, found `{got}`")));
        }
        Ok(())
    }

    fn dims(&self) -> Result<[usize; 3]> {
        let parts: Vec<usize> = self
            .get("dims")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| self.bad("dims must be integers")))
            .collect::<Result<_>>()?;
        <[usize; 3]>::try_from(parts).map_err(|_| self.bad("dims needs 3 values"))
    }

    /// Reads the payload, checking size then checksum.
    fn payload(&self, path: &Path, count: usize) -> Result<Vec<f64>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let expected = 4 * count as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::PayloadSize {
                path: path.to_path_buf(),
                expected,
                actual: bytes.len() as u64,
            });
        }
        let want = self.get("sha256")?;
        let got = sha256_hex(&bytes);
        if want != got {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                expected: want.to_string(),
                actual: got,
            });
        }
        Ok(decode(&bytes))
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let h = Header::read(path)?;
    h.expect_kind("volume")?;
    let dims = h.dims()?;
    let vs: f64 = h.get("voxel_size")?.parse().map_err(|_| h.bad("bad voxel_size"))?;
    let data = h.payload(path, dims.iter().product())?;
    Volume::from_vec(dims, vs, data)
}

/// Returns the stack and the angle list from its header.
pub fn read_projections(path: impl AsRef<Path>) -> Result<(ProjectionStack, Vec<f64>)> {
    let path = path.as_ref();
    let h = Header::read(path)?;
    h.expect_kind("projections")?;
    let dims = h.dims()?;
    let domain = Domain::parse(h.get("domain")?)?;
    let angles: Vec<f64> = h
        .get("angles")?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| h.bad(format!("bad angle `{s}`"))))
        .collect::<Result<_>>()?;
    if angles.len() != dims[0] {
        return Err(h.bad(format!("{} angles for {} views", angles.len(), dims[0])));
    }
    let data = h.payload(path, dims.iter().product())?;
    Ok((ProjectionStack::from_vec(dims, domain, data)?, angles))
}

/// Slice orientation for [`export_slice`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Fixed slice index; image rows are volume rows.
    Axial,
    /// Fixed row index; image rows are slices.
    Coronal,
    /// Fixed column index; image rows are slices.
    Sagittal,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "axial" | "z" => Ok(Axis::Axial),
            "coronal" | "y" => Ok(Axis::Coronal),
            "sagittal" | "x" => Ok(Axis::Sagittal),
            _ => Err(Error::Unknown {
                what: "axis",
                name: s.to_string(),
            }),
        }
    }
}

/// Linear window to 8 bits: `≤ lo` → 0, `≥ hi` → 255.
pub fn window_value(v: f64, lo: f64, hi: f64) -> u8 {
    if v <= lo {
        0
    } else if v >= hi {
        255
    } else {
        (255.0 * (v - lo) / (hi - lo)).round() as u8
    }
}

/// Windowed 8-bit slice as `(width, height, pixels)` in row-major order.
pub fn window_slice(vol: &Volume, axis: Axis, index: usize, window: (f64, f64)) -> Result<(usize, usize, Vec<u8>)> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::param("window", format!("need lo < hi, got ({lo}, {hi})")));
    }
    let [s, r, c] = vol.dims();
    let (limit, what) = match axis {
        Axis::Axial => (s, "slice"),
        Axis::Coronal => (r, "row"),
        Axis::Sagittal => (c, "column"),
    };
    if index >= limit {
        return Err(Error::IndexOutOfRange {
            what,
            index,
            len: limit,
        });
    }
    let (w, h) = match axis {
        Axis::Axial => (c, r),
        Axis::Coronal => (c, s),
        Axis::Sagittal => (r, s),
    };
    let mut px = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v = match axis {
                Axis::Axial => vol[(index, y, x)],
                Axis::Coronal => vol[(y, index, x)],
                Axis::Sagittal => vol[(y, x, index)],
            };
            px.push(window_value(v, lo, hi));
        }
    }
    Ok((w, h, px))
}

/// Binary PGM (`P5`) bytes.
pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn export_slice(
    vol: &Volume,
    axis: Axis,
    index: usize,
    window: (f64, f64),
    path: impl AsRef<Path>,
) -> Result<()> {
    let (w, h, px) = window_slice(vol, axis, index, window)?;
    let path = path.as_ref();
    fs::write(path, pgm_bytes(w, h, &px)).map_err(|e| Error::io(path, e))
}
