//! Browser bindings: simulate a small dental scan, inspect it, reconstruct it.
//!
//! [`Scene`] is plain Rust so it can be tested natively; [`Demo`] wraps it
//! for JavaScript.

use cbct::geometry::ConeBeamGeometry;
use cbct::io::{window_slice, window_value, Axis};
use cbct::phantom::{generate_phantom, PhantomSpec};
use cbct::{metrics, noise, Algorithm, Preset, ProjectionStack, Projector, ReconConfig, Volume};
use wasm_bindgen::prelude::*;

/// A simulated acquisition: ground truth, geometry and noisy line integrals.
pub struct Scene {
    geom: ConeBeamGeometry,
    truth: Volume,
    noisy: ProjectionStack,
}

/// One reconstruction, ready to draw.
pub struct Outcome {
    pub rgba: Vec<u8>,
    pub nrmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    /// Cost trace divided by its first finite nonzero entry.
    pub costs: Vec<f64>,
}

/// Detector sized to cover the jaw phantom at grid size `n`.
fn geometry(n: usize, views: usize) -> cbct::Result<ConeBeamGeometry> {
    if !(16..=96).contains(&n) {
        return Err(cbct::Error::param("n", format!("expected 16..=96, got {n}")));
    }
    let slices = n / 2;
    let mag = 564.30 / 401.07;
    let pixel = 82.5 / n as f64 * mag * 1.15;
    let g = ConeBeamGeometry::desk(n, slices, views.max(2), slices + n / 4, n * 3 / 2, pixel);
    g.validate()?;
    Ok(g)
}

fn to_rgba(gray: &[u8]) -> Vec<u8> {
    gray.iter().flat_map(|&g| [g, g, g, 255]).collect()
}

impl Scene {
    pub fn new(n: usize, views: usize, i0: f64, seed: u64) -> cbct::Result<Self> {
        let geom = geometry(n, views)?;
        let truth = generate_phantom(&PhantomSpec::default_jaw(), geom.grid_dims(), geom.voxel_size)?;
        let clean = Projector::new(&geom)?.forward(&truth)?;
        let noisy = noise::simulate_noise(&clean, i0, noise::DEFAULT_SIGMA, seed)?;
        Ok(Self { geom, truth, noisy })
    }

    pub fn size(&self) -> usize {
        self.truth.dims()[2]
    }

    fn window(&self) -> (f64, f64) {
        // metal saturates; the window is set for bone and soft tissue
        (0.0, 2.5 * PhantomSpec::default_jaw().attenuation_scale)
    }

    fn slice_rgba(&self, vol: &Volume) -> cbct::Result<Vec<u8>> {
        let s = vol.dims()[0];
        let lower = PhantomSpec::default_jaw().jaw.map_or(0.0, |j| j.lower_z);
        let z = lower / vol.voxel_size + (s as f64 - 1.0) / 2.0;
        let index = (z.round().max(0.0) as usize).min(s - 1);
        let (_, _, gray) = window_slice(vol, Axis::Axial, index, self.window())?;
        Ok(to_rgba(&gray))
    }

    /// Axial slice through the lower teeth, which carry the metal crowns.
    pub fn phantom_rgba(&self) -> cbct::Result<Vec<u8>> {
        self.slice_rgba(&self.truth)
    }

    pub fn detector_shape(&self) -> (usize, usize) {
        let [_, rows, cols] = self.noisy.dims();
        (rows, cols)
    }

    /// One noisy view, windowed to the stack's range.
    pub fn projection_rgba(&self, view: usize) -> cbct::Result<Vec<u8>> {
        if view >= self.noisy.n_angles() {
            return Err(cbct::Error::param("view", format!("{view} of {}", self.noisy.n_angles())));
        }
        let hi = self.noisy.data.iter().cloned().fold(0.0, f64::max).max(1e-12);
        let gray: Vec<u8> = self.noisy.view(view).iter().map(|&v| window_value(v, 0.0, hi)).collect();
        Ok(to_rgba(&gray))
    }

    pub fn reconstruct(&self, algo: &str, iterations: usize, alpha: Option<f64>) -> cbct::Result<Outcome> {
        let algorithm = Algorithm::parse(algo)?;
        let mut cfg = ReconConfig::preset(Preset::Phantom, algorithm);
        if algorithm != Algorithm::Fdk {
            cfg.iterations = iterations;
        }
        if let Some(a) = alpha {
            cfg.alpha = a;
        }
        let (vol, trace) = cbct::reconstruct(&self.noisy, &self.geom, &cfg)?;
        let r = metrics::report(&vol, &self.truth)?;
        let costs = trace.costs();
        let norm = costs.iter().copied().find(|c| c.is_finite() && *c != 0.0).unwrap_or(1.0);
        Ok(Outcome {
            rgba: self.slice_rgba(&vol)?,
            nrmse: r.nrmse,
            psnr: r.psnr,
            ssim: r.ssim,
            costs: costs.iter().map(|c| c / norm).collect(),
        })
    }
}

fn js(e: cbct::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo(Scene);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, views: usize, i0: f64, seed: u32) -> Result<Demo, JsError> {
        Scene::new(n, views, i0, seed as u64).map(Demo).map_err(js)
    }

    pub fn size(&self) -> usize {
        self.0.size()
    }

    #[wasm_bindgen(js_name = detectorRows)]
    pub fn detector_rows(&self) -> usize {
        self.0.detector_shape().0
    }

    #[wasm_bindgen(js_name = detectorCols)]
    pub fn detector_cols(&self) -> usize {
        self.0.detector_shape().1
    }

    pub fn views(&self) -> usize {
        self.0.noisy.n_angles()
    }

    #[wasm_bindgen(js_name = phantomSlice)]
    pub fn phantom_slice(&self) -> Result<Vec<u8>, JsError> {
        self.0.phantom_rgba().map_err(js)
    }

    pub fn projection(&self, view: usize) -> Result<Vec<u8>, JsError> {
        self.0.projection_rgba(view).map_err(js)
    }

    /// A negative `alpha` keeps the preset value.
    pub fn reconstruct(&self, algo: &str, iterations: usize, alpha: f64) -> Result<Reconstruction, JsError> {
        let alpha = (alpha >= 0.0).then_some(alpha);
        self.0.reconstruct(algo, iterations, alpha).map(Reconstruction).map_err(js)
    }
}

#[wasm_bindgen]
pub struct Reconstruction(Outcome);

#[wasm_bindgen]
impl Reconstruction {
    pub fn rgba(&self) -> Vec<u8> {
        self.0.rgba.clone()
    }
    pub fn nrmse(&self) -> f64 {
        self.0.nrmse
    }
    pub fn psnr(&self) -> f64 {
        self.0.psnr
    }
    pub fn ssim(&self) -> f64 {
        self.0.ssim
    }
    pub fn costs(&self) -> Vec<f64> {
        self.0.costs.clone()
    }
}
