//! Reconstruction parameters and named presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Fdk,
    Sirt,
    Mlem,
    SirtTv,
    MlemTv,
    KlTv,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Fdk,
        Algorithm::Sirt,
        Algorithm::Mlem,
        Algorithm::SirtTv,
        Algorithm::MlemTv,
        Algorithm::KlTv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fdk => "fdk",
            Algorithm::Sirt => "sirt",
            Algorithm::Mlem => "mlem",
            Algorithm::SirtTv => "sirt-tv",
            Algorithm::MlemTv => "mlem-tv",
            Algorithm::KlTv => "kl-tv",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Fdk => "FDK",
            Algorithm::Sirt => "SIRT",
            Algorithm::Mlem => "MLEM",
            Algorithm::SirtTv => "SIRT-TV",
            Algorithm::MlemTv => "MLEM-TV",
            Algorithm::KlTv => "KL-TV",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Unknown {
                what: "algorithm",
                name: s.to_string(),
            })
    }

    pub fn is_iterative(self) -> bool {
        self != Algorithm::Fdk
    }
}

/// Ramp filter apodization for FDK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RampWindow {
    #[default]
    RamLak,
    SheppLogan,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdkOptions {
    /// Parker redundancy weighting for short scans.
    pub parker: bool,
    pub window: RampWindow,
}

/// Abort when the recorded cost stays above `factor ×` the first recorded
/// cost for `patience` consecutive records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Watchdog {
    pub factor: f64,
    pub patience: usize,
}

impl Default for Watchdog {
    fn default() -> Self {
        Self {
            factor: 10.0,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub algorithm: Algorithm,
    /// Outer iterations `N`.
    pub iterations: usize,
    /// Inner TV iterations `NTV` (SIRT-TV, MLEM-TV).
    pub tv_iterations: usize,
    /// TV weight `α`.
    pub alpha: f64,
    /// SIRT relaxation `λ`.
    pub lambda: f64,
    /// Overrides the geometry's lateral extension margin when set.
    pub extension_margin: Option<usize>,
    /// Starting value of the MLEM family on active voxels. When unset, the
    /// uniform value `Σp / Σ(A1)` whose projections match the data total.
    pub initial_value: Option<f64>,
    /// Voxels with sensitivity below `sensitivity_floor × max(s)` are
    /// excluded from the MLEM family (held at zero).
    pub sensitivity_floor: f64,
    /// Outer FISTA relaxation for SIRT, SIRT-TV and MLEM-TV.
    pub fista: bool,
    /// Voxel-wise dual step in the MLEM-TV denoiser.
    pub precondition: bool,
    /// FISTA on the dual sequence of the MLEM-TV denoiser.
    pub inner_fista: bool,
    /// Chambolle dual step for SIRT-TV.
    pub chambolle_tau: f64,
    /// Record the cost every `log_every` iterations (the final iterate is
    /// always recorded).
    pub log_every: usize,
    pub watchdog: Watchdog,
    pub fdk: FdkOptions,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::KlTv,
            iterations: 100,
            tv_iterations: 20,
            alpha: 0.0,
            lambda: 0.8,
            extension_margin: None,
            initial_value: None,
            sensitivity_floor: 0.02,
            fista: true,
            precondition: true,
            inner_fista: true,
            chambolle_tau: crate::tvops::CHAMBOLLE_TAU,
            log_every: 1,
            watchdog: Watchdog::default(),
            fdk: FdkOptions::default(),
        }
    }
}

/// Named parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Numerical jaw phantom.
    Phantom,
    /// Experimental scan, low dose.
    ExperimentalLowDose,
    /// Experimental scan, half the views.
    ExperimentalUltraLowDose,
}

impl Preset {
    pub const ALL: [Preset; 3] = [
        Preset::Phantom,
        Preset::ExperimentalLowDose,
        Preset::ExperimentalUltraLowDose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Phantom => "phantom",
            Preset::ExperimentalLowDose => "experimental-low-dose",
            Preset::ExperimentalUltraLowDose => "experimental-ultra-low-dose",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "preset",
                name: s.to_string(),
            })
    }
}

impl ReconConfig {
    /// Parameter set of `preset` for `algorithm`.
    pub fn preset(preset: Preset, algorithm: Algorithm) -> Self {
        use Algorithm::*;
        let base = ReconConfig {
            algorithm,
            ..Default::default()
        };
        let (lambda, iters, sirt_alpha, tv_alpha, mlem_iters, kl_iters) = match preset {
            Preset::Phantom => (0.8, 400, 5e-5, 0.1, 200, 500),
            Preset::ExperimentalLowDose => (0.9, 400, 1e-6, 0.05, 400, 700),
            Preset::ExperimentalUltraLowDose => (0.9, 400, 2e-6, 0.05, 400, 700),
        };
        match algorithm {
            Fdk => ReconConfig {
                iterations: 1,
                ..base
            },
            Sirt => ReconConfig {
                iterations: iters,
                lambda,
                alpha: 0.0,
                ..base
            },
            SirtTv => ReconConfig {
                iterations: iters,
                tv_iterations: 20,
                lambda,
                alpha: sirt_alpha,
                ..base
            },
            Mlem => ReconConfig {
                iterations: mlem_iters,
                ..base
            },
            MlemTv => ReconConfig {
                iterations: 400,
                tv_iterations: 20,
                alpha: tv_alpha,
                ..base
            },
            KlTv => ReconConfig {
                iterations: kl_iters,
                alpha: tv_alpha,
                ..base
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ReconConfig = toml::from_str(text).map_err(|e| Error::Format {
            what: "reconstruction config".into(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be at least 1"));
        }
        let uses_tv_loop = matches!(self.algorithm, Algorithm::SirtTv | Algorithm::MlemTv);
        if uses_tv_loop && self.tv_iterations == 0 {
            return Err(Error::param("tv_iterations", "must be at least 1"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::param("alpha", format!("must be ≥ 0, got {}", self.alpha)));
        }
        if matches!(self.algorithm, Algorithm::Sirt | Algorithm::SirtTv)
            && !(self.lambda > 0.0 && self.lambda <= 1.0)
        {
            return Err(Error::param("lambda", format!("must lie in (0, 1], got {}", self.lambda)));
        }
        if self.algorithm == Algorithm::KlTv && !(self.alpha > 0.0) {
            return Err(Error::param("alpha", "KL-TV needs alpha > 0"));
        }
        if self.initial_value.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::param("initial_value", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.sensitivity_floor) {
            return Err(Error::param("sensitivity_floor", "must lie in [0, 1)"));
        }
        if self.log_every == 0 {
            return Err(Error::param("log_every", "must be at least 1"));
        }
        if !(self.chambolle_tau > 0.0 && self.chambolle_tau < crate::tvops::CHAMBOLLE_TAU_MAX) {
            return Err(Error::param("chambolle_tau", "must lie in (0, 1/12)"));
        }
        Ok(())
    }
}
