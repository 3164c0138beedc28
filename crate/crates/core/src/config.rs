//! Experiment configuration file.
//!
//! Every table is optional and falls back to the library defaults; unknown
//! keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classical::NmarConfig;
use crate::error::{Error, Result};
use crate::fbp::FbpConfig;
use crate::phantom::PhantomSpec;
use crate::simulator::{CorruptionSpec, MetalSpec};
use crate::solver::SolverConfig;
use crate::types::{Geometry, HuMap, DEFAULT_FOV_CM, DETECTOR_MARGIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "default_side")]
    pub image_h: usize,
    #[serde(default = "default_side")]
    pub image_w: usize,
    #[serde(default = "default_views")]
    pub n_views: usize,
    /// Defaults to the smallest odd count whose pitch is at most one pixel
    /// across the padded diagonal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bins: Option<usize>,
    /// Defaults to a fixed field of view over the longer side, in cm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector_spacing: Option<f64>,
}

fn default_side() -> usize {
    416
}

fn default_views() -> usize {
    640
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = Geometry::default();
        GeometryConfig {
            image_h: g.image_h,
            image_w: g.image_w,
            n_views: g.n_views,
            n_bins: Some(g.n_bins),
            pixel_size: None,
            detector_spacing: None,
        }
    }
}

impl GeometryConfig {
    pub fn to_geometry(&self) -> Result<Geometry> {
        let side = self.image_h.max(self.image_w).max(1);
        let pixel_size = self.pixel_size.unwrap_or(DEFAULT_FOV_CM / side as f64);
        let n_bins = self.n_bins.unwrap_or_else(|| {
            let diag = ((self.image_h.pow(2) + self.image_w.pow(2)) as f64).sqrt();
            let n = (DETECTOR_MARGIN * diag).ceil() as usize;
            n | 1
        });
        match self.detector_spacing {
            Some(s) => Geometry::with_spacing(self.image_h, self.image_w, n_bins, self.n_views, pixel_size, s),
            None => Geometry::new(self.image_h, self.image_w, n_bins, self.n_views, pixel_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub fbp: FbpConfig,
    pub phantom: PhantomSpec,
    pub metal: MetalSpec,
    pub corruption: CorruptionSpec,
    pub nmar: NmarConfig,
    pub solver: SolverConfig,
    pub hu: HuMap,
    pub output_dir: PathBuf,
    /// Mixed into every component seed; see [`derive_seed`].
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            geometry: GeometryConfig::default(),
            fbp: FbpConfig::default(),
            phantom: PhantomSpec::default(),
            metal: MetalSpec::default(),
            corruption: CorruptionSpec::default(),
            nmar: NmarConfig::default(),
            solver: SolverConfig::default(),
            hu: HuMap::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// Seed used by a component given the global seed, a component tag and the
/// component's own seed. Results fit in 63 bits so they survive TOML.
pub fn derive_seed(global: u64, tag: &str, local: u64) -> u64 {
    // splitmix64 finalizer over a tag hash
    let mut z = tag
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    z ^= global.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ local.rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) >> 1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.to_geometry()?;
        self.fbp.validate()?;
        self.phantom.validate()?;
        self.metal.validate()?;
        self.corruption.validate()?;
        self.nmar.validate()?;
        self.solver.validate()?;
        if !(self.hu.water_mu.is_finite() && self.hu.water_mu > 0.0) {
            return Err(Error::InvalidConfig(format!("hu.water_mu must be positive, got {}", self.hu.water_mu)));
        }
        Ok(())
    }

    /// Component specs with their seeds mixed with the global seed.
    pub fn seeded(&self) -> (PhantomSpec, MetalSpec, CorruptionSpec) {
        let phantom = PhantomSpec {
            seed: derive_seed(self.seed, "phantom", self.phantom.seed),
            ..self.phantom.clone()
        };
        let metal = MetalSpec {
            seed: derive_seed(self.seed, "metal", self.metal.seed),
            ..self.metal.clone()
        };
        let corruption = CorruptionSpec {
            seed: derive_seed(self.seed, "noise", self.corruption.seed),
            ..self.corruption.clone()
        };
        (phantom, metal, corruption)
    }
}
