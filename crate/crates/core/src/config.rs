//! Pipeline configuration. Every field has a default, so `{}` is a complete
//! config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depth::DepthBinSpec;
use crate::error::{Error, Result};
use crate::lift_splat::BevGridSpec;
use crate::matching::CostParams;
use crate::query::{BoxTemplate, CategoryRaySpec, RayLayout};
use crate::sim::SceneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForegroundConfig {
    /// Candidate rays per category.
    pub rays: CategoryRaySpec,
    /// Maximum number of selected foreground rays; `null` keeps all hits.
    pub budget: Option<usize>,
    /// Queries per foreground ray.
    pub depth_slots: usize,
}

impl Default for ForegroundConfig {
    fn default() -> Self {
        ForegroundConfig {
            rays: CategoryRaySpec::default(),
            budget: Some(30),
            depth_slots: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Ray points per query for the BEV branch.
    pub k_bev: usize,
    /// Ray points per query for the image branch.
    pub k_img: usize,
    /// Sampling offsets per ray point.
    pub offsets: usize,
    /// Number of frames `T`, taken from the start of the scene timestamps.
    pub frames: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            k_bev: 5,
            k_img: 3,
            offsets: 4,
            frames: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub layout: RayLayout,
    pub template: BoxTemplate,
    /// Length of the zero-initialized feature vector carried by each query.
    pub feature_dim: usize,
    pub foreground: ForegroundConfig,
    pub sampling: SamplingConfig,
    pub bev: BevGridSpec,
    pub depth: DepthBinSpec,
    pub cost: CostParams,
    pub scene: SceneConfig,
    pub dispersion_threshold_px: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            layout: RayLayout::default(),
            template: BoxTemplate::default(),
            feature_dim: 0,
            foreground: ForegroundConfig::default(),
            sampling: SamplingConfig::default(),
            bev: BevGridSpec::new(65.0, 128).expect("valid default grid"),
            depth: DepthBinSpec::new(1.0, 65.0, 64).expect("valid default bins"),
            cost: CostParams::default(),
            scene: SceneConfig::default(),
            dispersion_threshold_px: 10.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.foreground.rays.validate()?;
        if self.foreground.depth_slots == 0 {
            return Err(Error::invariant("foreground depth_slots must be >= 1"));
        }
        let s = &self.sampling;
        if s.k_bev == 0 || s.k_img == 0 || s.offsets == 0 || s.frames == 0 {
            return Err(Error::invariant("sampling counts k_bev, k_img, offsets and frames must be >= 1"));
        }
        if s.frames > self.scene.timestamps.len() {
            return Err(Error::invariant(format!(
                "sampling uses {} frames but the scene config has {} timestamps",
                s.frames,
                self.scene.timestamps.len()
            )));
        }
        self.cost.validate()?;
        self.scene.validate()?;
        let t = &self.template;
        if !(t.w > 0.0 && t.l > 0.0 && t.h > 0.0) {
            return Err(Error::invariant("template dims must be > 0"));
        }
        if !(self.dispersion_threshold_px > 0.0) {
            return Err(Error::invariant("dispersion threshold must be positive"));
        }
        Ok(())
    }

    /// Reads and validates a JSON config.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Base plus maximum foreground query count.
    pub fn max_queries(&self) -> Option<usize> {
        self.foreground
            .budget
            .map(|b| self.layout.num_queries() + b * self.foreground.depth_slots)
    }
}
