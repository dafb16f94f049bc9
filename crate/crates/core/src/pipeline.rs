//! Stage wiring shared by the CLI and the end-to-end tests.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::{polar_to_cartesian, Camera, CartesianPoint};
use crate::lift_splat::{lift_splat_multi, BevFeatureMap, DepthDistribution, ImageFeatureMap};
use crate::query::{
    expand_boxes_full_height, init_base_queries, init_foreground_queries, segment_of, select_foreground_rays, Box2D,
    MidpointProbe, Query, QueryOrigin, RaySegment,
};
use crate::sampling::{fuse, generate_sampling_points, sample_bev, sample_images, Branch, ParameterProvider, SamplingPoint};
use crate::sim::Scene;

pub fn midpoint_probe(cfg: &PipelineConfig) -> MidpointProbe {
    MidpointProbe {
        max_depth: cfg.layout.max_depth,
        z: cfg.template.z,
        fov: cfg.layout.fov,
    }
}

/// Base queries followed by foreground queries selected from `boxes`.
pub fn build_queries(cfg: &PipelineConfig, boxes: &[Box2D], cams: &[Camera]) -> Result<Vec<Query>> {
    let mut queries = init_base_queries(&cfg.layout, &cfg.template, cfg.feature_dim)?;
    let expanded = expand_boxes_full_height(boxes, cams)?;
    let rays = select_foreground_rays(&cfg.foreground.rays, &expanded, cams, midpoint_probe(cfg), cfg.foreground.budget)?;
    if let Some(b) = cfg.foreground.budget {
        if rays.len() < b {
            log::info!("{} foreground rays selected, fewer than the budget of {b}", rays.len());
        }
    }
    queries.extend(init_foreground_queries(
        &rays,
        cfg.foreground.depth_slots,
        cfg.layout.max_depth,
        &cfg.template,
        cfg.layout.num_rays,
        cfg.feature_dim,
    ));
    Ok(queries)
}

/// The ray segment owned by each query.
pub fn query_segments(cfg: &PipelineConfig, queries: &[Query]) -> Result<Vec<RaySegment>> {
    queries
        .iter()
        .map(|q| {
            q.validate(cfg.layout.max_depth)?;
            let slots = match q.origin {
                QueryOrigin::Base => cfg.layout.depth_slots,
                QueryOrigin::Foreground => cfg.foreground.depth_slots,
            };
            segment_of(q, slots, cfg.layout.max_depth)
        })
        .collect()
}

pub fn query_centers(queries: &[Query]) -> Result<Vec<CartesianPoint>> {
    queries.iter().map(|q| polar_to_cartesian(&q.bbox.center())).collect()
}

/// Lift-splat of the scene's id features with its oracle depth.
pub fn lift_splat_scene(cfg: &PipelineConfig, scene: &Scene) -> Result<BevFeatureMap> {
    let f = FrameInputs::from_scene(cfg, scene)?;
    lift_splat_multi(&f.cameras, &f.features, &f.depths, &cfg.depth, &cfg.bev)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFeatures {
    pub bev_points: Vec<SamplingPoint>,
    pub image_points: Vec<SamplingPoint>,
    pub bev: Vec<Vec<f64>>,
    pub image: Vec<Vec<f64>>,
    pub fused: Vec<Vec<f64>>,
}

/// Inputs of one frame: cameras in the reference ego frame plus per-view
/// features and depth distributions.
#[derive(Debug, Clone)]
pub struct FrameInputs {
    pub cameras: Vec<Camera>,
    pub features: Vec<ImageFeatureMap>,
    pub depths: Vec<DepthDistribution>,
}

impl FrameInputs {
    /// Id features and oracle depth of a rendered scene.
    pub fn from_scene(cfg: &PipelineConfig, scene: &Scene) -> Result<Self> {
        let views = scene.cameras.len();
        Ok(FrameInputs {
            cameras: scene.cameras.clone(),
            features: (0..views).map(|v| scene.id_feature_map(v)).collect::<Result<_>>()?,
            depths: (0..views)
                .map(|v| scene.depth_distribution(v, &cfg.depth))
                .collect::<Result<_>>()?,
        })
    }
}

/// Samples BEV and image features for every query over the configured
/// frames and fuses the two branches. The scene supplies frame 0; later
/// frames are re-rendered at their timestamp offsets.
pub fn sample_scene(
    cfg: &PipelineConfig,
    scene: &Scene,
    queries: &[Query],
    provider: &dyn ParameterProvider,
) -> Result<SampledFeatures> {
    let first = FrameInputs::from_scene(cfg, scene)?;
    sample_frames(cfg, scene, first, queries, provider)
}

/// Like [`sample_scene`] with caller-supplied inputs for frame 0.
pub fn sample_frames(
    cfg: &PipelineConfig,
    scene: &Scene,
    first: FrameInputs,
    queries: &[Query],
    provider: &dyn ParameterProvider,
) -> Result<SampledFeatures> {
    let t = cfg.sampling.frames;
    if scene.timestamps.len() < t {
        return Err(Error::invariant(format!(
            "sampling uses {t} frames but the scene has {} timestamps",
            scene.timestamps.len()
        )));
    }
    let stamps = &scene.timestamps[..t];
    let segments = query_segments(cfg, queries)?;
    let mut frames = vec![first];
    for &ts in &stamps[1..] {
        frames.push(FrameInputs::from_scene(cfg, &scene.at_offset(ts - stamps[0])?)?);
    }
    let mut bev_maps = Vec::with_capacity(t);
    let mut img_maps = Vec::with_capacity(t);
    let mut cams = Vec::with_capacity(t);
    for f in frames {
        bev_maps.push(lift_splat_multi(&f.cameras, &f.features, &f.depths, &cfg.depth, &cfg.bev)?);
        img_maps.push(f.features);
        cams.push(f.cameras);
    }
    let s = &cfg.sampling;
    let bev_points = generate_sampling_points(queries, &segments, stamps, s.k_bev, s.offsets, Branch::Bev, provider)?;
    let image_points =
        generate_sampling_points(queries, &segments, stamps, s.k_img, s.offsets, Branch::Image, provider)?;
    let bev = sample_bev(queries, &bev_points, &bev_maps, provider)?;
    let image = sample_images(queries, &image_points, &img_maps, &cams, provider)?;
    let fused = fuse(&bev, &image, provider)?;
    Ok(SampledFeatures {
        bev_points,
        image_points,
        bev,
        image,
        fused,
    })
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads one JSON document per non-blank line. Parse failures name the line.
pub fn read_jsonl<T: DeserializeOwned>(r: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::UniformProvider;
    use crate::sim::generate_scene;

    #[test]
    fn default_pipeline_has_900_queries() {
        let cfg = PipelineConfig::default();
        let scene = generate_scene(cfg.seed, &cfg.scene).unwrap();
        let qs = build_queries(&cfg, &scene.boxes2d, &scene.cameras).unwrap();
        assert_eq!(qs.len(), 900);
        assert_eq!(qs.iter().filter(|q| q.origin == QueryOrigin::Base).count(), 810);
        let segs = query_segments(&cfg, &qs).unwrap();
        assert_eq!(segs.len(), 900);
    }

    #[test]
    fn jsonl_round_trip() {
        let cfg = PipelineConfig::default();
        let qs = init_base_queries(&cfg.layout, &cfg.template, 2).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &qs).unwrap();
        let back: Vec<Query> = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, qs);
        let bad = read_jsonl::<Query>(&b"{\"theta\": 1}\n"[..]);
        assert!(matches!(bad, Err(Error::Format(_))));
    }

    #[test]
    fn two_frame_sampling() {
        let mut cfg = PipelineConfig::default();
        cfg.scene.timestamps = vec![0.0, -0.5];
        cfg.sampling.frames = 2;
        let scene = generate_scene(3, &cfg.scene).unwrap();
        let qs = build_queries(&cfg, &scene.boxes2d, &scene.cameras).unwrap();
        let out = sample_scene(&cfg, &scene, &qs[..50], &UniformProvider).unwrap();
        assert_eq!(out.bev_points.len(), 50 * 2 * 5 * 4);
        assert_eq!(out.fused.len(), 50);
        assert!(out.fused.iter().all(|f| f.len() == scene.objects.len()));
    }
}
