//! Scene-level experiments: query dispersion in image space, foreground-ray
//! coverage, identity sampling and BEV occupancy contrast.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth::DepthBinSpec;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Camera, CartesianPoint};
use crate::lift_splat::{lift_splat_multi, BevGridSpec, ImageFeatureMap};
use crate::matching::GroundTruth;
use crate::query::{
    expand_boxes_full_height, select_foreground_rays, CategoryRaySpec, ForegroundRay, MidpointProbe, Query,
    RaySegment,
};
use crate::sampling::{generate_sampling_points, sample_images, Branch, ParameterProvider};

use super::Scene;

/// Close pairs and total pairs among the valid projections of `points`,
/// summed over views.
pub fn same_view_close_pairs(points: &[CartesianPoint], cams: &[Camera], threshold_px: f64) -> (u64, u64) {
    let (mut close, mut total) = (0u64, 0u64);
    for cam in cams {
        let uv: Vec<(f64, f64)> = points
            .iter()
            .map(|p| cam.project_point(p))
            .filter(|ip| ip.valid)
            .map(|ip| (ip.u, ip.v))
            .collect();
        for i in 0..uv.len() {
            for j in i + 1..uv.len() {
                total += 1;
                if (uv[i].0 - uv[j].0).hypot(uv[i].1 - uv[j].1) <= threshold_px {
                    close += 1;
                }
            }
        }
    }
    (close, total)
}

/// `n` points of a square lattice clipped to the disc of radius
/// `max_depth`, nearest to the origin first. The lattice spacing starts at
/// the equal-area value and shrinks until enough points fit. `offset` shifts
/// the lattice by a fraction of its spacing.
pub fn grid_layout(n: usize, max_depth: f64, z: f64, offset: [f64; 2]) -> Result<Vec<CartesianPoint>> {
    if n == 0 || !(max_depth > 0.0) {
        return Err(Error::invariant("grid layout needs n >= 1 and a positive radius"));
    }
    let mut s = (std::f64::consts::PI * max_depth * max_depth / n as f64).sqrt();
    loop {
        let half = (max_depth / s).ceil() as i64 + 2;
        let mut pts: Vec<(f64, f64, f64)> = Vec::new();
        for i in -half..=half {
            for j in -half..=half {
                let (x, y) = ((i as f64 + offset[0]) * s, (j as f64 + offset[1]) * s);
                let r = x.hypot(y);
                if r <= max_depth {
                    pts.push((r, x, y));
                }
            }
        }
        if pts.len() >= n {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            return Ok(pts.iter().take(n).map(|&(_, x, y)| CartesianPoint::new(x, y, z)).collect());
        }
        s *= 0.995;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionReport {
    pub threshold_px: f64,
    pub num_queries: usize,
    pub radial_close_pairs: u64,
    pub radial_pairs: u64,
    pub radial_fraction: f64,
    pub grid_close_pairs: u64,
    pub grid_pairs: u64,
    pub grid_fraction: f64,
    /// `radial_fraction / grid_fraction`, absent when the grid fraction is 0.
    pub ratio: Option<f64>,
}

fn fraction(close: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        close as f64 / total as f64
    }
}

/// Compares the pooled same-view close-pair fraction of two equal-budget
/// query layouts.
pub fn dispersion_experiment(
    cams: &[Camera],
    radial: &[CartesianPoint],
    grid: &[CartesianPoint],
    threshold_px: f64,
) -> Result<DispersionReport> {
    if radial.len() != grid.len() {
        return Err(Error::invariant(format!(
            "layouts need equal budgets ({} radial vs {} grid)",
            radial.len(),
            grid.len()
        )));
    }
    let (rc, rt) = same_view_close_pairs(radial, cams, threshold_px);
    let (gc, gt) = same_view_close_pairs(grid, cams, threshold_px);
    let (rf, gf) = (fraction(rc, rt), fraction(gc, gt));
    Ok(DispersionReport {
        threshold_px,
        num_queries: radial.len(),
        radial_close_pairs: rc,
        radial_pairs: rt,
        radial_fraction: rf,
        grid_close_pairs: gc,
        grid_pairs: gt,
        grid_fraction: gf,
        ratio: (gf > 0.0).then(|| rf / gf),
    })
}

/// Lattice offset drawn from a seed.
pub(crate) fn seeded_offset(seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]
}

impl Scene {
    /// Grid layout of `n` points with a lattice offset derived from the seed.
    pub fn seeded_grid(&self, n: usize, max_depth: f64, z: f64) -> Result<Vec<CartesianPoint>> {
        grid_layout(n, max_depth, z, seeded_offset(self.seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: usize,
    pub total: usize,
    pub recall: f64,
    pub rays: Vec<ForegroundRay>,
}

/// Fraction of ground-truth objects with a selected foreground ray of their
/// category within one candidate spacing `fov / N_c` of their azimuth.
pub fn foreground_coverage(
    scene: &Scene,
    spec: &CategoryRaySpec,
    probe: MidpointProbe,
    budget: Option<usize>,
) -> Result<CoverageReport> {
    let expanded = expand_boxes_full_height(&scene.boxes2d, &scene.cameras)?;
    let rays = select_foreground_rays(spec, &expanded, &scene.cameras, probe, budget)?;
    let mut covered = 0;
    for o in &scene.objects {
        let Some(n) = spec.rays_for(o.category) else {
            continue;
        };
        let tol = probe.fov / n as f64;
        let az = wrap_angle(o.center[1].atan2(o.center[0]));
        let hit = rays.iter().any(|r| {
            let d = (r.theta - az).abs();
            r.category == o.category && d.min(std::f64::consts::TAU - d) <= tol
        });
        if hit {
            covered += 1;
        }
    }
    let total = scene.objects.len();
    Ok(CoverageReport {
        covered,
        total,
        recall: if total == 0 { 1.0 } else { covered as f64 / total as f64 },
        rays,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub eligible: usize,
    pub correct: usize,
    pub accuracy: f64,
}

fn segment_point_distance(seg: &RaySegment, p: &[f64; 3]) -> f64 {
    seg.bev_distance_to(p[0], p[1])
}

/// For every query whose segment passes within `radius` of a car centre,
/// checks that the image-sampled id feature peaks at that car's channel.
/// Uses a single frame at the reference time.
pub fn identity_sampling(
    scene: &Scene,
    queries: &[Query],
    segments: &[RaySegment],
    k: usize,
    p: usize,
    radius: f64,
    provider: &dyn ParameterProvider,
) -> Result<IdentityReport> {
    let points = generate_sampling_points(queries, segments, &[0.0], k, p, Branch::Image, provider)?;
    let feats: Vec<ImageFeatureMap> = (0..scene.cameras.len())
        .map(|v| scene.id_feature_map(v))
        .collect::<Result<_>>()?;
    let sampled = sample_images(queries, &points, &[feats], std::slice::from_ref(&scene.cameras), provider)?;
    let cars: Vec<(usize, &GroundTruth)> = scene
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.category == crate::query::Category::Car)
        .collect();
    let (mut eligible, mut correct) = (0, 0);
    for (seg, f) in segments.iter().zip(&sampled) {
        let near = cars
            .iter()
            .map(|(id, o)| (*id, segment_point_distance(seg, &o.center)))
            .filter(|(_, d)| *d <= radius)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((id, _)) = near else {
            continue;
        };
        eligible += 1;
        let target = f[id];
        if target > 0.0 && f.iter().enumerate().all(|(c, v)| c == id || *v < target) {
            correct += 1;
        }
    }
    Ok(IdentityReport {
        eligible,
        correct,
        accuracy: if eligible == 0 { 1.0 } else { correct as f64 / eligible as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub near_cells: usize,
    pub background_cells: usize,
    pub near_mean: f64,
    pub background_mean: f64,
    /// `near_mean / background_mean`; infinite when the background is empty.
    pub ratio: f64,
}

/// Lifts a constant one-channel feature with the oracle one-hot depth and
/// compares mean per-cell mass near object centres with the rest of the grid.
pub fn occupancy_contrast(scene: &Scene, bins: &DepthBinSpec, grid: &BevGridSpec, radius: f64) -> Result<OccupancyReport> {
    let views = scene.cameras.len();
    let mut feats = Vec::with_capacity(views);
    let mut depths = Vec::with_capacity(views);
    for v in 0..views {
        let r = scene.view(v);
        feats.push(ImageFeatureMap::new(
            v,
            0,
            r.rows,
            r.cols,
            1,
            scene.feature_stride,
            vec![1.0; r.rows * r.cols],
        )?);
        depths.push(scene.depth_distribution(v, bins)?);
    }
    let bev = lift_splat_multi(&scene.cameras, &feats, &depths, bins, grid)?;
    let n = grid.resolution();
    let (mut near_sum, mut near_n, mut bg_sum, mut bg_n) = (0.0, 0usize, 0.0, 0usize);
    for ix in 0..n {
        for iy in 0..n {
            let (x, y) = grid.cell_center(ix, iy);
            let mass = bev.cell(ix, iy)[0];
            let near = scene.objects.iter().any(|o| (o.center[0] - x).hypot(o.center[1] - y) <= radius);
            if near {
                near_sum += mass;
                near_n += 1;
            } else {
                bg_sum += mass;
                bg_n += 1;
            }
        }
    }
    let near_mean = if near_n == 0 { 0.0 } else { near_sum / near_n as f64 };
    let background_mean = if bg_n == 0 { 0.0 } else { bg_sum / bg_n as f64 };
    Ok(OccupancyReport {
        near_cells: near_n,
        background_cells: bg_n,
        near_mean,
        background_mean,
        ratio: if background_mean > 0.0 { near_mean / background_mean } else { f64::INFINITY },
    })
}
