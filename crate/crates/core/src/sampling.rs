//! Adaptive ray points, sampling-point generation and weighted bilinear
//! feature sampling from BEV and multi-view image features.
//!
//! The learned layers that would emit offsets and attention weights are
//! abstracted behind [`ParameterProvider`]. Provider contract:
//!
//! - `ray_point_offsets`: `K` along-ray offsets in meters, one per ray point.
//! - `sampling_offsets`: `P` offsets per ray point in the query box frame,
//!   in units of the half extents (`x` along the heading scaled by `l/2`,
//!   `y` lateral scaled by `w/2`, `z` scaled by `h/2`).
//! - `location_weights`: `K·P` non-negative weights per query and frame,
//!   summing to one.
//! - `frame_weights`: `T` non-negative weights `w_t`.
//! - `view_scale_weights`: `L` non-negative weights per view, summing to one.
//! - `fuse`: linear map of the concatenated BEV and image features.
//!
//! Every method must be a pure function of its arguments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polar_to_cartesian, warp_point, Camera, CartesianPoint, PolarPoint};
use crate::lift_splat::{BevFeatureMap, ImageFeatureMap};
use crate::query::{Query, RaySegment};

const NORM_TOL: f64 = 1e-6;

/// Which feature source a set of sampling points serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Bev,
    Image,
}

pub trait ParameterProvider {
    fn ray_point_offsets(&self, query_index: usize, query: &Query, branch: Branch, k: usize) -> Vec<f64>;

    fn sampling_offsets(
        &self,
        query_index: usize,
        query: &Query,
        branch: Branch,
        ray_point: usize,
        p: usize,
    ) -> Vec<[f64; 3]>;

    fn location_weights(&self, query_index: usize, query: &Query, branch: Branch, frame: usize, count: usize)
        -> Vec<f64>;

    fn frame_weights(&self, query_index: usize, query: &Query, frames: usize) -> Vec<f64>;

    fn view_scale_weights(&self, query_index: usize, query: &Query, frame: usize, view: usize, scales: usize)
        -> Vec<f64>;

    /// Defaults to the average of the two branches.
    fn fuse(&self, bev: &[f64], img: &[f64]) -> Vec<f64> {
        bev.iter().zip(img).map(|(b, i)| 0.5 * (b + i)).collect()
    }
}

/// Zero offsets and uniform weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformProvider;

impl ParameterProvider for UniformProvider {
    fn ray_point_offsets(&self, _: usize, _: &Query, _: Branch, k: usize) -> Vec<f64> {
        vec![0.0; k]
    }

    fn sampling_offsets(&self, _: usize, _: &Query, _: Branch, _: usize, p: usize) -> Vec<[f64; 3]> {
        vec![[0.0; 3]; p]
    }

    fn location_weights(&self, _: usize, _: &Query, _: Branch, _: usize, count: usize) -> Vec<f64> {
        vec![1.0 / count as f64; count]
    }

    fn frame_weights(&self, _: usize, _: &Query, frames: usize) -> Vec<f64> {
        vec![1.0; frames]
    }

    fn view_scale_weights(&self, _: usize, _: &Query, _: usize, _: usize, scales: usize) -> Vec<f64> {
        vec![1.0 / scales as f64; scales]
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic pseudo-random parameters hashed from the seed and indices.
/// Offsets are uniform in `[-offset_scale, offset_scale]`; weights are
/// softmax-normalized random logits.
#[derive(Debug, Clone, Copy)]
pub struct SeededProvider {
    pub seed: u64,
    pub offset_scale: f64,
}

impl SeededProvider {
    fn unit(&self, tag: u64, idx: &[usize]) -> f64 {
        let mut h = splitmix(self.seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        for &i in idx {
            h = splitmix(h ^ i as u64);
        }
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn signed(&self, tag: u64, idx: &[usize]) -> f64 {
        (2.0 * self.unit(tag, idx) - 1.0) * self.offset_scale
    }

    fn softmax(&self, tag: u64, idx: &[usize], count: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..count)
            .map(|c| {
                let mut key = idx.to_vec();
                key.push(c);
                2.0 * self.unit(tag, &key)
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }
}

fn branch_tag(branch: Branch) -> usize {
    match branch {
        Branch::Bev => 0,
        Branch::Image => 1,
    }
}

impl ParameterProvider for SeededProvider {
    fn ray_point_offsets(&self, n: usize, _: &Query, branch: Branch, k: usize) -> Vec<f64> {
        (0..k).map(|i| self.signed(1, &[n, branch_tag(branch), i])).collect()
    }

    fn sampling_offsets(&self, n: usize, _: &Query, branch: Branch, ray_point: usize, p: usize) -> Vec<[f64; 3]> {
        (0..p)
            .map(|j| {
                let b = branch_tag(branch);
                [
                    self.signed(2, &[n, b, ray_point, j, 0]),
                    self.signed(2, &[n, b, ray_point, j, 1]),
                    self.signed(2, &[n, b, ray_point, j, 2]),
                ]
            })
            .collect()
    }

    fn location_weights(&self, n: usize, _: &Query, branch: Branch, frame: usize, count: usize) -> Vec<f64> {
        self.softmax(3, &[n, branch_tag(branch), frame], count)
    }

    fn frame_weights(&self, n: usize, _: &Query, frames: usize) -> Vec<f64> {
        self.softmax(4, &[n], frames).into_iter().map(|w| w * frames as f64).collect()
    }

    fn view_scale_weights(&self, n: usize, _: &Query, frame: usize, view: usize, scales: usize) -> Vec<f64> {
        self.softmax(5, &[n, frame, view], scales)
    }
}

/// A `C × 2C` fusion matrix applied to `[bev; img]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFusion {
    channels: usize,
    matrix: Vec<f64>,
}

impl LinearFusion {
    pub fn new(channels: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != channels * 2 * channels {
            return Err(Error::Shape(format!(
                "fusion matrix for {channels} channels needs {} values, got {}",
                2 * channels * channels,
                matrix.len()
            )));
        }
        Ok(LinearFusion { channels, matrix })
    }

    /// Selects one branch unchanged.
    pub fn selector(channels: usize, branch: Branch) -> Self {
        let mut m = vec![0.0; 2 * channels * channels];
        let shift = match branch {
            Branch::Bev => 0,
            Branch::Image => channels,
        };
        for c in 0..channels {
            m[c * 2 * channels + shift + c] = 1.0;
        }
        LinearFusion { channels, matrix: m }
    }

    pub fn apply(&self, bev: &[f64], img: &[f64]) -> Vec<f64> {
        let c = self.channels;
        (0..c)
            .map(|r| {
                let row = &self.matrix[r * 2 * c..(r + 1) * 2 * c];
                bev.iter().chain(img).zip(row).map(|(x, w)| x * w).sum()
            })
            .collect()
    }
}

/// Wraps a provider and replaces its fusion with a fixed matrix.
#[derive(Debug, Clone)]
pub struct WithFusion<P> {
    pub inner: P,
    pub fusion: LinearFusion,
}

impl<P: ParameterProvider> ParameterProvider for WithFusion<P> {
    fn ray_point_offsets(&self, n: usize, q: &Query, b: Branch, k: usize) -> Vec<f64> {
        self.inner.ray_point_offsets(n, q, b, k)
    }

    fn sampling_offsets(&self, n: usize, q: &Query, b: Branch, rp: usize, p: usize) -> Vec<[f64; 3]> {
        self.inner.sampling_offsets(n, q, b, rp, p)
    }

    fn location_weights(&self, n: usize, q: &Query, b: Branch, t: usize, count: usize) -> Vec<f64> {
        self.inner.location_weights(n, q, b, t, count)
    }

    fn frame_weights(&self, n: usize, q: &Query, frames: usize) -> Vec<f64> {
        self.inner.frame_weights(n, q, frames)
    }

    fn view_scale_weights(&self, n: usize, q: &Query, t: usize, v: usize, s: usize) -> Vec<f64> {
        self.inner.view_scale_weights(n, q, t, v, s)
    }

    fn fuse(&self, bev: &[f64], img: &[f64]) -> Vec<f64> {
        self.fusion.apply(bev, img)
    }
}

fn check_group(weights: &[f64], expected: usize, normalized: bool, what: &str) -> Result<()> {
    if weights.len() != expected {
        return Err(Error::Shape(format!("{what}: expected {expected} weights, got {}", weights.len())));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invariant(format!("{what}: weights must be finite and non-negative")));
    }
    if normalized {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::invariant(format!("{what}: weights sum to {sum}, expected 1")));
        }
    }
    Ok(())
}

/// One sampling location with its provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPoint {
    #[serde(flatten)]
    pub position: CartesianPoint,
    pub query: usize,
    pub frame: usize,
    pub ray_point: usize,
    pub offset: usize,
    pub weight: f64,
}

/// `K` adaptive ray points: inclusive linspace over the segment (midpoint when
/// `K = 1`), shifted by provider offsets and clamped back into the segment.
pub fn ray_points(
    query_index: usize,
    query: &Query,
    segment: &RaySegment,
    k: usize,
    branch: Branch,
    provider: &dyn ParameterProvider,
) -> Result<Vec<PolarPoint>> {
    if k == 0 {
        return Err(Error::invariant("ray point count K must be >= 1"));
    }
    let offsets = provider.ray_point_offsets(query_index, query, branch, k);
    if offsets.len() != k {
        return Err(Error::Shape(format!("provider returned {} ray-point offsets, expected {k}", offsets.len())));
    }
    if offsets.iter().any(|o| !o.is_finite()) {
        return Err(Error::NonFinite("ray-point offsets"));
    }
    Ok((0..k)
        .map(|i| {
            let base = if k == 1 {
                0.5 * (segment.d_lo + segment.d_hi)
            } else {
                segment.d_lo + segment.length() * i as f64 / (k - 1) as f64
            };
            PolarPoint {
                theta: segment.theta,
                depth: (base + offsets[i]).clamp(segment.d_lo, segment.d_hi),
                z: query.bbox.z,
            }
        })
        .collect())
}

/// Generates `N·T·K·P` sampling points ordered by query, frame, ray point and
/// offset. `frames[0]` is the reference timestamp.
pub fn generate_sampling_points(
    queries: &[Query],
    segments: &[RaySegment],
    frames: &[f64],
    k: usize,
    p: usize,
    branch: Branch,
    provider: &dyn ParameterProvider,
) -> Result<Vec<SamplingPoint>> {
    if queries.len() != segments.len() {
        return Err(Error::Shape(format!(
            "{} queries but {} segments",
            queries.len(),
            segments.len()
        )));
    }
    if frames.is_empty() {
        return Err(Error::invariant("at least one frame timestamp is required"));
    }
    if p == 0 {
        return Err(Error::invariant("sampling offset count P must be >= 1"));
    }
    let t0 = frames[0];
    let mut out = Vec::with_capacity(queries.len() * frames.len() * k * p);
    for (n, (q, seg)) in queries.iter().zip(segments).enumerate() {
        let centers: Vec<CartesianPoint> = ray_points(n, q, seg, k, branch, provider)?
            .iter()
            .map(polar_to_cartesian)
            .collect::<Result<_>>()?;
        let (s, c) = q.bbox.yaw.sin_cos();
        let mut deltas = Vec::with_capacity(k * p);
        for ki in 0..k {
            let offs = provider.sampling_offsets(n, q, branch, ki, p);
            if offs.len() != p {
                return Err(Error::Shape(format!("provider returned {} sampling offsets, expected {p}", offs.len())));
            }
            for o in offs {
                let (lx, ly, lz) = (o[0] * 0.5 * q.bbox.l, o[1] * 0.5 * q.bbox.w, o[2] * 0.5 * q.bbox.h);
                deltas.push([c * lx - s * ly, s * lx + c * ly, lz]);
            }
        }
        if deltas.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sampling offsets"));
        }
        for (t, &ts) in frames.iter().enumerate() {
            let weights = provider.location_weights(n, q, branch, t, k * p);
            check_group(&weights, k * p, true, "location weights")?;
            let dt = ts - t0;
            for (ki, center) in centers.iter().enumerate() {
                let warped = warp_point(center, [q.bbox.vx, q.bbox.vy], dt);
                for pi in 0..p {
                    let d = deltas[ki * p + pi];
                    out.push(SamplingPoint {
                        position: CartesianPoint::new(warped.x + d[0], warped.y + d[1], warped.z + d[2]),
                        query: n,
                        frame: t,
                        ray_point: ki,
                        offset: pi,
                        weight: weights[ki * p + pi],
                    });
                }
            }
        }
    }
    Ok(out)
}

fn frame_weight_table(queries: &[Query], frames: usize, provider: &dyn ParameterProvider) -> Result<Vec<Vec<f64>>> {
    queries
        .iter()
        .enumerate()
        .map(|(n, q)| {
            let w = provider.frame_weights(n, q, frames);
            check_group(&w, frames, false, "frame weights")?;
            Ok(w)
        })
        .collect()
}

fn check_point(pt: &SamplingPoint, queries: usize, frames: usize) -> Result<()> {
    if pt.query >= queries {
        return Err(Error::OutOfRange {
            what: "sampling point query",
            index: pt.query,
            limit: queries,
        });
    }
    if pt.frame >= frames {
        return Err(Error::Shape(format!(
            "sampling point refers to frame {} but only {frames} frames were supplied",
            pt.frame
        )));
    }
    Ok(())
}

/// Weighted multi-frame BEV sampling:
/// `f = (1/T) Σ_t w_t Σ_j a_{t,j} · bilinear(F_t, p_{t,j})`.
pub fn sample_bev(
    queries: &[Query],
    points: &[SamplingPoint],
    bev_maps: &[BevFeatureMap],
    provider: &dyn ParameterProvider,
) -> Result<Vec<Vec<f64>>> {
    let t_count = bev_maps.len();
    if t_count == 0 {
        return Err(Error::Shape("no BEV maps supplied".into()));
    }
    let channels = bev_maps[0].channels();
    if bev_maps.iter().any(|m| m.channels() != channels) {
        return Err(Error::Shape("BEV maps disagree on channel count".into()));
    }
    let frame_w = frame_weight_table(queries, t_count, provider)?;
    let mut out = vec![vec![0.0; channels]; queries.len()];
    for pt in points {
        check_point(pt, queries.len(), t_count)?;
        let scale = frame_w[pt.query][pt.frame] * pt.weight / t_count as f64;
        bev_maps[pt.frame].sample_into(pt.position.x, pt.position.y, scale, &mut out[pt.query]);
    }
    Ok(out)
}

/// Multi-view, multi-scale image sampling. Each point's feature is averaged
/// over the views where it projects validly; points seen by no view add zero.
///
/// `feats[t]` holds every `(view, scale)` map of frame `t`; `cams[t][view]`
/// is that frame's camera expressed in the reference ego frame.
pub fn sample_images(
    queries: &[Query],
    points: &[SamplingPoint],
    feats: &[Vec<ImageFeatureMap>],
    cams: &[Vec<Camera>],
    provider: &dyn ParameterProvider,
) -> Result<Vec<Vec<f64>>> {
    let t_count = feats.len();
    if t_count == 0 {
        return Err(Error::Shape("no image features supplied".into()));
    }
    if cams.len() < t_count {
        return Err(Error::invariant(format!(
            "cameras supplied for {} frames, features for {t_count}",
            cams.len()
        )));
    }
    let channels = feats[0].first().map_or(0, |f| f.channels());
    // per frame, per view: scale-ordered maps
    let mut by_view: Vec<Vec<Vec<&ImageFeatureMap>>> = Vec::with_capacity(t_count);
    for (t, maps) in feats.iter().enumerate() {
        let views = cams[t].len();
        let mut table: Vec<Vec<&ImageFeatureMap>> = vec![Vec::new(); views];
        for m in maps {
            if m.channels() != channels {
                return Err(Error::Shape("image feature maps disagree on channel count".into()));
            }
            let slot = table.get_mut(m.view).ok_or_else(|| {
                Error::invariant(format!("missing camera for view {} in frame {t}", m.view))
            })?;
            slot.push(m);
        }
        for (view, maps) in table.iter_mut().enumerate() {
            if maps.is_empty() {
                return Err(Error::Shape(format!("no feature maps for view {view} in frame {t}")));
            }
            maps.sort_by_key(|m| m.scale);
        }
        by_view.push(table);
    }

    let mut out = vec![vec![0.0; channels]; queries.len()];
    let mut point_feat = vec![0.0; channels];
    let mut view_feat = vec![0.0; channels];
    for pt in points {
        check_point(pt, queries.len(), t_count)?;
        let q = &queries[pt.query];
        point_feat.iter_mut().for_each(|v| *v = 0.0);
        let mut valid_views = 0usize;
        for (view, cam) in cams[pt.frame].iter().enumerate() {
            let ip = cam.project_point(&pt.position);
            if !ip.valid {
                continue;
            }
            valid_views += 1;
            let maps = &by_view[pt.frame][view];
            let w = provider.view_scale_weights(pt.query, q, pt.frame, view, maps.len());
            check_group(&w, maps.len(), true, "view-scale weights")?;
            view_feat.iter_mut().for_each(|v| *v = 0.0);
            for (m, wl) in maps.iter().zip(&w) {
                m.sample_pixel_into(ip.u, ip.v, *wl, &mut view_feat);
            }
            for (a, b) in point_feat.iter_mut().zip(&view_feat) {
                *a += b;
            }
        }
        if valid_views == 0 {
            continue;
        }
        let scale = pt.weight / (valid_views as f64 * t_count as f64);
        for (o, v) in out[pt.query].iter_mut().zip(&point_feat) {
            *o += scale * v;
        }
    }
    Ok(out)
}

/// Fuses the BEV and image aggregates of every query.
pub fn fuse(bev: &[Vec<f64>], img: &[Vec<f64>], provider: &dyn ParameterProvider) -> Result<Vec<Vec<f64>>> {
    if bev.len() != img.len() {
        return Err(Error::Shape(format!("{} BEV aggregates but {} image aggregates", bev.len(), img.len())));
    }
    bev.iter()
        .zip(img)
        .map(|(b, i)| {
            if b.len() != i.len() {
                return Err(Error::Shape("BEV and image aggregates differ in width".into()));
            }
            Ok(provider.fuse(b, i))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lift_splat::BevGridSpec;
    use crate::query::{init_base_queries, ray_segments, BoxTemplate, QueryOrigin, RayLayout};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn query(theta: f64, depth: f64) -> Query {
        let t = BoxTemplate::default();
        Query {
            bbox: crate::query::PolarBox {
                theta,
                depth,
                z: t.z,
                w: t.w,
                l: t.l,
                h: t.h,
                yaw: 0.3,
                vx: 0.0,
                vy: 0.0,
            },
            ray_id: 0,
            slot: 0,
            origin: QueryOrigin::Base,
            feature: vec![],
        }
    }

    struct FixedOffsets(Vec<f64>);

    impl ParameterProvider for FixedOffsets {
        fn ray_point_offsets(&self, _: usize, _: &Query, _: Branch, _: usize) -> Vec<f64> {
            self.0.clone()
        }
        fn sampling_offsets(&self, n: usize, q: &Query, b: Branch, rp: usize, p: usize) -> Vec<[f64; 3]> {
            UniformProvider.sampling_offsets(n, q, b, rp, p)
        }
        fn location_weights(&self, n: usize, q: &Query, b: Branch, t: usize, c: usize) -> Vec<f64> {
            UniformProvider.location_weights(n, q, b, t, c)
        }
        fn frame_weights(&self, n: usize, q: &Query, f: usize) -> Vec<f64> {
            UniformProvider.frame_weights(n, q, f)
        }
        fn view_scale_weights(&self, n: usize, q: &Query, t: usize, v: usize, s: usize) -> Vec<f64> {
            UniformProvider.view_scale_weights(n, q, t, v, s)
        }
    }

    #[test]
    fn ray_point_examples() {
        let q = query(0.5, 16.25);
        let seg = RaySegment {
            theta: 0.5,
            d_lo: 0.0,
            d_hi: 32.5,
        };
        let pts = ray_points(0, &q, &seg, 3, Branch::Bev, &UniformProvider).unwrap();
        assert_eq!(pts.iter().map(|p| p.depth).collect::<Vec<_>>(), vec![0.0, 16.25, 32.5]);
        assert!(pts.iter().all(|p| p.theta == 0.5 && p.z == q.bbox.z));
        let pts = ray_points(0, &q, &seg, 1, Branch::Bev, &UniformProvider).unwrap();
        assert_eq!(pts[0].depth, 16.25);
        let pts = ray_points(0, &q, &seg, 2, Branch::Bev, &FixedOffsets(vec![-5.0, 100.0])).unwrap();
        assert_eq!((pts[0].depth, pts[1].depth), (0.0, 32.5));
        assert!(ray_points(0, &q, &seg, 0, Branch::Bev, &UniformProvider).is_err());
    }

    #[test]
    fn identity_configuration() {
        let layout = RayLayout {
            num_rays: 8,
            depth_slots: 3,
            fov: TAU,
            max_depth: 65.0,
        };
        let qs = init_base_queries(&layout, &BoxTemplate::default(), 0).unwrap();
        let segs = ray_segments(&layout).unwrap();
        let pts = generate_sampling_points(&qs, &segs, &[0.0], 5, 1, Branch::Bev, &UniformProvider).unwrap();
        assert_eq!(pts.len(), 8 * 3 * 5);
        for pt in &pts {
            let rp = ray_points(pt.query, &qs[pt.query], &segs[pt.query], 5, Branch::Bev, &UniformProvider)
                .unwrap()[pt.ray_point];
            assert_eq!(pt.position, polar_to_cartesian(&rp).unwrap());
            assert_eq!(pt.weight, 0.2);
        }
    }

    #[test]
    fn velocity_warp_shifts_frame() {
        let mut q = query(0.2, 30.0);
        q.bbox.vx = 2.0;
        let seg = RaySegment {
            theta: 0.2,
            d_lo: 25.0,
            d_hi: 35.0,
        };
        let provider = SeededProvider {
            seed: 11,
            offset_scale: 0.5,
        };
        let pts = generate_sampling_points(&[q], &[seg], &[0.0, -0.5], 3, 4, Branch::Image, &provider).unwrap();
        let (f0, f1): (Vec<&SamplingPoint>, Vec<&SamplingPoint>) = pts.iter().partition(|p| p.frame == 0);
        assert_eq!(f0.len(), 12);
        for (a, b) in f0.iter().zip(&f1) {
            assert_eq!((a.ray_point, a.offset), (b.ray_point, b.offset));
            assert_abs_diff_eq!(b.position.x - a.position.x, -1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(b.position.y - a.position.y, 0.0, epsilon = 1e-12);
            assert_eq!(b.position.z, a.position.z);
        }
    }

    #[test]
    fn offsets_follow_box_frame() {
        struct Forward;
        impl ParameterProvider for Forward {
            fn ray_point_offsets(&self, _: usize, _: &Query, _: Branch, k: usize) -> Vec<f64> {
                vec![0.0; k]
            }
            fn sampling_offsets(&self, _: usize, _: &Query, _: Branch, _: usize, p: usize) -> Vec<[f64; 3]> {
                vec![[1.0, 0.0, 1.0]; p]
            }
            fn location_weights(&self, _: usize, _: &Query, _: Branch, _: usize, c: usize) -> Vec<f64> {
                vec![1.0 / c as f64; c]
            }
            fn frame_weights(&self, _: usize, _: &Query, f: usize) -> Vec<f64> {
                vec![1.0; f]
            }
            fn view_scale_weights(&self, _: usize, _: &Query, _: usize, _: usize, s: usize) -> Vec<f64> {
                vec![1.0 / s as f64; s]
            }
        }
        let mut q = query(0.0, 10.0);
        q.bbox.yaw = std::f64::consts::FRAC_PI_2;
        let seg = RaySegment {
            theta: 0.0,
            d_lo: 10.0,
            d_hi: 10.0 + 1e-9,
        };
        let pts = generate_sampling_points(&[q.clone()], &[seg], &[0.0], 1, 1, Branch::Bev, &Forward).unwrap();
        // heading +y: a forward offset of l/2 moves the point along +y
        assert_abs_diff_eq!(pts[0].position.y, 0.5 * q.bbox.l, epsilon = 1e-9);
        assert_abs_diff_eq!(pts[0].position.z, q.bbox.z + 0.5 * q.bbox.h, epsilon = 1e-12);
    }

    #[test]
    fn constant_bev_map_is_reproduced() {
        let spec = BevGridSpec::new(20.0, 16).unwrap();
        let n = 16 * 16;
        let data: Vec<f64> = (0..n).flat_map(|_| [3.0, -1.5]).collect();
        let bev = BevFeatureMap::from_data(spec, 2, data).unwrap();
        let q = query(1.0, 8.0);
        let seg = RaySegment {
            theta: 1.0,
            d_lo: 4.0,
            d_hi: 12.0,
        };
        let provider = SeededProvider {
            seed: 5,
            offset_scale: 0.3,
        };
        let pts = generate_sampling_points(&[q.clone()], &[seg], &[0.0], 5, 4, Branch::Bev, &provider).unwrap();
        let f = sample_bev(&[q], &pts, &[bev], &UniformProvider).unwrap();
        assert_abs_diff_eq!(f[0][0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[0][1], -1.5, epsilon = 1e-12);
    }

    #[test]
    fn bev_frame_count_mismatch() {
        let spec = BevGridSpec::new(20.0, 4).unwrap();
        let bev = BevFeatureMap::zeros(spec, 1);
        let q = query(1.0, 8.0);
        let pt = SamplingPoint {
            position: CartesianPoint::new(0.0, 0.0, 0.0),
            query: 0,
            frame: 1,
            ray_point: 0,
            offset: 0,
            weight: 1.0,
        };
        assert!(sample_bev(&[q], &[pt], &[bev], &UniformProvider).is_err());
    }

    #[test]
    fn image_sample_at_cell_center() {
        let cam = Camera::facing(0.0, [0.0, 0.0, 1.5], 560.0, 560.0, 352.0, 128.0, 704, 256).unwrap();
        let (h, w) = (16, 44);
        let data: Vec<f64> = (0..h * w).map(|i| i as f64).collect();
        let feat = ImageFeatureMap::new(0, 0, h, w, 1, 16, data).unwrap();
        let (u, v) = feat.cell_center_pixel(9, 30);
        let pos = cam.back_project(u, v, 12.0);
        let q = query(0.0, 10.0);
        let pt = SamplingPoint {
            position: pos,
            query: 0,
            frame: 0,
            ray_point: 0,
            offset: 0,
            weight: 1.0,
        };
        let f = sample_images(&[q.clone()], &[pt], &[vec![feat.clone()]], &[vec![cam.clone()]], &UniformProvider)
            .unwrap();
        assert_abs_diff_eq!(f[0][0], (9 * 44 + 30) as f64, epsilon = 1e-9);

        let behind = SamplingPoint {
            position: CartesianPoint::new(-10.0, 0.0, 1.0),
            ..pt
        };
        let f = sample_images(&[q.clone()], &[behind], &[vec![feat.clone()]], &[vec![cam.clone()]], &UniformProvider)
            .unwrap();
        assert_eq!(f[0][0], 0.0);

        // feature map for a view without a camera
        let orphan = ImageFeatureMap::zeros(1, 0, h, w, 1, 16).unwrap();
        assert!(sample_images(&[q], &[pt], &[vec![feat, orphan]], &[vec![cam]], &UniformProvider).is_err());
    }

    #[test]
    fn fusion_examples() {
        let f = vec![vec![1.0, -2.0, 3.5]];
        assert_eq!(fuse(&f, &f, &UniformProvider).unwrap(), f);
        let zero = vec![vec![0.0; 3]];
        assert_eq!(fuse(&f, &zero, &UniformProvider).unwrap(), vec![vec![0.5, -1.0, 1.75]]);
        let img = vec![vec![7.0, 8.0, 9.0]];
        for (branch, expected) in [(Branch::Bev, &f), (Branch::Image, &img)] {
            let p = WithFusion {
                inner: UniformProvider,
                fusion: LinearFusion::selector(3, branch),
            };
            assert_eq!(&fuse(&f, &img, &p).unwrap(), expected);
        }
        assert!(LinearFusion::new(2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn bad_provider_weights_rejected() {
        struct Bad;
        impl ParameterProvider for Bad {
            fn ray_point_offsets(&self, _: usize, _: &Query, _: Branch, k: usize) -> Vec<f64> {
                vec![0.0; k]
            }
            fn sampling_offsets(&self, _: usize, _: &Query, _: Branch, _: usize, p: usize) -> Vec<[f64; 3]> {
                vec![[0.0; 3]; p]
            }
            fn location_weights(&self, _: usize, _: &Query, _: Branch, _: usize, c: usize) -> Vec<f64> {
                vec![1.0; c]
            }
            fn frame_weights(&self, _: usize, _: &Query, f: usize) -> Vec<f64> {
                vec![1.0; f]
            }
            fn view_scale_weights(&self, _: usize, _: &Query, _: usize, _: usize, s: usize) -> Vec<f64> {
                vec![1.0; s]
            }
        }
        let q = query(0.0, 10.0);
        let seg = RaySegment {
            theta: 0.0,
            d_lo: 5.0,
            d_hi: 15.0,
        };
        assert!(generate_sampling_points(&[q], &[seg], &[0.0], 3, 4, Branch::Bev, &Bad).is_err());
    }

    proptest! {
        #[test]
        fn cardinality(n in 1usize..6, t in 1usize..4, k in 1usize..6, p in 1usize..5, seed in any::<u64>()) {
            let layout = RayLayout { num_rays: n, depth_slots: 1, fov: TAU, max_depth: 65.0 };
            let qs = init_base_queries(&layout, &BoxTemplate::default(), 0).unwrap();
            let segs = ray_segments(&layout).unwrap();
            let frames: Vec<f64> = (0..t).map(|i| -0.5 * i as f64).collect();
            let provider = SeededProvider { seed, offset_scale: 1.0 };
            let pts = generate_sampling_points(&qs, &segs, &frames, k, p, Branch::Bev, &provider).unwrap();
            prop_assert_eq!(pts.len(), n * t * k * p);
            for (i, pt) in pts.iter().enumerate() {
                prop_assert_eq!(i, ((pt.query * t + pt.frame) * k + pt.ray_point) * p + pt.offset);
            }
        }

        #[test]
        fn seeded_weights_are_normalized(seed in any::<u64>(), count in 1usize..30) {
            let provider = SeededProvider { seed, offset_scale: 1.0 };
            let q = query(0.0, 10.0);
            let w = provider.location_weights(3, &q, Branch::Image, 1, count);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|v| *v >= 0.0));
        }
    }
}
