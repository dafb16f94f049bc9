//! Radial query initialization and 2D-guided foreground rays.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polar_to_cartesian, Camera, PolarPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Car,
    Pedestrian,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Car, Category::Pedestrian];

    /// Position of this category in class-probability vectors.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Prior box size `(w, l, h)` in meters.
    pub fn prior_size(self) -> [f64; 3] {
        match self {
            Category::Car => [2.0, 4.5, 1.7],
            Category::Pedestrian => [0.7, 0.7, 1.7],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Car => f.write_str("car"),
            Category::Pedestrian => f.write_str("pedestrian"),
        }
    }
}

/// 3D box in polar form. `yaw` is the heading in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarBox {
    pub theta: f64,
    pub depth: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
}

impl PolarBox {
    pub fn center(&self) -> PolarPoint {
        PolarPoint {
            theta: self.theta,
            depth: self.depth,
            z: self.z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryOrigin {
    Base,
    Foreground,
}

/// A detection hypothesis. Serializes as one flat JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    #[serde(flatten)]
    pub bbox: PolarBox,
    pub ray_id: usize,
    pub slot: usize,
    pub origin: QueryOrigin,
    #[serde(default)]
    pub feature: Vec<f64>,
}

impl Query {
    pub fn validate(&self, max_depth: f64) -> Result<()> {
        let b = &self.bbox;
        let vals = [b.theta, b.depth, b.z, b.w, b.l, b.h, b.yaw, b.vx, b.vy];
        if vals.iter().any(|v| !v.is_finite()) || self.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query"));
        }
        if !(0.0..=max_depth).contains(&b.depth) {
            return Err(Error::invariant(format!(
                "query depth {} outside [0, {max_depth}]",
                b.depth
            )));
        }
        if !(b.w > 0.0 && b.l > 0.0 && b.h > 0.0) {
            return Err(Error::invariant("query box dimensions must be positive"));
        }
        Ok(())
    }
}

/// Polar partition of the perception field: `num_rays` azimuth sectors over
/// `[0, fov)` and `depth_slots` depth segments over `[0, max_depth]`.
///
/// With `fov < 2π` the sector `[fov, 2π)` holds no rays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayLayout {
    pub num_rays: usize,
    pub depth_slots: usize,
    pub fov: f64,
    pub max_depth: f64,
}

impl Default for RayLayout {
    fn default() -> Self {
        RayLayout {
            num_rays: 135,
            depth_slots: 6,
            fov: TAU,
            max_depth: 65.0,
        }
    }
}

impl RayLayout {
    pub fn validate(&self) -> Result<()> {
        if self.num_rays == 0 || self.depth_slots == 0 {
            return Err(Error::invariant("ray layout needs at least one ray and one depth slot"));
        }
        if !(self.fov > 0.0 && self.fov <= TAU) {
            return Err(Error::invariant(format!("ray layout fov {} outside (0, 2π]", self.fov)));
        }
        if !(self.max_depth.is_finite() && self.max_depth > 0.0) {
            return Err(Error::invariant("ray layout max_depth must be positive"));
        }
        Ok(())
    }

    pub fn ray_theta(&self, ray: usize) -> f64 {
        sector_center(ray, self.num_rays, self.fov)
    }

    pub fn slot_depth(&self, slot: usize) -> f64 {
        slot_center(slot, self.depth_slots, self.max_depth)
    }

    pub fn num_queries(&self) -> usize {
        self.num_rays * self.depth_slots
    }
}

fn sector_center(i: usize, n: usize, fov: f64) -> f64 {
    (i as f64 + 0.5) * fov / n as f64
}

fn slot_center(j: usize, n: usize, max_depth: f64) -> f64 {
    (j as f64 + 0.5) * max_depth / n as f64
}

/// Box attributes shared by freshly initialized queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxTemplate {
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Default for BoxTemplate {
    fn default() -> Self {
        let [w, l, h] = Category::Car.prior_size();
        BoxTemplate {
            z: 0.85,
            w,
            l,
            h,
            yaw: 0.0,
            vx: 0.0,
            vy: 0.0,
        }
    }
}

impl BoxTemplate {
    fn place(&self, theta: f64, depth: f64) -> PolarBox {
        PolarBox {
            theta,
            depth,
            z: self.z,
            w: self.w,
            l: self.l,
            h: self.h,
            yaw: self.yaw,
            vx: self.vx,
            vy: self.vy,
        }
    }
}

/// `N_r · N_d` queries at sector and segment centres, ray-major order.
pub fn init_base_queries(layout: &RayLayout, template: &BoxTemplate, feature_dim: usize) -> Result<Vec<Query>> {
    layout.validate()?;
    let mut out = Vec::with_capacity(layout.num_queries());
    for ray in 0..layout.num_rays {
        let theta = layout.ray_theta(ray);
        for slot in 0..layout.depth_slots {
            out.push(Query {
                bbox: template.place(theta, layout.slot_depth(slot)),
                ray_id: ray,
                slot,
                origin: QueryOrigin::Base,
                feature: vec![0.0; feature_dim],
            });
        }
    }
    Ok(out)
}

/// Depth interval on a ray owned by one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaySegment {
    pub theta: f64,
    pub d_lo: f64,
    pub d_hi: f64,
}

impl RaySegment {
    pub fn length(&self) -> f64 {
        self.d_hi - self.d_lo
    }

    /// Shortest BEV distance from `(x, y)` to the segment.
    pub fn bev_distance_to(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let along = (x * c + y * s).clamp(self.d_lo, self.d_hi);
        (x - along * c).hypot(y - along * s)
    }
}

/// Segments for `n` evenly spaced slots on one ray. Interior endpoints are
/// midpoints between neighbouring slot depths; the outer ends are 0 and D.
pub fn segments_on_ray(theta: f64, n: usize, max_depth: f64) -> Vec<RaySegment> {
    let depths: Vec<f64> = (0..n).map(|j| slot_center(j, n, max_depth)).collect();
    (0..n)
        .map(|j| RaySegment {
            theta,
            d_lo: if j == 0 { 0.0 } else { 0.5 * (depths[j - 1] + depths[j]) },
            d_hi: if j + 1 == n {
                max_depth
            } else {
                0.5 * (depths[j] + depths[j + 1])
            },
        })
        .collect()
}

/// One segment per base query, in the order of [`init_base_queries`].
pub fn ray_segments(layout: &RayLayout) -> Result<Vec<RaySegment>> {
    layout.validate()?;
    Ok((0..layout.num_rays)
        .flat_map(|ray| segments_on_ray(layout.ray_theta(ray), layout.depth_slots, layout.max_depth))
        .collect())
}

/// The segment owned by a query given how many slots share its ray.
pub fn segment_of(query: &Query, slots_on_ray: usize, max_depth: f64) -> Result<RaySegment> {
    if query.slot >= slots_on_ray {
        return Err(Error::OutOfRange {
            what: "query slot",
            index: query.slot,
            limit: slots_on_ray,
        });
    }
    Ok(segments_on_ray(query.bbox.theta, slots_on_ray, max_depth)[query.slot])
}

/// A 2D detection in one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub view: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub category: Category,
    pub score: f64,
}

impl Box2D {
    pub fn validate(&self, cams: &[Camera]) -> Result<()> {
        let cam = cams.get(self.view).ok_or(Error::OutOfRange {
            what: "box view",
            index: self.view,
            limit: cams.len(),
        })?;
        let (w, h) = (cam.width() as f64, cam.height() as f64);
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::invariant(format!("degenerate 2D box {self:?}")));
        }
        if self.x1 < 0.0 || self.y1 < 0.0 || self.x2 > w || self.y2 > h {
            return Err(Error::invariant(format!("2D box {self:?} leaves the {w}x{h} image")));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invariant(format!("2D box score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x1 && u <= self.x2 && v >= self.y1 && v <= self.y2
    }
}

/// Stretches each box vertically to the full image height.
pub fn expand_boxes_full_height(boxes: &[Box2D], cams: &[Camera]) -> Result<Vec<Box2D>> {
    boxes
        .iter()
        .map(|b| {
            b.validate(cams)?;
            Ok(Box2D {
                y1: 0.0,
                y2: cams[b.view].height() as f64,
                ..*b
            })
        })
        .collect()
}

/// Number of candidate rays per category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryRaySpec(pub BTreeMap<Category, usize>);

impl Default for CategoryRaySpec {
    fn default() -> Self {
        CategoryRaySpec(BTreeMap::from([(Category::Car, 180), (Category::Pedestrian, 360)]))
    }
}

impl CategoryRaySpec {
    pub fn validate(&self) -> Result<()> {
        match self.0.iter().find(|(_, &n)| n == 0) {
            Some((c, _)) => Err(Error::invariant(format!("category {c} needs at least one ray"))),
            None => Ok(()),
        }
    }

    pub fn rays_for(&self, category: Category) -> Option<usize> {
        self.0.get(&category).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForegroundRay {
    pub theta: f64,
    pub category: Category,
}

/// Where a candidate ray's midpoint is probed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidpointProbe {
    pub max_depth: f64,
    pub z: f64,
    pub fov: f64,
}

/// Picks candidate rays whose midpoint projects into an expanded box of the
/// ray's category. Candidates are scanned in `(category, theta)` order and the
/// first `budget` hits are kept; `None` keeps all.
pub fn select_foreground_rays(
    spec: &CategoryRaySpec,
    expanded: &[Box2D],
    cams: &[Camera],
    probe: MidpointProbe,
    budget: Option<usize>,
) -> Result<Vec<ForegroundRay>> {
    spec.validate()?;
    let mut out = Vec::new();
    if expanded.is_empty() {
        return Ok(out);
    }
    for b in expanded {
        b.validate(cams)?;
    }
    for (&category, &n) in &spec.0 {
        let boxes: Vec<&Box2D> = expanded.iter().filter(|b| b.category == category).collect();
        if boxes.is_empty() {
            continue;
        }
        for i in 0..n {
            if budget.is_some_and(|b| out.len() >= b) {
                return Ok(out);
            }
            let theta = sector_center(i, n, probe.fov);
            let mid = polar_to_cartesian(&PolarPoint {
                theta,
                depth: 0.5 * probe.max_depth,
                z: probe.z,
            })?;
            let hit = cams.iter().enumerate().any(|(view, cam)| {
                let ip = cam.project_point(&mid);
                ip.valid && boxes.iter().any(|b| b.view == view && b.contains(ip.u, ip.v))
            });
            if hit {
                out.push(ForegroundRay { theta, category });
            }
        }
    }
    Ok(out)
}

/// `slots` queries per foreground ray, ray ids numbered from `first_ray_id`.
pub fn init_foreground_queries(
    rays: &[ForegroundRay],
    slots: usize,
    max_depth: f64,
    template: &BoxTemplate,
    first_ray_id: usize,
    feature_dim: usize,
) -> Vec<Query> {
    let mut out = Vec::with_capacity(rays.len() * slots);
    for (r, ray) in rays.iter().enumerate() {
        for slot in 0..slots {
            out.push(Query {
                bbox: template.place(ray.theta, slot_center(slot, slots, max_depth)),
                ray_id: first_ray_id + r,
                slot,
                origin: QueryOrigin::Foreground,
                feature: vec![0.0; feature_dim],
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn layout(num_rays: usize, depth_slots: usize) -> RayLayout {
        RayLayout {
            num_rays,
            depth_slots,
            fov: TAU,
            max_depth: 65.0,
        }
    }

    fn rig() -> Vec<Camera> {
        (0..6)
            .map(|k| {
                Camera::facing(k as f64 * PI / 3.0, [0.0, 0.0, 1.5], 560.0, 560.0, 352.0, 128.0, 704, 256)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn base_queries_small_layout() {
        let qs = init_base_queries(&layout(4, 2), &BoxTemplate::default(), 0).unwrap();
        assert_eq!(qs.len(), 8);
        let thetas: Vec<f64> = qs.iter().step_by(2).map(|q| q.bbox.theta).collect();
        for (t, e) in thetas.iter().zip([PI / 4.0, 3.0 * PI / 4.0, 5.0 * PI / 4.0, 7.0 * PI / 4.0]) {
            assert_abs_diff_eq!(*t, e, epsilon = 1e-15);
        }
        assert_eq!(qs[0].bbox.depth, 16.25);
        assert_eq!(qs[1].bbox.depth, 48.75);
        assert!(qs.iter().all(|q| q.origin == QueryOrigin::Base && q.validate(65.0).is_ok()));
    }

    #[test]
    fn default_layout_has_810_queries() {
        let qs = init_base_queries(&RayLayout::default(), &BoxTemplate::default(), 8).unwrap();
        assert_eq!(qs.len(), 810);
        assert!(qs.iter().all(|q| q.feature == vec![0.0; 8]));
    }

    #[test]
    fn invalid_layout_rejected() {
        assert!(init_base_queries(&layout(0, 2), &BoxTemplate::default(), 0).is_err());
        let mut l = layout(3, 2);
        l.fov = 7.0;
        assert!(ray_segments(&l).is_err());
    }

    #[test]
    fn segments_examples() {
        let s = ray_segments(&layout(1, 2)).unwrap();
        assert_eq!((s[0].d_lo, s[0].d_hi), (0.0, 32.5));
        assert_eq!((s[1].d_lo, s[1].d_hi), (32.5, 65.0));
        let s = ray_segments(&layout(1, 1)).unwrap();
        assert_eq!((s[0].d_lo, s[0].d_hi), (0.0, 65.0));
    }

    #[test]
    fn segment_distance() {
        let s = RaySegment {
            theta: 0.0,
            d_lo: 10.0,
            d_hi: 20.0,
        };
        assert_abs_diff_eq!(s.bev_distance_to(15.0, 2.0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.bev_distance_to(23.0, 4.0), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn expand_examples() {
        let cams = rig();
        let b = Box2D {
            view: 0,
            x1: 100.0,
            y1: 20.0,
            x2: 300.0,
            y2: 200.0,
            category: Category::Car,
            score: 0.9,
        };
        let e = expand_boxes_full_height(&[b], &cams).unwrap();
        assert_eq!((e[0].x1, e[0].y1, e[0].x2, e[0].y2), (100.0, 0.0, 300.0, 256.0));
        assert_eq!(expand_boxes_full_height(&e, &cams).unwrap(), e);
        let bad = Box2D { x2: 50.0, ..b };
        assert!(expand_boxes_full_height(&[bad], &cams).is_err());
    }

    #[test]
    fn no_boxes_no_rays() {
        let probe = MidpointProbe {
            max_depth: 65.0,
            z: 0.85,
            fov: TAU,
        };
        let rays = select_foreground_rays(&CategoryRaySpec::default(), &[], &rig(), probe, Some(30)).unwrap();
        assert!(rays.is_empty());
    }

    #[test]
    fn full_width_box_selects_every_visible_ray() {
        let cams = rig();
        let probe = MidpointProbe {
            max_depth: 65.0,
            z: 0.85,
            fov: TAU,
        };
        let b = Box2D {
            view: 0,
            x1: 0.0,
            y1: 0.0,
            x2: 704.0,
            y2: 256.0,
            category: Category::Car,
            score: 1.0,
        };
        let rays = select_foreground_rays(&CategoryRaySpec::default(), &[b], &cams, probe, None).unwrap();
        let expected: Vec<f64> = (0..180)
            .map(|i| sector_center(i, 180, TAU))
            .filter(|&t| {
                let p = polar_to_cartesian(&PolarPoint { theta: t, depth: 32.5, z: 0.85 }).unwrap();
                cams[0].project_point(&p).valid
            })
            .collect();
        assert!(!expected.is_empty());
        assert_eq!(rays.iter().map(|r| r.theta).collect::<Vec<_>>(), expected);
        let capped = select_foreground_rays(&CategoryRaySpec::default(), &[b], &cams, probe, Some(3)).unwrap();
        assert_eq!(capped.len(), 3);
        assert_eq!(capped[..], rays[..3]);
    }

    #[test]
    fn foreground_queries() {
        let rays: Vec<ForegroundRay> = (0..30)
            .map(|i| ForegroundRay {
                theta: i as f64 * 0.1,
                category: Category::Car,
            })
            .collect();
        let qs = init_foreground_queries(&rays, 3, 65.0, &BoxTemplate::default(), 135, 0);
        assert_eq!(qs.len(), 90);
        assert_eq!(qs[0].ray_id, 135);
        assert_eq!(qs[89].ray_id, 164);
        let depths: Vec<f64> = qs[..3].iter().map(|q| q.bbox.depth).collect();
        assert_abs_diff_eq!(depths[0], 65.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(depths[1], 32.5, epsilon = 1e-12);
        assert_abs_diff_eq!(depths[2], 325.0 / 6.0, epsilon = 1e-12);
        assert!(qs.iter().all(|q| q.origin == QueryOrigin::Foreground));
        assert!(init_foreground_queries(&[], 3, 65.0, &BoxTemplate::default(), 0, 0).is_empty());
    }

    #[test]
    fn query_json_is_flat() {
        let q = &init_base_queries(&layout(2, 1), &BoxTemplate::default(), 0).unwrap()[0];
        let v = serde_json::to_value(q).unwrap();
        for key in ["theta", "depth", "z", "w", "l", "h", "yaw", "vx", "vy", "ray_id", "slot", "origin"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["origin"], "base");
        let back: Query = serde_json::from_value(v).unwrap();
        assert_eq!(&back, q);
    }

    proptest! {
        #[test]
        fn segments_tile_range(n in 1usize..40, d in 1.0..120.0f64) {
            let segs = segments_on_ray(0.0, n, d);
            prop_assert_eq!(segs[0].d_lo, 0.0);
            prop_assert_eq!(segs[n - 1].d_hi, d);
            for w in segs.windows(2) {
                prop_assert_eq!(w[0].d_hi, w[1].d_lo);
                prop_assert!(w[0].d_lo < w[0].d_hi);
            }
        }

        #[test]
        fn rays_share_and_separate_theta(nr in 1usize..200, nd in 1usize..10) {
            let l = layout(nr, nd);
            let qs = init_base_queries(&l, &BoxTemplate::default(), 0).unwrap();
            prop_assert_eq!(qs.len(), nr * nd);
            for q in &qs {
                prop_assert_eq!(q.bbox.theta, l.ray_theta(q.ray_id));
            }
            let step = TAU / nr as f64;
            for w in (0..nr).collect::<Vec<_>>().windows(2) {
                prop_assert!(l.ray_theta(w[1]) - l.ray_theta(w[0]) >= step * (1.0 - 1e-12));
            }
        }
    }
}
