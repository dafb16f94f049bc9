//! Screen-hull rendering of 3D boxes at feature-cell resolution.

use crate::error::Result;
use crate::geometry::{Camera, CartesianPoint};
use crate::matching::GroundTruth;
use crate::query::Box2D;

/// Objects with any corner this close to (or behind) the image plane are
/// not rendered in that view.
const NEAR_PLANE: f64 = 0.1;

/// Per-view oracle maps sampled at feature-cell centres, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRender {
    pub rows: usize,
    pub cols: usize,
    /// Camera-frame depth of the nearest covering object.
    pub depth: Vec<Option<f64>>,
    /// Index of the nearest covering object.
    pub ids: Vec<Option<usize>>,
}

/// The eight corners of a box in the ego frame.
pub fn box_corners(o: &GroundTruth) -> [CartesianPoint; 8] {
    let (s, c) = o.yaw.sin_cos();
    let [w, l, h] = o.size;
    let mut out = [CartesianPoint::new(0.0, 0.0, 0.0); 8];
    let mut i = 0;
    for sx in [-0.5, 0.5] {
        for sy in [-0.5, 0.5] {
            for sz in [-0.5, 0.5] {
                let (lx, ly) = (sx * l, sy * w);
                out[i] = CartesianPoint::new(
                    o.center[0] + c * lx - s * ly,
                    o.center[1] + s * lx + c * ly,
                    o.center[2] + sz * h,
                );
                i += 1;
            }
        }
    }
    out
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn hull_contains(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0)
}

pub(super) fn render_view(
    view: usize,
    cam: &Camera,
    objects: &[GroundTruth],
    stride: u32,
) -> Result<(ViewRender, Vec<Box2D>)> {
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    let rows = (cam.height() / stride) as usize;
    let cols = (cam.width() / stride) as usize;
    let mut render = ViewRender {
        rows,
        cols,
        depth: vec![None; rows * cols],
        ids: vec![None; rows * cols],
    };
    let mut boxes = Vec::new();
    for (id, o) in objects.iter().enumerate() {
        let cam_pts: Vec<CartesianPoint> = box_corners(o).iter().map(|p| cam.to_camera_frame(p)).collect();
        if cam_pts.iter().any(|p| p.z <= NEAR_PLANE) {
            continue;
        }
        let uv: Vec<(f64, f64)> = cam_pts
            .iter()
            .map(|p| (cam.fx() * p.x / p.z + cam.cx(), cam.fy() * p.y / p.z + cam.cy()))
            .collect();
        let (x1, x2) = uv.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (y1, y2) = uv.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let clipped = Box2D {
            view,
            x1: x1.max(0.0),
            y1: y1.max(0.0),
            x2: x2.min(w),
            y2: y2.min(h),
            category: o.category,
            score: 1.0,
        };
        if clipped.x1 >= clipped.x2 || clipped.y1 >= clipped.y2 {
            continue;
        }
        boxes.push(clipped);
        let depth = cam.to_camera_frame(&o.center_point()).z;
        let hull = convex_hull(&uv);
        let s = stride as f64;
        let c_lo = ((x1 / s - 0.5).ceil().max(0.0)) as usize;
        let c_hi = ((x2 / s - 0.5).floor().min(cols as f64 - 1.0)).max(-1.0);
        let r_lo = ((y1 / s - 0.5).ceil().max(0.0)) as usize;
        let r_hi = ((y2 / s - 0.5).floor().min(rows as f64 - 1.0)).max(-1.0);
        if c_hi < 0.0 || r_hi < 0.0 {
            continue;
        }
        for row in r_lo..=r_hi as usize {
            for col in c_lo..=c_hi as usize {
                let p = ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s);
                if !hull_contains(&hull, p) {
                    continue;
                }
                let cell = row * cols + col;
                if render.depth[cell].is_none_or(|d| depth < d) {
                    render.depth[cell] = Some(depth);
                    render.ids[cell] = Some(id);
                }
            }
        }
    }
    Ok((render, boxes))
}
