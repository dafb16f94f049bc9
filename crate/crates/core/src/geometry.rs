//! Coordinate systems, pinhole projection and rigid temporal transforms.
//!
//! Conventions used throughout the crate:
//!
//! - The ego frame is right-handed with +x forward, +y left and +z up.
//! - Azimuth `theta` is measured counterclockwise from ego +x and lives in
//!   `[0, 2π)`.
//! - Cameras store `ego_from_camera` (camera-to-ego). The camera frame is the
//!   usual optical frame: +z along the optical axis, +x to the image right,
//!   +y down the image.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RIGID_TOL: f64 = 1e-9;

/// A point in ego-centred polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub theta: f64,
    pub depth: f64,
    pub z: f64,
}

impl PolarPoint {
    pub fn new(theta: f64, depth: f64, z: f64) -> Result<Self> {
        let p = PolarPoint { theta, depth, z };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.depth.is_finite() && self.z.is_finite()) {
            return Err(Error::NonFinite("polar point"));
        }
        if !(0.0..TAU).contains(&self.theta) {
            return Err(Error::invariant(format!(
                "polar theta {} outside [0, 2π)",
                self.theta
            )));
        }
        if self.depth < 0.0 {
            return Err(Error::invariant(format!(
                "polar depth {} is negative",
                self.depth
            )));
        }
        Ok(())
    }
}

/// A point in the Cartesian ego frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CartesianPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        CartesianPoint { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        CartesianPoint::new(v.x, v.y, v.z)
    }

    /// Horizontal (BEV) distance to another point.
    pub fn bev_distance(&self, other: &CartesianPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub fn polar_to_cartesian(p: &PolarPoint) -> Result<CartesianPoint> {
    if !(p.theta.is_finite() && p.depth.is_finite() && p.z.is_finite()) {
        return Err(Error::NonFinite("polar point"));
    }
    let (s, c) = p.theta.sin_cos();
    Ok(CartesianPoint::new(p.depth * c, p.depth * s, p.z))
}

/// Inverse of [`polar_to_cartesian`]. The origin maps to `theta = 0`.
pub fn cartesian_to_polar(p: &CartesianPoint) -> Result<PolarPoint> {
    if !p.is_finite() {
        return Err(Error::NonFinite("cartesian point"));
    }
    let depth = p.x.hypot(p.y);
    let theta = if depth == 0.0 {
        0.0
    } else {
        wrap_angle(p.y.atan2(p.x))
    };
    Ok(PolarPoint {
        theta,
        depth,
        z: p.z,
    })
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps an angle difference into `[-π, π)`.
pub fn wrap_to_pi(delta: f64) -> f64 {
    let w = (delta + std::f64::consts::PI).rem_euclid(TAU) - std::f64::consts::PI;
    if w >= std::f64::consts::PI {
        w - TAU
    } else {
        w
    }
}

/// Constant-velocity displacement in the ground plane.
pub fn warp_point(p: &CartesianPoint, velocity: [f64; 2], dt: f64) -> CartesianPoint {
    CartesianPoint::new(p.x + velocity[0] * dt, p.y + velocity[1] * dt, p.z)
}

fn check_rigid(m: &Matrix4<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invariant(format!("{what}: non-finite entry")));
    }
    let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
    if bottom != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::invariant(format!(
            "{what}: bottom row must be [0, 0, 0, 1], got {bottom:?}"
        )));
    }
    let r = m.fixed_view::<3, 3>(0, 0);
    let gram = r.transpose() * r;
    let err = (gram - Matrix3::identity()).abs().max();
    if err > RIGID_TOL {
        return Err(Error::invariant(format!(
            "{what}: rotation block not orthonormal (max deviation {err:e})"
        )));
    }
    if r.determinant() <= 0.0 {
        return Err(Error::invariant(format!("{what}: rotation block is a reflection")));
    }
    Ok(())
}

fn rigid_inverse(m: &Matrix4<f64>) -> Matrix4<f64> {
    let r = m.fixed_view::<3, 3>(0, 0).transpose();
    let t = -(r * m.fixed_view::<3, 1>(0, 3));
    let mut out = Matrix4::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    out
}

fn apply(m: &Matrix4<f64>, p: &CartesianPoint) -> CartesianPoint {
    let v = m * Vector4::new(p.x, p.y, p.z, 1.0);
    CartesianPoint::new(v.x, v.y, v.z)
}

fn row_major4(values: &[f64]) -> Matrix4<f64> {
    Matrix4::from_row_slice(values)
}

fn to_row_major4(m: &Matrix4<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

/// Serialized form of a camera: row-major matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub intrinsics: Vec<f64>,
    pub ego_from_camera: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

/// Pinhole camera with zero skew and no distortion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct Camera {
    intrinsics: Matrix3<f64>,
    ego_from_camera: Matrix4<f64>,
    camera_from_ego: Matrix4<f64>,
    width: u32,
    height: u32,
}

impl Camera {
    pub fn new(
        intrinsics: Matrix3<f64>,
        ego_from_camera: Matrix4<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if intrinsics.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera intrinsics"));
        }
        let (fx, fy) = (intrinsics[(0, 0)], intrinsics[(1, 1)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invariant(format!(
                "camera focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if intrinsics[(0, 1)] != 0.0
            || intrinsics[(1, 0)] != 0.0
            || intrinsics[(2, 0)] != 0.0
            || intrinsics[(2, 1)] != 0.0
            || intrinsics[(2, 2)] != 1.0
        {
            return Err(Error::invariant(
                "camera intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]",
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::invariant("camera width and height must be >= 1"));
        }
        check_rigid(&ego_from_camera, "ego_from_camera")?;
        Ok(Camera {
            intrinsics,
            camera_from_ego: rigid_inverse(&ego_from_camera),
            ego_from_camera,
            width,
            height,
        })
    }

    /// Camera at `position` in the ego frame looking horizontally along
    /// azimuth `yaw`, image rows pointing down.
    #[allow(clippy::too_many_arguments)]
    pub fn facing(
        yaw: f64,
        position: [f64; 3],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let (s, c) = yaw.sin_cos();
        let mut ext = Matrix4::identity();
        // columns: camera x (right), y (down), z (optical axis) in ego coordinates
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::new(
            s, 0.0, c, //
            -c, 0.0, s, //
            0.0, -1.0, 0.0,
        ));
        ext[(0, 3)] = position[0];
        ext[(1, 3)] = position[1];
        ext[(2, 3)] = position[2];
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Camera::new(k, ext, width, height)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn ego_from_camera(&self) -> &Matrix4<f64> {
        &self.ego_from_camera
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[(1, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.intrinsics[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.intrinsics[(1, 2)]
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Camera centre in the ego frame.
    pub fn center(&self) -> CartesianPoint {
        CartesianPoint::new(
            self.ego_from_camera[(0, 3)],
            self.ego_from_camera[(1, 3)],
            self.ego_from_camera[(2, 3)],
        )
    }

    pub fn to_camera_frame(&self, p: &CartesianPoint) -> CartesianPoint {
        apply(&self.camera_from_ego, p)
    }

    pub fn project_point(&self, p: &CartesianPoint) -> ImagePoint {
        let c = self.to_camera_frame(p);
        if !(c.z > 0.0) || !c.is_finite() {
            return ImagePoint {
                u: f64::NAN,
                v: f64::NAN,
                depth: c.z,
                valid: false,
            };
        }
        let u = self.fx() * c.x / c.z + self.cx();
        let v = self.fy() * c.y / c.z + self.cy();
        let valid = u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64;
        ImagePoint {
            u,
            v,
            depth: c.z,
            valid,
        }
    }

    /// Ego-frame point seen at pixel `(u, v)` with optical depth `depth`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> CartesianPoint {
        let xc = (u - self.cx()) / self.fx() * depth;
        let yc = (v - self.cy()) / self.fy() * depth;
        apply(&self.ego_from_camera, &CartesianPoint::new(xc, yc, depth))
    }

    /// The same camera re-expressed in another ego frame: `target_from_ego`
    /// maps this camera's ego frame into the target frame.
    pub fn transformed(&self, target_from_ego: &Matrix4<f64>) -> Result<Camera> {
        Camera::new(
            self.intrinsics,
            target_from_ego * self.ego_from_camera,
            self.width,
            self.height,
        )
    }
}

impl TryFrom<CameraRecord> for Camera {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        if r.intrinsics.len() != 9 {
            return Err(Error::Format(format!(
                "camera intrinsics need 9 values, got {}",
                r.intrinsics.len()
            )));
        }
        if r.ego_from_camera.len() != 16 {
            return Err(Error::Format(format!(
                "camera ego_from_camera needs 16 values, got {}",
                r.ego_from_camera.len()
            )));
        }
        Camera::new(
            Matrix3::from_row_slice(&r.intrinsics),
            row_major4(&r.ego_from_camera),
            r.width,
            r.height,
        )
    }
}

impl From<Camera> for CameraRecord {
    fn from(c: Camera) -> Self {
        CameraRecord {
            intrinsics: c.intrinsics.transpose().iter().copied().collect(),
            ego_from_camera: to_row_major4(&c.ego_from_camera),
            width: c.width,
            height: c.height,
        }
    }
}

/// Projection of an ego-frame point. `valid` is set only when the point lies
/// in front of the camera and inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth `z_c`.
    pub depth: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EgoPoseRecord {
    timestamp: f64,
    world_from_ego: Vec<f64>,
}

/// Ego pose at one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EgoPoseRecord", into = "EgoPoseRecord")]
pub struct EgoPose {
    pub timestamp: f64,
    world_from_ego: Matrix4<f64>,
}

impl EgoPose {
    pub fn new(timestamp: f64, world_from_ego: Matrix4<f64>) -> Result<Self> {
        if !timestamp.is_finite() {
            return Err(Error::NonFinite("pose timestamp"));
        }
        check_rigid(&world_from_ego, "world_from_ego")?;
        Ok(EgoPose {
            timestamp,
            world_from_ego,
        })
    }

    /// Pose with a yaw rotation about +z followed by a translation.
    pub fn planar(timestamp: f64, x: f64, y: f64, yaw: f64) -> Result<Self> {
        let (s, c) = yaw.sin_cos();
        let m = Matrix4::new(
            c, -s, 0.0, x, //
            s, c, 0.0, y, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        EgoPose::new(timestamp, m)
    }

    pub fn world_from_ego(&self) -> &Matrix4<f64> {
        &self.world_from_ego
    }

    /// Rigid transform taking points in `self`'s ego frame into `to`'s ego frame.
    pub fn relative_to(&self, to: &EgoPose) -> Matrix4<f64> {
        rigid_inverse(&to.world_from_ego) * self.world_from_ego
    }
}

impl TryFrom<EgoPoseRecord> for EgoPose {
    type Error = Error;

    fn try_from(r: EgoPoseRecord) -> Result<Self> {
        if r.world_from_ego.len() != 16 {
            return Err(Error::Format(format!(
                "world_from_ego needs 16 values, got {}",
                r.world_from_ego.len()
            )));
        }
        EgoPose::new(r.timestamp, row_major4(&r.world_from_ego))
    }
}

impl From<EgoPose> for EgoPoseRecord {
    fn from(p: EgoPose) -> Self {
        EgoPoseRecord {
            timestamp: p.timestamp,
            world_from_ego: to_row_major4(&p.world_from_ego),
        }
    }
}

/// Maps a point expressed in `from`'s ego frame into `to`'s ego frame.
pub fn ego_transform(from: &EgoPose, to: &EgoPose, p: &CartesianPoint) -> CartesianPoint {
    apply(&from.relative_to(to), p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn forward_camera() -> Camera {
        Camera::facing(0.0, [0.0, 0.0, 0.0], 500.0, 500.0, 800.0, 450.0, 1600, 900).unwrap()
    }

    #[test]
    fn polar_examples() {
        let p = polar_to_cartesian(&PolarPoint::new(0.0, 5.0, 1.0).unwrap()).unwrap();
        assert_eq!(p, CartesianPoint::new(5.0, 0.0, 1.0));

        let p = polar_to_cartesian(&PolarPoint::new(FRAC_PI_2, 2.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 2.0, epsilon = 1e-15);

        let p = polar_to_cartesian(&PolarPoint::new(FRAC_PI_4, 2f64.sqrt(), 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(p.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cartesian_examples() {
        let q = cartesian_to_polar(&CartesianPoint::new(5.0, 0.0, 1.0)).unwrap();
        assert_eq!((q.theta, q.depth, q.z), (0.0, 5.0, 1.0));

        let q = cartesian_to_polar(&CartesianPoint::new(0.0, -3.0, 0.0)).unwrap();
        assert_abs_diff_eq!(q.theta, 3.0 * PI / 2.0, epsilon = 1e-15);
        assert_eq!(q.depth, 3.0);

        let q = cartesian_to_polar(&CartesianPoint::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((q.theta, q.depth, q.z), (0.0, 0.0, 2.0));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(PolarPoint::new(f64::NAN, 1.0, 0.0).is_err());
        assert!(polar_to_cartesian(&PolarPoint {
            theta: 0.0,
            depth: f64::INFINITY,
            z: 0.0
        })
        .is_err());
        assert!(cartesian_to_polar(&CartesianPoint::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(PolarPoint::new(TAU, 1.0, 0.0).is_err());
        assert!(PolarPoint::new(0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let cam = forward_camera();
        let ip = cam.project_point(&CartesianPoint::new(10.0, 0.0, 0.0));
        assert!(ip.valid);
        assert_abs_diff_eq!(ip.u, 800.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ip.v, 450.0, epsilon = 1e-12);

        // one metre to the right of the optical axis (ego -y)
        let ip = cam.project_point(&CartesianPoint::new(10.0, -1.0, 0.0));
        assert!(ip.valid);
        assert_abs_diff_eq!(ip.u, 850.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ip.v, 450.0, epsilon = 1e-9);

        let ip = cam.project_point(&CartesianPoint::new(-1.0, 0.0, 0.0));
        assert!(!ip.valid);
        assert_eq!(ip.depth, -1.0);
    }

    #[test]
    fn out_of_bounds_is_invalid() {
        let cam = forward_camera();
        // u = 800 + 500 * 20 / 10 = 1800 > 1600
        let ip = cam.project_point(&CartesianPoint::new(10.0, -20.0, 0.0));
        assert!(!ip.valid);
        assert!(ip.u > 1600.0);
    }

    #[test]
    fn camera_rejects_bad_parameters() {
        let k = Matrix3::new(500.0, 0.0, 10.0, 0.0, -1.0, 10.0, 0.0, 0.0, 1.0);
        assert!(Camera::new(k, Matrix4::identity(), 10, 10).is_err());
        let k = Matrix3::new(500.0, 0.0, 10.0, 0.0, 500.0, 10.0, 0.0, 0.0, 1.0);
        let mut skewed = Matrix4::identity();
        skewed[(0, 1)] = 0.1;
        assert!(Camera::new(k, skewed, 10, 10).is_err());
        assert!(Camera::new(k, Matrix4::identity(), 0, 10).is_err());
    }

    #[test]
    fn camera_json_round_trip() {
        let cam = Camera::facing(1.1, [0.5, -0.2, 1.5], 560.0, 560.0, 352.0, 128.0, 704, 256)
            .unwrap();
        let text = serde_json::to_string(&cam).unwrap();
        let back: Camera = serde_json::from_str(&text).unwrap();
        assert_eq!(cam, back);
    }

    #[test]
    fn warp_examples() {
        let p = CartesianPoint::new(10.0, 0.0, 1.0);
        assert_eq!(warp_point(&p, [0.0, 0.0], -0.5), p);
        assert_eq!(warp_point(&p, [2.0, 0.0], -0.5), CartesianPoint::new(9.0, 0.0, 1.0));
        let there = warp_point(&p, [2.0, -1.25], 0.75);
        assert_eq!(warp_point(&there, [2.0, -1.25], -0.75), p);
    }

    #[test]
    fn ego_transform_examples() {
        let a = EgoPose::planar(0.0, 3.0, -2.0, 0.4).unwrap();
        let p = CartesianPoint::new(1.0, 2.0, 3.0);
        let same = ego_transform(&a, &a, &p);
        assert_abs_diff_eq!(same.x, p.x, epsilon = 1e-12);
        assert_abs_diff_eq!(same.y, p.y, epsilon = 1e-12);
        assert_abs_diff_eq!(same.z, p.z, epsilon = 1e-12);

        let origin = EgoPose::planar(0.0, 0.0, 0.0, 0.0).unwrap();
        let moved = EgoPose::planar(0.5, 1.0, 0.0, 0.0).unwrap();
        let q = ego_transform(&origin, &moved, &p);
        assert_eq!(q, CartesianPoint::new(0.0, 2.0, 3.0));
    }

    #[test]
    fn ego_pose_rejects_non_rigid() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 2.0;
        assert!(EgoPose::new(0.0, m).is_err());
    }

    proptest! {
        #[test]
        fn polar_round_trip(theta in 0.0..TAU, depth in 1e-6..65.0f64, z in -5.0..5.0f64) {
            let p = PolarPoint::new(theta, depth, z).unwrap();
            let q = cartesian_to_polar(&polar_to_cartesian(&p).unwrap()).unwrap();
            let dtheta = wrap_to_pi(q.theta - p.theta);
            prop_assert!(dtheta.abs() <= 1e-12);
            prop_assert!((q.depth - p.depth).abs() <= 1e-12);
            prop_assert_eq!(q.z, p.z);
        }

        #[test]
        fn projection_scale_invariant(
            yaw in 0.0..TAU,
            xc in -2.0..2.0f64, yc in -1.0..1.0f64, zc in 1.0..30.0f64,
            lambda in 0.1..10.0f64,
        ) {
            let cam = Camera::facing(yaw, [0.4, -0.3, 1.5], 560.0, 560.0, 352.0, 128.0, 704, 256).unwrap();
            let near = apply(cam.ego_from_camera(), &CartesianPoint::new(xc, yc, zc));
            let far = apply(cam.ego_from_camera(), &CartesianPoint::new(lambda * xc, lambda * yc, lambda * zc));
            let (a, b) = (cam.project_point(&near), cam.project_point(&far));
            prop_assert!((a.u - b.u).abs() <= 1e-9);
            prop_assert!((a.v - b.v).abs() <= 1e-9);
        }

        #[test]
        fn pixel_ray_projects_to_its_pixel(
            yaw in 0.0..TAU, u in 0.0..704.0f64, v in 0.0..256.0f64, depth in 0.5..80.0f64,
        ) {
            let cam = Camera::facing(yaw, [1.0, 0.5, 1.6], 560.0, 560.0, 352.0, 128.0, 704, 256).unwrap();
            let ip = cam.project_point(&cam.back_project(u, v, depth));
            prop_assert!((ip.u - u).abs() <= 1e-6 && (ip.v - v).abs() <= 1e-6);
        }

        #[test]
        fn warp_commutes_with_translation(
            x in -50.0..50.0f64, y in -50.0..50.0f64, tx in -5.0..5.0f64, ty in -5.0..5.0f64,
            vx in -10.0..10.0f64, vy in -10.0..10.0f64, dt in -2.0..0.0f64,
        ) {
            let p = CartesianPoint::new(x, y, 1.0);
            let shift = |q: CartesianPoint| CartesianPoint::new(q.x + tx, q.y + ty, q.z);
            let a = shift(warp_point(&p, [vx, vy], dt));
            let b = warp_point(&shift(p), [vx, vy], dt);
            prop_assert!((a.x - b.x).abs() <= 1e-12 && (a.y - b.y).abs() <= 1e-12);
        }

        #[test]
        fn ego_transform_composes(
            a in (-10.0..10.0f64, -10.0..10.0f64, 0.0..TAU),
            b in (-10.0..10.0f64, -10.0..10.0f64, 0.0..TAU),
            c in (-10.0..10.0f64, -10.0..10.0f64, 0.0..TAU),
            x in -30.0..30.0f64, y in -30.0..30.0f64,
        ) {
            let pa = EgoPose::planar(0.0, a.0, a.1, a.2).unwrap();
            let pb = EgoPose::planar(0.0, b.0, b.1, b.2).unwrap();
            let pc = EgoPose::planar(0.0, c.0, c.1, c.2).unwrap();
            let p = CartesianPoint::new(x, y, 0.7);
            let two_step = ego_transform(&pb, &pc, &ego_transform(&pa, &pb, &p));
            let direct = ego_transform(&pa, &pc, &p);
            prop_assert!(two_step.bev_distance(&direct) <= 1e-9);
            prop_assert!((two_step.z - direct.z).abs() <= 1e-9);
        }
    }
}
