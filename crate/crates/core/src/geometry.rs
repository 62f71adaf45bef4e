//! Pinhole camera model, depth back-projection and rigid transforms into the
//! shared map frame.
//!
//! Frames used throughout the crate:
//!
//! * **camera**: `(right, forward, up)`. Image rows grow downward, so the
//!   vertical pixel offset is negated when forming the up component.
//! * **geocentric**: camera frame pitched level and lifted by the sensor
//!   height, so `z` is height above the floor.
//! * **map**: right-handed world frame. A pose with `theta = 0` faces `+y`;
//!   positive `theta` turns counter-clockwise.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera parameter: {0}")]
    InvalidParameter(String),
    #[error("depth image is {got_w}x{got_h}, camera expects {want_w}x{want_h}")]
    Shape {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(self, o: Vec3) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2) + (self.z - o.z).powi(2)).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Agent pose in the map frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    /// Unit heading vector.
    pub fn forward(&self) -> (f64, f64) {
        (-self.theta.sin(), self.theta.cos())
    }

    /// Rotates a body-frame planar vector `(right, forward)` into the map frame.
    pub fn rotate(&self, right: f64, forward: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (c * right - s * forward, s * right + c * forward)
    }

    /// The pose whose transform undoes this one.
    pub fn inverse(&self) -> Pose {
        let (s, c) = self.theta.sin_cos();
        Pose::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    /// Pitch about the camera's right axis; negative points the camera down.
    pub elevation_rad: f64,
    pub sensor_height_m: f64,
}

impl CameraExtrinsics {
    pub fn new(elevation_rad: f64, sensor_height_m: f64) -> Result<Self, GeometryError> {
        if !elevation_rad.is_finite() || !(sensor_height_m.is_finite() && sensor_height_m > 0.0) {
            return Err(GeometryError::InvalidParameter(format!(
                "elevation {elevation_rad} rad, sensor height {sensor_height_m} m"
            )));
        }
        Ok(Self {
            elevation_rad,
            sensor_height_m,
        })
    }

    /// Camera-frame vector to geocentric (no translation).
    pub fn rotate(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.elevation_rad.sin_cos();
        Vec3::new(p.x, c * p.y - s * p.z, s * p.y + c * p.z)
    }

    /// Geocentric vector back to the camera frame (no translation).
    pub fn unrotate(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.elevation_rad.sin_cos();
        Vec3::new(p.x, c * p.y + s * p.z, -s * p.y + c * p.z)
    }
}

/// Pinhole intrinsics with independent horizontal and vertical focal lengths,
/// needed when the sensor is rescaled non-uniformly to the processing size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub sensor_width_px: u32,
    pub sensor_height_px: u32,
    pub hfov_rad: f64,
    pub proc_width_px: u32,
    pub proc_height_px: u32,
    pub f_x: f64,
    pub f_z: f64,
    pub c_x: f64,
    pub c_y: f64,
}

pub fn compute_intrinsics(
    sensor_w: u32,
    sensor_h: u32,
    hfov: f64,
    proc_w: u32,
    proc_h: u32,
) -> Result<CameraIntrinsics, GeometryError> {
    if sensor_w < 2 || sensor_h < 2 || proc_w < 2 || proc_h < 2 {
        return Err(GeometryError::InvalidParameter(format!(
            "image dimensions must be >= 2 (sensor {sensor_w}x{sensor_h}, processing {proc_w}x{proc_h})"
        )));
    }
    if !hfov.is_finite() || hfov <= 0.0 || hfov >= PI {
        return Err(GeometryError::InvalidParameter(format!(
            "hfov must lie in (0, pi), got {hfov}"
        )));
    }
    let f_s = f64::from(sensor_w) / (2.0 * (hfov / 2.0).tan());
    let s_x = f64::from(proc_w) / f64::from(sensor_w);
    let s_y = f64::from(proc_h) / f64::from(sensor_h);
    Ok(CameraIntrinsics {
        sensor_width_px: sensor_w,
        sensor_height_px: sensor_h,
        hfov_rad: hfov,
        proc_width_px: proc_w,
        proc_height_px: proc_h,
        f_x: f_s * s_x,
        f_z: f_s * s_y,
        c_x: (f64::from(proc_w) - 1.0) / 2.0,
        c_y: (f64::from(proc_h) - 1.0) / 2.0,
    })
}

impl CameraIntrinsics {
    /// Sensor-resolution focal length.
    pub fn sensor_focal(&self) -> f64 {
        f64::from(self.sensor_width_px) / (2.0 * (self.hfov_rad / 2.0).tan())
    }

    pub fn width(&self) -> usize {
        self.proc_width_px as usize
    }

    pub fn height(&self) -> usize {
        self.proc_height_px as usize
    }

    /// Legacy single-focal variant (`f_z := f_x`). Only correct when the
    /// rescale is uniform; kept to reproduce the portrait-mode artifact.
    pub fn single_focal(&self) -> CameraIntrinsics {
        CameraIntrinsics { f_z: self.f_x, ..*self }
    }

    /// Camera-frame ray through pixel `(u, v)`, scaled so its forward
    /// component is 1 (ray parameter equals depth).
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.c_x) / self.f_x, 1.0, -(v - self.c_y) / self.f_z)
    }

    /// Projects a camera-frame point to `(u, v, depth)`; `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        if p.y <= 0.0 {
            return None;
        }
        Some((self.c_x + p.x * self.f_x / p.y, self.c_y - p.z * self.f_z / p.y, p.y))
    }
}

/// Everything needed to turn a depth frame into map-frame points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Sensor {
    /// Portrait 360x640 RGB-D camera processed at 160x120, 42 degree HFOV,
    /// mounted 1.31 m high and pitched 30 degrees down, 0.5-5.0 m range.
    pub fn standard() -> Self {
        Self {
            intrinsics: compute_intrinsics(360, 640, 42f64.to_radians(), 160, 120)
                .expect("standard intrinsics are valid"),
            extrinsics: CameraExtrinsics {
                elevation_rad: (-30f64).to_radians(),
                sensor_height_m: 1.31,
            },
            min_depth: 0.5,
            max_depth: 5.0,
        }
    }

    pub fn to_world(&self, depth: &DepthImage, pose: &Pose) -> Result<PointCloud, GeometryError> {
        depth_to_world(
            depth,
            &self.intrinsics,
            &self.extrinsics,
            pose,
            self.min_depth,
            self.max_depth,
        )
    }
}

/// Planar depth image in meters; 0 encodes a missing return.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, d: f32) {
        self.data[v * self.width + u] = d;
    }
}

/// One point per source pixel (row-major), with a validity flag per pixel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        let valid = vec![true; points.len()];
        Self { points, valid }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn valid_points(&self) -> impl Iterator<Item = &Vec3> + '_ {
        self.points.iter().zip(&self.valid).filter_map(|(p, &ok)| ok.then_some(p))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    fn map_points(&self, f: impl Fn(Vec3) -> Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            valid: self.valid.clone(),
        }
    }
}

pub fn backproject_depth(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    min_depth: f64,
    max_depth: f64,
) -> Result<PointCloud, GeometryError> {
    if depth.width != intr.width() || depth.height != intr.height() {
        return Err(GeometryError::Shape {
            got_w: depth.width,
            got_h: depth.height,
            want_w: intr.width(),
            want_h: intr.height(),
        });
    }
    let n = depth.width * depth.height;
    let mut points = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = f64::from(depth.get(u, v));
            let ok = d > 0.0 && d >= min_depth && d <= max_depth && d.is_finite();
            valid.push(ok);
            if ok {
                points.push(Vec3::new(
                    (u as f64 - intr.c_x) * d / intr.f_x,
                    d,
                    -(v as f64 - intr.c_y) * d / intr.f_z,
                ));
            } else {
                points.push(Vec3::default());
            }
        }
    }
    Ok(PointCloud { points, valid })
}

pub fn to_geocentric(pc: &PointCloud, ext: &CameraExtrinsics) -> PointCloud {
    let h = ext.sensor_height_m;
    pc.map_points(|p| {
        let r = ext.rotate(p);
        Vec3::new(r.x, r.y, r.z + h)
    })
}

pub fn world_transform(pc: &PointCloud, pose: &Pose) -> PointCloud {
    pc.map_points(|p| {
        let (dx, dy) = pose.rotate(p.x, p.y);
        Vec3::new(pose.x + dx, pose.y + dy, p.z)
    })
}

/// Back-projects a depth frame straight into the map frame.
pub fn depth_to_world(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    ext: &CameraExtrinsics,
    pose: &Pose,
    min_depth: f64,
    max_depth: f64,
) -> Result<PointCloud, GeometryError> {
    let cam = backproject_depth(depth, intr, min_depth, max_depth)?;
    Ok(world_transform(&to_geocentric(&cam, ext), pose))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HFOV_42: f64 = 42.0 * PI / 180.0;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn portrait_intrinsics() {
        let k = compute_intrinsics(360, 640, HFOV_42, 160, 120).unwrap();
        assert!(close(k.sensor_focal(), 468.916, 1e-3));
        assert!(close(k.f_x, 208.407, 1e-3));
        assert!(close(k.f_z, 87.922, 1e-3));
        assert_eq!((k.c_x, k.c_y), (79.5, 59.5));
        assert!(k.f_x != k.f_z);
    }

    #[test]
    fn square_ninety_degree_camera() {
        let k = compute_intrinsics(100, 100, PI / 2.0, 100, 100).unwrap();
        assert!(close(k.f_x, 50.0, 1e-9));
        assert!(close(k.f_z, 50.0, 1e-9));
        assert_eq!((k.c_x, k.c_y), (49.5, 49.5));
    }

    #[test]
    fn identity_rescale_keeps_sensor_focal() {
        let k = compute_intrinsics(360, 640, HFOV_42, 360, 640).unwrap();
        assert!(close(k.f_x, k.sensor_focal(), 1e-9));
        assert!(close(k.f_z, k.sensor_focal(), 1e-9));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(compute_intrinsics(1, 640, HFOV_42, 160, 120).is_err());
        assert!(compute_intrinsics(360, 640, 0.0, 160, 120).is_err());
        assert!(compute_intrinsics(360, 640, PI, 160, 120).is_err());
        assert!(compute_intrinsics(360, 640, f64::NAN, 160, 120).is_err());
    }

    fn single_pixel(k: &CameraIntrinsics, u: usize, v: usize, d: f32) -> DepthImage {
        let mut img = DepthImage::new(k.width(), k.height());
        img.set(u, v, d);
        img
    }

    #[test]
    fn backprojection_examples() {
        // Odd-sized image so the principal point and the unit off-axis pixel are integral.
        let k = compute_intrinsics(101, 101, PI / 2.0, 101, 101).unwrap();
        assert_eq!(k.c_x, 50.0);
        assert!(close(k.f_x, 50.5, 1e-12));
        let pc = backproject_depth(&single_pixel(&k, 50, 50, 2.0), &k, 0.5, 5.0).unwrap();
        let p = pc.points[50 * 101 + 50];
        assert_eq!(p, Vec3::new(0.0, 2.0, 0.0));
        assert_eq!(pc.valid_count(), 1);

        // Unit off-axis case: u - c_x == f_x.
        let k = CameraIntrinsics {
            f_x: 40.0,
            ..k
        };
        let pc = backproject_depth(&single_pixel(&k, 90, 50, 2.0), &k, 0.5, 5.0).unwrap();
        assert_eq!(pc.points[50 * 101 + 90], Vec3::new(2.0, 2.0, 0.0));
    }

    #[test]
    fn depth_range_gates_validity() {
        let k = compute_intrinsics(360, 640, HFOV_42, 160, 120).unwrap();
        let pc = backproject_depth(&single_pixel(&k, 3, 3, 0.3), &k, 0.5, 5.0).unwrap();
        assert_eq!(pc.valid_count(), 0);
        let pc = backproject_depth(&single_pixel(&k, 3, 3, 5.5), &k, 0.5, 5.0).unwrap();
        assert_eq!(pc.valid_count(), 0);
        // Zero is the missing-return code regardless of the configured range.
        let pc = backproject_depth(&single_pixel(&k, 3, 3, 0.0), &k, 0.0, 5.0).unwrap();
        assert_eq!(pc.valid_count(), 0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let k = compute_intrinsics(360, 640, HFOV_42, 160, 120).unwrap();
        let err = backproject_depth(&DepthImage::new(10, 10), &k, 0.5, 5.0).unwrap_err();
        assert!(matches!(err, GeometryError::Shape { .. }));
    }

    #[test]
    fn row_below_center_is_below_the_optical_axis() {
        let k = compute_intrinsics(360, 640, HFOV_42, 160, 120).unwrap();
        let pc = backproject_depth(&single_pixel(&k, 80, 100, 2.0), &k, 0.5, 5.0).unwrap();
        assert!(pc.points[100 * 160 + 80].z < 0.0);
    }

    #[test]
    fn geocentric_examples() {
        let pc = PointCloud::from_points(vec![Vec3::new(0.0, 2.0, 0.0)]);
        let ext = CameraExtrinsics::new(0.0, 1.31).unwrap();
        assert_eq!(to_geocentric(&pc, &ext).points[0], Vec3::new(0.0, 2.0, 1.31));

        let straight_down = CameraExtrinsics::new(-PI / 2.0, 1.31).unwrap();
        let pc = PointCloud::from_points(vec![Vec3::new(0.0, 1.31, 0.0)]);
        let g = to_geocentric(&pc, &straight_down).points[0];
        assert!(g.z.abs() < 1e-12, "{g:?}");
        assert!(g.y.abs() < 1e-12);
        assert!(CameraExtrinsics::new(0.0, 0.0).is_err());
    }

    #[test]
    fn zero_height_level_camera_is_identity() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-0.5, 0.1, -2.0)];
        let pc = PointCloud::from_points(pts.clone());
        let ext = CameraExtrinsics {
            elevation_rad: 0.0,
            sensor_height_m: 0.0,
        };
        assert_eq!(to_geocentric(&pc, &ext).points, pts);
    }

    #[test]
    fn heading_convention() {
        let pc = PointCloud::from_points(vec![Vec3::new(0.0, 1.0, 0.7)]);
        assert_eq!(world_transform(&pc, &Pose::new(0.0, 0.0, 0.0)).points[0], Vec3::new(0.0, 1.0, 0.7));
        // Facing +y, a point straight ahead lands one meter further along +y.
        let p = world_transform(&pc, &Pose::new(1.0, 0.0, 0.0)).points[0];
        assert_eq!(p, Vec3::new(1.0, 1.0, 0.7));
        // A quarter turn counter-clockwise faces -x.
        let p = world_transform(&pc, &Pose::new(1.0, 0.0, PI / 2.0)).points[0];
        assert!(close(p.x, 0.0, 1e-12) && close(p.y, 0.0, 1e-12));
        let (fx, fy) = Pose::new(0.0, 0.0, PI / 2.0).forward();
        assert!(close(fx, -1.0, 1e-12) && close(fy, 0.0, 1e-12));
    }

    #[test]
    fn pose_inverse_composes_to_identity() {
        let pose = Pose::new(2.0, -1.5, 0.7);
        let pc = PointCloud::from_points(vec![Vec3::new(0.3, -0.2, 1.0), Vec3::new(4.0, 1.0, 0.0)]);
        let back = world_transform(&world_transform(&pc, &pose), &pose.inverse());
        for (a, b) in back.points.iter().zip(&pc.points) {
            assert!(a.distance(*b) < 1e-12);
        }
    }

    #[test]
    fn angles_normalize_to_half_open_interval() {
        assert!(close(normalize_angle(3.0 * PI), PI, 1e-12));
        assert!(close(normalize_angle(-PI), PI, 1e-12));
        assert!(close(normalize_angle(-3.0 * PI / 2.0), PI / 2.0, 1e-12));
        assert_eq!(normalize_angle(0.25), 0.25);
    }
}
