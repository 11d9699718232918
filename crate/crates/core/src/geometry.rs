//! Pinhole cameras, rays, warping between views and image sampling.
//!
//! Conventions:
//! - poses map world (volume) coordinates to camera coordinates, `x_cam = R·x + t`;
//! - the camera looks down +z, image u grows with +x and v with +y;
//! - pixel centers sit at integer coordinates, so pixel (0, 0) covers [-0.5, 0.5]².

use std::ops::{Add, Index, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::image::Image;

/// Near clip plane in meters, shared by projection, ray clipping and depth evaluation.
pub const NEAR_CLIP: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    #[inline]
    pub fn x(self) -> f64 {
        self.0[0]
    }
    #[inline]
    pub fn y(self) -> f64 {
        self.0[1]
    }
    #[inline]
    pub fn z(self) -> f64 {
        self.0[2]
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [x, y, z] = o.0;
        Vec3([b * z - c * y, c * x - a * z, a * y - b * x])
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    #[inline]
    pub fn map(self, f: impl Fn(f64) -> f64) -> Vec3 {
        Vec3([f(self.0[0]), f(self.0[1]), f(self.0[2])])
    }

    #[inline]
    pub fn zip(self, o: Vec3, f: impl Fn(f64, f64) -> f64) -> Vec3 {
        Vec3([f(self.0[0], o.0[0]), f(self.0[1], o.0[1]), f(self.0[2], o.0[2])])
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        self.zip(o, |a, b| a + b)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        self.zip(o, |a, b| a - b)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        self.map(|a| a * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        self.map(|a| -a)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Self {
        Mat3([r0.0, r1.0, r2.0])
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]])
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Rotation about the world z axis by `angle` radians.
    pub fn rot_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::domain(format!("focal lengths must be positive ({}, {})", self.fx, self.fy)));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::domain(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics for an image subsampled by `factor`: pixel (i, j) maps to (factor·i, factor·j).
    pub fn subsampled(&self, factor: usize) -> Intrinsics {
        let f = factor as f64;
        Intrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width.div_ceil(factor),
            height: self.height.div_ceil(factor),
        }
    }

    pub fn contains(&self, px: [f64; 2]) -> bool {
        px[0] >= -0.5 && px[1] >= -0.5 && px[0] <= self.width as f64 - 0.5 && px[1] <= self.height as f64 - 0.5
    }
}

/// Rigid world→camera transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rotation: Mat3::IDENTITY, translation: Vec3::ZERO };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let p = Pose { rotation, translation };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let rtr = self.rotation.transpose().mul_mat(&self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                if (rtr.0[i][j] - e).abs() > 1e-6 {
                    return Err(Error::domain("pose rotation is not orthonormal"));
                }
            }
        }
        if (self.rotation.det() - 1.0).abs() > 1e-6 {
            return Err(Error::domain("pose rotation has determinant != 1"));
        }
        if !self.translation.is_finite() {
            return Err(Error::domain("pose translation is not finite"));
        }
        Ok(())
    }

    /// Pose of a camera at `center` whose optical axis is `forward` and whose image
    /// v axis points along -`up` (images are stored top row first).
    pub fn looking(center: Vec3, forward: Vec3, up: Vec3) -> Pose {
        let z = forward.normalized();
        let x = z.cross(up).normalized();
        let y = z.cross(x);
        let rotation = Mat3::from_rows(x, y, z);
        let translation = -rotation.mul_vec(center);
        Pose { rotation, translation }
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    pub fn inverse_apply(&self, p_cam: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(p_cam - self.translation)
    }

    /// Row-major 3×4 [R | t].
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation.0;
        let t = &self.translation.0;
        [r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2]]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Pose> {
        Pose::new(
            Mat3([[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]]),
            Vec3([v[3], v[7], v[11]]),
        )
    }

    /// Moves the camera center by `offset` (world frame) and turns it by `yaw` radians
    /// about the world z axis, keeping the center fixed while turning.
    pub fn offset(&self, offset: Vec3, yaw: f64) -> Pose {
        let center = self.center() + offset;
        let rotation = self.rotation.mul_mat(&Mat3::rot_z(yaw).transpose());
        let translation = -rotation.mul_vec(center);
        Pose { rotation, translation }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).all(|i| min[i] < max[i]) {
            Ok(Aabb { min, max })
        } else {
            Err(Error::domain(format!("box min {:?} not below max {:?}", min.0, max.0)))
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        Vec3([
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
            p[2].clamp(self.min[2], self.max[2]),
        ])
    }
}

impl Camera {
    /// Direction of the pixel's back-projection in camera coordinates (z = 1).
    #[inline]
    pub fn pixel_direction_cam(&self, pixel: [f64; 2]) -> Vec3 {
        let k = &self.intrinsics;
        Vec3([(pixel[0] - k.cx) / k.fx, (pixel[1] - k.cy) / k.fy, 1.0])
    }
}

/// Ray through a pixel, starting at the camera center.
pub fn pixel_to_ray(cam: &Camera, pixel: [f64; 2]) -> Result<Ray> {
    if !cam.intrinsics.contains(pixel) {
        return Err(Error::domain(format!("pixel ({}, {}) outside image", pixel[0], pixel[1])));
    }
    let d_cam = cam.pixel_direction_cam(pixel);
    let direction = cam.pose.rotation.transpose().mul_vec(d_cam).normalized();
    Ok(Ray { origin: cam.pose.center(), direction })
}

/// Pinhole projection; returns the pixel and the camera-frame z.
pub fn project_point(cam: &Camera, point: Vec3) -> Result<([f64; 2], f64)> {
    let pc = cam.pose.apply(point);
    project_camera_point(&cam.intrinsics, pc)
}

#[inline]
fn project_camera_point(k: &Intrinsics, pc: Vec3) -> Result<([f64; 2], f64)> {
    let z = pc.z();
    if !(z > NEAR_CLIP) {
        return Err(Error::BehindCamera { z });
    }
    Ok(([k.cx + k.fx * pc.x() / z, k.cy + k.fy * pc.y() / z], z))
}

/// Transform between a target and a source view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeCamera {
    pub target: Intrinsics,
    pub source: Intrinsics,
    /// Target-camera frame → source-camera frame.
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RelativeCamera {
    pub fn between(target: &Camera, source: &Camera) -> Self {
        let rotation = source.pose.rotation.mul_mat(&target.pose.rotation.transpose());
        let translation = source.pose.translation - rotation.mul_vec(target.pose.translation);
        RelativeCamera { target: target.intrinsics, source: source.intrinsics, rotation, translation }
    }

    pub fn identity(k: Intrinsics) -> Self {
        RelativeCamera { target: k, source: k, rotation: Mat3::IDENTITY, translation: Vec3::ZERO }
    }

    /// Source-camera coordinates of the target pixel back-projected to z-depth `depth`.
    #[inline]
    pub fn source_point(&self, x: [f64; 2], depth: f64) -> Vec3 {
        let k = &self.target;
        let p = Vec3([(x[0] - k.cx) / k.fx * depth, (x[1] - k.cy) / k.fy * depth, depth]);
        self.rotation.mul_vec(p) + self.translation
    }
}

/// Warps a target pixel with z-depth `depth` into the source image.
///
/// The result may fall outside the source image; callers decide what to do with it.
pub fn warp_pixel(x: [f64; 2], depth: f64, rel: &RelativeCamera) -> Result<[f64; 2]> {
    if !(depth > NEAR_CLIP) {
        return Err(Error::domain(format!("warp depth {depth} below near clip")));
    }
    let q = rel.source_point(x, depth);
    project_camera_point(&rel.source, q).map(|(px, _)| px)
}

/// Slab-method ray/box intersection, clipped to `t ≥ NEAR_CLIP`.
pub fn ray_aabb(ray: &Ray, bx: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        let o = ray.origin[i];
        let d = ray.direction[i];
        if d == 0.0 {
            if o < bx.min[i] || o > bx.max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut a, mut b) = ((bx.min[i] - o) * inv, (bx.max[i] - o) * inv);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    let t0 = t0.max(NEAR_CLIP);
    if t1 < t0 {
        None
    } else {
        Some((t0, t1))
    }
}

/// Integer corner and the four normalized weights of a bilinear lookup.
///
/// Weights are ordered (x0,y0), (x1,y0), (x0,y1), (x1,y1).
#[inline]
pub fn bilinear_weights(width: usize, height: usize, x: [f64; 2]) -> Result<(usize, usize, [f64; 4])> {
    let (w, h) = (width as f64, height as f64);
    if !(x[0] >= 0.0 && x[0] <= w - 1.0 && x[1] >= 0.0 && x[1] <= h - 1.0) {
        return Err(Error::domain(format!("sample ({}, {}) outside {}x{} image", x[0], x[1], width, height)));
    }
    let i0 = (x[0].floor() as usize).min(width.saturating_sub(2));
    let j0 = (x[1].floor() as usize).min(height.saturating_sub(2));
    let fx = x[0] - i0 as f64;
    let fy = x[1] - j0 as f64;
    let wts = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
    debug_assert!(wts.iter().all(|&v| v >= 0.0));
    debug_assert!((wts.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    Ok((i0, j0, wts))
}

/// Bilinear RGB lookup at a continuous pixel position.
pub fn bilinear_image_sample(image: &Image, x: [f64; 2]) -> Result<[f64; 3]> {
    let (i0, j0, w) = bilinear_weights(image.width, image.height, x)?;
    let i1 = (i0 + 1).min(image.width - 1);
    let j1 = (j0 + 1).min(image.height - 1);
    let corners = [image.get(i0, j0), image.get(i1, j0), image.get(i0, j1), image.get(i1, j1)];
    let mut out = [0.0; 3];
    for (c, wt) in corners.iter().zip(w) {
        for k in 0..3 {
            out[k] += wt * c[k] as f64;
        }
    }
    Ok(out)
}

/// True when `x` can be sampled bilinearly.
#[inline]
pub fn in_sample_range(image: &Image, x: [f64; 2]) -> bool {
    x[0] >= 0.0 && x[1] >= 0.0 && x[0] <= (image.width - 1) as f64 && x[1] <= (image.height - 1) as f64
}
