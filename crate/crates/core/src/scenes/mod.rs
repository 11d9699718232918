//! Analytic ground-truth scenes, exact renders, camera trajectories and the
//! on-disk dataset format.

mod io;
mod synth;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use io::{
    read_cameras, read_pfm, read_pgm, read_ppm, write_cameras, write_pfm, write_pgm, write_ppm, Dataset, Frame, Split,
};
pub use synth::{frustum_mask, gt_occupancy, write_dataset};

use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::geometry::{pixel_to_ray, ray_aabb, Aabb, Camera, Intrinsics, Pose, Ray, Vec3};
use crate::image::{DepthMap, Image, LabelMap};

/// Depth written for pixels whose ray leaves the volume without a hit (m).
pub const FAR_SENTINEL: f64 = 1000.0;

/// One solid of an analytic scene. Planes are solid half-spaces below `normal·p = offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64, albedo: [f64; 3], class: u8 },
    Box { center: [f64; 3], half_extents: [f64; 3], albedo: [f64; 3], class: u8 },
    Plane { normal: [f64; 3], offset: f64, albedo: [f64; 3], class: u8 },
}

impl Primitive {
    pub fn albedo(&self) -> [f64; 3] {
        match *self {
            Primitive::Sphere { albedo, .. } | Primitive::Box { albedo, .. } | Primitive::Plane { albedo, .. } => albedo,
        }
    }

    pub fn class(&self) -> u8 {
        match *self {
            Primitive::Sphere { class, .. } | Primitive::Box { class, .. } | Primitive::Plane { class, .. } => class,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Sphere { radius, .. } => radius > 0.0,
            Primitive::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            Primitive::Plane { normal, .. } => Vec3(normal).norm() > 0.0,
        };
        let albedo_ok = self.albedo().iter().all(|a| (0.0..=1.0).contains(a));
        if !ok || !albedo_ok {
            return Err(Error::Config(format!("invalid primitive {self:?}")));
        }
        if self.class() == 0 {
            return Err(Error::Config("primitive class 0 is reserved for free space".into()));
        }
        Ok(())
    }

    /// Exact signed distance (m).
    pub fn sdf(&self, p: Vec3) -> f64 {
        match *self {
            Primitive::Sphere { center, radius, .. } => (p - Vec3(center)).norm() - radius,
            Primitive::Box { center, half_extents, .. } => {
                let q = (p - Vec3(center)).zip(Vec3(half_extents), |d, h| d.abs() - h);
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.x().max(q.y()).max(q.z()).min(0.0)
            }
            Primitive::Plane { normal, offset, .. } => {
                let n = Vec3(normal);
                (n.dot(p) - offset) / n.norm()
            }
        }
    }

    /// Direct point-membership test, independent of `sdf`.
    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Primitive::Sphere { center, radius, .. } => {
                let d = p - Vec3(center);
                d.dot(d) <= radius * radius
            }
            Primitive::Box { center, half_extents, .. } => {
                (0..3).all(|i| (p[i] - center[i]).abs() <= half_extents[i])
            }
            Primitive::Plane { normal, offset, .. } => Vec3(normal).dot(p) <= offset,
        }
    }

    /// Smallest ray parameter t > `t_min` where the ray enters the solid.
    pub fn intersect(&self, ray: &Ray, t_min: f64) -> Option<f64> {
        let (o, d) = (ray.origin, ray.direction);
        match *self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = o - Vec3(center);
                let b = oc.dot(d);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t > t_min)
            }
            Primitive::Box { center, half_extents, .. } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    let lo = center[i] - half_extents[i];
                    let hi = center[i] + half_extents[i];
                    if d[i] == 0.0 {
                        if o[i] < lo || o[i] > hi {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((lo - o[i]) / d[i], (hi - o[i]) / d[i]);
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t0 <= t1 && t0 > t_min).then_some(t0)
            }
            Primitive::Plane { normal, offset, .. } => {
                let n = Vec3(normal);
                let nd = n.dot(d);
                if nd >= 0.0 {
                    return None;
                }
                let t = (offset - n.dot(o)) / nd;
                (t > t_min).then_some(t)
            }
        }
    }

    /// Outward unit normal at a surface point.
    pub fn normal(&self, p: Vec3) -> Vec3 {
        match *self {
            Primitive::Sphere { center, .. } => (p - Vec3(center)).normalized(),
            Primitive::Box { center, half_extents, .. } => {
                let l = p - Vec3(center);
                let axis = (0..3)
                    .max_by(|&a, &b| (l[a].abs() - half_extents[a]).total_cmp(&(l[b].abs() - half_extents[b])))
                    .expect("three axes");
                let mut n = [0.0; 3];
                n[axis] = l[axis].signum();
                Vec3(n)
            }
            Primitive::Plane { normal, .. } => Vec3(normal).normalized(),
        }
    }
}

/// Shading and texture settings of the oracle renderer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Appearance {
    pub background: [f64; 3],
    pub light_dir: [f64; 3],
    pub ambient: f64,
    /// Checker cells per meter.
    pub texture_frequency: f64,
}

impl Default for Appearance {
    fn default() -> Self {
        Appearance { background: [0.7, 0.8, 0.95], light_dir: [0.4, 0.3, 1.0], ambient: 0.35, texture_frequency: 2.0 }
    }
}

/// Union of primitives.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub appearance: Appearance,
}

impl AnalyticScene {
    pub fn new(primitives: Vec<Primitive>, appearance: Appearance) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::Config("scene needs at least one primitive".into()));
        }
        for p in &primitives {
            p.validate()?;
        }
        Ok(AnalyticScene { primitives, appearance })
    }

    /// Largest class id.
    pub fn max_class(&self) -> u8 {
        self.primitives.iter().map(Primitive::class).max().unwrap_or(0)
    }

    /// Textured albedo at a point on primitive `idx`.
    pub fn albedo_at(&self, idx: usize, p: Vec3) -> [f64; 3] {
        let base = self.primitives[idx].albedo();
        let f = self.appearance.texture_frequency;
        let parity = ((f * p.x()).floor() + (f * p.y()).floor() + (f * p.z()).floor()).rem_euclid(2.0);
        let check = if parity < 0.5 { 1.0 } else { 0.55 };
        let phase = 2.3 * p.x() + 1.7 * p.y() + 3.1 * p.z();
        std::array::from_fn(|c| (base[c] * check * (0.85 + 0.15 * (phase + 2.1 * c as f64).sin())).clamp(0.0, 1.0))
    }
}

/// Scene SDF and the albedo of the closest primitive.
pub fn analytic_sdf(scene: &AnalyticScene, p: Vec3) -> (f64, [f64; 3]) {
    let (idx, s) = closest(scene, p);
    (s, scene.albedo_at(idx, p))
}

/// Index and SDF of the primitive with the smallest SDF at `p`.
pub fn closest(scene: &AnalyticScene, p: Vec3) -> (usize, f64) {
    scene
        .primitives
        .iter()
        .enumerate()
        .map(|(i, q)| (i, q.sdf(p)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// First hit of `ray` within the segment [t0, t1].
pub fn first_hit(scene: &AnalyticScene, ray: &Ray, t0: f64, t1: f64) -> Option<(usize, f64)> {
    scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.intersect(ray, t0).map(|t| (i, t)))
        .filter(|&(_, t)| t <= t1)
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Exact render of one pixel: (z-depth, color, class). Misses return the far
/// sentinel, the background and class 0.
pub fn oracle_pixel(scene: &AnalyticScene, volume: &Aabb, cam: &Camera, pixel: [f64; 2]) -> Result<(f64, [f64; 3], u8)> {
    let ray = pixel_to_ray(cam, pixel)?;
    let miss = (FAR_SENTINEL, scene.appearance.background, 0);
    let Some((t0, t1)) = ray_aabb(&ray, volume) else { return Ok(miss) };
    let Some((idx, t)) = first_hit(scene, &ray, t0, t1) else { return Ok(miss) };
    let p = ray.at(t);
    let zdepth = cam.pose.apply(p).z();
    let n = scene.primitives[idx].normal(p);
    let l = Vec3(scene.appearance.light_dir).normalized();
    let a = scene.appearance.ambient;
    let shade = a + (1.0 - a) * n.dot(l).max(0.0);
    let albedo = scene.albedo_at(idx, p);
    Ok((zdepth, albedo.map(|c| (c * shade).clamp(0.0, 1.0)), scene.primitives[idx].class()))
}

/// Exact depth, color and label maps of `cam`; only hits inside `volume` count.
#[derive(Clone, Debug)]
pub struct OracleView {
    pub depth: DepthMap,
    pub color: Image,
    pub labels: LabelMap,
}

pub fn oracle_render(scene: &AnalyticScene, volume: &Aabb, cam: &Camera) -> Result<OracleView> {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let rows: Vec<Vec<(f64, [f64; 3], u8)>> = (0..h)
        .into_par_iter()
        .map(|y| (0..w).map(|x| oracle_pixel(scene, volume, cam, [x as f64, y as f64])).collect())
        .collect::<Result<_>>()?;
    let mut out = OracleView { depth: DepthMap::new(w, h), color: Image::new(w, h), labels: LabelMap::new(w, h) };
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (d, c, l)) in row.into_iter().enumerate() {
            out.depth.set(x, y, d as f32);
            out.color.set(x, y, c.map(|v| v as f32));
            out.labels.set(x, y, l);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Straight,
    Arc,
}

/// Forward-facing camera path on a horizontal plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub kind: TrajectoryKind,
    pub spacing_m: f64,
    pub start: [f64; 3],
    pub heading_deg: f64,
    /// Negative looks down.
    pub pitch_deg: f64,
    /// Turning radius of the arc (left turn).
    pub radius_m: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            kind: TrajectoryKind::Straight,
            spacing_m: 0.5,
            start: [-6.0, 0.0, 0.3],
            heading_deg: 0.0,
            pitch_deg: -15.0,
            radius_m: 10.0,
        }
    }
}

fn look(center: Vec3, heading: f64, pitch: f64) -> Pose {
    let fwd = Vec3::new(heading.cos() * pitch.cos(), heading.sin() * pitch.cos(), pitch.sin());
    Pose::looking(center, fwd, Vec3::new(0.0, 0.0, 1.0))
}

/// Poses of `frames` cameras with consecutive centers exactly `spacing_m` apart.
pub fn generate_trajectory(cfg: &TrajectoryConfig, frames: usize) -> Result<Vec<Pose>> {
    if frames < 3 {
        return Err(Error::Config(format!("trajectory needs at least 3 frames, got {frames}")));
    }
    if !(cfg.spacing_m > 0.0) || !(cfg.pitch_deg.abs() < 89.0) {
        return Err(Error::Config("trajectory spacing must be positive and |pitch| < 89 deg".into()));
    }
    let h0 = cfg.heading_deg.to_radians();
    let pitch = cfg.pitch_deg.to_radians();
    let start = Vec3(cfg.start);
    match cfg.kind {
        TrajectoryKind::Straight => {
            let dir = Vec3::new(h0.cos(), h0.sin(), 0.0);
            Ok((0..frames).map(|i| look(start + dir * (i as f64 * cfg.spacing_m), h0, pitch)).collect())
        }
        TrajectoryKind::Arc => {
            let r = cfg.radius_m;
            if !(r > 0.0 && cfg.spacing_m < 2.0 * r) {
                return Err(Error::Config("arc radius must exceed half the spacing".into()));
            }
            let step = 2.0 * (cfg.spacing_m / (2.0 * r)).asin();
            let left = Vec3::new(-h0.sin(), h0.cos(), 0.0);
            let c = start + left * r;
            Ok((0..frames)
                .map(|i| {
                    let h = h0 + step * i as f64;
                    let p = c + Vec3::new(h.sin(), -h.cos(), 0.0) * r;
                    look(p, h, pitch)
                })
                .collect())
        }
    }
}

/// Everything `synth` needs to build a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view.
    pub fov_deg: f64,
    pub frames: usize,
    /// Frames with `index % holdout_every == holdout_offset` are held out; 0 disables.
    pub holdout_every: usize,
    pub holdout_offset: usize,
    pub frame_interval_s: f64,
    pub grid: GridConfig,
    pub trajectory: TrajectoryConfig,
    pub appearance: Appearance,
    pub primitives: Vec<Primitive>,
}

/// Voxel grid placement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub min: [f64; 3],
    pub voxel_size: f64,
    pub resolution: [usize; 3],
}

impl Default for GridConfig {
    fn default() -> Self {
        let d = GridSpec::desk_default();
        GridConfig { min: d.bounds.min.0, voxel_size: d.voxel_size, resolution: d.resolution }
    }
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::from_origin(Vec3(self.min), self.voxel_size, self.resolution).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Ground plane, two spheres and a box.
pub fn desk_primitives() -> Vec<Primitive> {
    vec![
        Primitive::Plane { normal: [0.0, 0.0, 1.0], offset: -1.2, albedo: [0.6, 0.55, 0.45], class: 1 },
        Primitive::Sphere { center: [2.0, -2.6, -0.4], radius: 0.8, albedo: [0.85, 0.35, 0.3], class: 2 },
        Primitive::Sphere { center: [3.6, 2.8, -0.5], radius: 0.7, albedo: [0.3, 0.5, 0.85], class: 2 },
        Primitive::Box { center: [0.6, 2.2, -0.6], half_extents: [0.5, 0.5, 0.6], albedo: [0.35, 0.75, 0.4], class: 3 },
    ]
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 128,
            height: 128,
            fov_deg: 80.0,
            frames: 20,
            holdout_every: 5,
            holdout_offset: 2,
            frame_interval_s: 0.1,
            grid: GridConfig::default(),
            trajectory: TrajectoryConfig::default(),
            appearance: Appearance::default(),
            primitives: desk_primitives(),
        }
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str, name: &str) -> Result<Self> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{name}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 || !(self.fov_deg > 1.0 && self.fov_deg < 170.0) {
            return Err(Error::Config("image size must be at least 2x2 and fov in (1, 170) deg".into()));
        }
        if self.holdout_every == 1 {
            return Err(Error::Config("holdout_every = 1 would hold out every frame".into()));
        }
        if !(self.frame_interval_s > 0.0) {
            return Err(Error::Config("frame_interval_s must be positive".into()));
        }
        self.grid.spec()?;
        self.scene()?;
        generate_trajectory(&self.trajectory, self.frames)?;
        Ok(())
    }

    pub fn scene(&self) -> Result<AnalyticScene> {
        AnalyticScene::new(self.primitives.clone(), self.appearance)
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let f = 0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan();
        Intrinsics::new(f, f, 0.5 * (self.width as f64 - 1.0), 0.5 * (self.height as f64 - 1.0), self.width, self.height)
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let k = self.intrinsics()?;
        Ok(generate_trajectory(&self.trajectory, self.frames)?.into_iter().map(|pose| Camera { intrinsics: k, pose }).collect())
    }

    pub fn is_holdout(&self, i: usize) -> bool {
        self.holdout_every > 1 && i % self.holdout_every == self.holdout_offset
    }
}
