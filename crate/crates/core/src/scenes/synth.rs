//! Dataset synthesis from a scene description.

use std::path::Path;

use rayon::prelude::*;

use super::{closest, oracle_render, AnalyticScene, Dataset, Frame, SceneConfig, Split};
use crate::error::Result;
use crate::evaluation::{OccGrid, DEPTH_RANGE};
use crate::field::GridSpec;
use crate::geometry::Camera;
use crate::image::Image;

/// Labels of the voxel centers: class of the closest primitive where the scene SDF ≤ 0.
pub fn gt_occupancy(scene: &AnalyticScene, spec: &GridSpec) -> Vec<u8> {
    (0..spec.num_voxels())
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = spec.unindex(idx);
            let (p, s) = closest(scene, spec.voxel_center(i, j, k));
            if s <= 0.0 {
                scene.primitives[p].class()
            } else {
                0
            }
        })
        .collect()
}

/// Voxels whose centers fall inside at least one camera frustum within the depth range.
pub fn frustum_mask(spec: &GridSpec, cams: &[Camera]) -> Vec<bool> {
    (0..spec.num_voxels())
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = spec.unindex(idx);
            let c = spec.voxel_center(i, j, k);
            cams.iter().any(|cam| {
                let q = cam.pose.apply(c);
                if !(q.z() >= DEPTH_RANGE.0 && q.z() <= DEPTH_RANGE.1) {
                    return false;
                }
                let k = &cam.intrinsics;
                k.contains([k.fx * q.x() / q.z() + k.cx, k.fy * q.y() / q.z() + k.cy])
            })
        })
        .collect()
}

/// Rounds to the 8-bit levels the PPM files store.
fn quantized(mut img: Image) -> Image {
    for v in &mut img.data {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    img
}

/// Renders every frame of `cfg` and writes the dataset plus `gt_occupancy.socg`
/// (masked to the frusta of the training cameras).
pub fn write_dataset(cfg: &SceneConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let scene = cfg.scene()?;
    let spec = cfg.grid.spec()?;
    let cams = cfg.cameras()?;
    let mut frames = Vec::with_capacity(cams.len());
    for (i, cam) in cams.iter().enumerate() {
        let view = oracle_render(&scene, &spec.bounds, cam)?;
        frames.push(Frame {
            id: i,
            timestamp: i as f64 * cfg.frame_interval_s,
            split: if cfg.is_holdout(i) { Split::Test } else { Split::Train },
            camera: *cam,
            image: quantized(view.color),
            depth: Some(view.depth),
            labels: Some(view.labels),
        });
    }
    let ds = Dataset { root: out.to_path_buf(), spec, num_classes: scene.max_class() as usize + 1, frames };
    ds.save(out)?;
    let train: Vec<Camera> = ds.train_indices().iter().map(|&i| ds.frames[i].camera).collect();
    let grid = OccGrid::new(spec, gt_occupancy(&scene, &spec), Some(frustum_mask(&spec, &train)))?;
    grid.save(&out.join("gt_occupancy.socg"))?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig { width: 24, height: 16, frames: 6, ..Default::default() };
        let ds = write_dataset(&cfg, dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.frames.len(), 6);
        assert_eq!(back.num_classes, 4);
        assert_eq!(back.spec, ds.spec);
        assert_eq!(back.test_indices(), vec![2]);
        for (a, b) in ds.frames.iter().zip(&back.frames) {
            assert!(a.image == b.image && a.depth == b.depth && a.labels == b.labels);
            assert_eq!(a.camera, b.camera);
        }
        let g = OccGrid::load(&dir.path().join("gt_occupancy.socg")).unwrap();
        assert!(g.occupied_count() > 1024);
        let mask = g.mask.as_ref().unwrap();
        assert!(mask.iter().any(|&m| m) && mask.iter().any(|&m| !m));
    }
}
