//! Occupancy extraction, occupancy metrics and depth metrics.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{occupancy_of, FieldProvider, GridSpec, Occupancy};
use crate::geometry::{Aabb, Camera, Vec3};
use crate::image::DepthMap;
use crate::real::Real;
use crate::renderer::{argmax, render_view, RenderModes};
use crate::scenes::Dataset;

/// Depth range used by every depth metric (m).
pub const DEPTH_RANGE: (f64, f64) = (0.1, 80.0);

/// Voxel labels (0 = free) with an optional evaluation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct OccGrid {
    pub spec: GridSpec,
    pub labels: Vec<u8>,
    pub mask: Option<Vec<bool>>,
}

impl OccGrid {
    pub fn new(spec: GridSpec, labels: Vec<u8>, mask: Option<Vec<bool>>) -> Result<Self> {
        let n = spec.num_voxels();
        if labels.len() != n || mask.as_ref().is_some_and(|m| m.len() != n) {
            return Err(Error::Structural(format!("occupancy grid needs {n} labels and mask entries")));
        }
        Ok(OccGrid { spec, labels, mask })
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Fraction of occupied voxels whose centers lie in `region`.
    pub fn occupied_fraction_in(&self, region: &Aabb) -> Option<f64> {
        let mut n = 0usize;
        let mut occ = 0usize;
        for idx in 0..self.labels.len() {
            let [i, j, k] = self.spec.unindex(idx);
            if region.contains(self.spec.voxel_center(i, j, k)) {
                n += 1;
                occ += usize::from(self.labels[idx] != 0);
            }
        }
        (n > 0).then(|| occ as f64 / n as f64)
    }

    /// Fraction of occupied voxels among those flagged in `region`.
    pub fn occupied_fraction_where(&self, region: &[bool]) -> Option<f64> {
        let n = region.iter().filter(|&&r| r).count();
        let occ = self.labels.iter().zip(region).filter(|&(&l, &r)| r && l != 0).count();
        (n > 0 && region.len() == self.labels.len()).then(|| occ as f64 / n as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut out = Vec::with_capacity(64 + 2 * self.labels.len());
        out.extend_from_slice(b"SOCG");
        out.extend_from_slice(&1u32.to_le_bytes());
        for r in s.resolution {
            out.extend_from_slice(&(r as u32).to_le_bytes());
        }
        for v in s.bounds.min.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&s.voxel_size.to_le_bytes());
        out.push(u8::from(self.mask.is_some()));
        out.extend_from_slice(&self.labels);
        if let Some(m) = &self.mask {
            out.extend(m.iter().map(|&b| u8::from(b)));
        }
        out
    }

    pub fn from_bytes(buf: &[u8], name: &str) -> Result<Self> {
        let err = |off: usize, msg: &str| Error::parse(name, off, msg);
        const HEAD: usize = 4 + 4 + 12 + 24 + 8 + 1;
        if buf.len() < HEAD || &buf[..4] != b"SOCG" {
            return Err(err(0, "missing SOCG magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().expect("4 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"));
        if u32_at(4) != 1 {
            return Err(err(4, "unsupported SOCG version"));
        }
        let res = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
        let min = Vec3::new(f64_at(20), f64_at(28), f64_at(36));
        let voxel = f64_at(44);
        let spec = GridSpec::from_origin(min, voxel, res).map_err(|e| err(8, &e.to_string()))?;
        let has_mask = match buf[52] {
            0 => false,
            1 => true,
            _ => return Err(err(52, "mask flag must be 0 or 1")),
        };
        let n = spec.num_voxels();
        let want = HEAD + n * (1 + usize::from(has_mask));
        if buf.len() != want {
            return Err(err(HEAD, &format!("expected {want} bytes, found {}", buf.len())));
        }
        let labels = buf[HEAD..HEAD + n].to_vec();
        let mask = has_mask.then(|| {
            buf[HEAD + n..].iter().map(|&b| b != 0).collect::<Vec<bool>>()
        });
        Ok(OccGrid { spec, labels, mask })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf, &path.display().to_string())
    }
}

/// Thresholds the field at zero on the voxel centers of `spec`.
///
/// Occupied voxels get 1 + the argmax over non-free semantic classes, or 1
/// when the field has fewer than two classes.
pub fn extract_occupancy<F: Real, P: FieldProvider<F> + ?Sized>(field: &P, spec: &GridSpec) -> OccGrid {
    let c = field.num_classes();
    let labels = (0..spec.num_voxels())
        .map(|idx| {
            let [i, j, k] = spec.unindex(idx);
            let p = spec.voxel_center(i, j, k);
            match occupancy_of(field.sdf_value(p)) {
                Occupancy::Free => 0,
                Occupancy::Occupied if c >= 2 => {
                    let l = field.logits_value(p);
                    1 + argmax(&l[1..]) as u8
                }
                Occupancy::Occupied => 1,
            }
        })
        .collect();
    OccGrid { spec: *spec, labels, mask: None }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OccMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Set when some ratio had an empty denominator and was reported as 0.
    pub degenerate: bool,
}

fn check_specs(pred: &OccGrid, gt: &OccGrid) -> Result<()> {
    let (a, b) = (&pred.spec, &gt.spec);
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()));
    if a.resolution != b.resolution
        || !close(a.voxel_size, b.voxel_size)
        || (0..3).any(|i| !close(a.bounds.min[i], b.bounds.min[i]))
    {
        return Err(Error::domain("prediction and ground-truth grids have different specs"));
    }
    if pred.labels.len() != gt.labels.len() {
        return Err(Error::domain("prediction and ground-truth grids have different sizes"));
    }
    Ok(())
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Binary occupied-vs-free metrics; with `use_mask` only voxels inside the
/// ground-truth mask count.
pub fn occ_metrics(pred: &OccGrid, gt: &OccGrid, use_mask: bool) -> Result<OccMetrics> {
    check_specs(pred, gt)?;
    let mask = if use_mask { gt.mask.as_deref() } else { None };
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for i in 0..gt.labels.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        match (pred.labels[i] != 0, gt.labels[i] != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let mut degenerate = false;
    Ok(OccMetrics {
        iou: ratio(tp, tp + fp + fn_, &mut degenerate),
        precision: ratio(tp, tp + fp, &mut degenerate),
        recall: ratio(tp, tp + fn_, &mut degenerate),
        tp,
        fp,
        fn_,
        degenerate,
    })
}

/// Mean IoU over semantic classes 1..=classes; absent classes score 0.
pub fn miou(pred: &OccGrid, gt: &OccGrid, classes: usize, use_mask: bool) -> Result<f64> {
    check_specs(pred, gt)?;
    if classes == 0 {
        return Err(Error::domain("mIoU needs at least one semantic class"));
    }
    let mask = if use_mask { gt.mask.as_deref() } else { None };
    let mut inter = vec![0usize; classes + 1];
    let mut union = vec![0usize; classes + 1];
    for i in 0..gt.labels.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let (p, g) = (pred.labels[i] as usize, gt.labels[i] as usize);
        if p > classes || g > classes {
            return Err(Error::domain(format!("label {} exceeds class count {classes}", p.max(g))));
        }
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let sum: f64 = (1..=classes).map(|c| if union[c] == 0 { 0.0 } else { inter[c] as f64 / union[c] as f64 }).sum();
    Ok(sum / classes as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub valid_count: usize,
}

impl DepthMetrics {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,valid";

    pub fn csv(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3, self.valid_count
        )
    }
}

fn in_range(g: f64) -> bool {
    g.is_finite() && g >= DEPTH_RANGE.0 && g <= DEPTH_RANGE.1
}

/// (pred, gt) pairs whose ground truth lies in the evaluation range.
pub fn valid_pairs(pred: &[f64], gt: &[f64]) -> Result<Vec<(f64, f64)>> {
    if pred.len() != gt.len() {
        return Err(Error::domain(format!("depth maps differ in size ({} vs {})", pred.len(), gt.len())));
    }
    Ok(pred.iter().zip(gt).filter(|(_, &g)| in_range(g)).map(|(&p, &g)| (p, g)).collect())
}

/// Standard depth metrics over valid pixels; predictions are clipped to the range.
pub fn depth_metrics(pred: &[f64], gt: &[f64]) -> Result<DepthMetrics> {
    let pairs = valid_pairs(pred, gt)?;
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n = pairs.len() as f64;
    let mut acc = [0.0f64; 7];
    for &(p, g) in &pairs {
        let p = if p.is_nan() { DEPTH_RANGE.0 } else { p.clamp(DEPTH_RANGE.0, DEPTH_RANGE.1) };
        let d = p - g;
        let r = (p / g).max(g / p);
        acc[0] += d.abs() / g;
        acc[1] += d * d / g;
        acc[2] += d * d;
        acc[3] += (p.ln() - g.ln()).powi(2);
        acc[4] += f64::from(u8::from(r < 1.25));
        acc[5] += f64::from(u8::from(r < 1.25f64.powi(2)));
        acc[6] += f64::from(u8::from(r < 1.25f64.powi(3)));
    }
    Ok(DepthMetrics {
        abs_rel: acc[0] / n,
        sq_rel: acc[1] / n,
        rmse: (acc[2] / n).sqrt(),
        rmse_log: (acc[3] / n).sqrt(),
        delta1: acc[4] / n,
        delta2: acc[5] / n,
        delta3: acc[6] / n,
        valid_count: pairs.len(),
    })
}

/// Flattened depth map as f64.
pub fn depth_values(d: &DepthMap) -> Vec<f64> {
    d.data.iter().map(|&v| v as f64).collect()
}

/// Median of a non-empty slice (mean of the middle pair for even length).
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    let mid = v.len() / 2;
    let (_, &mut hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if xs.len() % 2 == 1 {
        return Some(hi);
    }
    let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(0.5 * (lo + hi))
}

/// Scales `pred` by median(gt)/median(pred) over valid pixels.
pub fn median_scale(pred: &[f64], gt: &[f64]) -> Result<Vec<f64>> {
    let pairs = valid_pairs(pred, gt)?;
    if pairs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mp = median(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()).expect("non-empty");
    let mg = median(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()).expect("non-empty");
    if mp == 0.0 || !mp.is_finite() {
        return Err(Error::numeric("median scaling", format!("median prediction is {mp}")));
    }
    let s = mg / mp;
    Ok(pred.iter().map(|p| p * s).collect())
}

/// Renders the given frames (every `subsample`-th pixel) and pools depth
/// metrics against their ground truth. With `median`, each frame is median-scaled first.
pub fn frame_depth_metrics<F: Real, P: FieldProvider<F> + ?Sized>(
    field: &P,
    ds: &Dataset,
    frames: &[usize],
    samples: usize,
    subsample: usize,
    median: bool,
) -> Result<DepthMetrics> {
    let s = subsample.max(1);
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for &i in frames {
        let f = &ds.frames[i];
        let g = f
            .depth
            .as_ref()
            .ok_or_else(|| Error::Config(format!("frame {} has no ground-truth depth", f.id)))?;
        let cam = Camera { intrinsics: f.camera.intrinsics.subsampled(s), pose: f.camera.pose };
        let view = render_view(field, &cam, samples, RenderModes::DEPTH)?;
        let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
        let mut p = Vec::with_capacity(w * h);
        let mut q = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                p.push(view.depth.get(x, y) as f64);
                q.push(g.get(s * x, s * y) as f64);
            }
        }
        if median {
            p = median_scale(&p, &q)?;
        }
        pred.extend(p);
        gt.extend(q);
    }
    depth_metrics(&pred, &gt)
}

/// Free voxels of `gt` that no training ray reaches: every training view
/// either misses them or sees a surface at least one voxel in front, and at
/// least one of those surfaces carries label `occluder`.
pub fn occluded_region(ds: &Dataset, gt: &OccGrid, occluder: u8) -> Result<Vec<bool>> {
    let spec = &gt.spec;
    let mut views = Vec::new();
    for i in ds.train_indices() {
        let f = &ds.frames[i];
        match (&f.depth, &f.labels) {
            (Some(d), Some(l)) => views.push((f.camera, d, l)),
            _ => return Err(Error::Config(format!("frame {} lacks depth or labels", f.id))),
        }
    }
    let margin = spec.voxel_size;
    Ok((0..spec.num_voxels())
        .map(|idx| {
            if gt.labels[idx] != 0 {
                return false;
            }
            let [i, j, k] = spec.unindex(idx);
            let c = spec.voxel_center(i, j, k);
            let mut shadowed = false;
            for (cam, depth, labels) in &views {
                let Ok((px, z)) = crate::geometry::project_point(cam, c) else { continue };
                if !cam.intrinsics.contains(px) {
                    continue;
                }
                let x = (px[0].round().max(0.0) as usize).min(depth.width - 1);
                let y = (px[1].round().max(0.0) as usize).min(depth.height - 1);
                let surface = depth.get(x, y) as f64;
                if z < surface + margin {
                    return false;
                }
                shadowed |= labels.get(x, y) == occluder;
            }
            shadowed
        })
        .collect())
}
