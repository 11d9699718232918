//! Training objectives.
//!
//! Functions that take a tape record differentiable terms on it; plain
//! functions compute constants (dissimilarities that carry no gradient).

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::field::FieldProvider;
use crate::geometry::{bilinear_image_sample, in_sample_range, warp_pixel, RelativeCamera, Vec3, NEAR_CLIP};
use crate::image::Image;
use crate::real::Real;
use crate::renderer::RayRender;

/// Pixel dissimilarity used by the photometric terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Photometric {
    /// Mean absolute difference over channels.
    #[default]
    L1,
    /// 0.85·(1 − SSIM)/2 on 3×3 patches plus 0.15·L1.
    SsimL1,
}

const SSIM_MIX: f64 = 0.85;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const PATCH: [[f64; 2]; 9] =
    [[-1.0, -1.0], [0.0, -1.0], [1.0, -1.0], [-1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [-1.0, 1.0], [0.0, 1.0], [1.0, 1.0]];

/// Mean absolute channel difference.
pub fn photometric(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0
}

fn pixel(img: &Image, x: [f64; 2]) -> [f64; 3] {
    let cx = x[0].round().clamp(0.0, (img.width - 1) as f64) as usize;
    let cy = x[1].round().clamp(0.0, (img.height - 1) as f64) as usize;
    img.get(cx, cy).map(|v| v as f64)
}

fn clamp_to(img: &Image, x: [f64; 2]) -> [f64; 2] {
    [x[0].clamp(0.0, (img.width - 1) as f64), x[1].clamp(0.0, (img.height - 1) as f64)]
}

/// (1 − SSIM)/2 per channel, averaged, clamped to [0, 1].
pub fn ssim_dissimilarity(a: &[[f64; 3]; 9], b: &[[f64; 3]; 9]) -> f64 {
    let mut acc = 0.0;
    for c in 0..3 {
        let ma = a.iter().map(|p| p[c]).sum::<f64>() / 9.0;
        let mb = b.iter().map(|p| p[c]).sum::<f64>() / 9.0;
        let va = a.iter().map(|p| p[c] * p[c]).sum::<f64>() / 9.0 - ma * ma;
        let vb = b.iter().map(|p| p[c] * p[c]).sum::<f64>() / 9.0 - mb * mb;
        let cov = a.iter().zip(b).map(|(p, q)| p[c] * q[c]).sum::<f64>() / 9.0 - ma * mb;
        let ssim = ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        acc += ((1.0 - ssim) / 2.0).clamp(0.0, 1.0);
    }
    acc / 3.0
}

/// Dissimilarity between target pixel `x` and the source sampled at `xh`.
///
/// `None` when `xh` cannot be sampled.
pub fn dissimilarity(mode: Photometric, target: &Image, x: [f64; 2], source: &Image, xh: [f64; 2]) -> Option<f64> {
    if !in_sample_range(source, xh) {
        return None;
    }
    let l1 = photometric(pixel(target, x), bilinear_image_sample(source, xh).ok()?);
    match mode {
        Photometric::L1 => Some(l1),
        Photometric::SsimL1 => {
            let a = PATCH.map(|d| pixel(target, [x[0] + d[0], x[1] + d[1]]));
            let b = PATCH.map(|d| {
                bilinear_image_sample(source, clamp_to(source, [xh[0] + d[0], xh[1] + d[1]])).expect("clamped")
            });
            Some(SSIM_MIX * ssim_dissimilarity(&a, &b) + (1.0 - SSIM_MIX) * l1)
        }
    }
}

/// Dissimilarity after warping `x` at z-depth `zdepth`; `None` for invalid warps.
pub fn warped_dissimilarity(
    mode: Photometric,
    target: &Image,
    x: [f64; 2],
    source: &Image,
    rel: &RelativeCamera,
    zdepth: f64,
) -> Option<f64> {
    let xh = warp_pixel(x, zdepth, rel).ok()?;
    dissimilarity(mode, target, x, source, xh)
}

/// Warps `x` with a taped z-depth; returns the source pixel coordinates as nodes.
fn warp_tape<F: Real>(tape: &mut Tape<F>, rel: &RelativeCamera, x: [f64; 2], z: NodeId) -> Option<[NodeId; 2]> {
    let zv = tape.value(z).f64();
    if !(zv > NEAR_CLIP) {
        return None;
    }
    let k = &rel.target;
    let u = rel.rotation.mul_vec(Vec3([(x[0] - k.cx) / k.fx, (x[1] - k.cy) / k.fy, 1.0]));
    let q: [NodeId; 3] = std::array::from_fn(|i| tape.lin_comb(&[(z, F::of(u[i]))], F::of(rel.translation[i])));
    if !(tape.value(q[2]).f64() > NEAR_CLIP) {
        return None;
    }
    let s = &rel.source;
    let rx = tape.div(q[0], q[2]);
    let ry = tape.div(q[1], q[2]);
    Some([tape.lin_comb(&[(rx, F::of(s.fx))], F::of(s.cx)), tape.lin_comb(&[(ry, F::of(s.fy))], F::of(s.cy))])
}

/// Bilinear RGB lookup with taped coordinates; `None` outside the sample range.
pub fn bilinear_tape<F: Real>(tape: &mut Tape<F>, img: &Image, xh: [NodeId; 2]) -> Option<[NodeId; 3]> {
    let p = [tape.value(xh[0]).f64(), tape.value(xh[1]).f64()];
    if !in_sample_range(img, p) {
        return None;
    }
    let i0 = (p[0].floor() as usize).min(img.width.saturating_sub(2));
    let j0 = (p[1].floor() as usize).min(img.height.saturating_sub(2));
    let i1 = (i0 + 1).min(img.width - 1);
    let j1 = (j0 + 1).min(img.height - 1);
    let fx = tape.add_const(xh[0], F::of(-(i0 as f64)));
    let fy = tape.add_const(xh[1], F::of(-(j0 as f64)));
    let (c00, c10, c01, c11) = (img.get(i0, j0), img.get(i1, j0), img.get(i0, j1), img.get(i1, j1));
    Some(std::array::from_fn(|c| {
        let top = tape.lin_comb(&[(fx, F::of((c10[c] - c00[c]) as f64))], F::of(c00[c] as f64));
        let bot = tape.lin_comb(&[(fx, F::of((c11[c] - c01[c]) as f64))], F::of(c01[c] as f64));
        let diff = tape.sub(bot, top);
        let t = tape.mul(fy, diff);
        tape.add(top, t)
    }))
}

/// Mean absolute difference between constant `a` and taped `b`.
pub fn photometric_tape<F: Real>(tape: &mut Tape<F>, a: [f64; 3], b: [NodeId; 3]) -> NodeId {
    let d: [NodeId; 3] = std::array::from_fn(|c| {
        let diff = tape.lin_comb(&[(b[c], -F::one())], F::of(a[c]));
        tape.abs(diff)
    });
    let third = F::of(1.0 / 3.0);
    tape.lin_comb(&[(d[0], third), (d[1], third), (d[2], third)], F::zero())
}

fn ssim_tape<F: Real>(tape: &mut Tape<F>, a: &[[f64; 3]; 9], b: &[[NodeId; 3]; 9]) -> NodeId {
    let ninth = F::of(1.0 / 9.0);
    let mut parts = Vec::with_capacity(3);
    for c in 0..3 {
        let ma = a.iter().map(|p| p[c]).sum::<f64>() / 9.0;
        let va = a.iter().map(|p| p[c] * p[c]).sum::<f64>() / 9.0 - ma * ma;
        let terms: Vec<(NodeId, F)> = b.iter().map(|p| (p[c], ninth)).collect();
        let mb = tape.lin_comb(&terms, F::zero());
        let sq: Vec<(NodeId, F)> = b
            .iter()
            .map(|p| {
                let s = tape.square(p[c]);
                (s, ninth)
            })
            .collect();
        let eb2 = tape.lin_comb(&sq, F::zero());
        let mb2 = tape.square(mb);
        let vb = tape.sub(eb2, mb2);
        let cross: Vec<(NodeId, F)> = b.iter().zip(a).map(|(p, q)| (p[c], F::of(q[c] / 9.0))).collect();
        let eab = tape.lin_comb(&cross, F::zero());
        // cov = E[ab] − ma·mb
        let cov = tape.lin_comb(&[(eab, F::one()), (mb, F::of(-ma))], F::zero());
        let n1 = tape.lin_comb(&[(mb, F::of(2.0 * ma))], F::of(C1));
        let n2 = tape.lin_comb(&[(cov, F::of(2.0))], F::of(C2));
        let d1 = tape.lin_comb(&[(mb2, F::one())], F::of(ma * ma + C1));
        let d2 = tape.lin_comb(&[(vb, F::one())], F::of(va + C2));
        let num = tape.mul(n1, n2);
        let den = tape.mul(d1, d2);
        let ssim = tape.div(num, den);
        let dis = tape.lin_comb(&[(ssim, F::of(-0.5))], F::of(0.5));
        let lo = tape.relu(dis);
        let one = tape.constant(F::one());
        parts.push(tape.min(lo, one));
    }
    let third = F::of(1.0 / 3.0);
    tape.lin_comb(&[(parts[0], third), (parts[1], third), (parts[2], third)], F::zero())
}

/// Photometric reprojection loss at target pixel `x`, differentiable through the
/// taped z-depth. `None` when the warp leaves the source or falls behind it.
pub fn l_rpj<F: Real>(
    tape: &mut Tape<F>,
    mode: Photometric,
    x: [f64; 2],
    target: &Image,
    source: &Image,
    zdepth: NodeId,
    rel: &RelativeCamera,
) -> Option<NodeId> {
    let xh = warp_tape(tape, rel, x, zdepth)?;
    let sampled = bilinear_tape(tape, source, xh)?;
    let l1 = photometric_tape(tape, pixel(target, x), sampled);
    match mode {
        Photometric::L1 => Some(l1),
        Photometric::SsimL1 => {
            let a = PATCH.map(|d| pixel(target, [x[0] + d[0], x[1] + d[1]]));
            let mut b = Vec::with_capacity(9);
            for d in PATCH {
                let w = warp_tape(tape, rel, [x[0] + d[0], x[1] + d[1]], zdepth)?;
                let lim = [F::of((source.width - 1) as f64), F::of((source.height - 1) as f64)];
                let cl: [NodeId; 2] = std::array::from_fn(|i| {
                    let zero = tape.constant(F::zero());
                    let hi = tape.constant(lim[i]);
                    let lo = tape.max(w[i], zero);
                    tape.min(lo, hi)
                });
                b.push(bilinear_tape(tape, source, cl).expect("clamped"));
            }
            let b: [[NodeId; 3]; 9] = b.try_into().expect("nine samples");
            let s = ssim_tape(tape, &a, &b);
            Some(tape.lin_comb(&[(s, F::of(SSIM_MIX)), (l1, F::of(1.0 - SSIM_MIX))], F::zero()))
        }
    }
}

/// One depth hypothesis of the multi-view loss.
#[derive(Clone, Copy, Debug)]
pub struct Proposal {
    /// Camera z-depth (m).
    pub zdepth: f64,
    /// `None` for proposals whose weight is identically zero.
    pub weight: Option<NodeId>,
}

/// Proposals of a rendered ray: every cell center plus the residual at `t_far`.
/// `cos` converts ray distance to z-depth.
pub fn proposals_from_render(r: &RayRender, cos: f64) -> Vec<Proposal> {
    let mut out: Vec<Proposal> =
        r.samples.depths.iter().map(|&d| Proposal { zdepth: d * cos, weight: None }).collect();
    for &i in &r.active {
        out[i].weight = Some(r.weights[i]);
    }
    out.push(Proposal { zdepth: r.samples.t_far * cos, weight: Some(r.residual) });
    out
}

/// Weighted dissimilarity over depth proposals. Dissimilarities are constants;
/// the gradient flows only through the weights.
///
/// Proposals that cannot be warped are dropped and the rest renormalized, as
/// long as at least half of them survive; otherwise `None`.
pub fn l_mvs<F: Real>(
    tape: &mut Tape<F>,
    mode: Photometric,
    x: [f64; 2],
    target: &Image,
    source: &Image,
    rel: &RelativeCamera,
    proposals: &[Proposal],
) -> Option<NodeId> {
    let total = proposals.len();
    let mut dropped = 0usize;
    let mut terms = Vec::with_capacity(total);
    let mut kept = Vec::with_capacity(total);
    for p in proposals {
        let Some(w) = p.weight else {
            let valid = warp_pixel(x, p.zdepth, rel).is_ok_and(|xh| in_sample_range(source, xh));
            dropped += usize::from(!valid);
            continue;
        };
        match warped_dissimilarity(mode, target, x, source, rel, p.zdepth) {
            Some(e) => {
                terms.push((w, F::of(e)));
                kept.push(w);
            }
            None => dropped += 1,
        }
    }
    if dropped == 0 {
        return Some(tape.lin_comb(&terms, F::zero()));
    }
    if 2 * (total - dropped) < total || kept.is_empty() {
        return None;
    }
    let mass = tape.sum(&kept);
    if tape.value(mass) <= F::zero() {
        return None;
    }
    let num = tape.lin_comb(&terms, F::zero());
    Some(tape.div(num, mass))
}

/// Source view for the temporal depth loss.
#[derive(Clone, Copy, Debug)]
pub struct SourceView<'a> {
    pub image: &'a Image,
    pub rel: RelativeCamera,
}

/// Result of the temporal depth loss at one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepOutcome {
    /// No source produced a valid loss.
    Excluded,
    /// Identity reprojection already beats the warped one; counts as 0.
    Masked,
    Loss(NodeId),
}

/// Minimum of the per-source multi-view losses, gated by the automask.
///
/// The mask compares the unwarped dissimilarity min_s d(I_t(x), I_s(x)) with
/// the warped one at the rendered z-depth, min over sources.
#[allow(clippy::too_many_arguments)]
pub fn l_dep<F: Real>(
    tape: &mut Tape<F>,
    mode: Photometric,
    x: [f64; 2],
    current: &Image,
    sources: &[SourceView],
    proposals: &[Proposal],
    rendered_zdepth: f64,
    use_mvs: bool,
    rendered_z_node: Option<NodeId>,
) -> DepOutcome {
    let mut losses = Vec::with_capacity(sources.len());
    let mut identity = f64::INFINITY;
    let mut warped = f64::INFINITY;
    for s in sources {
        let l = if use_mvs {
            l_mvs(tape, mode, x, current, s.image, &s.rel, proposals)
        } else {
            rendered_z_node.and_then(|z| l_rpj(tape, mode, x, current, s.image, z, &s.rel))
        };
        let Some(l) = l else { continue };
        losses.push(l);
        if let Some(d) = dissimilarity(mode, current, x, s.image, x) {
            identity = identity.min(d);
        }
        if let Some(d) = warped_dissimilarity(mode, current, x, s.image, &s.rel, rendered_zdepth) {
            warped = warped.min(d);
        }
    }
    let Some(&first) = losses.first() else { return DepOutcome::Excluded };
    if identity <= warped {
        return DepOutcome::Masked;
    }
    let m = losses[1..].iter().fold(first, |acc, &l| tape.min(acc, l));
    DepOutcome::Loss(m)
}

/// L1 color loss between a rendered color and the target pixel.
pub fn l_rgb<F: Real>(tape: &mut Tape<F>, rendered: [NodeId; 3], target: [f64; 3]) -> NodeId {
    photometric_tape(tape, target, rendered)
}

/// |‖∇s(p)‖ − 1| at one point.
pub fn eikonal_point<F: Real, P: FieldProvider<F> + ?Sized>(tape: &mut Tape<F>, field: &P, p: Vec3) -> NodeId {
    let (_, g) = field.sdf_with_gradient(tape, p);
    let n2 = tape.dot(&g, &g);
    let n = tape.sqrt(n2);
    let d = tape.add_const(n, -F::one());
    tape.abs(d)
}

/// Sum of eikonal residuals over `points` (divide by the count for the mean).
pub fn eikonal_sum<F: Real, P: FieldProvider<F> + ?Sized>(tape: &mut Tape<F>, field: &P, points: &[Vec3]) -> NodeId {
    let terms: Vec<NodeId> = points.iter().map(|&p| eikonal_point(tape, field, p)).collect();
    tape.sum(&terms)
}

/// Mean eikonal residual.
pub fn l_eikonal<F: Real, P: FieldProvider<F> + ?Sized>(tape: &mut Tape<F>, field: &P, points: &[Vec3]) -> Result<NodeId> {
    if points.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let s = eikonal_sum(tape, field, points);
    Ok(tape.scale(s, F::of(1.0 / points.len() as f64)))
}

/// True when the eikonal residual is well defined at `p` (inside the hull of voxel centers).
pub fn eikonal_interior<F: Real, P: FieldProvider<F> + ?Sized>(field: &P, p: Vec3) -> bool {
    let s = field.spec();
    let h = 0.5 * s.voxel_size;
    (0..3).all(|a| p[a] > s.bounds.min[a] + h && p[a] < s.bounds.max[a] - h)
}

/// Element-wise 1-norm of the finite-difference Hessian at a voxel center;
/// `None` for boundary voxels.
pub fn hessian_norm_at<F: Real, P: FieldProvider<F> + ?Sized>(tape: &mut Tape<F>, field: &P, ijk: [usize; 3]) -> Option<NodeId> {
    let r = field.spec().resolution;
    if (0..3).any(|a| ijk[a] == 0 || ijk[a] + 1 >= r[a]) {
        return None;
    }
    let inv = 1.0 / (field.spec().voxel_size * field.spec().voxel_size);
    let at = |tape: &mut Tape<F>, d: [isize; 3]| {
        let q: [usize; 3] = std::array::from_fn(|a| (ijk[a] as isize + d[a]) as usize);
        field.sdf_at_voxel(tape, q)
    };
    let center = at(tape, [0, 0, 0]);
    let mut entries = Vec::with_capacity(9);
    for a in 0..3 {
        let mut e = [0isize; 3];
        e[a] = 1;
        let plus = at(tape, e);
        let minus = at(tape, e.map(|v| -v));
        let h = tape.lin_comb(&[(plus, F::of(inv)), (center, F::of(-2.0 * inv)), (minus, F::of(inv))], F::zero());
        entries.push((tape.abs(h), F::one()));
    }
    for a in 0..3 {
        for b in a + 1..3 {
            let corner = |sa: isize, sb: isize| {
                let mut d = [0isize; 3];
                d[a] = sa;
                d[b] = sb;
                d
            };
            let pp = at(tape, corner(1, 1));
            let pm = at(tape, corner(1, -1));
            let mp = at(tape, corner(-1, 1));
            let mm = at(tape, corner(-1, -1));
            let q = 0.25 * inv;
            let h = tape.lin_comb(&[(pp, F::of(q)), (pm, F::of(-q)), (mp, F::of(-q)), (mm, F::of(q))], F::zero());
            // symmetric entry counted twice in the element-wise norm
            entries.push((tape.abs(h), F::of(2.0)));
        }
    }
    Some(tape.lin_comb(&entries, F::zero()))
}

/// Mean Hessian 1-norm over interior voxels of `voxels`; boundary voxels are skipped.
pub fn l_hessian<F: Real, P: FieldProvider<F> + ?Sized>(
    tape: &mut Tape<F>,
    field: &P,
    voxels: &[[usize; 3]],
) -> Result<(NodeId, usize)> {
    let terms: Vec<NodeId> = voxels.iter().filter_map(|&v| hessian_norm_at(tape, field, v)).collect();
    if terms.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let s = tape.sum(&terms);
    Ok((tape.scale(s, F::of(1.0 / terms.len() as f64)), terms.len()))
}

/// Mean of max(−s, 0).
pub fn l_sparsity<F: Real>(tape: &mut Tape<F>, sdf: &[NodeId]) -> Result<NodeId> {
    if sdf.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let terms: Vec<NodeId> = sdf
        .iter()
        .map(|&s| {
            let n = tape.scale(s, -F::one());
            tape.relu(n)
        })
        .collect();
    let s = tape.sum(&terms);
    Ok(tape.scale(s, F::of(1.0 / sdf.len() as f64)))
}

/// Edge-aware smoothness of a `w`×`h` depth patch (row-major nodes) against an
/// image patch: mean_x |∂ₓd̄|·e^{−|∂ₓĪ|} + mean_y |∂ᵧd̄|·e^{−|∂ᵧĪ|}, with
/// d̄ = (1/d)/mean(1/d) and Ī the channel mean of the image.
pub fn l_edge<F: Real>(tape: &mut Tape<F>, depth: &[NodeId], image: &[[f64; 3]], w: usize, h: usize) -> Result<NodeId> {
    if w < 2 || h < 2 || depth.len() != w * h || image.len() != w * h {
        return Err(Error::domain(format!("edge loss needs a matching patch of at least 2x2, got {w}x{h}")));
    }
    let disp: Vec<NodeId> = depth
        .iter()
        .map(|&d| {
            if tape.value(d) <= F::zero() {
                return None;
            }
            let one = tape.constant(F::one());
            Some(tape.div(one, d))
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::numeric("l_edge", "non-positive depth in patch"))?;
    let mean = tape.sum(&disp);
    let mean = tape.scale(mean, F::of(1.0 / disp.len() as f64));
    let norm: Vec<NodeId> = disp.iter().map(|&d| tape.div(d, mean)).collect();
    let gray: Vec<f64> = image.iter().map(|c| (c[0] + c[1] + c[2]) / 3.0).collect();
    let mut gx = Vec::with_capacity((w - 1) * h);
    let mut gy = Vec::with_capacity(w * (h - 1));
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                let d = tape.sub(norm[i + 1], norm[i]);
                let a = tape.abs(d);
                gx.push((a, F::of((-(gray[i + 1] - gray[i]).abs()).exp() / ((w - 1) * h) as f64)));
            }
            if y + 1 < h {
                let d = tape.sub(norm[i + w], norm[i]);
                let a = tape.abs(d);
                gy.push((a, F::of((-(gray[i + w] - gray[i]).abs()).exp() / (w * (h - 1)) as f64)));
            }
        }
    }
    gx.extend(gy);
    Ok(tape.lin_comb(&gx, F::zero()))
}

/// Probability floor of the semantic cross-entropy.
pub const SEMANTIC_FLOOR: f64 = 1e-8;

/// −ln max(p[label], 1e-8).
pub fn l_semantic<F: Real>(tape: &mut Tape<F>, probs: &[NodeId], label: usize) -> Result<NodeId> {
    let &p = probs
        .get(label)
        .ok_or_else(|| Error::domain(format!("label {label} out of range for {} classes", probs.len())))?;
    let floor = tape.constant(F::of(SEMANTIC_FLOOR));
    let c = tape.max(p, floor);
    let l = tape.ln(c);
    Ok(tape.scale(l, -F::one()))
}

/// Loss terms of the total objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Term {
    Dep,
    Rgb,
    Eikonal,
    Hessian,
    Sparsity,
    Edge,
    Semantic,
}

impl Term {
    pub const ALL: [Term; 7] = [Term::Dep, Term::Rgb, Term::Eikonal, Term::Hessian, Term::Sparsity, Term::Edge, Term::Semantic];

    pub fn name(self) -> &'static str {
        match self {
            Term::Dep => "dep",
            Term::Rgb => "rgb",
            Term::Eikonal => "eikonal",
            Term::Hessian => "hessian",
            Term::Sparsity => "sparsity",
            Term::Edge => "edge",
            Term::Semantic => "semantic",
        }
    }
}

/// Task profiles and the terms they enable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Depth,
    NovelDepth,
    #[default]
    Occupancy,
}

impl Profile {
    pub fn terms(self) -> &'static [Term] {
        match self {
            Profile::Depth => &[Term::Dep, Term::Eikonal, Term::Edge],
            Profile::NovelDepth => &[Term::Dep, Term::Rgb, Term::Eikonal],
            Profile::Occupancy => &[Term::Dep, Term::Rgb, Term::Eikonal, Term::Hessian, Term::Sparsity],
        }
    }
}

/// Term weights; L_dep always has weight 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rgb: f64,
    pub eikonal: f64,
    pub hessian: f64,
    pub sparsity: f64,
    pub edge: f64,
    pub semantic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rgb: 0.1, eikonal: 0.1, hessian: 0.1, sparsity: 0.001, edge: 0.01, semantic: 0.1 }
    }
}

impl LossWeights {
    pub fn get(&self, t: Term) -> f64 {
        match t {
            Term::Dep => 1.0,
            Term::Rgb => self.rgb,
            Term::Eikonal => self.eikonal,
            Term::Hessian => self.hessian,
            Term::Sparsity => self.sparsity,
            Term::Edge => self.edge,
            Term::Semantic => self.semantic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in Term::ALL {
            let v = self.get(t);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight for {} must be a finite non-negative number, got {v}", t.name())));
            }
        }
        Ok(())
    }
}

/// One evaluated term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermValue {
    pub term: Term,
    pub value: f64,
    pub weight: f64,
    /// Number of rays/points that entered the mean (masked pixels included).
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub terms: Vec<TermValue>,
    pub total: f64,
}

impl LossReport {
    pub fn get(&self, t: Term) -> Option<f64> {
        self.terms.iter().find(|v| v.term == t).map(|v| v.value)
    }
}

/// Weighted total over the given term values, in the order given.
pub fn total_loss(terms: &[(Term, f64, usize)], weights: &LossWeights) -> Result<LossReport> {
    let mut out = LossReport::default();
    for &(term, value, count) in terms {
        if !value.is_finite() {
            return Err(Error::numeric(format!("loss term {}", term.name()), format!("value {value}")));
        }
        let weight = weights.get(term);
        out.total += weight * value;
        out.terms.push(TermValue { term, value, weight, count });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{GridSpec, SdfField};
    use crate::geometry::{Camera, Intrinsics, Mat3, Pose};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::new(w, h);
        for v in &mut img.data {
            *v = rng.random_range(0.0..1.0);
        }
        img
    }

    fn k() -> Intrinsics {
        Intrinsics::new(20.0, 20.0, 15.5, 11.5, 32, 24).unwrap()
    }

    fn stereo(b: f64) -> RelativeCamera {
        let t = Camera { intrinsics: k(), pose: Pose::IDENTITY };
        let s = Camera { intrinsics: k(), pose: Pose::new(Mat3::IDENTITY, Vec3::new(-b, 0.0, 0.0)).unwrap() };
        RelativeCamera::between(&t, &s)
    }

    #[test]
    fn photometric_examples() {
        assert_eq!(photometric([0.3; 3], [0.3; 3]), 0.0);
        assert!((photometric([0.2; 3], [0.4; 3]) - 0.2).abs() < 1e-15);
        assert_eq!(photometric([0.1, 0.5, 0.9], [0.4, 0.2, 0.3]), photometric([0.4, 0.2, 0.3], [0.1, 0.5, 0.9]));
    }

    #[test]
    fn rpj_identity_and_constant_images() {
        let img = random_image(32, 24, 1);
        let mut t = Tape::<f64>::new();
        let z = t.leaf(3.7);
        let rel = RelativeCamera::identity(k());
        let l = l_rpj(&mut t, Photometric::L1, [7.0, 9.0], &img, &img, z, &rel).unwrap();
        assert!(t.value(l).abs() < 1e-7);
        let a = Image::filled(32, 24, [0.2, 0.2, 0.2]);
        let b = Image::filled(32, 24, [0.5, 0.5, 0.5]);
        for d in [1.0, 2.5, 8.0] {
            let z = t.leaf(d);
            let l = l_rpj(&mut t, Photometric::L1, [10.0, 10.0], &a, &b, z, &stereo(0.2)).unwrap();
            assert!((t.value(l) - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn rpj_gradient_matches_finite_differences() {
        let (tgt, src) = (random_image(32, 24, 2), random_image(32, 24, 3));
        let rel = stereo(0.3);
        let f = |d: f64| {
            let mut t = Tape::<f64>::new();
            let z = t.leaf(d);
            let l = l_rpj(&mut t, Photometric::SsimL1, [16.0, 12.0], &tgt, &src, z, &rel).unwrap();
            t.value(l)
        };
        let mut t = Tape::<f64>::new();
        let z = t.leaf(4.13);
        let l = l_rpj(&mut t, Photometric::SsimL1, [16.0, 12.0], &tgt, &src, z, &rel).unwrap();
        let g = t.grad(l, &[z]).unwrap().get(z).unwrap();
        let fd = (f(4.13 + 1e-6) - f(4.13 - 1e-6)) / 2e-6;
        assert!((g - fd).abs() < 1e-5 * fd.abs().max(1.0), "{g} vs {fd}");
        let mut t = Tape::<f64>::new();
        let z = t.leaf(4.13);
        let l = l_rpj(&mut t, Photometric::SsimL1, [16.0, 12.0], &tgt, &src, z, &rel).unwrap();
        let xh = warp_pixel([16.0, 12.0], 4.13, &rel).unwrap();
        assert!((t.value(l) - dissimilarity(Photometric::SsimL1, &tgt, [16.0, 12.0], &src, xh).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rpj_out_of_view_is_invalid() {
        let img = random_image(32, 24, 4);
        let mut t = Tape::<f64>::new();
        let z = t.leaf(0.5);
        assert!(l_rpj(&mut t, Photometric::L1, [2.0, 10.0], &img, &img, z, &stereo(1.0)).is_none());
    }

    #[test]
    fn mvs_weighted_mean() {
        // constant images: dissimilarity is the same everywhere
        let a = Image::filled(32, 24, [0.2; 3]);
        let mut t = Tape::<f64>::new();
        let w = [t.leaf(0.5), t.leaf(0.5)];
        let b = Image::filled(32, 24, [0.3; 3]);
        let props = [Proposal { zdepth: 2.0, weight: Some(w[0]) }, Proposal { zdepth: 3.0, weight: Some(w[1]) }];
        let l = l_mvs(&mut t, Photometric::L1, [16.0, 12.0], &a, &b, &stereo(0.1), &props).unwrap();
        assert!((t.value(l) - 0.1).abs() < 1e-7);
    }

    #[test]
    fn mvs_two_proposals_example() {
        // image whose dissimilarity at two warps is 0.1 and 0.3
        let tgt = Image::filled(32, 24, [0.5; 3]);
        let mut src = Image::filled(32, 24, [0.5; 3]);
        let rel = stereo(1.0);
        let x = [20.0, 12.0];
        let h1 = warp_pixel(x, 2.0, &rel).unwrap();
        let h2 = warp_pixel(x, 4.0, &rel).unwrap();
        assert_eq!((h1[0], h2[0]), (10.0, 15.0));
        src.set(10, 12, [0.6; 3]);
        src.set(15, 12, [0.8; 3]);
        let mut t = Tape::<f64>::new();
        let w = [t.leaf(0.5), t.leaf(0.5)];
        let props = [Proposal { zdepth: 2.0, weight: Some(w[0]) }, Proposal { zdepth: 4.0, weight: Some(w[1]) }];
        let l = l_mvs(&mut t, Photometric::L1, x, &tgt, &src, &rel, &props).unwrap();
        assert!((t.value(l) - 0.2).abs() < 1e-7);
    }

    #[test]
    fn mvs_drops_and_renormalizes() {
        let tgt = random_image(32, 24, 5);
        let src = random_image(32, 24, 6);
        let rel = stereo(1.0);
        let x = [20.0, 12.0];
        let mut t = Tape::<f64>::new();
        // z = 0.5 warps to u = -20: dropped
        let ws = [t.leaf(0.2), t.leaf(0.3), t.leaf(0.5)];
        let zs = [0.5, 2.0, 4.0];
        let props: Vec<Proposal> = zs.iter().zip(ws).map(|(&z, w)| Proposal { zdepth: z, weight: Some(w) }).collect();
        let l = l_mvs(&mut t, Photometric::L1, x, &tgt, &src, &rel, &props).unwrap();
        let e = |z: f64| warped_dissimilarity(Photometric::L1, &tgt, x, &src, &rel, z).unwrap();
        let expect = (0.3 * e(2.0) + 0.5 * e(4.0)) / 0.8;
        assert!((t.value(l) - expect).abs() < 1e-12);
        // fewer than half survive
        let props4 = [props[0], props[1], Proposal { zdepth: 0.4, weight: None }, Proposal { zdepth: 0.3, weight: None }];
        assert!(l_mvs(&mut t, Photometric::L1, x, &tgt, &src, &rel, &props4).is_none());
    }

    /// Explicit expansion: Σₘ wₘ · mean_c |I_t(x)_c − Σ_{ij} w_ij I_s[corner_ij]_c|.
    fn double_loop(tgt: &Image, src: &Image, x: [f64; 2], rel: &RelativeCamera, zs: &[f64], ws: &[f64]) -> f64 {
        let it = tgt.get(x[0] as usize, x[1] as usize);
        let mut total = 0.0;
        for (m, &z) in zs.iter().enumerate() {
            let k = &rel.target;
            let pc = Vec3([(x[0] - k.cx) / k.fx * z, (x[1] - k.cy) / k.fy * z, z]);
            let q = rel.rotation.mul_vec(pc) + rel.translation;
            let u = rel.source.cx + rel.source.fx * q[0] / q[2];
            let v = rel.source.cy + rel.source.fy * q[1] / q[2];
            let (i0, j0) = (u.floor().min((src.width - 2) as f64), v.floor().min((src.height - 2) as f64));
            let (fu, fv) = (u - i0, v - j0);
            let mut diff = 0.0;
            for c in 0..3 {
                let mut s = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        let wij = if i == 0 { 1.0 - fu } else { fu } * if j == 0 { 1.0 - fv } else { fv };
                        s += wij * src.get(i0 as usize + i, j0 as usize + j)[c] as f64;
                    }
                }
                diff += (it[c] as f64 - s).abs();
            }
            total += ws[m] * diff / 3.0;
        }
        total
    }

    proptest! {
        #[test]
        fn delta_weights_reduce_to_reprojection(seed in 0u64..1000, px in 4.0f64..28.0, py in 3.0f64..21.0, z in 1.0f64..20.0) {
            let tgt = random_image(32, 24, seed);
            let src = random_image(32, 24, seed + 7);
            let rel = stereo(0.2);
            let x = [px.round(), py.round()];
            let mut t = Tape::<f64>::new();
            let zn = t.leaf(z);
            if let Some(rpj) = l_rpj(&mut t, Photometric::L1, x, &tgt, &src, zn, &rel) {
                let one = t.leaf(1.0);
                let zero = t.leaf(0.0);
                let props = [Proposal { zdepth: z * 0.5, weight: Some(zero) }, Proposal { zdepth: z, weight: Some(one) }, Proposal { zdepth: z * 1.5, weight: Some(zero) }];
                if let Some(mvs) = l_mvs(&mut t, Photometric::L1, x, &tgt, &src, &rel, &props) {
                    prop_assert!((t.value(mvs) - t.value(rpj)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn mvs_matches_double_loop(seed in 0u64..1000, n in 2usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tgt = random_image(32, 24, seed);
            let src = random_image(32, 24, seed + 1);
            let rel = stereo(0.15);
            let x = [rng.random_range(8..28) as f64, rng.random_range(2..22) as f64];
            let zs: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..30.0)).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let ws: Vec<f64> = raw.iter().map(|w| w / sum).collect();
            let mut t = Tape::<f64>::new();
            let props: Vec<Proposal> = zs.iter().zip(&ws).map(|(&z, &w)| Proposal { zdepth: z, weight: Some(t.leaf(w)) }).collect();
            let all_valid = zs.iter().all(|&z| warped_dissimilarity(Photometric::L1, &tgt, x, &src, &rel, z).is_some());
            prop_assume!(all_valid);
            let l = l_mvs(&mut t, Photometric::L1, x, &tgt, &src, &rel, &props).unwrap();
            prop_assert!((t.value(l) - double_loop(&tgt, &src, x, &rel, &zs, &ws)).abs() < 1e-9);
        }
    }

    #[test]
    fn mvs_gradient_is_the_dissimilarity() {
        let tgt = random_image(32, 24, 8);
        let mut src = random_image(32, 24, 9);
        let rel = stereo(0.3);
        let x = [16.0, 12.0];
        let zs = [2.0, 5.0, 9.0];
        let build = |src: &Image| {
            let mut t = Tape::<f64>::new();
            let ws: Vec<NodeId> = [0.2, 0.5, 0.3].iter().map(|&w| t.leaf(w)).collect();
            let props: Vec<Proposal> = zs.iter().zip(&ws).map(|(&z, &w)| Proposal { zdepth: z, weight: Some(w) }).collect();
            let l = l_mvs(&mut t, Photometric::L1, x, &tgt, src, &rel, &props).unwrap();
            let g = t.grad(l, &ws).unwrap();
            ws.iter().map(|&w| g.get(w).unwrap()).collect::<Vec<_>>()
        };
        let g0 = build(&src);
        for (gi, &z) in g0.iter().zip(&zs) {
            assert!((gi - warped_dissimilarity(Photometric::L1, &tgt, x, &src, &rel, z).unwrap()).abs() < 1e-12);
        }
        // pixels far from every proposal do not change the gradient
        src.set(0, 0, [0.0; 3]);
        src.set(31, 23, [1.0; 3]);
        assert_eq!(build(&src), g0);
    }

    #[test]
    fn dep_min_and_automask() {
        let cur = random_image(32, 24, 10);
        let prev = random_image(32, 24, 11);
        let next = random_image(32, 24, 12);
        let x = [16.0, 12.0];
        let mut t = Tape::<f64>::new();
        let w = t.leaf(1.0);
        let props = [Proposal { zdepth: 4.0, weight: Some(w) }];
        let sp = SourceView { image: &prev, rel: stereo(0.2) };
        let sn = SourceView { image: &next, rel: stereo(-0.2) };
        let lp = warped_dissimilarity(Photometric::L1, &cur, x, &prev, &sp.rel, 4.0).unwrap();
        let ln = warped_dissimilarity(Photometric::L1, &cur, x, &next, &sn.rel, 4.0).unwrap();
        let ip = dissimilarity(Photometric::L1, &cur, x, &prev, x).unwrap();
        let inn = dissimilarity(Photometric::L1, &cur, x, &next, x).unwrap();
        let out = l_dep(&mut t, Photometric::L1, x, &cur, &[sp, sn], &props, 4.0, true, None);
        if ip.min(inn) <= lp.min(ln) {
            assert_eq!(out, DepOutcome::Masked);
        } else {
            let DepOutcome::Loss(l) = out else { panic!("expected loss") };
            assert!((t.value(l) - lp.min(ln)).abs() < 1e-12);
        }
        // static camera, static scene: identity beats nothing, masked
        let same = [SourceView { image: &cur, rel: RelativeCamera::identity(k()) }];
        assert_eq!(l_dep(&mut t, Photometric::L1, x, &cur, &same, &props, 4.0, true, None), DepOutcome::Masked);
        // no source can be sampled
        let far = [SourceView { image: &prev, rel: stereo(50.0) }];
        assert_eq!(l_dep(&mut t, Photometric::L1, x, &cur, &far, &props, 4.0, true, None), DepOutcome::Excluded);
    }

    #[test]
    fn rgb_values_and_subgradient() {
        let mut t = Tape::<f64>::new();
        let c = [t.leaf(0.5), t.leaf(0.25), t.leaf(0.9)];
        let l = l_rgb(&mut t, c, [0.25, 0.5, 0.9 - 0.25]);
        assert!((t.value(l) - 0.25).abs() < 1e-12);
        let g = t.grad(l, &c).unwrap();
        assert!((g.get(c[0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.get(c[1]).unwrap() + 1.0 / 3.0).abs() < 1e-15);
    }

    fn grid(f: impl Fn(Vec3) -> f64) -> SdfField<f64> {
        let spec = GridSpec::from_origin(Vec3::new(-2.0, -2.0, -2.0), 0.25, [16, 16, 16]).unwrap();
        SdfField::from_fn(spec, 0, f)
    }

    #[test]
    fn eikonal_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..200).map(|_| Vec3::new(rng.random_range(-1.8..1.8), rng.random_range(-1.8..1.8), rng.random_range(-1.8..1.8))).collect();
        let mut t = Tape::<f64>::new();
        let l = l_eikonal(&mut t, &grid(|p| p.z() - 0.3), &pts).unwrap();
        assert!(t.value(l).abs() < 1e-12);
        let l = l_eikonal(&mut t, &grid(|p| 2.0 * p.x()), &pts).unwrap();
        assert!((t.value(l) - 1.0).abs() < 1e-12);
        let sphere = grid(|p| p.norm() - 1.0);
        let far: Vec<Vec3> = pts.iter().copied().filter(|p| p.norm() >= 0.5).collect();
        let l = l_eikonal(&mut t, &sphere, &far).unwrap();
        assert!(t.value(l) < 0.05, "{}", t.value(l));
    }

    #[test]
    fn hessian_examples() {
        let vox: Vec<[usize; 3]> = (0..16).flat_map(|i| (0..16).map(move |j| [i, j, (i + j) % 16])).collect();
        let mut t = Tape::<f64>::new();
        let (l, n) = l_hessian(&mut t, &grid(|p| 0.3 * p.x() - p.y() + 2.0 * p.z()), &vox).unwrap();
        assert!(t.value(l).abs() < 1e-9 && n > 0);
        let (l, _) = l_hessian(&mut t, &grid(|p| p.x() * p.x()), &vox).unwrap();
        assert!((t.value(l) - 2.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut noisy = grid(|_| 0.0);
        for v in noisy.sdf_grid_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (l, _) = l_hessian(&mut t, &noisy, &vox).unwrap();
        assert!(t.value(l) >= 0.0);
        assert!(hessian_norm_at(&mut t, &noisy, [0, 3, 3]).is_none());
    }

    #[test]
    fn sparsity_and_semantic_examples() {
        let mut t = Tape::<f64>::new();
        for (s, e) in [(-2.0, 2.0), (3.0, 0.0), (0.0, 0.0)] {
            let n = t.leaf(s);
            let l = l_sparsity(&mut t, &[n]).unwrap();
            assert_eq!(t.value(l), e);
        }
        let p = [t.leaf(0.0), t.leaf(1.0)];
        let l = l_semantic(&mut t, &p, 1).unwrap();
        assert_eq!(t.value(l), 0.0);
        let u: Vec<NodeId> = (0..5).map(|_| t.leaf(0.2)).collect();
        let l = l_semantic(&mut t, &u, 3).unwrap();
        assert!((t.value(l) - 5f64.ln()).abs() < 1e-12);
        let tiny = [t.leaf(1e-10), t.leaf(1.0 - 1e-10)];
        let l = l_semantic(&mut t, &tiny, 0).unwrap();
        assert!((t.value(l) + 1e-8f64.ln()).abs() < 1e-12);
        assert!(l_semantic(&mut t, &tiny, 2).is_err());
    }

    /// Loop oracle for the edge term.
    fn edge_oracle(d: &[f64], img: &[[f64; 3]], w: usize, h: usize) -> f64 {
        let disp: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
        let mean = disp.iter().sum::<f64>() / disp.len() as f64;
        let n: Vec<f64> = disp.iter().map(|v| v / mean).collect();
        let g: Vec<f64> = img.iter().map(|c| c.iter().sum::<f64>() / 3.0).collect();
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w - 1 {
                let i = y * w + x;
                sx += (n[i + 1] - n[i]).abs() * (-(g[i + 1] - g[i]).abs()).exp();
            }
        }
        for y in 0..h - 1 {
            for x in 0..w {
                let i = y * w + x;
                sy += (n[i + w] - n[i]).abs() * (-(g[i + w] - g[i]).abs()).exp();
            }
        }
        sx / ((w - 1) * h) as f64 + sy / (w * (h - 1)) as f64
    }

    #[test]
    fn edge_examples() {
        let (w, h) = (5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img: Vec<[f64; 3]> = (0..w * h).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let mut t = Tape::<f64>::new();
        let flat: Vec<NodeId> = (0..w * h).map(|_| t.leaf(3.0)).collect();
        let l = l_edge(&mut t, &flat, &img, w, h).unwrap();
        assert_eq!(t.value(l), 0.0);
        let dv: Vec<f64> = (0..w * h).map(|_| rng.random_range(1.0..10.0)).collect();
        let dn: Vec<NodeId> = dv.iter().map(|&d| t.leaf(d)).collect();
        let l = l_edge(&mut t, &dn, &img, w, h).unwrap();
        assert!((t.value(l) - edge_oracle(&dv, &img, w, h)).abs() < 1e-12);
        // a depth step aligned with an image edge costs less than on a flat image
        let step: Vec<f64> = (0..w * h).map(|i| if i % w < 2 { 2.0 } else { 5.0 }).collect();
        let edge_img: Vec<[f64; 3]> = (0..w * h).map(|i| if i % w < 2 { [0.0; 3] } else { [1.0; 3] }).collect();
        let flat_img = vec![[0.5; 3]; w * h];
        let sn: Vec<NodeId> = step.iter().map(|&d| t.leaf(d)).collect();
        let on_edge = l_edge(&mut t, &sn, &edge_img, w, h).unwrap();
        let on_flat = l_edge(&mut t, &sn, &flat_img, w, h).unwrap();
        assert!(t.value(on_edge) < t.value(on_flat));
        assert!(l_edge(&mut t, &sn[..1], &img[..1], 1, 1).is_err());
    }

    #[test]
    fn total_examples() {
        let zero = LossWeights { rgb: 0.0, eikonal: 0.0, hessian: 0.0, sparsity: 0.0, edge: 0.0, semantic: 0.0 };
        let terms = [(Term::Dep, 0.7, 10), (Term::Rgb, 0.3, 10), (Term::Hessian, 5.0, 100)];
        assert_eq!(total_loss(&terms, &zero).unwrap().total, 0.7);
        let d = LossWeights::default();
        assert_eq!((d.rgb, d.eikonal, d.hessian, d.sparsity, d.edge, d.semantic), (0.1, 0.1, 0.1, 0.001, 0.01, 0.1));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let vals: Vec<(Term, f64, usize)> = Term::ALL.iter().map(|&t| (t, rng.random_range(0.0..10.0), 1)).collect();
            let r = total_loss(&vals, &d).unwrap();
            let hand = vals[0].1 + 0.1 * vals[1].1 + 0.1 * vals[2].1 + 0.1 * vals[3].1 + 0.001 * vals[4].1 + 0.01 * vals[5].1 + 0.1 * vals[6].1;
            assert!((r.total - hand).abs() <= 1e-12 * hand);
        }
        let err = total_loss(&[(Term::Eikonal, f64::NAN, 1)], &d).unwrap_err();
        assert!(err.to_string().contains("eikonal"));
    }

    #[test]
    fn profile_terms() {
        assert_eq!(Profile::Depth.terms(), &[Term::Dep, Term::Eikonal, Term::Edge]);
        assert!(Profile::Occupancy.terms().contains(&Term::Hessian) && Profile::Occupancy.terms().contains(&Term::Sparsity));
        assert!(!Profile::NovelDepth.terms().contains(&Term::Sparsity));
    }
}
