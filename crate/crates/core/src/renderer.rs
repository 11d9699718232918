//! SDF volume rendering along rays.
//!
//! A ray's span inside the volume is cut into M equal cells. The SDF is read
//! at the M + 1 cell edges, which gives one opacity per cell; color, depth and
//! semantics are read at the M cell centers. This way a sharp zero crossing
//! inside a cell is attributed to that cell's center.

use rayon::prelude::*;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::field::FieldProvider;
use crate::geometry::{pixel_to_ray, ray_aabb, Aabb, Camera, Ray, Vec3};
use crate::image::{DepthMap, Image, LabelMap};
use crate::real::Real;

/// Samples per ray used for fitting unless configured otherwise.
pub const DEFAULT_SAMPLES: usize = 96;

/// Which quantities to integrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderModes {
    pub color: bool,
    pub depth: bool,
    pub semantics: bool,
}

impl RenderModes {
    pub const ALL: RenderModes = RenderModes { color: true, depth: true, semantics: true };
    pub const COLOR_DEPTH: RenderModes = RenderModes { color: true, depth: true, semantics: false };
    pub const DEPTH: RenderModes = RenderModes { color: false, depth: true, semantics: false };
}

/// Per-ray samples and the values they produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    pub t_near: f64,
    pub t_far: f64,
    /// M + 1 cell boundaries along the ray (m).
    pub edges: Vec<f64>,
    /// M cell centers (m).
    pub depths: Vec<f64>,
    pub points: Vec<Vec3>,
    /// SDF at the edges.
    pub sdf: Vec<f64>,
    pub alphas: Vec<f64>,
    pub weights: Vec<f64>,
    pub residual: f64,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.t_far - self.t_near) / self.len() as f64
    }

    /// Transmittance before each sample.
    pub fn transmittance(&self) -> Vec<f64> {
        let mut t = 1.0;
        self.alphas
            .iter()
            .map(|a| {
                let cur = t;
                t *= 1.0 - a;
                cur
            })
            .collect()
    }
}

/// Cell-centered uniform samples on the ray's span inside `bx`.
pub fn sample_ray_points(ray: &Ray, bx: &Aabb, m: usize) -> Result<(Vec<Vec3>, Vec<f64>)> {
    let s = span(ray, bx, m)?;
    Ok((s.points, s.depths))
}

fn span(ray: &Ray, bx: &Aabb, m: usize) -> Result<RaySamples> {
    if m < 2 {
        return Err(Error::domain(format!("need at least 2 samples per ray, got {m}")));
    }
    let (t0, t1) = ray_aabb(ray, bx).ok_or(Error::EmptyRay)?;
    if !(t1 > t0) {
        return Err(Error::EmptyRay);
    }
    let dt = (t1 - t0) / m as f64;
    let edges: Vec<f64> = (0..=m).map(|i| t0 + i as f64 * dt).collect();
    let depths: Vec<f64> = (0..m).map(|i| t0 + (i as f64 + 0.5) * dt).collect();
    let points = depths.iter().map(|&t| ray.at(t)).collect();
    Ok(RaySamples { t_near: t0, t_far: t1, edges, depths, points, ..Default::default() })
}

/// Opacities between consecutive SDF samples for sharpness `a`:
/// αₘ = max((Φ(sₘ) − Φ(sₘ₊₁)) / Φ(sₘ), 0) with Φ(x) = sigmoid(a·x).
///
/// The ratio is formed as exp(softplus(−a·sₘ) − softplus(−a·sₘ₊₁)), which stays
/// finite deep inside surfaces. Cells where the ratio is at least 1 get a
/// constant zero, matching the subgradient of the clamp.
pub fn alphas_from_sdf<F: Real>(tape: &mut Tape<F>, sdf: &[NodeId], a: NodeId) -> Result<Vec<NodeId>> {
    if tape.value(a) <= F::zero() {
        return Err(Error::domain(format!("sharpness must be positive, got {}", tape.value(a))));
    }
    let mut log_phi = Vec::with_capacity(sdf.len());
    for (i, &s) in sdf.iter().enumerate() {
        if !tape.value(s).is_finite() {
            return Err(Error::numeric("alphas_from_sdf", format!("SDF sample {i} is {}", tape.value(s))));
        }
        let x = tape.mul(a, s);
        let nx = tape.scale(x, -F::one());
        // −ln Φ(a·s)
        log_phi.push(tape.softplus(nx));
    }
    let zero = tape.constant(F::zero());
    let mut out = Vec::with_capacity(sdf.len().saturating_sub(1));
    for w in log_phi.windows(2) {
        let d = tape.value(w[0]) - tape.value(w[1]);
        if d >= F::zero() {
            out.push(zero);
            continue;
        }
        let diff = tape.sub(w[0], w[1]);
        let ratio = tape.exp(diff);
        let one_minus = tape.lin_comb(&[(ratio, -F::one())], F::one());
        out.push(tape.relu(one_minus));
    }
    Ok(out)
}

/// wₘ = Tₘ·αₘ with Tₘ = ∏_{i<m}(1 − αᵢ); the residual is the transmittance past the last sample.
pub fn weights_from_alphas<F: Real>(tape: &mut Tape<F>, alphas: &[NodeId]) -> (Vec<NodeId>, NodeId) {
    let mut t = tape.constant(F::one());
    let mut w = Vec::with_capacity(alphas.len());
    for &a in alphas {
        w.push(tape.mul(t, a));
        let keep = tape.lin_comb(&[(a, -F::one())], F::one());
        t = tape.mul(t, keep);
    }
    (w, t)
}

/// Taped outputs of [`render_ray`].
#[derive(Clone, Debug)]
pub struct RayRender {
    pub color: Option<[NodeId; 3]>,
    /// Euclidean distance along the ray (m).
    pub depth: Option<NodeId>,
    pub semantics: Option<Vec<NodeId>>,
    pub weight_sum: NodeId,
    pub residual: NodeId,
    /// Per-cell weights wₘ.
    pub weights: Vec<NodeId>,
    /// Cells with nonzero opacity; the others carry no value or gradient.
    pub active: Vec<usize>,
    pub samples: RaySamples,
}

/// Plain values of a rendered ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderResult {
    pub color: [f64; 3],
    pub depth: f64,
    pub semantics: Option<Vec<f64>>,
    pub weight_sum: f64,
}

/// Integrates color, depth and semantics along `ray` on the tape.
///
/// Residual probability goes to the background color, to `t_far` and to the
/// uniform class distribution.
pub fn render_ray<F: Real, P: FieldProvider<F> + ?Sized>(
    tape: &mut Tape<F>,
    field: &P,
    ray: &Ray,
    m: usize,
    modes: RenderModes,
) -> Result<RayRender> {
    let mut samples = span(ray, &field.spec().bounds, m)?;
    let a = field.sharpness(tape);
    let sdf: Vec<NodeId> = samples.edges.iter().map(|&t| field.sdf(tape, ray.at(t))).collect();
    let alphas = alphas_from_sdf(tape, &sdf, a)?;
    let (w, residual) = weights_from_alphas(tape, &alphas);
    let active: Vec<usize> = (0..m).filter(|&i| tape.value(alphas[i]) != F::zero()).collect();
    let wa: Vec<NodeId> = active.iter().map(|&i| w[i]).collect();

    let weight_sum = tape.sum(&wa);
    let color = if modes.color {
        let bg = field.background(tape);
        let cols: Vec<[NodeId; 3]> = active.iter().map(|&i| field.color(tape, samples.points[i])).collect();
        Some(std::array::from_fn(|k| {
            let mut xs: Vec<NodeId> = cols.iter().map(|c| c[k]).collect();
            let mut ws = wa.clone();
            xs.push(bg[k]);
            ws.push(residual);
            tape.dot(&ws, &xs)
        }))
    } else {
        None
    };
    let depth = if modes.depth {
        let mut terms: Vec<(NodeId, F)> = active.iter().map(|&i| (w[i], F::of(samples.depths[i]))).collect();
        terms.push((residual, F::of(samples.t_far)));
        Some(tape.lin_comb(&terms, F::zero()))
    } else {
        None
    };
    let semantics = if modes.semantics && field.num_classes() > 0 {
        let c = field.num_classes();
        let uniform = F::of(1.0 / c as f64);
        let probs: Vec<Vec<NodeId>> = active
            .iter()
            .map(|&i| {
                let l = field.logits(tape, samples.points[i]);
                softmax(tape, &l)
            })
            .collect();
        let raw: Vec<NodeId> = (0..c)
            .map(|k| {
                let xs: Vec<NodeId> = probs.iter().map(|p| p[k]).collect();
                let dot = tape.dot(&wa, &xs);
                tape.lin_comb(&[(dot, F::one()), (residual, uniform)], F::zero())
            })
            .collect();
        let total = tape.sum(&raw);
        Some(raw.iter().map(|&r| tape.div(r, total)).collect())
    } else {
        None
    };

    samples.sdf = sdf.iter().map(|&s| tape.value(s).f64()).collect();
    samples.alphas = alphas.iter().map(|&x| tape.value(x).f64()).collect();
    samples.weights = w.iter().map(|&x| tape.value(x).f64()).collect();
    samples.residual = tape.value(residual).f64();
    Ok(RayRender { color, depth, semantics, weight_sum, residual, weights: w, active, samples })
}

/// Numerically stable softmax on the tape.
pub fn softmax<F: Real>(tape: &mut Tape<F>, logits: &[NodeId]) -> Vec<NodeId> {
    let mx = logits.iter().map(|&l| tape.value(l)).fold(F::neg_infinity(), F::max);
    let e: Vec<NodeId> = logits
        .iter()
        .map(|&l| {
            let shifted = tape.lin_comb(&[(l, F::one())], -mx);
            tape.exp(shifted)
        })
        .collect();
    let z = tape.sum(&e);
    e.iter().map(|&x| tape.div(x, z)).collect()
}

/// Value-only rendering on a scratch tape.
pub fn render_ray_value<F: Real, P: FieldProvider<F> + ?Sized>(
    field: &P,
    ray: &Ray,
    m: usize,
    modes: RenderModes,
) -> Result<RenderResult> {
    let mut tape = Tape::with_capacity(64 * m);
    let r = render_ray(&mut tape, field, ray, m, modes)?;
    let v = |n: NodeId| tape.value(n).f64();
    Ok(RenderResult {
        color: r.color.map(|c| c.map(v)).unwrap_or([0.0; 3]),
        depth: r.depth.map(v).unwrap_or(0.0),
        semantics: r.semantics.map(|s| s.into_iter().map(v).collect()),
        weight_sum: v(r.weight_sum),
    })
}

/// Cosine between a world-frame ray direction and the camera's optical axis.
pub fn axis_cosine(cam: &Camera, direction: Vec3) -> f64 {
    let r = &cam.pose.rotation.0;
    Vec3(r[2]).dot(direction)
}

/// A rendered frame; depth is camera z-depth, 0 where the ray misses the volume.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub color: Image,
    pub depth: DepthMap,
    pub labels: Option<LabelMap>,
}

/// Renders every pixel of `cam` in parallel, rows in order.
pub fn render_view<F: Real, P: FieldProvider<F> + ?Sized>(
    field: &P,
    cam: &Camera,
    m: usize,
    modes: RenderModes,
) -> Result<RenderedView> {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let semantics = modes.semantics && field.num_classes() > 0;
    let rows: Vec<Result<Vec<(RenderResult, f64)>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut tape = Tape::with_capacity(64 * m);
            (0..w)
                .map(|x| {
                    let ray = pixel_to_ray(cam, [x as f64, y as f64])?;
                    tape.clear();
                    match render_ray(&mut tape, field, &ray, m, modes) {
                        Ok(r) => {
                            let v = |n: NodeId| tape.value(n).f64();
                            let res = RenderResult {
                                color: r.color.map(|c| c.map(v)).unwrap_or([0.0; 3]),
                                depth: r.depth.map(v).unwrap_or(0.0),
                                semantics: r.semantics.map(|s| s.into_iter().map(v).collect()),
                                weight_sum: v(r.weight_sum),
                            };
                            Ok((res, axis_cosine(cam, ray.direction)))
                        }
                        Err(Error::EmptyRay) => {
                            let bg = field.background(&mut tape).map(|b| tape.value(b).f64());
                            Ok((RenderResult { color: bg, depth: 0.0, semantics: None, weight_sum: 0.0 }, 0.0))
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect()
        })
        .collect();
    let mut color = Image::new(w, h);
    let mut depth = DepthMap::new(w, h);
    let mut labels = semantics.then(|| LabelMap::new(w, h));
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (r, cos)) in row?.into_iter().enumerate() {
            color.set(x, y, r.color.map(|c| c as f32));
            depth.set(x, y, (r.depth * cos) as f32);
            if let (Some(l), Some(p)) = (labels.as_mut(), r.semantics.as_ref()) {
                l.set(x, y, argmax(p) as u8);
            }
        }
    }
    Ok(RenderedView { color, depth, labels })
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
