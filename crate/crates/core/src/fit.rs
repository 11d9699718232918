//! The fitting loop: per-step plan, sharded loss evaluation, AdamW updates,
//! checkpoints and the loss log. Also the gradient check.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{finite_difference, relative_error_floor, GradCheckRow, NodeId, OpKind, Tape};
use crate::config::{Precision, Provider, RunConfig};
use crate::error::{Error, Result};
use crate::field::{field_from_bytes, field_to_bytes, AnyField, FieldProvider, GridSpec, SdfField, TpvField};
use crate::geometry::{pixel_to_ray, RelativeCamera, Vec3};
use crate::losses::{
    eikonal_interior, eikonal_point, hessian_norm_at, l_dep, l_edge, l_rgb, l_semantic, proposals_from_render, total_loss,
    DepOutcome, LossReport, Profile, SourceView, Term,
};
use crate::optimizer::OptimState;
use crate::real::Real;
use crate::renderer::{axis_cosine, render_ray, RenderModes};
use crate::scenes::Dataset;
use crate::supervision::{sample_ray_batch, select_supervision_frame};

pub const FIELD_FILE: &str = "field.socf";
pub const OPTIM_FILE: &str = "optim.soco";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "run.toml";

/// Random choices of one step. Drawn from the seed and step index only, so a
/// resumed run replays them exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    /// Dataset index of the rendered frame.
    pub target: usize,
    /// Dataset indices of the frames it is warped against.
    pub sources: Vec<usize>,
    pub pixels: Vec<[usize; 2]>,
    /// Per ray: sample indices that feed the Eikonal term.
    pub eikonal_samples: Vec<Vec<usize>>,
    pub eikonal_points: Vec<Vec3>,
    pub hessian_voxels: Vec<[usize; 3]>,
    pub sparsity_voxels: Vec<[usize; 3]>,
    /// Top-left pixel of the edge patch.
    pub edge_patch: Option<[usize; 2]>,
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

fn random_voxel(spec: &GridSpec, rng: &mut impl Rng) -> [usize; 3] {
    std::array::from_fn(|a| rng.random_range(0..spec.resolution[a]))
}

/// Nearest training frames before and after `t` (positions in `train`).
fn neighbours(train: &[usize], t: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2);
    if t > 0 {
        out.push(train[t - 1]);
    }
    if t + 1 < train.len() {
        out.push(train[t + 1]);
    }
    out
}

pub fn plan_step(cfg: &RunConfig, ds: &Dataset, spec: &GridSpec, train: &[usize], step: usize) -> Result<StepPlan> {
    if train.len() < 2 {
        return Err(Error::Config(format!("need at least two training frames, found {}", train.len())));
    }
    let mut rng = step_rng(cfg.seed, step);
    let poses: Vec<_> = train.iter().map(|&i| ds.frames[i].camera.pose).collect();
    let t = rng.random_range(0..train.len());
    let tp = select_supervision_frame(t, &poses, &cfg.supervision, &mut rng);
    let target = train[tp];
    let k = &ds.frames[target].camera.intrinsics;
    let pixels = sample_ray_batch(k.width, k.height, cfg.supervision.rays_per_step, &mut rng)?;
    let per_ray = cfg.regularizer.eikonal_per_ray.min(cfg.samples);
    let eikonal_samples = pixels
        .iter()
        .map(|_| rand::seq::index::sample(&mut rng, cfg.samples, per_ray).into_vec())
        .collect();
    let n_uniform = cfg.regularizer.eikonal_uniform.unwrap_or(per_ray * pixels.len());
    let eikonal_points = (0..n_uniform)
        .map(|_| Vec3(std::array::from_fn(|a| rng.random_range(spec.bounds.min[a]..spec.bounds.max[a]))))
        .collect();
    let terms = cfg.terms();
    let hessian_voxels = if terms.contains(&Term::Hessian) {
        (0..cfg.regularizer.hessian_points).map(|_| random_voxel(spec, &mut rng)).collect()
    } else {
        Vec::new()
    };
    let sparsity_voxels = if terms.contains(&Term::Sparsity) {
        (0..cfg.regularizer.sparsity_points).map(|_| random_voxel(spec, &mut rng)).collect()
    } else {
        Vec::new()
    };
    let p = cfg.regularizer.edge_patch;
    let edge_patch = (terms.contains(&Term::Edge) && p <= k.width && p <= k.height)
        .then(|| [rng.random_range(0..=k.width - p), rng.random_range(0..=k.height - p)]);
    Ok(StepPlan { target, sources: neighbours(train, tp), pixels, eikonal_samples, eikonal_points, hessian_voxels, sparsity_voxels, edge_patch })
}

/// Per-term partial sums of one shard.
struct Shard<F> {
    tape: Tape<F>,
    sums: Vec<(Term, Option<NodeId>, usize)>,
    masked: usize,
}

struct Partial {
    terms: Vec<Term>,
    nodes: Vec<Vec<NodeId>>,
    counts: Vec<usize>,
    masked: usize,
}

impl Partial {
    fn new(terms: &[Term]) -> Self {
        Partial { terms: terms.to_vec(), nodes: vec![Vec::new(); terms.len()], counts: vec![0; terms.len()], masked: 0 }
    }

    fn push(&mut self, t: Term, node: Option<NodeId>) {
        if let Some(i) = self.terms.iter().position(|&x| x == t) {
            self.nodes[i].extend(node);
            self.counts[i] += 1;
        }
    }

    fn finish<F: Real>(self, mut tape: Tape<F>) -> Shard<F> {
        let sums = self
            .terms
            .iter()
            .zip(self.nodes)
            .zip(self.counts)
            .map(|((&t, n), c)| (t, (!n.is_empty()).then(|| tape.sum(&n)), c))
            .collect();
        Shard { tape, sums, masked: self.masked }
    }
}

/// Everything a step needs besides the parameters.
pub struct StepContext<'a> {
    pub cfg: &'a RunConfig,
    pub ds: &'a Dataset,
    pub terms: Vec<Term>,
}

impl<'a> StepContext<'a> {
    pub fn new(cfg: &'a RunConfig, ds: &'a Dataset) -> Self {
        let mut terms = cfg.terms();
        if ds.frames.iter().all(|f| f.labels.is_none()) {
            terms.retain(|&t| t != Term::Semantic);
        }
        StepContext { cfg, ds, terms }
    }

    fn modes(&self) -> RenderModes {
        RenderModes { color: self.terms.contains(&Term::Rgb), depth: true, semantics: self.terms.contains(&Term::Semantic) }
    }

    fn ray_shard<F: Real, P: FieldProvider<F> + ?Sized>(&self, field: &P, plan: &StepPlan, rays: std::ops::Range<usize>) -> Result<Shard<F>> {
        let cfg = self.cfg;
        let frame = &self.ds.frames[plan.target];
        let cam = &frame.camera;
        let sources: Vec<SourceView> = plan
            .sources
            .iter()
            .map(|&s| SourceView { image: &self.ds.frames[s].image, rel: RelativeCamera::between(cam, &self.ds.frames[s].camera) })
            .collect();
        let mut tape = Tape::with_capacity(rays.len() * cfg.samples * 96);
        let mut part = Partial::new(&self.terms);
        let modes = self.modes();
        for r in rays {
            let [px, py] = plan.pixels[r];
            let x = [px as f64, py as f64];
            let ray = pixel_to_ray(cam, x)?;
            let rr = match render_ray(&mut tape, field, &ray, cfg.samples, modes) {
                Ok(rr) => rr,
                Err(Error::EmptyRay) => continue,
                Err(e) => return Err(e),
            };
            let cos = axis_cosine(cam, ray.direction);
            let depth = rr.depth.expect("depth mode");
            let z = tape.scale(depth, F::of(cos));
            let zval = tape.value(z).f64();
            let proposals = proposals_from_render(&rr, cos);
            match l_dep(&mut tape, cfg.photometric, x, &frame.image, &sources, &proposals, zval, cfg.use_mvs, Some(z)) {
                DepOutcome::Excluded => {}
                DepOutcome::Masked => {
                    part.masked += 1;
                    part.push(Term::Dep, None)
                }
                DepOutcome::Loss(n) => part.push(Term::Dep, Some(n)),
            }
            if let Some(c) = rr.color {
                let target = frame.image.get(px, py).map(|v| v as f64);
                let n = l_rgb(&mut tape, c, target);
                part.push(Term::Rgb, Some(n));
            }
            if let (Some(p), Some(labels)) = (rr.semantics.as_ref(), frame.labels.as_ref()) {
                let n = l_semantic(&mut tape, p, labels.get(px, py) as usize)?;
                part.push(Term::Semantic, Some(n));
            }
            if self.terms.contains(&Term::Eikonal) {
                for &i in &plan.eikonal_samples[r] {
                    let p = rr.samples.points[i];
                    if eikonal_interior(field, p) {
                        let n = eikonal_point(&mut tape, field, p);
                        part.push(Term::Eikonal, Some(n));
                    }
                }
            }
        }
        Ok(part.finish(tape))
    }

    fn regularizer_shard<F: Real, P: FieldProvider<F> + ?Sized>(&self, field: &P, plan: &StepPlan) -> Result<Shard<F>> {
        let mut tape = Tape::new();
        let mut part = Partial::new(&self.terms);
        if self.terms.contains(&Term::Eikonal) {
            for &p in &plan.eikonal_points {
                if eikonal_interior(field, p) {
                    let n = eikonal_point(&mut tape, field, p);
                    part.push(Term::Eikonal, Some(n));
                }
            }
        }
        for &v in &plan.hessian_voxels {
            if let Some(n) = hessian_norm_at(&mut tape, field, v) {
                part.push(Term::Hessian, Some(n));
            }
        }
        for &v in &plan.sparsity_voxels {
            let s = field.sdf_at_voxel(&mut tape, v);
            let neg = tape.scale(s, -F::one());
            let n = tape.relu(neg);
            part.push(Term::Sparsity, Some(n));
        }
        if let Some([x0, y0]) = plan.edge_patch {
            let frame = &self.ds.frames[plan.target];
            let cam = &frame.camera;
            let p = self.cfg.regularizer.edge_patch;
            let mut depth = Vec::with_capacity(p * p);
            let mut image = Vec::with_capacity(p * p);
            for y in y0..y0 + p {
                for x in x0..x0 + p {
                    let ray = pixel_to_ray(cam, [x as f64, y as f64])?;
                    let rr = render_ray(&mut tape, field, &ray, self.cfg.samples, RenderModes::DEPTH)?;
                    depth.push(tape.scale(rr.depth.expect("depth mode"), F::of(axis_cosine(cam, ray.direction))));
                    image.push(frame.image.get(x, y).map(|v| v as f64));
                }
            }
            let n = l_edge(&mut tape, &depth, &image, p, p)?;
            part.push(Term::Edge, Some(n));
        }
        Ok(part.finish(tape))
    }

    fn shards<F: Real, P: FieldProvider<F> + ?Sized>(&self, field: &P, plan: &StepPlan) -> Result<Vec<Shard<F>>> {
        let n = plan.pixels.len();
        let k = self.cfg.shards;
        let mut jobs: Vec<Option<std::ops::Range<usize>>> = (0..k).map(|i| Some(i * n / k..(i + 1) * n / k)).collect();
        jobs.push(None);
        jobs.into_par_iter()
            .map(|job| match job {
                Some(r) => self.ray_shard(field, plan, r),
                None => self.regularizer_shard(field, plan),
            })
            .collect()
    }

    /// Per-term (value, count) and the normalizers, in term order.
    fn reduce<F: Real>(&self, shards: &[Shard<F>]) -> Result<(LossReport, Vec<f64>, usize)> {
        let mut rows = Vec::with_capacity(self.terms.len());
        let mut scale = Vec::with_capacity(self.terms.len());
        for (ti, &t) in self.terms.iter().enumerate() {
            let count: usize = shards.iter().map(|s| s.sums[ti].2).sum();
            let sum: f64 = shards.iter().filter_map(|s| s.sums[ti].1.map(|n| s.tape.value(n).f64())).sum();
            let value = if count > 0 { sum / count as f64 } else { 0.0 };
            rows.push((t, value, count));
            scale.push(if count > 0 { self.cfg.weights.get(t) / count as f64 } else { 0.0 });
        }
        let dep = self.terms.iter().position(|&t| t == Term::Dep).map_or(0, |i| rows[i].2);
        Ok((total_loss(&rows, &self.cfg.weights)?, scale, dep))
    }

    /// Loss value only.
    pub fn loss<F: Real, P: FieldProvider<F> + ?Sized>(&self, field: &P, plan: &StepPlan) -> Result<LossReport> {
        let shards = self.shards(field, plan)?;
        Ok(self.reduce(&shards)?.0)
    }

    /// Loss and dense gradient. Shard gradients are summed in shard order.
    pub fn gradient<F: Real, P: FieldProvider<F> + ?Sized>(&self, field: &P, plan: &StepPlan) -> Result<StepGradient<F>> {
        let mut shards = self.shards(field, plan)?;
        let (report, scale, dep_count) = self.reduce(&shards)?;
        let n = field.params().len();
        let grads: Vec<Result<Vec<F>>> = shards
            .par_iter_mut()
            .map(|s| {
                let mut g = vec![F::zero(); n];
                let terms: Vec<(NodeId, F)> =
                    s.sums.iter().zip(&scale).filter_map(|(&(_, node, _), &c)| node.map(|nd| (nd, F::of(c)))).collect();
                if terms.is_empty() {
                    return Ok(g);
                }
                let out = s.tape.lin_comb(&terms, F::zero());
                let adj = s.tape.backward(out)?;
                s.tape.accumulate_param_grads(&adj, &mut g);
                Ok(g)
            })
            .collect();
        let mut dense = vec![F::zero(); n];
        for g in grads {
            for (d, x) in dense.iter_mut().zip(g?) {
                *d = *d + x;
            }
        }
        let mut touched: Vec<usize> = shards
            .iter()
            .flat_map(|s| {
                (0..s.tape.len()).filter_map(|i| match s.tape.op(NodeId(i as u32)) {
                    OpKind::Param(slot) => Some(slot as usize),
                    _ => None,
                })
            })
            .collect();
        touched.sort_unstable();
        touched.dedup();
        let rays = plan.pixels.len().max(1) as f64;
        let valid_fraction = dep_count as f64 / rays;
        let masked_fraction = shards.iter().map(|s| s.masked).sum::<usize>() as f64 / rays;
        Ok(StepGradient { report, grads: dense, valid_fraction, masked_fraction, touched })
    }
}

pub struct StepGradient<F> {
    pub report: LossReport,
    pub grads: Vec<F>,
    /// Rays that entered the depth loss (masked ones included) over rays cast.
    pub valid_fraction: f64,
    /// Rays whose depth loss the automask zeroed, over rays cast.
    pub masked_fraction: f64,
    /// Parameter slots that appeared on any tape.
    pub touched: Vec<usize>,
}

/// Fresh field for `cfg` over the dataset volume.
pub fn init_field<F: Real>(cfg: &RunConfig, spec: GridSpec, num_classes: usize) -> AnyField<F> {
    let mut rng = step_rng(cfg.seed, 0);
    rng.set_stream(0);
    let c = if cfg.semantics { num_classes } else { 0 };
    match cfg.provider {
        Provider::Grid => AnyField::Grid(SdfField::init_ground_prior(spec, c, &mut rng)),
        Provider::Tpv => AnyField::Tpv(TpvField::init_random(spec, cfg.tpv.feature_dim, cfg.tpv.hidden_dim, c, &mut rng)),
    }
}

/// One row of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub report: LossReport,
    pub valid_fraction: f64,
    pub masked_fraction: f64,
    /// a = exp(ρ) after the update.
    pub sharpness: f64,
}

fn csv_header(terms: &[Term]) -> String {
    let mut h = String::from("step,epoch,lr,total");
    for t in terms {
        h.push(',');
        h.push_str(t.name());
    }
    h.push_str(",valid_fraction,masked_fraction,sharpness\n");
    h
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{},{:?},{:?}", self.step, self.epoch, self.lr, self.report.total);
        for t in &self.report.terms {
            s.push_str(&format!(",{:?}", t.value));
        }
        s.push_str(&format!(",{:?},{:?},{:?}\n", self.valid_fraction, self.masked_fraction, self.sharpness));
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub start_step: usize,
    pub end_step: usize,
    pub output: PathBuf,
    /// Mean total loss per completed epoch of this invocation.
    pub epoch_means: Vec<(usize, f64)>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Continue from the checkpoint in the output directory.
    pub resume: bool,
    /// Stop once this many steps are done (the schedule still spans the full run).
    pub stop_at: Option<usize>,
}

/// Fits the dataset of `cfg`, writing checkpoints and `loss.csv` under `cfg.output`.
pub fn fit(cfg: &RunConfig, opts: FitOptions, on_step: &mut (dyn FnMut(&StepLog) + Send)) -> Result<FitSummary> {
    cfg.validate()?;
    let ds = Dataset::load(&cfg.dataset)?;
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| match cfg.precision {
        Precision::F32 => fit_typed::<f32>(cfg, &ds, opts, on_step),
        Precision::F64 => fit_typed::<f64>(cfg, &ds, opts, on_step),
    })
}

fn fit_typed<F: Real>(cfg: &RunConfig, ds: &Dataset, opts: FitOptions, on_step: &mut (dyn FnMut(&StepLog) + Send)) -> Result<FitSummary> {
    let out = &cfg.output;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ctx = StepContext::new(cfg, ds);
    let train = ds.train_indices();
    let csv_path = out.join(LOSS_FILE);
    let header = csv_header(&ctx.terms);
    let (mut field, mut opt) = if opts.resume {
        let fp = out.join(FIELD_FILE);
        let bytes = fs::read(&fp).map_err(|e| Error::io(&fp, e))?;
        let field: AnyField<F> = field_from_bytes(&bytes, &fp.display().to_string())?;
        let opt = OptimState::load(cfg.optim, &out.join(OPTIM_FILE))?;
        if opt.m.len() != field.params().len() {
            return Err(Error::Config("optimizer state does not match the field checkpoint".into()));
        }
        let text = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let kept: String = text.split_inclusive('\n').take(opt.step + 1).collect();
        fs::write(&csv_path, kept).map_err(|e| Error::io(&csv_path, e))?;
        (field, opt)
    } else {
        let field = init_field::<F>(cfg, ds.spec, ds.num_classes);
        let opt = OptimState::new(cfg.optim, field.params().len());
        fs::write(&csv_path, &header).map_err(|e| Error::io(&csv_path, e))?;
        write_atomic(&out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
        (field, opt)
    };
    let mut csv = fs::OpenOptions::new().append(true).open(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let total = cfg.optim.total_steps();
    let stop = opts.stop_at.unwrap_or(total).min(total);
    let per_epoch = cfg.optim.steps_per_epoch;
    let start = opt.step;
    let blocks = field.blocks();
    let mut epoch_means = Vec::new();
    let mut acc = 0.0;
    let mut acc_n = 0usize;
    while opt.step < stop {
        let step = opt.step;
        let plan = plan_step(cfg, ds, field.spec(), &train, step)?;
        let g = ctx.gradient(&field, &plan)?;
        let lr = opt.step(field.params_mut(), &g.grads, &blocks)?;
        let log = StepLog { step, epoch: step / per_epoch, lr, report: g.report, valid_fraction: g.valid_fraction, masked_fraction: g.masked_fraction, sharpness: field.sharpness_value() };
        csv.write_all(log.csv_row().as_bytes()).map_err(|e| Error::io(&csv_path, e))?;
        acc += log.report.total;
        acc_n += 1;
        on_step(&log);
        if opt.step % per_epoch == 0 || opt.step == stop {
            csv.flush().map_err(|e| Error::io(&csv_path, e))?;
            write_atomic(&out.join(FIELD_FILE), &field_to_bytes(&field))?;
            write_atomic(&out.join(OPTIM_FILE), &opt.to_bytes())?;
            if opt.step % per_epoch == 0 {
                epoch_means.push((log.epoch, acc / acc_n as f64));
                acc = 0.0;
                acc_n = 0;
            }
        }
    }
    Ok(FitSummary { start_step: start, end_step: opt.step, output: out.clone(), epoch_means })
}

/// Resolution of the gradient-check grid.
pub const GRADCHECK_RES: usize = 8;
/// Gradients below this magnitude are compared absolutely; central differences
/// of the summed loss carry roundoff near 1e-12.
pub const GRADCHECK_FLOOR: f64 = 1e-6;
/// Rays cast by the gradient check.
pub const GRADCHECK_RAYS: usize = 4;
/// Samples per ray in the gradient check.
pub const GRADCHECK_SAMPLES: usize = 16;

/// Settings the gradient check runs with, derived from a run config.
pub fn gradcheck_config(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.profile = Profile::Occupancy;
    c.provider = Provider::Grid;
    c.samples = GRADCHECK_SAMPLES;
    c.shards = 1;
    c.supervision.rays_per_step = GRADCHECK_RAYS;
    c.regularizer.eikonal_per_ray = 2;
    c.regularizer.eikonal_uniform = Some(8);
    c.regularizer.hessian_points = 16;
    c.regularizer.sparsity_points = 16;
    c
}

/// Analytic against central-difference gradients of the occupancy-profile total
/// loss on a coarse grid, over every parameter that reaches the tape.
pub fn gradcheck(cfg: &RunConfig, f64_mode: bool) -> Result<Vec<GradCheckRow>> {
    let ds = Dataset::load(&cfg.dataset)?;
    if f64_mode {
        gradcheck_typed::<f64>(cfg, &ds, 1e-5)
    } else {
        gradcheck_typed::<f32>(cfg, &ds, 1e-3)
    }
}

pub fn gradcheck_typed<F: Real>(cfg: &RunConfig, ds: &Dataset, eps: f64) -> Result<Vec<GradCheckRow>> {
    let c = gradcheck_config(cfg);
    let spec = GridSpec::new(ds.spec.bounds, [GRADCHECK_RES; 3])?;
    let field = init_field::<F>(&c, spec, ds.num_classes);
    let ctx = StepContext::new(&c, ds);
    let train = ds.train_indices();
    let plan = plan_step(&c, ds, &spec, &train, 0)?;
    let g = ctx.gradient(&field, &plan)?;
    let x0: Vec<f64> = g.touched.iter().map(|&s| field.params()[s].f64()).collect();
    let eval = |x: &[f64]| {
        let mut f = field.clone();
        for (&s, &v) in g.touched.iter().zip(x) {
            f.params_mut()[s] = F::of(v);
        }
        ctx.loss(&f, &plan).map_or(f64::NAN, |r| r.total)
    };
    let numeric = finite_difference(eval, &x0, eps)?;
    Ok(g
        .touched
        .iter()
        .zip(numeric)
        .map(|(&s, n)| {
            let a = g.grads[s].f64();
            GradCheckRow { param_id: s, analytic: a, numeric: n, rel_err: relative_error_floor(a, n, GRADCHECK_FLOOR) }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{write_dataset, SceneConfig};

    fn tiny(dir: &Path) -> RunConfig {
        let scene = SceneConfig { width: 24, height: 18, frames: 6, ..Default::default() };
        write_dataset(&scene, &dir.join("data")).unwrap();
        let mut c = RunConfig::desk();
        c.dataset = dir.join("data");
        c.output = dir.join("run");
        c.samples = 12;
        c.shards = 3;
        c.supervision.rays_per_step = 24;
        c.regularizer.hessian_points = 32;
        c.regularizer.sparsity_points = 32;
        c.optim.epochs = 2;
        c.optim.steps_per_epoch = 3;
        c
    }

    #[test]
    fn plan_depends_only_on_seed_and_step() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        let ds = Dataset::load(&c.dataset).unwrap();
        let train = ds.train_indices();
        let a = plan_step(&c, &ds, &ds.spec, &train, 5).unwrap();
        assert_eq!(a, plan_step(&c, &ds, &ds.spec, &train, 5).unwrap());
        assert_ne!(a.pixels, plan_step(&c, &ds, &ds.spec, &train, 6).unwrap().pixels);
        assert!(train.contains(&a.target));
        assert!(!a.sources.is_empty() && a.sources.iter().all(|s| train.contains(s) && *s != a.target));
        assert_eq!(a.pixels.len(), 24);
        assert_eq!(a.hessian_voxels.len(), 32);
        assert_eq!(a.eikonal_points.len(), 24 * 4);
    }

    #[test]
    fn report_total_is_weighted_sum_and_shards_do_not_change_it() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        c.precision = Precision::F64;
        let ds = Dataset::load(&c.dataset).unwrap();
        let field = init_field::<f64>(&c, ds.spec, ds.num_classes);
        let plan = plan_step(&c, &ds, &ds.spec, &ds.train_indices(), 0).unwrap();
        let g = StepContext::new(&c, &ds).gradient(&field, &plan).unwrap();
        let sum: f64 = g.report.terms.iter().map(|t| t.weight * t.value).sum();
        assert!((g.report.total - sum).abs() <= 1e-12 * sum.abs().max(1.0));
        let mut c1 = c.clone();
        c1.shards = 1;
        let g1 = StepContext::new(&c1, &ds).gradient(&field, &plan).unwrap();
        assert!((g1.report.total - g.report.total).abs() < 1e-12);
        for (a, b) in g.grads.iter().zip(&g1.grads) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-3));
        }
        assert!(g.valid_fraction > 0.0 && g.valid_fraction <= 1.0);
    }

    #[test]
    fn fit_is_deterministic_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        fit(&c, FitOptions::default(), &mut |_| {}).unwrap();
        let csv = fs::read_to_string(c.output.join(LOSS_FILE)).unwrap();
        let field = fs::read(c.output.join(FIELD_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 7);

        let mut c2 = c.clone();
        c2.output = dir.path().join("run2");
        fit(&c2, FitOptions { resume: false, stop_at: Some(4) }, &mut |_| {}).unwrap();
        let s = fit(&c2, FitOptions { resume: true, stop_at: None }, &mut |_| {}).unwrap();
        assert_eq!((s.start_step, s.end_step), (4, 6));
        assert_eq!(fs::read_to_string(c2.output.join(LOSS_FILE)).unwrap(), csv);
        assert!(fs::read(c2.output.join(FIELD_FILE)).unwrap() == field);
        assert!(fs::read(c2.output.join(OPTIM_FILE)).unwrap() == fs::read(c.output.join(OPTIM_FILE)).unwrap());
    }

    #[test]
    fn coarse_gradcheck_passes_in_f64() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        let ds = Dataset::load(&c.dataset).unwrap();
        let rows = gradcheck_typed::<f64>(&c, &ds, 1e-5).unwrap();
        assert!(rows.len() > 20);
        let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
        assert!(worst < 1e-4, "max rel err {worst}");
    }
}
