use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AxisInterp, FieldProvider, GridSpec, ParamBlock};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::real::Real;

/// Tri-plane features summed into a 3D feature volume, decoded per point by a
/// two-layer MLP (affine, softplus, affine) into `1 + 3 + C` outputs:
/// SDF, raw color (squashed by a sigmoid when rendered) and semantic logits.
///
/// Parameter layout: `[xy | xz | yz | W1 | b1 | W2 | b2 | ρ | background 3]`,
/// planes stored as `[row][col][feature]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TpvField<F> {
    pub spec: GridSpec,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    num_classes: usize,
    params: Vec<F>,
}

/// Raw decoder outputs at a point.
#[derive(Clone, Debug)]
pub struct TpvOutput {
    pub sdf: NodeId,
    pub color_raw: [NodeId; 3],
    pub logits: Vec<NodeId>,
}

struct Offsets {
    xy: usize,
    xz: usize,
    yz: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    rho: usize,
    total: usize,
}

impl<F: Real> TpvField<F> {
    fn offsets(spec: &GridSpec, fd: usize, hd: usize, nc: usize) -> Offsets {
        let [h, w, d] = spec.resolution;
        let out = 4 + nc;
        let xy = 0;
        let xz = xy + h * w * fd;
        let yz = xz + h * d * fd;
        let w1 = yz + w * d * fd;
        let b1 = w1 + hd * fd;
        let w2 = b1 + hd;
        let b2 = w2 + out * hd;
        let rho = b2 + out;
        Offsets { xy, xz, yz, w1, b1, w2, b2, rho, total: rho + 4 }
    }

    fn off(&self) -> Offsets {
        Self::offsets(&self.spec, self.feature_dim, self.hidden_dim, self.num_classes)
    }

    pub fn num_outputs(&self) -> usize {
        4 + self.num_classes
    }

    /// All-zero planes and decoder, ρ such that a = 1/voxel, grey background.
    pub fn zeros(spec: GridSpec, feature_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        let o = Self::offsets(&spec, feature_dim, hidden_dim, num_classes);
        let mut params = vec![F::zero(); o.total];
        params[o.rho] = F::of((1.0 / spec.voxel_size).ln());
        for v in &mut params[o.rho + 1..o.rho + 4] {
            *v = F::of(0.5);
        }
        TpvField { spec, feature_dim, hidden_dim, num_classes, params }
    }

    /// Small random planes and decoder with the SDF bias at 1 m.
    pub fn init_random(spec: GridSpec, feature_dim: usize, hidden_dim: usize, num_classes: usize, rng: &mut impl Rng) -> Self {
        let mut f = Self::zeros(spec, feature_dim, hidden_dim, num_classes);
        let o = f.off();
        let plane = Normal::new(0.0, 0.1).expect("sigma");
        let l1 = Normal::new(0.0, 1.0 / (feature_dim as f64).sqrt()).expect("sigma");
        let l2 = Normal::new(0.0, 1.0 / (hidden_dim as f64).sqrt()).expect("sigma");
        for v in &mut f.params[o.xy..o.w1] {
            *v = F::of(plane.sample(rng));
        }
        for v in &mut f.params[o.w1..o.b1] {
            *v = F::of(l1.sample(rng));
        }
        for v in &mut f.params[o.w2..o.b2] {
            *v = F::of(0.1 * l2.sample(rng));
        }
        f.params[o.b2] = F::one();
        f
    }

    pub fn from_params(
        spec: GridSpec,
        feature_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        params: Vec<F>,
    ) -> Result<Self> {
        let o = Self::offsets(&spec, feature_dim, hidden_dim, num_classes);
        if params.len() != o.total {
            return Err(Error::Structural(format!("expected {} tri-plane parameters, got {}", o.total, params.len())));
        }
        Ok(TpvField { spec, feature_dim, hidden_dim, num_classes, params })
    }

    pub fn cast<G: Real>(&self) -> TpvField<G> {
        TpvField {
            spec: self.spec,
            feature_dim: self.feature_dim,
            hidden_dim: self.hidden_dim,
            num_classes: self.num_classes,
            params: self.params.iter().map(|v| G::of(v.f64())).collect(),
        }
    }

    pub fn xy_slot(&self, i: usize, j: usize, f: usize) -> usize {
        self.off().xy + (i * self.spec.resolution[1] + j) * self.feature_dim + f
    }

    pub fn xz_slot(&self, i: usize, k: usize, f: usize) -> usize {
        self.off().xz + (i * self.spec.resolution[2] + k) * self.feature_dim + f
    }

    pub fn yz_slot(&self, j: usize, k: usize, f: usize) -> usize {
        self.off().yz + (j * self.spec.resolution[2] + k) * self.feature_dim + f
    }

    pub fn w1_slot(&self, h: usize, f: usize) -> usize {
        self.off().w1 + h * self.feature_dim + f
    }

    pub fn b1_slot(&self, h: usize) -> usize {
        self.off().b1 + h
    }

    pub fn w2_slot(&self, o: usize, h: usize) -> usize {
        self.off().w2 + o * self.hidden_dim + h
    }

    pub fn b2_slot(&self, o: usize) -> usize {
        self.off().b2 + o
    }

    /// Interpolation stencil: 12 (slot-without-feature, weight, d/dx, d/dy, d/dz) entries.
    fn stencil(&self, p: Vec3) -> [(usize, f64, [f64; 3]); 12] {
        let s = &self.spec;
        let ax: [AxisInterp; 3] =
            std::array::from_fn(|a| AxisInterp::new(p[a], s.bounds.min[a], s.voxel_size, s.resolution[a]));
        let w = |a: usize, b: usize| if b == 1 { ax[a].frac } else { 1.0 - ax[a].frac };
        let dw = |a: usize, b: usize| if b == 1 { ax[a].dfrac } else { -ax[a].dfrac };
        let mut out = [(0usize, 0.0, [0.0; 3]); 12];
        let mut n = 0;
        for b0 in 0..2 {
            for b1 in 0..2 {
                let (i, j, k) = (ax[0].i0, ax[1].i0, ax[2].i0);
                out[n] = (self.xy_slot(i + b0, j + b1, 0), w(0, b0) * w(1, b1), [dw(0, b0) * w(1, b1), w(0, b0) * dw(1, b1), 0.0]);
                out[n + 1] = (self.xz_slot(i + b0, k + b1, 0), w(0, b0) * w(2, b1), [dw(0, b0) * w(2, b1), 0.0, w(0, b0) * dw(2, b1)]);
                out[n + 2] = (self.yz_slot(j + b0, k + b1, 0), w(1, b0) * w(2, b1), [0.0, dw(1, b0) * w(2, b1), w(1, b0) * dw(2, b1)]);
                n += 3;
            }
        }
        out
    }

    /// Decoder outputs at `p`; with `spatial`, also ∂sdf/∂(x, y, z).
    fn decode_inner(&self, tape: &mut Tape<F>, p: Vec3, spatial: bool) -> (TpvOutput, Option<[NodeId; 3]>) {
        let fd = self.feature_dim;
        let hd = self.hidden_dim;
        let st = self.stencil(p);
        let mut feats = Vec::with_capacity(fd);
        let mut dfeats: [Vec<NodeId>; 3] = Default::default();
        for f in 0..fd {
            let leaves: [NodeId; 12] = std::array::from_fn(|c| {
                let slot = st[c].0 + f;
                tape.param(slot, self.params[slot])
            });
            let terms: [(NodeId, F); 12] = std::array::from_fn(|c| (leaves[c], F::of(st[c].1)));
            feats.push(tape.lin_comb(&terms, F::zero()));
            if spatial {
                for (a, df) in dfeats.iter_mut().enumerate() {
                    let terms: [(NodeId, F); 12] = std::array::from_fn(|c| (leaves[c], F::of(st[c].2[a])));
                    df.push(tape.lin_comb(&terms, F::zero()));
                }
            }
        }
        let mut hidden = Vec::with_capacity(hd);
        let mut dhidden: [Vec<NodeId>; 3] = Default::default();
        for h in 0..hd {
            let w: Vec<NodeId> = (0..fd)
                .map(|f| {
                    let s = self.w1_slot(h, f);
                    tape.param(s, self.params[s])
                })
                .collect();
            let bslot = self.b1_slot(h);
            let b = tape.param(bslot, self.params[bslot]);
            let z = tape.dot(&w, &feats);
            let pre = tape.add(z, b);
            hidden.push(tape.softplus(pre));
            if spatial {
                let sg = tape.sigmoid(pre);
                for a in 0..3 {
                    let dz = tape.dot(&w, &dfeats[a]);
                    dhidden[a].push(tape.mul(sg, dz));
                }
            }
        }
        let mut outs = Vec::with_capacity(self.num_outputs());
        let mut grad = None;
        for o in 0..self.num_outputs() {
            let w: Vec<NodeId> = (0..hd)
                .map(|h| {
                    let s = self.w2_slot(o, h);
                    tape.param(s, self.params[s])
                })
                .collect();
            let bslot = self.b2_slot(o);
            let b = tape.param(bslot, self.params[bslot]);
            let z = tape.dot(&w, &hidden);
            outs.push(tape.add(z, b));
            if spatial && o == 0 {
                grad = Some(std::array::from_fn(|a| tape.dot(&w, &dhidden[a])));
            }
        }
        let out = TpvOutput { sdf: outs[0], color_raw: [outs[1], outs[2], outs[3]], logits: outs[4..].to_vec() };
        (out, grad)
    }

    /// Samples the three planes at `p`, sums them and applies the decoder.
    pub fn decode(&self, tape: &mut Tape<F>, p: Vec3) -> TpvOutput {
        self.decode_inner(tape, p, false).0
    }

    fn rho_slot(&self) -> usize {
        self.off().rho
    }
}

impl<F: Real> FieldProvider<F> for TpvField<F> {
    fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn params(&self) -> &[F] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    fn blocks(&self) -> Vec<ParamBlock> {
        let o = self.off();
        vec![
            ParamBlock { name: "planes", range: o.xy..o.w1, weight_decay: true, unit_interval: false },
            ParamBlock { name: "decoder", range: o.w1..o.rho, weight_decay: true, unit_interval: false },
            ParamBlock { name: "rho", range: o.rho..o.rho + 1, weight_decay: false, unit_interval: false },
            ParamBlock { name: "background", range: o.rho + 1..o.rho + 4, weight_decay: false, unit_interval: true },
        ]
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn sdf(&self, tape: &mut Tape<F>, p: Vec3) -> NodeId {
        self.decode(tape, p).sdf
    }

    fn sdf_with_gradient(&self, tape: &mut Tape<F>, p: Vec3) -> (NodeId, [NodeId; 3]) {
        let (out, g) = self.decode_inner(tape, p, true);
        (out.sdf, g.expect("spatial gradient requested"))
    }

    fn color(&self, tape: &mut Tape<F>, p: Vec3) -> [NodeId; 3] {
        let out = self.decode(tape, p);
        out.color_raw.map(|c| tape.sigmoid(c))
    }

    fn logits(&self, tape: &mut Tape<F>, p: Vec3) -> Vec<NodeId> {
        self.decode(tape, p).logits
    }

    fn sharpness(&self, tape: &mut Tape<F>) -> NodeId {
        let s = self.rho_slot();
        let rho = tape.param(s, self.params[s]);
        tape.exp(rho)
    }

    fn background(&self, tape: &mut Tape<F>) -> [NodeId; 3] {
        let s = self.rho_slot() + 1;
        std::array::from_fn(|i| tape.param(s + i, self.params[s + i]))
    }

    fn sdf_value(&self, p: Vec3) -> f64 {
        let mut t = Tape::new();
        let s = self.sdf(&mut t, p);
        t.value(s).f64()
    }

    fn logits_value(&self, p: Vec3) -> Vec<f64> {
        let mut t = Tape::new();
        self.logits(&mut t, p).into_iter().map(|n| t.value(n).f64()).collect()
    }

    fn sharpness_value(&self) -> f64 {
        self.params[self.rho_slot()].f64().exp()
    }
}
