use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{FieldProvider, GridSpec, ParamBlock, Trilinear};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::real::Real;

/// Dense voxel grids of SDF, color and optional semantic logits.
///
/// Parameter layout: `[sdf N | color 3N (rgb per voxel) | logits C·N | ρ | background 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfField<F> {
    pub spec: GridSpec,
    num_classes: usize,
    params: Vec<F>,
}

impl<F: Real> SdfField<F> {
    /// Field with every parameter zero except ρ (so that a = 1/voxel) and grey colors.
    pub fn zeros(spec: GridSpec, num_classes: usize) -> Self {
        let n = spec.num_voxels();
        let params = vec![F::zero(); n * (4 + num_classes) + 4];
        let mut f = SdfField { spec, num_classes, params };
        for v in f.color_mut() {
            *v = F::of(0.5);
        }
        let rho = f.rho_slot();
        f.params[rho] = F::of((1.0 / spec.voxel_size).ln());
        for c in f.background_mut() {
            *c = F::of(0.5);
        }
        f
    }

    /// Ground-plane prior: distance to the box floor clamped to ±1 m plus N(0, 0.01²) noise.
    pub fn init_ground_prior(spec: GridSpec, num_classes: usize, rng: &mut impl Rng) -> Self {
        let mut f = Self::zeros(spec, num_classes);
        let noise = Normal::new(0.0, 0.01).expect("valid sigma");
        let zmin = spec.bounds.min[2];
        for idx in 0..spec.num_voxels() {
            let [i, j, k] = spec.unindex(idx);
            let c = spec.voxel_center(i, j, k);
            let s = (c[2] - zmin).clamp(-1.0, 1.0) + noise.sample(rng);
            f.params[idx] = F::of(s);
        }
        f
    }

    /// Field whose SDF grid samples `sdf_fn` at voxel centers.
    pub fn from_fn(spec: GridSpec, num_classes: usize, sdf_fn: impl Fn(Vec3) -> f64) -> Self {
        let mut f = Self::zeros(spec, num_classes);
        for idx in 0..spec.num_voxels() {
            let [i, j, k] = spec.unindex(idx);
            f.params[idx] = F::of(sdf_fn(spec.voxel_center(i, j, k)));
        }
        f
    }

    pub fn from_params(spec: GridSpec, num_classes: usize, params: Vec<F>) -> Result<Self> {
        let expect = spec.num_voxels() * (4 + num_classes) + 4;
        if params.len() != expect {
            return Err(Error::Structural(format!("expected {expect} grid parameters, got {}", params.len())));
        }
        Ok(SdfField { spec, num_classes, params })
    }

    /// Converts to another float width.
    pub fn cast<G: Real>(&self) -> SdfField<G> {
        SdfField { spec: self.spec, num_classes: self.num_classes, params: self.params.iter().map(|v| G::of(v.f64())).collect() }
    }

    fn n(&self) -> usize {
        self.spec.num_voxels()
    }

    pub fn sdf_grid(&self) -> &[F] {
        &self.params[..self.n()]
    }

    pub fn sdf_grid_mut(&mut self) -> &mut [F] {
        let n = self.n();
        &mut self.params[..n]
    }

    pub fn color_grid(&self) -> &[F] {
        let n = self.n();
        &self.params[n..4 * n]
    }

    pub fn color_mut(&mut self) -> &mut [F] {
        let n = self.n();
        &mut self.params[n..4 * n]
    }

    pub fn logits_grid(&self) -> &[F] {
        let n = self.n();
        &self.params[4 * n..(4 + self.num_classes) * n]
    }

    pub fn logits_mut(&mut self) -> &mut [F] {
        let n = self.n();
        let c = self.num_classes;
        &mut self.params[4 * n..(4 + c) * n]
    }

    pub fn rho_slot(&self) -> usize {
        (4 + self.num_classes) * self.n()
    }

    pub fn rho(&self) -> F {
        self.params[self.rho_slot()]
    }

    pub fn set_rho(&mut self, rho: F) {
        let s = self.rho_slot();
        self.params[s] = rho;
    }

    pub fn background_color(&self) -> [F; 3] {
        let s = self.rho_slot() + 1;
        [self.params[s], self.params[s + 1], self.params[s + 2]]
    }

    pub fn background_mut(&mut self) -> &mut [F] {
        let s = self.rho_slot() + 1;
        &mut self.params[s..s + 3]
    }

    #[inline]
    fn gather(&self, tape: &mut Tape<F>, tri: &Trilinear, base: usize, stride: usize, ch: usize) -> [NodeId; 8] {
        std::array::from_fn(|c| {
            let slot = base + tri.corners[c] * stride + ch;
            tape.param(slot, self.params[slot])
        })
    }

    #[inline]
    fn combine(tape: &mut Tape<F>, leaves: &[NodeId; 8], w: &[f64; 8]) -> NodeId {
        let terms: [(NodeId, F); 8] = std::array::from_fn(|c| (leaves[c], F::of(w[c])));
        tape.lin_comb(&terms, F::zero())
    }

    fn grid_value(&self, tri: &Trilinear, base: usize, stride: usize, ch: usize) -> f64 {
        (0..8).map(|c| tri.weights[c] * self.params[base + tri.corners[c] * stride + ch].f64()).sum()
    }
}

impl<F: Real> FieldProvider<F> for SdfField<F> {
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
        let n = self.n();
        let c = self.num_classes;
        let rho = self.rho_slot();
        let mut b = vec![
            ParamBlock { name: "sdf", range: 0..n, weight_decay: true, unit_interval: false },
            ParamBlock { name: "color", range: n..4 * n, weight_decay: true, unit_interval: true },
        ];
        if c > 0 {
            b.push(ParamBlock { name: "semantics", range: 4 * n..(4 + c) * n, weight_decay: true, unit_interval: false });
        }
        b.push(ParamBlock { name: "rho", range: rho..rho + 1, weight_decay: false, unit_interval: false });
        b.push(ParamBlock { name: "background", range: rho + 1..rho + 4, weight_decay: false, unit_interval: true });
        b
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn sdf(&self, tape: &mut Tape<F>, p: Vec3) -> NodeId {
        let tri = Trilinear::at(&self.spec, p);
        let leaves = self.gather(tape, &tri, 0, 1, 0);
        Self::combine(tape, &leaves, &tri.weights)
    }

    fn sdf_with_gradient(&self, tape: &mut Tape<F>, p: Vec3) -> (NodeId, [NodeId; 3]) {
        let tri = Trilinear::at(&self.spec, p);
        let leaves = self.gather(tape, &tri, 0, 1, 0);
        let s = Self::combine(tape, &leaves, &tri.weights);
        let g = std::array::from_fn(|a| Self::combine(tape, &leaves, &tri.dweights[a]));
        (s, g)
    }

    fn color(&self, tape: &mut Tape<F>, p: Vec3) -> [NodeId; 3] {
        let tri = Trilinear::at(&self.spec, p);
        let n = self.n();
        std::array::from_fn(|ch| {
            let leaves = self.gather(tape, &tri, n, 3, ch);
            Self::combine(tape, &leaves, &tri.weights)
        })
    }

    fn logits(&self, tape: &mut Tape<F>, p: Vec3) -> Vec<NodeId> {
        let tri = Trilinear::at(&self.spec, p);
        let n = self.n();
        let c = self.num_classes;
        (0..c)
            .map(|ch| {
                let leaves = self.gather(tape, &tri, 4 * n, c, ch);
                Self::combine(tape, &leaves, &tri.weights)
            })
            .collect()
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

    fn sdf_at_voxel(&self, tape: &mut Tape<F>, ijk: [usize; 3]) -> NodeId {
        let idx = self.spec.index(ijk[0], ijk[1], ijk[2]);
        tape.param(idx, self.params[idx])
    }

    fn sdf_value(&self, p: Vec3) -> f64 {
        let tri = Trilinear::at(&self.spec, p);
        self.grid_value(&tri, 0, 1, 0)
    }

    fn logits_value(&self, p: Vec3) -> Vec<f64> {
        let tri = Trilinear::at(&self.spec, p);
        let n = self.n();
        (0..self.num_classes).map(|ch| self.grid_value(&tri, 4 * n, self.num_classes, ch)).collect()
    }

    fn sharpness_value(&self) -> f64 {
        self.rho().f64().exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> GridSpec {
        GridSpec::from_origin(Vec3::new(-1.0, -2.0, 0.5), 0.5, [5, 6, 4]).unwrap()
    }

    fn random_field(seed: u64) -> SdfField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = SdfField::<f64>::zeros(spec(), 2);
        for v in f.params_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        f
    }

    fn sample(f: &SdfField<f64>, p: Vec3) -> f64 {
        let mut t = Tape::new();
        let s = f.sdf(&mut t, p);
        t.value(s)
    }

    #[test]
    fn constant_corners_give_constant_sample() {
        let f = SdfField::<f64>::from_fn(spec(), 0, |_| 0.7);
        for p in [Vec3::new(0.1, -0.3, 1.1), Vec3::new(-0.6, 0.4, 1.3)] {
            assert!((sample(&f, p) - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_center_is_mean_of_corners() {
        let f = random_field(1);
        let s = f.spec;
        let (i, j, k) = (1, 2, 1);
        let c0 = s.voxel_center(i, j, k);
        let p = c0 + Vec3::new(0.25, 0.25, 0.25);
        let mut mean = 0.0;
        for c in 0..8 {
            mean += f.sdf_grid()[s.index(i + (c >> 2 & 1), j + (c >> 1 & 1), k + (c & 1))];
        }
        mean /= 8.0;
        assert!((sample(&f, p) - mean).abs() < 1e-14);
        // same for color channel 1
        let mut t = Tape::new();
        let col = f.color(&mut t, p);
        let mut cm = 0.0;
        for c in 0..8 {
            cm += f.color_grid()[3 * s.index(i + (c >> 2 & 1), j + (c >> 1 & 1), k + (c & 1)) + 1];
        }
        assert!((t.value(col[1]) - cm / 8.0).abs() < 1e-14);
    }

    #[test]
    fn constant_red_grid() {
        let mut f = SdfField::<f64>::zeros(spec(), 0);
        for (i, v) in f.color_mut().iter_mut().enumerate() {
            *v = if i % 3 == 0 { 1.0 } else { 0.0 };
        }
        let mut t = Tape::new();
        let c = f.color(&mut t, Vec3::new(0.3, 0.1, 1.2));
        assert_eq!([t.value(c[0]), t.value(c[1]), t.value(c[2])], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn color_gradient_equals_trilinear_weight() {
        let f = random_field(3);
        let p = Vec3::new(0.13, -0.71, 1.37);
        let mut t = Tape::new();
        let c = f.color(&mut t, p);
        let adj = t.backward(c[2]).unwrap();
        let mut g = vec![0.0; f.params().len()];
        t.accumulate_param_grads(&adj, &mut g);
        let base = f.params().to_vec();
        let fd = finite_difference(
            |q: &[f64]| {
                let ff = SdfField::from_params(f.spec, 2, q.to_vec()).unwrap();
                let mut tt = Tape::new();
                let cc = ff.color(&mut tt, p);
                tt.value(cc[2])
            },
            &base,
            1e-6,
        )
        .unwrap();
        let tri = Trilinear::at(&f.spec, p);
        let n = f.spec.num_voxels();
        for c in 0..8 {
            let slot = n + 3 * tri.corners[c] + 2;
            assert!((g[slot] - tri.weights[c]).abs() < 1e-14);
            assert!((fd[slot] - tri.weights[c]).abs() < 1e-8);
        }
        let total: f64 = g.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_linear_and_constant_grids() {
        let lin = SdfField::<f64>::from_fn(spec(), 0, |p| p.x());
        let cst = SdfField::<f64>::from_fn(spec(), 0, |_| 3.0);
        let p = Vec3::new(0.05, -0.2, 1.05);
        let mut t = Tape::new();
        let (_, g) = lin.sdf_with_gradient(&mut t, p);
        assert!((t.value(g[0]) - 1.0).abs() < 1e-12 && t.value(g[1]).abs() < 1e-12 && t.value(g[2]).abs() < 1e-12);
        let (_, g) = cst.sdf_with_gradient(&mut t, p);
        assert!(g.iter().all(|&n| t.value(n).abs() < 1e-15));
    }

    #[test]
    fn ground_prior_has_nonconstant_sdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = SdfField::<f32>::init_ground_prior(GridSpec::desk_default(), 0, &mut rng);
        let s = f.sdf_grid();
        assert!((s[0] - 0.2).abs() < 0.06);
        assert!((s[31] - 1.0).abs() < 0.06);
        assert!((f.sharpness_value() - 2.5).abs() < 1e-5);
        assert!(f.color_grid().iter().all(|&c| c == 0.5));
    }

    proptest! {
        #[test]
        fn affine_fields_reproduced_exactly(
            a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -2.0f64..2.0,
            x in -0.75f64..1.25, y in -1.75f64..0.75, z in 0.75f64..2.25,
        ) {
            let f = SdfField::<f64>::from_fn(spec(), 0, |p| a * p.x() + b * p.y() + c * p.z() + d);
            let p = Vec3::new(x, y, z);
            prop_assert!((sample(&f, p) - (a * x + b * y + c * z + d)).abs() <= 1e-9);
        }

        #[test]
        fn continuous_across_faces(seed in 0u64..1000, j in 0usize..5, y in -1.7f64..0.7, z in 0.8f64..2.2) {
            let f = random_field(seed);
            let vs = f.spec.voxel_size;
            // face between cells along x at center coordinate of voxel j
            let xf = f.spec.voxel_center(j.min(3), 0, 0).x();
            let e = 1e-6 * vs;
            let lo = sample(&f, Vec3::new(xf - e, y, z));
            let hi = sample(&f, Vec3::new(xf + e, y, z));
            prop_assert!((lo - hi).abs() < 1e-4);
        }

        #[test]
        fn spatial_gradient_matches_finite_differences(
            seed in 0u64..1000, x in -0.7f64..1.2, y in -1.7f64..0.7, z in 0.8f64..2.2,
        ) {
            let f = random_field(seed);
            let vs = f.spec.voxel_size;
            let h = 1e-4 * vs;
            // keep the stencil inside one cell
            let inside = |v: f64, min: f64| { let u = (v - min) / vs - 0.5; let fr = u - u.floor(); fr > 2e-4 && fr < 1.0 - 2e-4 };
            prop_assume!(inside(x, -1.0) && inside(y, -2.0) && inside(z, 0.5));
            let p = Vec3::new(x, y, z);
            let mut t = Tape::new();
            let (_, g) = f.sdf_with_gradient(&mut t, p);
            for a in 0..3 {
                let mut e = [0.0; 3];
                e[a] = h;
                let fd = (sample(&f, p + Vec3(e)) - sample(&f, p - Vec3(e))) / (2.0 * h);
                let an = t.value(g[a]);
                prop_assert!((an - fd).abs() / an.abs().max(fd.abs()).max(1e-3) < 1e-5, "axis {} {} vs {}", a, an, fd);
            }
        }

        #[test]
        fn occupancy_invariant_under_positive_scaling(seed in 0u64..1000, k in 0.01f64..100.0) {
            let f = random_field(seed);
            let mut g = f.clone();
            for v in g.sdf_grid_mut() { *v *= k; }
            let rho = g.rho();
            g.set_rho(rho - k.ln());
            for idx in 0..f.spec.num_voxels() {
                let [i, j, kk] = f.spec.unindex(idx);
                let c = f.spec.voxel_center(i, j, kk) + Vec3::new(0.1, 0.05, -0.07);
                prop_assert_eq!(super::super::occupancy_of(f.sdf_value(c)), super::super::occupancy_of(g.sdf_value(c)));
            }
        }
    }
}
