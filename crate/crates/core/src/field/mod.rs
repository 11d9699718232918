//! Optimizable scene representations.
//!
//! Two providers share one interface: a dense voxel grid ([`SdfField`]) and a
//! tri-plane feature field decoded by a small MLP ([`TpvField`]). Everything
//! downstream (rendering, losses, extraction) talks to [`FieldProvider`].

mod checkpoint;
mod grid;
mod tpv;

pub use checkpoint::{field_from_bytes, field_to_bytes, load_field, save_field, AnyField};
pub use grid::SdfField;
pub use tpv::{TpvField, TpvOutput};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::real::Real;

/// Axis-aligned voxel lattice. Values live at voxel centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub bounds: Aabb,
    /// Voxel counts along x, y, z.
    pub resolution: [usize; 3],
    pub voxel_size: f64,
}

impl GridSpec {
    pub fn new(bounds: Aabb, resolution: [usize; 3]) -> Result<Self> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(Error::domain(format!("grid resolution {resolution:?} must be at least 2 per axis")));
        }
        let ext = bounds.extent();
        let vs = ext[0] / resolution[0] as f64;
        for i in 1..3 {
            let vi = ext[i] / resolution[i] as f64;
            if ((vi - vs) / vs).abs() > 1e-6 {
                return Err(Error::domain(format!("non-cubic voxels: {vs} vs {vi} m along axis {i}")));
            }
        }
        Ok(GridSpec { bounds, resolution, voxel_size: vs })
    }

    /// Grid of `resolution` cells of `voxel_size` starting at `min`.
    pub fn from_origin(min: Vec3, voxel_size: f64, resolution: [usize; 3]) -> Result<Self> {
        let max = Vec3([
            min[0] + voxel_size * resolution[0] as f64,
            min[1] + voxel_size * resolution[1] as f64,
            min[2] + voxel_size * resolution[2] as f64,
        ]);
        GridSpec::new(Aabb::new(min, max)?, resolution)
    }

    /// 12.8 m cube at 0.4 m cells, floor 1.6 m below the origin.
    pub fn desk_default() -> Self {
        GridSpec::from_origin(Vec3::new(-6.4, -6.4, -1.6), 0.4, [32, 32, 32]).expect("valid default")
    }

    /// [51.2, 51.2, 6.4] m in front of the ego frame at 0.2 m cells.
    pub fn forward_default() -> Self {
        GridSpec::from_origin(Vec3::new(0.0, -25.6, -2.0), 0.2, [256, 256, 32]).expect("valid default")
    }

    pub fn num_voxels(&self) -> usize {
        self.resolution.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution[1] + j) * self.resolution[2] + k
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.resolution[2];
        let r = idx / self.resolution[2];
        [r / self.resolution[1], r % self.resolution[1], k]
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let v = self.voxel_size;
        Vec3([
            self.bounds.min[0] + (i as f64 + 0.5) * v,
            self.bounds.min[1] + (j as f64 + 0.5) * v,
            self.bounds.min[2] + (k as f64 + 0.5) * v,
        ])
    }

    /// Same bounds at a different cell count per axis.
    pub fn rescaled(&self, factor_num: usize, factor_den: usize) -> Result<GridSpec> {
        let r = self.resolution.map(|n| n * factor_num / factor_den);
        GridSpec::new(self.bounds, r)
    }
}

/// Per-axis linear interpolation setup.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisInterp {
    pub i0: usize,
    pub frac: f64,
    /// d(frac)/d(position) in 1/m; zero where the position was clamped.
    pub dfrac: f64,
}

impl AxisInterp {
    /// Interpolation between voxel centers along one axis; positions outside the
    /// outermost centers take the border value. On a face the positive-side cell wins.
    #[inline]
    pub fn new(p: f64, min: f64, voxel: f64, n: usize) -> Self {
        let raw = (p - min) / voxel - 0.5;
        let hi = (n - 1) as f64;
        let u = raw.clamp(0.0, hi);
        let clamped = raw < 0.0 || raw > hi;
        let i0 = (u.floor() as usize).min(n - 2);
        AxisInterp { i0, frac: u - i0 as f64, dfrac: if clamped { 0.0 } else { 1.0 / voxel } }
    }
}

/// Trilinear stencil at a point: 8 corner indices, weights and spatial derivative weights.
#[derive(Clone, Copy, Debug)]
pub struct Trilinear {
    pub corners: [usize; 8],
    pub weights: [f64; 8],
    /// ∂weight/∂(x, y, z) in 1/m.
    pub dweights: [[f64; 8]; 3],
}

impl Trilinear {
    pub fn at(spec: &GridSpec, p: Vec3) -> Trilinear {
        let ax: [AxisInterp; 3] = std::array::from_fn(|a| {
            AxisInterp::new(p[a], spec.bounds.min[a], spec.voxel_size, spec.resolution[a])
        });
        let mut corners = [0usize; 8];
        let mut weights = [0.0; 8];
        let mut dweights = [[0.0; 8]; 3];
        for c in 0..8 {
            let bits = [(c >> 2) & 1, (c >> 1) & 1, c & 1];
            let mut w = [0.0; 3];
            let mut dw = [0.0; 3];
            for a in 0..3 {
                if bits[a] == 1 {
                    w[a] = ax[a].frac;
                    dw[a] = ax[a].dfrac;
                } else {
                    w[a] = 1.0 - ax[a].frac;
                    dw[a] = -ax[a].dfrac;
                }
            }
            corners[c] = spec.index(ax[0].i0 + bits[0], ax[1].i0 + bits[1], ax[2].i0 + bits[2]);
            weights[c] = w[0] * w[1] * w[2];
            dweights[0][c] = dw[0] * w[1] * w[2];
            dweights[1][c] = w[0] * dw[1] * w[2];
            dweights[2][c] = w[0] * w[1] * dw[2];
        }
        Trilinear { corners, weights, dweights }
    }

    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.corners.iter().zip(&self.weights).map(|(&c, &w)| w * values[c]).sum()
    }
}

/// Occupancy state of a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Occupancy {
    Occupied,
    Free,
}

/// Sign rule: the zero level set counts as occupied.
#[inline]
pub fn occupancy_of(s: f64) -> Occupancy {
    if s <= 0.0 {
        Occupancy::Occupied
    } else {
        Occupancy::Free
    }
}

/// A contiguous run of parameters with shared optimizer treatment.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub range: std::ops::Range<usize>,
    pub weight_decay: bool,
    /// Clamp to [0, 1] after each step.
    pub unit_interval: bool,
}

/// Interface every scene representation offers to the renderer and losses.
pub trait FieldProvider<F: Real>: Sync {
    fn spec(&self) -> &GridSpec;
    fn params(&self) -> &[F];
    fn params_mut(&mut self) -> &mut [F];
    fn blocks(&self) -> Vec<ParamBlock>;
    /// Number of semantic classes; zero when semantics are disabled.
    fn num_classes(&self) -> usize;

    /// SDF at `p` (meters) recorded on the tape.
    fn sdf(&self, tape: &mut Tape<F>, p: Vec3) -> NodeId;
    /// SDF and its spatial gradient at `p`.
    fn sdf_with_gradient(&self, tape: &mut Tape<F>, p: Vec3) -> (NodeId, [NodeId; 3]);
    fn color(&self, tape: &mut Tape<F>, p: Vec3) -> [NodeId; 3];
    fn logits(&self, tape: &mut Tape<F>, p: Vec3) -> Vec<NodeId>;
    /// a = exp(ρ), the opacity sharpness.
    fn sharpness(&self, tape: &mut Tape<F>) -> NodeId;
    fn background(&self, tape: &mut Tape<F>) -> [NodeId; 3];

    /// SDF value at a voxel center, on the tape.
    fn sdf_at_voxel(&self, tape: &mut Tape<F>, ijk: [usize; 3]) -> NodeId {
        let c = self.spec().voxel_center(ijk[0], ijk[1], ijk[2]);
        self.sdf(tape, c)
    }

    /// Untaped SDF value.
    fn sdf_value(&self, p: Vec3) -> f64;
    /// Untaped logits.
    fn logits_value(&self, p: Vec3) -> Vec<f64>;
    fn sharpness_value(&self) -> f64;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy_sign_rule() {
        assert_eq!(occupancy_of(-0.3), Occupancy::Occupied);
        assert_eq!(occupancy_of(2.0), Occupancy::Free);
        assert_eq!(occupancy_of(0.0), Occupancy::Occupied);
    }

    #[test]
    fn spec_validation() {
        let b = Aabb::new(Vec3::ZERO, Vec3::new(4.0, 4.0, 2.0)).unwrap();
        assert!(GridSpec::new(b, [10, 10, 5]).is_ok());
        assert!(GridSpec::new(b, [10, 10, 6]).is_err());
        assert!(GridSpec::new(b, [1, 10, 5]).is_err());
        let d = GridSpec::desk_default();
        assert_eq!(d.resolution, [32, 32, 32]);
        assert!((d.voxel_size - 0.4).abs() < 1e-12);
        let k = GridSpec::forward_default();
        assert!((k.bounds.extent()[0] - 51.2).abs() < 1e-9 && (k.voxel_size - 0.2).abs() < 1e-12);
    }

    #[test]
    fn index_round_trip() {
        let s = GridSpec::from_origin(Vec3::ZERO, 1.0, [3, 4, 5]).unwrap();
        for idx in 0..s.num_voxels() {
            let [i, j, k] = s.unindex(idx);
            assert_eq!(s.index(i, j, k), idx);
        }
    }

    #[test]
    fn face_tie_break_uses_positive_cell() {
        // voxel centers at 0.5, 1.5, 2.5, 3.5; p = 1.5 sits on the face between cells 0 and 1
        let a = AxisInterp::new(1.5, 0.0, 1.0, 4);
        assert_eq!((a.i0, a.frac), (1, 0.0));
        let last = AxisInterp::new(3.5, 0.0, 1.0, 4);
        assert_eq!((last.i0, last.frac), (2, 1.0));
        let outside = AxisInterp::new(0.2, 0.0, 1.0, 4);
        assert_eq!((outside.i0, outside.frac, outside.dfrac), (0, 0.0, 0.0));
    }
}
