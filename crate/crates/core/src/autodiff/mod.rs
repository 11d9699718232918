//! Reverse-mode differentiation on a scalar tape, plus the central-difference
//! checker used to validate it.

mod tape;

pub use tape::{sigmoid, softplus, Adjoints, GradientMap, NodeId, OpKind, Tape, Unary};

use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `point`.
pub fn finite_difference<Func>(f: Func, point: &[f64], eps: f64) -> Result<Vec<f64>>
where
    Func: Fn(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::domain(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut p = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let x = p[i];
        p[i] = x + eps;
        let hi = f(&p);
        p[i] = x - eps;
        let lo = f(&p);
        p[i] = x;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::numeric("finite_difference", format!("non-finite value at coordinate {i}")));
        }
        out.push((hi - lo) / (2.0 * eps));
    }
    Ok(out)
}

/// One row of a gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckRow {
    pub param_id: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Relative error with a tiny absolute floor so exact zeros compare cleanly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floor(analytic, numeric, 1e-8)
}

/// Relative error whose denominator never drops below `floor`.
pub fn relative_error_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Formats gradient-check rows as CSV.
pub fn gradcheck_csv(rows: &[GradCheckRow]) -> String {
    let mut s = String::from("param_id,analytic,numeric,rel_err\n");
    for r in rows {
        s.push_str(&format!("{},{:.12e},{:.12e},{:.3e}\n", r.param_id, r.analytic, r.numeric, r.rel_err));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadratic() {
        let g = finite_difference(|p: &[f64]| p[0] * p[0], &[1.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_difference(|_: &[f64]| 4.2, &[1.0, -3.0, 0.5], 1e-3).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_value_names_coordinate() {
        let e = finite_difference(|p: &[f64]| if p[1] > 0.0 { f64::NAN } else { 0.0 }, &[0.0, 0.0], 1e-3)
            .unwrap_err();
        assert!(e.to_string().contains("coordinate 1"), "{e}");
    }

    #[test]
    fn bad_step_rejected() {
        assert!(finite_difference(|_: &[f64]| 0.0, &[0.0], 0.0).is_err());
    }

    /// Builds f(x, y) with every operation kind; mirrors the same formula in plain f64.
    fn build(t: &mut Tape<f64>, x: NodeId, y: NodeId) -> NodeId {
        let a = t.add(x, y);
        let b = t.sub(x, y);
        let c = t.mul(a, b);
        let ya = t.abs(y);
        let half = t.constant(0.5);
        let den = t.max(ya, half);
        let d = t.div(c, den);
        let e = t.exp(d);
        let sq = t.square(y);
        let f0 = t.add_const(sq, 1.0);
        let f = t.ln(f0);
        let g = t.sqrt(f0);
        let h = t.abs(b);
        let i = t.sigmoid(a);
        let j = t.softplus(b);
        let k = t.relu(a);
        let l = t.min(i, j);
        let m = t.max(g, h);
        let n = t.neg(k);
        let s = t.sum(&[e, f, l, m, n]);
        let dt = t.dot(&[x, y, s], &[s, x, y]);
        t.lin_comb(&[(dt, 0.3), (s, -1.2)], 0.7)
    }

    fn plain(x: f64, y: f64) -> f64 {
        let a = x + y;
        let b = x - y;
        let c = a * b;
        let d = c / y.abs().max(0.5);
        let e = d.exp();
        let f0 = y * y + 1.0;
        let f = f0.ln();
        let g = f0.sqrt();
        let h = b.abs();
        let i = sigmoid(a);
        let j = softplus(b);
        let k = a.max(0.0);
        let l = i.min(j);
        let m = g.max(h);
        let n = -k;
        let s = e + f + l + m + n;
        let dt = x * s + y * x + s * y;
        0.3 * dt - 1.2 * s + 0.7
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn every_op_matches_central_differences(x in -1.5f64..1.5, y in -1.5f64..1.5) {
            // stay away from the kinks of abs/relu/min/max/the constant clamp
            prop_assume!((x + y).abs() > 1e-3 && (x - y).abs() > 1e-3 && (y.abs() - 0.5).abs() > 1e-3);
            let mut t = Tape::new();
            let xn = t.leaf(x);
            let yn = t.leaf(y);
            let out = build(&mut t, xn, yn);
            prop_assume!({
                let i = sigmoid(x + y); let j = softplus(x - y);
                let g = (y * y + 1.0f64).sqrt(); let h = (x - y).abs();
                (i - j).abs() > 1e-4 && (g - h).abs() > 1e-4
            });
            prop_assert!((t.value(out) - plain(x, y)).abs() < 1e-12);
            let g = t.grad(out, &[xn, yn]).unwrap();
            let fd = finite_difference(|p: &[f64]| plain(p[0], p[1]), &[x, y], 1e-6).unwrap();
            prop_assert!(relative_error(g.get(xn).unwrap(), fd[0]) < 1e-6);
            prop_assert!(relative_error(g.get(yn).unwrap(), fd[1]) < 1e-6);
        }

        #[test]
        fn replay_is_bit_exact(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let mut t = Tape::new();
            let xn = t.leaf(x);
            let yn = t.leaf(y);
            build(&mut t, xn, yn);
            let replayed = t.replay();
            prop_assert_eq!(replayed.len(), t.len());
            for (a, b) in replayed.iter().zip(t.values()) {
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }

        #[test]
        fn gradients_are_linear(x in -1.0f64..1.0, y in -1.0f64..1.0, ca in -2.0f64..2.0, cb in -2.0f64..2.0) {
            let mut t = Tape::new();
            let xn = t.leaf(x);
            let yn = t.leaf(y);
            let xy = t.mul(xn, yn);
            let f = t.sigmoid(xy);
            let e = t.exp(xn);
            let g = t.add(e, yn);
            let combo = t.lin_comb(&[(f, ca), (g, cb)], 0.0);
            let gf = t.grad(f, &[xn, yn]).unwrap();
            let gg = t.grad(g, &[xn, yn]).unwrap();
            let gc = t.grad(combo, &[xn, yn]).unwrap();
            for id in [xn, yn] {
                let expect = ca * gf.get(id).unwrap() + cb * gg.get(id).unwrap();
                prop_assert!((gc.get(id).unwrap() - expect).abs() < 1e-12);
            }
        }

        #[test]
        fn inputs_precede_their_consumers(x in -1.0f64..1.0) {
            let mut t = Tape::new();
            let xn = t.leaf(x);
            build(&mut t, xn, xn);
            for i in 0..t.len() {
                for a in t.inputs(NodeId(i as u32)) {
                    prop_assert!(a.index() < i);
                }
            }
        }
    }
}
