//! Second-order forward jets: value, spatial gradient, and packed symmetric
//! Hessian, propagated through arithmetic and smooth unaries.
//!
//! [`Jet2`] is the plain scalar form used by oracles and the residual
//! closed-form checks. [`JetMat`] carries the same ten lanes as tape tensors
//! so that every lane — including Hessian entries — remains
//! reverse-differentiable w.r.t. network parameters (forward-over-reverse).

use crate::tape::{Tape, UnaryFn, Var};

/// Packed symmetric 3x3 Hessian order: [xx, xy, xz, yy, yz, zz].
pub const HESS_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Index of the packed Hessian component for coordinate pair (a, b).
pub fn hess_index(a: usize, b: usize) -> usize {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    match (lo, hi) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        (2, 2) => 5,
        _ => unreachable!(),
    }
}

/// Scalar second-order jet over three spatial coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub g: [f64; 3],
    pub h: [f64; 6],
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Jet2 {
            v,
            g: [0.0; 3],
            h: [0.0; 6],
        }
    }

    /// Seed coordinate `k`: v = x_k, g = e_k, h = 0.
    pub fn coord(v: f64, k: usize) -> Self {
        let mut g = [0.0; 3];
        g[k] = 1.0;
        Jet2 { v, g, h: [0.0; 6] }
    }

    pub fn add(self, o: Jet2) -> Jet2 {
        let mut r = self;
        r.v += o.v;
        for k in 0..3 {
            r.g[k] += o.g[k];
        }
        for k in 0..6 {
            r.h[k] += o.h[k];
        }
        r
    }

    pub fn sub(self, o: Jet2) -> Jet2 {
        self.add(o.scale(-1.0))
    }

    pub fn scale(self, c: f64) -> Jet2 {
        Jet2 {
            v: c * self.v,
            g: [c * self.g[0], c * self.g[1], c * self.g[2]],
            h: self.h.map(|x| c * x),
        }
    }

    /// Product rule through second order.
    pub fn mul(self, o: Jet2) -> Jet2 {
        let mut h = [0.0; 6];
        for (i, &(a, b)) in HESS_PAIRS.iter().enumerate() {
            h[i] = self.h[i] * o.v
                + self.v * o.h[i]
                + self.g[a] * o.g[b]
                + self.g[b] * o.g[a];
        }
        let mut g = [0.0; 3];
        for k in 0..3 {
            g[k] = self.g[k] * o.v + self.v * o.g[k];
        }
        Jet2 {
            v: self.v * o.v,
            g,
            h,
        }
    }

    /// Chain rule for a smooth unary with first and second derivatives.
    pub fn chain(self, f: f64, fp: f64, fpp: f64) -> Jet2 {
        let _ = f;
        let mut h = [0.0; 6];
        for (i, &(a, b)) in HESS_PAIRS.iter().enumerate() {
            h[i] = fp * self.h[i] + fpp * self.g[a] * self.g[b];
        }
        Jet2 {
            v: f,
            g: [fp * self.g[0], fp * self.g[1], fp * self.g[2]],
            h,
        }
    }

    pub fn apply(self, f: UnaryFn, fp: UnaryFn, fpp: UnaryFn) -> Jet2 {
        self.chain(f.eval(self.v), fp.eval(self.v), fpp.eval(self.v))
    }

    pub fn silu(self) -> Jet2 {
        self.apply(UnaryFn::Silu, UnaryFn::SiluD1, UnaryFn::SiluD2)
    }
}

/// A matrix of jets on the tape: ten lanes of equal shape, each lane a
/// reverse-differentiable tensor. Rows are evaluation points, columns
/// features.
#[derive(Debug, Clone, Copy)]
pub struct JetMat {
    pub val: Var,
    pub g: [Var; 3],
    pub h: [Var; 6],
}

impl JetMat {
    /// Lift a value tensor with explicitly provided derivative lanes.
    pub fn new(val: Var, g: [Var; 3], h: [Var; 6]) -> Self {
        JetMat { val, g, h }
    }

    /// Lift a tensor whose entries do not vary with the coordinates.
    pub fn constant(tape: &mut Tape, val: Var) -> Self {
        let dim = tape.value(val).dim();
        let zero = tape.constant(ndarray::Array2::zeros(dim));
        JetMat {
            val,
            g: [zero; 3],
            h: [zero; 6],
        }
    }

    /// Right-multiply every lane by a weight matrix (linear layer).
    pub fn matmul(self, tape: &mut Tape, w: Var) -> Self {
        JetMat {
            val: tape.matmul(self.val, w),
            g: self.g.map(|l| tape.matmul(l, w)),
            h: self.h.map(|l| tape.matmul(l, w)),
        }
    }

    /// Bias add touches only the value lane.
    pub fn add_row(self, tape: &mut Tape, bias: Var) -> Self {
        JetMat {
            val: tape.add_row(self.val, bias),
            ..self
        }
    }

    pub fn add(self, tape: &mut Tape, o: JetMat) -> Self {
        let mut g = self.g;
        let mut h = self.h;
        for k in 0..3 {
            g[k] = tape.add(g[k], o.g[k]);
        }
        for k in 0..6 {
            h[k] = tape.add(h[k], o.h[k]);
        }
        JetMat {
            val: tape.add(self.val, o.val),
            g,
            h,
        }
    }

    /// Column-wise concatenation, lane by lane.
    pub fn concat_cols(self, tape: &mut Tape, o: JetMat) -> Self {
        let mut g = self.g;
        let mut h = self.h;
        for k in 0..3 {
            g[k] = tape.concat_cols(g[k], o.g[k]);
        }
        for k in 0..6 {
            h[k] = tape.concat_cols(h[k], o.h[k]);
        }
        JetMat {
            val: tape.concat_cols(self.val, o.val),
            g,
            h,
        }
    }

    /// Elementwise smooth activation with full second-order chain rule:
    /// g'_k = f'(v) g_k; h'_ab = f'(v) h_ab + f''(v) g_a g_b.
    pub fn activate(self, tape: &mut Tape, f: UnaryFn, fp: UnaryFn, fpp: UnaryFn) -> Self {
        let d1 = tape.unary(self.val, fp);
        let d2 = tape.unary(self.val, fpp);
        let mut g = self.g;
        for k in 0..3 {
            g[k] = tape.mul(d1, self.g[k]);
        }
        let mut h = self.h;
        for (i, &(a, b)) in HESS_PAIRS.iter().enumerate() {
            let first = tape.mul(d1, self.h[i]);
            let gg = tape.mul(self.g[a], self.g[b]);
            let second = tape.mul(d2, gg);
            h[i] = tape.add(first, second);
        }
        let val = tape.unary(self.val, f);
        JetMat { val, g, h }
    }

    pub fn activate_silu(self, tape: &mut Tape) -> Self {
        self.activate(tape, UnaryFn::Silu, UnaryFn::SiluD1, UnaryFn::SiluD2)
    }

    /// Chain rule to physical coordinates: x_norm = s_k (x_phys - c_k)
    /// scales gradient lanes by s_k and Hessian lanes by s_a s_b.
    pub fn scale_coords(self, tape: &mut Tape, s: [f64; 3]) -> Self {
        let mut g = self.g;
        for k in 0..3 {
            g[k] = tape.scale(self.g[k], s[k]);
        }
        let mut h = self.h;
        for (i, &(a, b)) in HESS_PAIRS.iter().enumerate() {
            h[i] = tape.scale(self.h[i], s[a] * s[b]);
        }
        JetMat {
            val: self.val,
            g,
            h,
        }
    }

    /// Uniform scaling of every lane (e.g. denormalizing the output field).
    pub fn scale(self, tape: &mut Tape, c: f64) -> Self {
        JetMat {
            val: tape.scale(self.val, c),
            g: self.g.map(|l| tape.scale(l, c)),
            h: self.h.map(|l| tape.scale(l, c)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};

    #[test]
    fn square_seed_example() {
        // f(x) = x^2 at x = 3 along e_x.
        let x = Jet2::coord(3.0, 0);
        let f = x.mul(x);
        assert_eq!(f.v, 9.0);
        assert_eq!(f.g, [6.0, 0.0, 0.0]);
        assert_eq!(f.h, [2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn constants_have_zero_lanes() {
        let c = Jet2::constant(4.2);
        assert_eq!(c.g, [0.0; 3]);
        assert_eq!(c.h, [0.0; 6]);
        let x = Jet2::coord(1.5, 2);
        let f = c.mul(x);
        assert!((f.v - 6.3).abs() < 1e-12);
        assert_eq!(f.g, [0.0, 0.0, 4.2]);
        assert_eq!(f.h, [0.0; 6]);
    }

    #[test]
    fn affine_field_has_zero_hessian() {
        // u(x) = A x + b with mixed coordinates.
        let x = Jet2::coord(0.3, 0);
        let y = Jet2::coord(-1.2, 1);
        let z = Jet2::coord(2.0, 2);
        let u = x.scale(2.0).add(y.scale(-0.7)).add(z.scale(0.1)).add(Jet2::constant(5.0));
        assert_eq!(u.h, [0.0; 6]);
        assert_eq!(u.g, [2.0, -0.7, 0.1]);
    }

    /// Second-order central differences of f at p along (a, b).
    fn fd_hessian(f: &dyn Fn([f64; 3]) -> f64, p: [f64; 3], a: usize, b: usize, h: f64) -> f64 {
        let q = |da: f64, db: f64| {
            let mut x = p;
            x[a] += da;
            x[b] += db;
            f(x)
        };
        if a == b {
            (q(h, 0.0) - 2.0 * q(0.0, 0.0) + q(-h, 0.0)) / (h * h)
        } else {
            (q(h, h) - q(h, -h) - q(-h, h) + q(-h, -h)) / (4.0 * h * h)
        }
    }

    fn eval_test_fn(p: [f64; 3]) -> Jet2 {
        // f = silu(x*y + 0.5*z^2) * (x + 2)
        let x = Jet2::coord(p[0], 0);
        let y = Jet2::coord(p[1], 1);
        let z = Jet2::coord(p[2], 2);
        let inner = x.mul(y).add(z.mul(z).scale(0.5));
        inner.silu().mul(x.add(Jet2::constant(2.0)))
    }

    #[test]
    fn composite_jet_matches_second_order_fd() {
        let p = [0.7, -0.4, 1.1];
        let jet = eval_test_fn(p);
        let scalar = |q: [f64; 3]| eval_test_fn(q).v;
        // First order, step 1e-5.
        for k in 0..3 {
            let mut plus = p;
            plus[k] += 1e-5;
            let mut minus = p;
            minus[k] -= 1e-5;
            let fd = (scalar(plus) - scalar(minus)) / 2e-5;
            assert!((jet.g[k] - fd).abs() < 1e-6 * fd.abs().max(1.0), "g[{k}]");
        }
        // Second order, step 1e-4, tolerance 1e-5.
        for (i, &(a, b)) in HESS_PAIRS.iter().enumerate() {
            let fd = fd_hessian(&scalar, p, a, b, 1e-4);
            assert!(
                (jet.h[i] - fd).abs() < 1e-5 * fd.abs().max(1.0),
                "h[{i}] = {} vs fd {fd}",
                jet.h[i]
            );
        }
    }

    #[test]
    fn silu_jet_at_0_7_matches_fd() {
        let x = Jet2::coord(0.7, 0);
        let f = x.silu();
        let s = |v: f64| UnaryFn::Silu.eval(v);
        let h = 1e-4;
        let fd1 = (s(0.7 + h) - s(0.7 - h)) / (2.0 * h);
        let fd2 = (s(0.7 + h) - 2.0 * s(0.7) + s(0.7 - h)) / (h * h);
        assert!((f.g[0] - fd1).abs() < 1e-5);
        assert!((f.h[0] - fd2).abs() < 1e-5);
        assert_eq!(f.g[1], 0.0);
        assert_eq!(f.h[3], 0.0);
    }

    #[test]
    fn cross_derivatives_are_order_independent() {
        // xy vs yx products agree exactly by the symmetric packing.
        let x = Jet2::coord(1.3, 0);
        let y = Jet2::coord(-0.8, 1);
        let f1 = x.mul(y);
        let f2 = y.mul(x);
        for k in 0..6 {
            assert!((f1.h[k] - f2.h[k]).abs() < 1e-12);
        }
        assert!((f1.h[hess_index(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relu_jets_have_zero_hessian_almost_everywhere() {
        for &v in &[-1.5, -0.2, 0.3, 2.0] {
            let x = Jet2::coord(v, 0);
            let f = x.apply(UnaryFn::Relu, UnaryFn::Relu, UnaryFn::Relu);
            // Using Relu for f'' is wrong; build the proper piecewise form.
            let _ = f;
            let fp = if v > 0.0 { 1.0 } else { 0.0 };
            let g = x.chain(UnaryFn::Relu.eval(v), fp, 0.0);
            assert_eq!(g.h, [0.0; 6]);
        }
    }

    // --- JetMat: lanes on the tape -------------------------------------

    fn lane(v: f64) -> Array2<f64> {
        arr2(&[[v]])
    }

    /// Single-entry JetMat mirroring a scalar Jet2, for oracle comparison.
    fn jetmat_from(tape: &mut Tape, j: Jet2) -> JetMat {
        let val = tape.constant(lane(j.v));
        let g = [
            tape.constant(lane(j.g[0])),
            tape.constant(lane(j.g[1])),
            tape.constant(lane(j.g[2])),
        ];
        let h = [
            tape.constant(lane(j.h[0])),
            tape.constant(lane(j.h[1])),
            tape.constant(lane(j.h[2])),
            tape.constant(lane(j.h[3])),
            tape.constant(lane(j.h[4])),
            tape.constant(lane(j.h[5])),
        ];
        JetMat::new(val, g, h)
    }

    fn read(tape: &Tape, m: JetMat) -> Jet2 {
        Jet2 {
            v: tape.value(m.val)[[0, 0]],
            g: [
                tape.value(m.g[0])[[0, 0]],
                tape.value(m.g[1])[[0, 0]],
                tape.value(m.g[2])[[0, 0]],
            ],
            h: [
                tape.value(m.h[0])[[0, 0]],
                tape.value(m.h[1])[[0, 0]],
                tape.value(m.h[2])[[0, 0]],
                tape.value(m.h[3])[[0, 0]],
                tape.value(m.h[4])[[0, 0]],
                tape.value(m.h[5])[[0, 0]],
            ],
        }
    }

    #[test]
    fn jetmat_silu_activation_matches_scalar_jet() {
        let seed = Jet2 {
            v: 0.43,
            g: [1.7, -0.3, 0.9],
            h: [0.2, -0.1, 0.4, 0.8, -0.5, 0.3],
        };
        let mut tape = Tape::new();
        let m = jetmat_from(&mut tape, seed);
        let out = m.activate_silu(&mut tape);
        let expect = seed.silu();
        let got = read(&tape, out);
        assert!((got.v - expect.v).abs() < 1e-14);
        for k in 0..3 {
            assert!((got.g[k] - expect.g[k]).abs() < 1e-14);
        }
        for k in 0..6 {
            assert!((got.h[k] - expect.h[k]).abs() < 1e-14, "h[{k}]");
        }
    }

    #[test]
    fn jetmat_linear_layer_and_coord_scaling() {
        // One point, two features; W: 2 -> 1.
        let mut tape = Tape::new();
        let val = tape.constant(arr2(&[[1.0, 2.0]]));
        let gx = tape.constant(arr2(&[[0.5, -1.0]]));
        let zero = tape.constant(Array2::zeros((1, 2)));
        let m = JetMat::new(val, [gx, zero, zero], [zero; 6]);
        let w = tape.constant(arr2(&[[3.0], [4.0]]));
        let b = tape.constant(arr2(&[[10.0]]));
        let out = m.matmul(&mut tape, w).add_row(&mut tape, b);
        assert_eq!(tape.value(out.val)[[0, 0]], 21.0);
        // g_x = [0.5, -1.0] W = -2.5; bias leaves derivatives alone.
        assert_eq!(tape.value(out.g[0])[[0, 0]], -2.5);
        let scaled = out.scale_coords(&mut tape, [2.0, 1.0, 1.0]);
        assert_eq!(tape.value(scaled.g[0])[[0, 0]], -5.0);
        assert_eq!(tape.value(scaled.val)[[0, 0]], 21.0);
    }

    #[test]
    fn forward_over_reverse_toy_second_derivative_loss() {
        // f_theta(x) = theta * x^2 -> d2f/dx2 = 2 theta;
        // loss = (d2f/dx2 - c)^2 -> dloss/dtheta = 4 (2 theta - c).
        let theta = 0.8;
        let c = 3.0;
        let x = 1.3;
        let mut tape = Tape::new();
        let th = tape.param(lane(theta), 0);
        // Build x^2 as a jet with seeded coordinate lanes.
        let xj = Jet2::coord(x, 0);
        let x2 = xj.mul(xj);
        let m = jetmat_from(&mut tape, x2);
        // Multiply every lane by theta (scalar broadcast via 1x1 matmul).
        let f = JetMat {
            val: tape.matmul(m.val, th),
            g: m.g.map(|l| tape.matmul(l, th)),
            h: m.h.map(|l| tape.matmul(l, th)),
        };
        let cvar = tape.scalar(c);
        let diff = tape.sub(f.h[0], cvar);
        let sq = tape.mul(diff, diff);
        let loss = tape.sum(sq);
        let mut grads = vec![Array2::zeros((1, 1))];
        tape.backward(loss, &mut grads);
        let expect = 4.0 * (2.0 * theta - c);
        assert!(
            (grads[0][[0, 0]] - expect).abs() < 1e-12,
            "{} vs {expect}",
            grads[0][[0, 0]]
        );
        // FD confirmation on the same construction.
        let eval = |t: f64| {
            let d2 = 2.0 * t;
            (d2 - c) * (d2 - c)
        };
        let h = 1e-5;
        let fd = (eval(theta + h) - eval(theta - h)) / (2.0 * h);
        assert!((grads[0][[0, 0]] - fd).abs() < 1e-5 * fd.abs().max(1.0));
    }
}
