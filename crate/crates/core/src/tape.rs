//! Reverse-mode automatic differentiation over tensor-granularity operations.
//!
//! A [`Tape`] is an append-only arena of operation records built eagerly
//! during the forward pass; [`Tape::backward`] replays it in reverse and
//! accumulates gradients into a caller-owned buffer indexed by parameter id.
//! Tapes are single-threaded and deterministic: identical forward sequences
//! produce bitwise-identical gradients.

use ndarray::Array2;
use std::rc::Rc;

/// Handle to a tensor on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Smooth (or piecewise-linear) elementwise functions, with enough closed-form
/// derivatives that jet lanes built from them remain reverse-differentiable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Relu,
    /// Slope 0.2 on the negative branch.
    LeakyRelu,
    Sigmoid,
    Silu,
    /// First derivative of SiLU, used as a value by jet gradient lanes.
    SiluD1,
    /// Second derivative of SiLU, used as a value by jet Hessian lanes.
    SiluD2,
}

impl UnaryFn {
    pub fn eval(self, x: f64) -> f64 {
        let s = sigmoid(x);
        match self {
            UnaryFn::Relu => x.max(0.0),
            UnaryFn::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    0.2 * x
                }
            }
            UnaryFn::Sigmoid => s,
            UnaryFn::Silu => x * s,
            UnaryFn::SiluD1 => s + x * s * (1.0 - s),
            UnaryFn::SiluD2 => {
                let sp = s * (1.0 - s);
                sp * (2.0 + x * (1.0 - 2.0 * s))
            }
        }
    }

    /// d/dx of `eval`; needed by the reverse sweep.
    pub fn deriv(self, x: f64) -> f64 {
        let s = sigmoid(x);
        let sp = s * (1.0 - s);
        match self {
            UnaryFn::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryFn::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.2
                }
            }
            UnaryFn::Sigmoid => sp,
            UnaryFn::Silu => UnaryFn::SiluD1.eval(x),
            UnaryFn::SiluD1 => UnaryFn::SiluD2.eval(x),
            UnaryFn::SiluD2 => {
                // silu''' = 3 s'' + x s''' with s'' = s'(1-2s),
                // s''' = s'(1-2s)^2 - 2 s'^2.
                let spp = sp * (1.0 - 2.0 * s);
                let sppp = sp * (1.0 - 2.0 * s) * (1.0 - 2.0 * s) - 2.0 * sp * sp;
                3.0 * spp + x * sppp
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Leaf tensor; `Some(pid)` marks a trainable parameter.
    Leaf(Option<usize>),
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Broadcast-add a 1 x H row (bias) to every row of an N x H tensor.
    AddRow(Var, Var),
    Scale(Var, f64),
    Unary(Var, UnaryFn),
    /// Full reduction to 1 x 1.
    Sum(Var),
    /// Row-wise reduction N x H -> N x 1.
    SumCols(Var),
    /// Row gather: out[e] = a[idx[e]].
    Gather(Var, Rc<Vec<u32>>),
    /// Row scatter-add into `rows` rows: out[idx[e]] += a[e].
    ScatterAdd(Var, Rc<Vec<u32>>),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    /// Multiply each row of an N x H tensor by the matching N x 1 scalar.
    RowScale(Var, Var),
    /// Softmax over contiguous row segments of an E x 1 score column;
    /// `seg` holds a non-decreasing segment id per row.
    SegmentSoftmax(Var, Rc<Vec<u32>>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only operation arena; see module docs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable parameter leaf; gradients accumulate under `pid`.
    pub fn param(&mut self, value: Array2<f64>, pid: usize) -> Var {
        self.push(value, Op::Leaf(Some(pid)), true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf(None), false)
    }

    /// Non-trainable scalar leaf.
    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    fn req2(&self, a: Var, b: Var) -> bool {
        self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let rg = self.req2(a, b);
        self.push(v, Op::Matmul(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.req2(a, b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let rg = self.req2(a, b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let rg = self.req2(a, b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        debug_assert_eq!(self.nodes[bias.0].value.nrows(), 1);
        let v = &self.nodes[a.0].value + &self.nodes[bias.0].value;
        let rg = self.req2(a, bias);
        self.push(v, Op::AddRow(a, bias), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| c * x);
        let rg = self.nodes[a.0].requires_grad;
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn unary(&mut self, a: Var, f: UnaryFn) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| f.eval(x));
        let rg = self.nodes[a.0].requires_grad;
        self.push(v, Op::Unary(a, f), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        let rg = self.nodes[a.0].requires_grad;
        self.push(v, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.0].value;
        let mut v = Array2::zeros((src.nrows(), 1));
        for (i, row) in src.rows().into_iter().enumerate() {
            v[[i, 0]] = row.sum();
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(v, Op::SumCols(a), rg)
    }

    pub fn gather(&mut self, a: Var, idx: Rc<Vec<u32>>) -> Var {
        let src = &self.nodes[a.0].value;
        let mut v = Array2::zeros((idx.len(), src.ncols()));
        for (e, &i) in idx.iter().enumerate() {
            v.row_mut(e).assign(&src.row(i as usize));
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(v, Op::Gather(a, idx), rg)
    }

    pub fn scatter_add(&mut self, a: Var, idx: Rc<Vec<u32>>, rows: usize) -> Var {
        let src = &self.nodes[a.0].value;
        debug_assert_eq!(src.nrows(), idx.len());
        let mut v = Array2::zeros((rows, src.ncols()));
        for (e, &i) in idx.iter().enumerate() {
            let mut out = v.row_mut(i as usize);
            out += &src.row(e);
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(v, Op::ScatterAdd(a, idx), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        debug_assert_eq!(va.nrows(), vb.nrows());
        let mut v = Array2::zeros((va.nrows(), va.ncols() + vb.ncols()));
        v.slice_mut(ndarray::s![.., ..va.ncols()]).assign(va);
        v.slice_mut(ndarray::s![.., va.ncols()..]).assign(vb);
        let rg = self.req2(a, b);
        self.push(v, Op::ConcatCols(a, b), rg)
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let v = self.nodes[a.0].value.slice(ndarray::s![.., lo..hi]).to_owned();
        let rg = self.nodes[a.0].requires_grad;
        self.push(v, Op::SliceCols(a, lo, hi), rg)
    }

    pub fn row_scale(&mut self, a: Var, s: Var) -> Var {
        let (va, vs) = (&self.nodes[a.0].value, &self.nodes[s.0].value);
        debug_assert_eq!(vs.ncols(), 1);
        debug_assert_eq!(va.nrows(), vs.nrows());
        let mut v = va.clone();
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            row *= vs[[i, 0]];
        }
        let rg = self.req2(a, s);
        self.push(v, Op::RowScale(a, s), rg)
    }

    /// `seg` must be non-decreasing; rows with equal segment id share one
    /// softmax (numerically stabilized by per-segment max subtraction).
    pub fn segment_softmax(&mut self, scores: Var, seg: Rc<Vec<u32>>) -> Var {
        let src = &self.nodes[scores.0].value;
        debug_assert_eq!(src.ncols(), 1);
        debug_assert_eq!(src.nrows(), seg.len());
        let mut v = Array2::zeros((src.nrows(), 1));
        let mut start = 0;
        while start < seg.len() {
            let mut end = start + 1;
            while end < seg.len() && seg[end] == seg[start] {
                end += 1;
            }
            let m = (start..end).map(|i| src[[i, 0]]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in start..end {
                let e = (src[[i, 0]] - m).exp();
                v[[i, 0]] = e;
                z += e;
            }
            for i in start..end {
                v[[i, 0]] /= z;
            }
            start = end;
        }
        let rg = self.nodes[scores.0].requires_grad;
        self.push(v, Op::SegmentSoftmax(scores, seg), rg)
    }

    /// Reverse sweep from a 1 x 1 output. Gradients of parameter leaves are
    /// accumulated (+=) into `grads[pid]`; intermediate gradient buffers are
    /// freed progressively as the sweep passes them.
    pub fn backward(&mut self, out: Var, grads: &mut [Array2<f64>]) {
        assert_eq!(self.nodes[out.0].value.dim(), (1, 1), "backward needs a scalar output");
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[out.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad {
                adj[i] = None;
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match self.nodes[i].op.clone() {
                Op::Leaf(Some(pid)) => {
                    grads[pid] += &g;
                }
                Op::Leaf(None) => {}
                Op::Matmul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let gb = g.dot(&self.nodes[b.0].value.t());
                        accumulate(&mut adj[a.0], gb);
                    }
                    if self.nodes[b.0].requires_grad {
                        let ga = self.nodes[a.0].value.t().dot(&g);
                        accumulate(&mut adj[b.0], ga);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], g.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut adj[b.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], g.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut adj[b.0], g.mapv(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], &g * &self.nodes[b.0].value);
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut adj[b.0], &g * &self.nodes[a.0].value);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], g.clone());
                    }
                    if self.nodes[bias.0].requires_grad {
                        let mut gb = Array2::zeros((1, g.ncols()));
                        for row in g.rows() {
                            let mut r = gb.row_mut(0);
                            r += &row;
                        }
                        accumulate(&mut adj[bias.0], gb);
                    }
                }
                Op::Scale(a, c) => {
                    accumulate(&mut adj[a.0], g.mapv(|x| c * x));
                }
                Op::Unary(a, f) => {
                    let d = self.nodes[a.0].value.mapv(|x| f.deriv(x));
                    accumulate(&mut adj[a.0], &g * &d);
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    let dim = self.nodes[a.0].value.dim();
                    accumulate(&mut adj[a.0], Array2::from_elem(dim, s));
                }
                Op::SumCols(a) => {
                    let dim = self.nodes[a.0].value.dim();
                    let mut ga = Array2::zeros(dim);
                    for (i, mut row) in ga.rows_mut().into_iter().enumerate() {
                        row.fill(g[[i, 0]]);
                    }
                    accumulate(&mut adj[a.0], ga);
                }
                Op::Gather(a, idx) => {
                    let dim = self.nodes[a.0].value.dim();
                    let mut ga = Array2::zeros(dim);
                    for (e, &j) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(j as usize);
                        row += &g.row(e);
                    }
                    accumulate(&mut adj[a.0], ga);
                }
                Op::ScatterAdd(a, idx) => {
                    let mut ga = Array2::zeros(self.nodes[a.0].value.dim());
                    for (e, &j) in idx.iter().enumerate() {
                        ga.row_mut(e).assign(&g.row(j as usize));
                    }
                    accumulate(&mut adj[a.0], ga);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a.0].value.ncols();
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], g.slice(ndarray::s![.., ..ca]).to_owned());
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut adj[b.0], g.slice(ndarray::s![.., ca..]).to_owned());
                    }
                }
                Op::SliceCols(a, lo, hi) => {
                    let dim = self.nodes[a.0].value.dim();
                    let mut ga = Array2::zeros(dim);
                    ga.slice_mut(ndarray::s![.., lo..hi]).assign(&g);
                    accumulate(&mut adj[a.0], ga);
                }
                Op::RowScale(a, s) => {
                    if self.nodes[a.0].requires_grad {
                        let vs = &self.nodes[s.0].value;
                        let mut ga = g.clone();
                        for (i, mut row) in ga.rows_mut().into_iter().enumerate() {
                            row *= vs[[i, 0]];
                        }
                        accumulate(&mut adj[a.0], ga);
                    }
                    if self.nodes[s.0].requires_grad {
                        let va = &self.nodes[a.0].value;
                        let prod = &g * va;
                        let mut gs = Array2::zeros((va.nrows(), 1));
                        for (i, row) in prod.rows().into_iter().enumerate() {
                            gs[[i, 0]] = row.sum();
                        }
                        accumulate(&mut adj[s.0], gs);
                    }
                }
                Op::SegmentSoftmax(a, seg) => {
                    // d score_i = alpha_i (g_i - sum_j alpha_j g_j) per segment.
                    let alpha = &self.nodes[i].value;
                    let mut ga = Array2::zeros((seg.len(), 1));
                    let mut start = 0;
                    while start < seg.len() {
                        let mut end = start + 1;
                        while end < seg.len() && seg[end] == seg[start] {
                            end += 1;
                        }
                        let dot: f64 =
                            (start..end).map(|j| alpha[[j, 0]] * g[[j, 0]]).sum();
                        for j in start..end {
                            ga[[j, 0]] = alpha[[j, 0]] * (g[[j, 0]] - dot);
                        }
                        start = end;
                    }
                    accumulate(&mut adj[a.0], ga);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    /// Central finite differences on a scalar function of flat parameters.
    fn fd_grad(
        params: &[Array2<f64>],
        f: &dyn Fn(&[Array2<f64>]) -> f64,
        step: f64,
    ) -> Vec<Array2<f64>> {
        let mut out = Vec::new();
        for pi in 0..params.len() {
            let mut g = Array2::zeros(params[pi].dim());
            for idx in 0..params[pi].len() {
                let (r, c) = (idx / params[pi].ncols(), idx % params[pi].ncols());
                let mut plus = params.to_vec();
                plus[pi][[r, c]] += step;
                let mut minus = params.to_vec();
                minus[pi][[r, c]] -= step;
                g[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * step);
            }
            out.push(g);
        }
        out
    }

    fn check_against_fd(
        params: &[Array2<f64>],
        f: &dyn Fn(&[Array2<f64>]) -> f64,
        build: &dyn Fn(&mut Tape, &[Var]) -> Var,
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(p.clone(), i))
            .collect();
        let out = build(&mut tape, &vars);
        let mut grads: Vec<Array2<f64>> =
            params.iter().map(|p| Array2::zeros(p.dim())).collect();
        tape.backward(out, &mut grads);
        let fd = fd_grad(params, f, 1e-5);
        for (pi, (g, gf)) in grads.iter().zip(&fd).enumerate() {
            let scale = gf.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            for (a, b) in g.iter().zip(gf.iter()) {
                assert!(
                    (a - b).abs() <= tol * scale,
                    "param {pi}: {a} vs fd {b} (scale {scale})"
                );
            }
        }
    }

    #[test]
    fn quadratic_gradient_exact() {
        // f(w) = w^T w at w = (1, 2) -> grad (2, 4).
        let mut tape = Tape::new();
        let w = tape.param(ndarray::arr2(&[[1.0], [2.0]]), 0);
        let sq = tape.mul(w, w);
        let out = tape.sum(sq);
        let mut grads = vec![Array2::zeros((2, 1))];
        tape.backward(out, &mut grads);
        assert_eq!(grads[0], ndarray::arr2(&[[2.0], [4.0]]));
        assert_eq!(tape.value(out)[[0, 0]], 5.0);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut tape = Tape::new();
        let _w = tape.param(ndarray::arr2(&[[3.0]]), 0);
        let c = tape.scalar(7.0);
        let out = tape.sum(c);
        let mut grads = vec![Array2::zeros((1, 1))];
        tape.backward(out, &mut grads);
        assert_eq!(grads[0][[0, 0]], 0.0);
    }

    #[test]
    fn two_layer_perceptron_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, 4, 3);
        let params = vec![
            randn(&mut rng, 3, 5),
            randn(&mut rng, 1, 5),
            randn(&mut rng, 5, 2),
            randn(&mut rng, 1, 2),
        ];
        let xc = x.clone();
        let f = move |p: &[Array2<f64>]| -> f64 {
            let h = xc.dot(&p[0]) + &p[1];
            let h = h.mapv(|v| UnaryFn::Silu.eval(v));
            let y = h.dot(&p[2]) + &p[3];
            y.iter().map(|v| v * v).sum()
        };
        let xc2 = x.clone();
        check_against_fd(
            &params,
            &f,
            &move |tape, vars| {
                let xv = tape.constant(xc2.clone());
                let h = tape.matmul(xv, vars[0]);
                let h = tape.add_row(h, vars[1]);
                let h = tape.unary(h, UnaryFn::Silu);
                let y = tape.matmul(h, vars[2]);
                let y = tape.add_row(y, vars[3]);
                let sq = tape.mul(y, y);
                tape.sum(sq)
            },
            1e-6,
        );
    }

    #[test]
    fn gather_scatter_concat_slice_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![randn(&mut rng, 5, 3), randn(&mut rng, 6, 2)];
        let idx = Rc::new(vec![0u32, 2, 2, 4, 1, 3]);
        let dst = Rc::new(vec![0u32, 0, 1, 3, 4, 4]);
        let idx_f = Rc::clone(&idx);
        let dst_f = Rc::clone(&dst);
        let f = move |p: &[Array2<f64>]| -> f64 {
            let mut gathered = Array2::zeros((idx_f.len(), 3));
            for (e, &i) in idx_f.iter().enumerate() {
                gathered.row_mut(e).assign(&p[0].row(i as usize));
            }
            let mut cat = Array2::zeros((6, 5));
            cat.slice_mut(ndarray::s![.., ..3]).assign(&gathered);
            cat.slice_mut(ndarray::s![.., 3..]).assign(&p[1]);
            let sl = cat.slice(ndarray::s![.., 1..4]).to_owned();
            let mut scat: Array2<f64> = Array2::zeros((5, 3));
            for (e, &j) in dst_f.iter().enumerate() {
                let mut row = scat.row_mut(j as usize);
                row += &sl.row(e);
            }
            scat.iter().map(|v| v * v * v).sum()
        };
        check_against_fd(
            &params,
            &f,
            &move |tape, vars| {
                let g = tape.gather(vars[0], Rc::clone(&idx));
                let cat = tape.concat_cols(g, vars[1]);
                let sl = tape.slice_cols(cat, 1, 4);
                let scat = tape.scatter_add(sl, Rc::clone(&dst), 5);
                let sq = tape.mul(scat, scat);
                let cube = tape.mul(sq, scat);
                tape.sum(cube)
            },
            1e-6,
        );
    }

    #[test]
    fn row_scale_and_segment_softmax_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![randn(&mut rng, 6, 1), randn(&mut rng, 6, 4)];
        let seg = Rc::new(vec![0u32, 0, 0, 1, 1, 2]);
        let seg_f = Rc::clone(&seg);
        let f = move |p: &[Array2<f64>]| -> f64 {
            let mut alpha = p[0].clone();
            let mut start = 0;
            while start < seg_f.len() {
                let mut end = start + 1;
                while end < seg_f.len() && seg_f[end] == seg_f[start] {
                    end += 1;
                }
                let m = (start..end)
                    .map(|i| p[0][[i, 0]])
                    .fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (start..end).map(|i| (p[0][[i, 0]] - m).exp()).sum();
                for i in start..end {
                    alpha[[i, 0]] = (p[0][[i, 0]] - m).exp() / z;
                }
                start = end;
            }
            let mut out = p[1].clone();
            for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                row *= alpha[[i, 0]];
            }
            out.iter().map(|v| v * v).sum()
        };
        check_against_fd(
            &params,
            &f,
            &move |tape, vars| {
                let alpha = tape.segment_softmax(vars[0], Rc::clone(&seg));
                let scaled = tape.row_scale(vars[1], alpha);
                let sq = tape.mul(scaled, scaled);
                tape.sum(sq)
            },
            1e-6,
        );
    }

    #[test]
    fn random_composite_graphs_match_fd() {
        // 50 random small networks mixing activations and reductions.
        for trial in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let n_in = 2 + (trial as usize % 3);
            let hid = 3 + (trial as usize % 4);
            let x = randn(&mut rng, 3, n_in);
            let params = vec![
                randn(&mut rng, n_in, hid),
                randn(&mut rng, 1, hid),
                randn(&mut rng, hid, 1),
            ];
            let acts = [UnaryFn::Relu, UnaryFn::LeakyRelu, UnaryFn::Silu, UnaryFn::Sigmoid];
            let act = acts[trial as usize % acts.len()];
            let xc = x.clone();
            let f = move |p: &[Array2<f64>]| -> f64 {
                let h = (xc.dot(&p[0]) + &p[1]).mapv(|v| act.eval(v));
                let y = h.dot(&p[2]);
                y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64
            };
            let xc2 = x.clone();
            check_against_fd(
                &params,
                &f,
                &move |tape, vars| {
                    let xv = tape.constant(xc2.clone());
                    let h = tape.matmul(xv, vars[0]);
                    let h = tape.add_row(h, vars[1]);
                    let h = tape.unary(h, act);
                    let y = tape.matmul(h, vars[2]);
                    let sq = tape.mul(y, y);
                    tape.mean(sq)
                },
                2e-6,
            );
        }
    }

    #[test]
    fn silu_derivative_chain_is_consistent() {
        // eval/deriv pairs must satisfy deriv(f) == eval(f') numerically.
        for &x in &[-2.0, -0.5, 0.0, 0.7, 1.3, 3.0] {
            let h = 1e-6;
            for f in [UnaryFn::Silu, UnaryFn::SiluD1, UnaryFn::SiluD2, UnaryFn::Sigmoid] {
                let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                assert!(
                    (f.deriv(x) - fd).abs() < 1e-8 * fd.abs().max(1.0),
                    "{f:?} at {x}: {} vs {fd}",
                    f.deriv(x)
                );
            }
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = vec![randn(&mut rng, 4, 4), randn(&mut rng, 1, 4)];
        let run = |params: &[Array2<f64>]| -> Vec<Array2<f64>> {
            let mut tape = Tape::new();
            let w = tape.param(params[0].clone(), 0);
            let b = tape.param(params[1].clone(), 1);
            let h = tape.matmul(w, w);
            let h = tape.add_row(h, b);
            let h = tape.unary(h, UnaryFn::Silu);
            let sq = tape.mul(h, h);
            let out = tape.sum(sq);
            let mut grads = vec![Array2::zeros((4, 4)), Array2::zeros((1, 4))];
            tape.backward(out, &mut grads);
            grads
        };
        let g1 = run(&params);
        let g2 = run(&params);
        assert_eq!(g1, g2);
    }
}
