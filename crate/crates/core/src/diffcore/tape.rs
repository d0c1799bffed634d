//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is an arena of nodes. Every operation evaluates eagerly,
//! appends a node holding the result and its parents, and returns a
//! [`Var`] handle. Nodes are only ever appended, so node order is a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Shape errors are programming errors and panic with both shapes in
//! the message. Elementwise binary operations broadcast over the 2-D
//! view of their operands (a dimension of size 1 stretches).

use std::f64::consts::PI;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Exp(Var),
    Ln(Var),
    Sigmoid(Var),
    Atan(Var),
    Tanh(Var),
    Softplus(Var),
    Square(Var),
    Sqrt(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    Outer(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn reaches(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize), what: &str) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => (r, c),
        _ => panic!("{what}: shape mismatch {}x{} vs {}x{}", a.0, a.1, b.0, b.1),
    }
}

fn broadcast_binary(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data).expect("same shape");
    }
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let (r, c) = broadcast_dims((ar, ac), (br, bc), what);
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let ia = if ar == 1 { 0 } else { i };
        let ib = if br == 1 { 0 } else { i };
        for j in 0..c {
            let ja = if ac == 1 { 0 } else { j };
            let jb = if bc == 1 { 0 } else { j };
            out.push(f(a.data()[ia * ac + ja], b.data()[ib * bc + jb]));
        }
    }
    Tensor::matrix(r, c, out)
}

/// Sums `grad` down to the broadcast source `shape`.
fn reduce_to(grad: Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad;
    }
    let target = Tensor::zeros(shape);
    let (tr, tc) = target.dims2();
    let (gr, gc) = grad.dims2();
    if tr * tc == gr * gc {
        return grad.reshaped(shape);
    }
    let mut out = vec![0.0; tr * tc];
    for i in 0..gr {
        let ti = if tr == 1 { 0 } else { i };
        for j in 0..gc {
            let tj = if tc == 1 { 0 } else { j };
            out[ti * tc + tj] += grad.data()[i * gc + j];
        }
    }
    Tensor::new(shape.to_vec(), out).expect("target shape")
}

/// Value of `x` at the broadcast position of output element (i, j).
fn bcast_at(x: &Tensor, i: usize, j: usize) -> f64 {
    let (r, c) = x.dims2();
    let ii = if r == 1 { 0 } else { i };
    let jj = if c == 1 { 0 } else { j };
    x.data()[ii * c + jj]
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
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

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Whether `v` was produced by an operation (as opposed to being a leaf).
    pub fn has_parents(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }

    /// Inputs, parameters and constants all enter the tape as leaves.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    /// Stop-gradient: same values, no parents.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.leaf(t)
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out = broadcast_binary(self.value(a), self.value(b), what, f);
        self.push(out, op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Concatenates along the last axis; all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        for p in parts {
            let r = self.value(*p).rows();
            assert_eq!(
                r,
                rows,
                "concat_cols: row mismatch {:?} vs {:?}",
                self.value(parts[0]).shape(),
                self.value(*p).shape()
            );
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims2();
        assert!(
            start + len <= c,
            "slice_cols: columns {start}..{} out of {:?}",
            start + len,
            t.shape()
        );
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&t.row(i)[start..start + len]);
        }
        self.push(Tensor::matrix(r, len, out), Op::SliceCols(a, start))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn atan(&mut self, a: Var) -> Var {
        self.unary(a, f64::atan, Op::Atan(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, |x| x.powf(p), Op::Powf(a, p))
    }

    /// Gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    /// Outer product of two vectors (any shape, flattened).
    pub fn outer(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(x.len() * y.len());
        for &u in x.data() {
            for &v in y.data() {
                out.push(u * v);
            }
        }
        let t = Tensor::matrix(x.len(), y.len(), out);
        self.push(t, Op::Outer(a, b))
    }

    /// (2/π)·atan(x), bounded in (−1, 1).
    pub fn bounded_atan(&mut self, a: Var) -> Var {
        let t = self.atan(a);
        self.scale(t, 2.0 / PI)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut contributions: Vec<(Var, Tensor)> = Vec::new();
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    contributions.push((*a, reduce_to(g.clone(), self.value(*a).shape())));
                    contributions.push((*b, reduce_to(g.clone(), self.value(*b).shape())));
                }
                Op::Sub(a, b) => {
                    contributions.push((*a, reduce_to(g.clone(), self.value(*a).shape())));
                    let neg = g.map(|v| -v);
                    contributions.push((*b, reduce_to(neg, self.value(*b).shape())));
                }
                Op::Mul(a, b) | Op::Div(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (r, c) = g.dims2();
                    let mut ga = Vec::with_capacity(r * c);
                    let mut gb = Vec::with_capacity(r * c);
                    let is_div = matches!(node.op, Op::Div(..));
                    for i in 0..r {
                        for j in 0..c {
                            let gv = g.data()[i * c + j];
                            let xv = bcast_at(x, i, j);
                            let yv = bcast_at(y, i, j);
                            if is_div {
                                ga.push(gv / yv);
                                gb.push(-gv * xv / (yv * yv));
                            } else {
                                ga.push(gv * yv);
                                gb.push(gv * xv);
                            }
                        }
                    }
                    let shape = g.shape().to_vec();
                    let ga = Tensor::new(shape.clone(), ga).expect("grad shape");
                    let gb = Tensor::new(shape, gb).expect("grad shape");
                    contributions.push((*a, reduce_to(ga, x.shape())));
                    contributions.push((*b, reduce_to(gb, y.shape())));
                }
                Op::Scale(a, k) => contributions.push((*a, g.map(|v| v * k))),
                Op::AddScalar(a) => contributions.push((*a, g.clone())),
                Op::MatMul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = g.matmul(&y.transpose()).reshaped(x.shape());
                    let gb = x.transpose().matmul(&g).reshaped(y.shape());
                    contributions.push((*a, ga));
                    contributions.push((*b, gb));
                }
                Op::Transpose(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    contributions.push((*a, g.transpose().reshaped(&shape)));
                }
                Op::ConcatCols(parts) => {
                    let (r, c) = g.dims2();
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let pc = pv.cols();
                        let mut out = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            out.extend_from_slice(&g.data()[i * c + offset..i * c + offset + pc]);
                        }
                        offset += pc;
                        let t = Tensor::new(pv.shape().to_vec(), out).expect("part shape");
                        contributions.push((*p, t));
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let (r, c) = src.dims2();
                    let len = g.cols();
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        out[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                    }
                    let t = Tensor::new(src.shape().to_vec(), out).expect("slice source");
                    contributions.push((*a, t));
                }
                Op::Exp(a) => contributions.push((*a, zip_map(&g, &node.value, |g, y| g * y))),
                Op::Ln(a) => contributions.push((*a, zip_map(&g, self.value(*a), |g, x| g / x))),
                Op::Sigmoid(a) => {
                    contributions.push((*a, zip_map(&g, &node.value, |g, y| g * y * (1.0 - y))))
                }
                Op::Atan(a) => contributions.push((
                    *a,
                    zip_map(&g, self.value(*a), |g, x| g / (1.0 + x * x)),
                )),
                Op::Tanh(a) => {
                    contributions.push((*a, zip_map(&g, &node.value, |g, y| g * (1.0 - y * y))))
                }
                Op::Softplus(a) => {
                    contributions.push((*a, zip_map(&g, self.value(*a), |g, x| g * sigmoid(x))))
                }
                Op::Square(a) => {
                    contributions.push((*a, zip_map(&g, self.value(*a), |g, x| 2.0 * g * x)))
                }
                Op::Sqrt(a) => {
                    contributions.push((*a, zip_map(&g, &node.value, |g, y| 0.5 * g / y)))
                }
                Op::Powf(a, p) => contributions.push((
                    *a,
                    zip_map(&g, self.value(*a), |g, x| g * p * x.powf(p - 1.0)),
                )),
                Op::Clamp(a, lo, hi) => contributions.push((
                    *a,
                    zip_map(&g, self.value(*a), |g, x| {
                        if x >= *lo && x <= *hi {
                            g
                        } else {
                            0.0
                        }
                    }),
                )),
                Op::Sum(a) => {
                    let gv = g.item();
                    contributions.push((*a, Tensor::full(self.value(*a).shape(), gv)));
                }
                Op::Mean(a) => {
                    let src = self.value(*a);
                    let gv = g.item() / src.len() as f64;
                    contributions.push((*a, Tensor::full(src.shape(), gv)));
                }
                Op::Outer(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (m, n) = (x.len(), y.len());
                    let mut ga = vec![0.0; m];
                    let mut gb = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g.data()[i * n + j];
                            ga[i] += gv * y.data()[j];
                            gb[j] += gv * x.data()[i];
                        }
                    }
                    contributions.push((*a, Tensor::new(x.shape().to_vec(), ga).expect("outer")));
                    contributions.push((*b, Tensor::new(y.shape().to_vec(), gb).expect("outer")));
                }
            }
            // Keep gradients for every node so callers can query intermediates.
            grads[idx] = Some(g);
            for (v, contrib) in contributions {
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("elementwise grad")
}
