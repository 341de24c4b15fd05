use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    Abs(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Clamp(Var, f64, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode recording of primitive operations.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Leaves created with [`Tape::leaf`] receive gradients;
/// [`Tape::constant`] leaves and everything computed only from constants are
/// skipped by the backward sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` is not
    /// reachable from the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn bcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Vec<usize>, usize, usize)> {
    if a.shape() == b.shape() {
        let (r, c) = a.view2();
        return Ok((a.shape().to_vec(), r, c));
    }
    let (ra, ca) = a.view2();
    let (rb, cb) = b.view2();
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    let mismatch = || Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let rank_ok = |t: &Tensor| t.shape().len() <= 2 || t.is_scalar();
    if !rank_ok(a) || !rank_ok(b) {
        return Err(mismatch());
    }
    let r = dim(ra, rb).ok_or_else(mismatch)?;
    let c = dim(ca, cb).ok_or_else(mismatch)?;
    let shape = if b.is_scalar() {
        a.shape().to_vec()
    } else if a.is_scalar() {
        b.shape().to_vec()
    } else {
        vec![r, c]
    };
    Ok((shape, r, c))
}

#[inline]
fn bidx(view: (usize, usize), i: usize, j: usize) -> usize {
    let (r, c) = view;
    (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
}

fn broadcast_zip(
    a: &Tensor,
    b: &Tensor,
    rows: usize,
    cols: usize,
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if a.shape() == b.shape() {
        return a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
    }
    let (va, vb) = (a.view2(), b.view2());
    let (da, db) = (a.data(), b.data());
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(f(da[bidx(va, i, j)], db[bidx(vb, i, j)]));
        }
    }
    out
}

/// Sums an output-shaped gradient back down to a broadcast input's shape.
fn reduce_to(input: &Tensor, rows: usize, cols: usize, g: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; input.numel()];
    let v = input.view2();
    if v == (rows, cols) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = g(k);
        }
        return out;
    }
    for i in 0..rows {
        for j in 0..cols {
            out[bidx(v, i, j)] += g(i * cols + j);
        }
    }
    out
}

/// `c = a·b + beta·c` for row/column-strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides describe matrices that fit inside the checked slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Neumaier summation; keeps full reductions accurate enough for
/// finite-difference checks on large tensors.
fn compensated_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = sum + x;
        c += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + c
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.spent = false;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Branch taken by every element of every piecewise primitive
    /// (`leaky_relu`, `abs`, `clamp`), in recording order. Two evaluations
    /// with equal patterns lie on the same smooth piece.
    pub fn branch_pattern(&self) -> Vec<i8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let (a, region): (Var, &dyn Fn(f64) -> i8) = match node.op {
                Op::LeakyRelu(a, _) => (a, &|x| i8::from(x > 0.0)),
                Op::Abs(a) => (a, &|x| x.partial_cmp(&0.0).map_or(2, |o| o as i8)),
                Op::Clamp(a, lo, hi) => (a, &move |x| {
                    if x < lo {
                        -1
                    } else if x > hi {
                        1
                    } else {
                        0
                    }
                }),
                _ => continue,
            };
            out.extend(self.value(a).data().iter().map(|&x| region(x)));
        }
        out
    }

    /// Trainable input: receives a gradient in [`Tape::backward`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, k2, n) = match (ta.shape(), tb.shape()) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            _ => (0, 1, 2, 0),
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), (k, 1), tb.data(), (n, 1), 0.0, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (shape, r, c) = bcast_shape(name, ta, tb)?;
        let out = broadcast_zip(ta, tb, r, c, f);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::MulScalar(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite("ln of NaN".into()));
        }
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "ln",
                detail: format!("logarithm of non-positive value {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Ln(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite("sqrt of NaN".into()));
        }
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("square root of negative value {bad}"),
            });
        }
        Ok(self.unary(a, f64::sqrt, Op::Sqrt(a)))
    }

    /// Elementwise clamp into `[lo, hi]`; the gradient passes where
    /// `lo <= x <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = compensated_sum(self.value(a).data());
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = compensated_sum(t.data()) / t.numel() as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    fn axis_reduce(&mut self, name: &'static str, a: Var, axis: usize) -> Result<(Tensor, usize)> {
        let t = self.value(a);
        let (r, c) = match t.shape() {
            [r, c] if axis < 2 => (*r, *c),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: name,
                    lhs: t.shape().to_vec(),
                    rhs: vec![axis],
                })
            }
        };
        let d = t.data();
        let out = if axis == 0 {
            let mut s = vec![0.0; c];
            for i in 0..r {
                for (sj, &x) in s.iter_mut().zip(&d[i * c..(i + 1) * c]) {
                    *sj += x;
                }
            }
            Tensor::new(vec![1, c], s)?
        } else {
            let s = (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect();
            Tensor::new(vec![r, 1], s)?
        };
        Ok((out, if axis == 0 { r } else { c }))
    }

    /// Sum over `axis` of a rank-2 tensor, keeping the reduced dimension.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (out, _) = self.axis_reduce("sum_axis", a, axis)?;
        let needs = self.needs(a);
        Ok(self.push(out, Op::SumAxis(a, axis), needs))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (mut out, n) = self.axis_reduce("mean_axis", a, axis)?;
        out.data_mut().iter_mut().for_each(|x| *x /= n as f64);
        let needs = self.needs(a);
        Ok(self.push(out, Op::MeanAxis(a, axis), needs))
    }

    /// Concatenates rank-2 tensors along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?;
        let (r0, c0) = match self.shape(*first) {
            [r, c] if axis < 2 => (*r, *c),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: s.to_vec(),
                    rhs: vec![axis],
                })
            }
        };
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == 2 && if axis == 0 { s[1] == c0 } else { s[0] == r0 };
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: vec![r0, c0],
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (rows, cols) = if axis == 0 { (total, c0) } else { (r0, total) };
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(self.value(p).data());
            }
        } else {
            for i in 0..r0 {
                for &p in parts {
                    out.extend_from_slice(self.value(p).row(i));
                }
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::Concat(parts.to_vec(), axis),
            needs,
        ))
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = match t.shape() {
            [r, c] if len > 0 && start + len <= *c => (*r, *c),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "slice_cols",
                    lhs: s.to_vec(),
                    rhs: vec![start, len],
                })
            }
        };
        let d = t.data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + start + len]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![r, len], out)?,
            Op::SliceCols(a, start),
            needs,
        ))
    }

    /// Rows `start..start + len` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let c = match t.shape() {
            [r, c] if len > 0 && start + len <= *r => *c,
            s => {
                return Err(Error::ShapeMismatch {
                    op: "slice_rows",
                    lhs: s.to_vec(),
                    rhs: vec![start, len],
                })
            }
        };
        let out = t.data()[start * c..(start + len) * c].to_vec();
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![len, c], out)?,
            Op::SliceRows(a, start),
            needs,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Each recorded node is visited at
    /// most once, in reverse recording order.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.spent {
            return Err(Error::BackwardTwice);
        }
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.spent = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        let nodes = &self.nodes;

        fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, g: Vec<f64>) {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(g),
            }
        }
        let val = |v: Var| &nodes[v.0].value;

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let y = node.value.data();
            let map1 = |a: Var, f: &dyn Fn(usize) -> f64| -> Vec<f64> {
                (0..val(a).numel()).map(f).collect()
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let nn = tb.shape()[1];
                    if nodes[a.0].needs_grad {
                        let mut ga = vec![0.0; m * k];
                        gemm(m, nn, k, &g, (nn, 1), tb.data(), (1, nn), 0.0, &mut ga);
                        acc(&mut grads, nodes, *a, ga);
                    }
                    if nodes[b.0].needs_grad {
                        let mut gb = vec![0.0; k * nn];
                        gemm(k, m, nn, ta.data(), (1, k), &g, (nn, 1), 0.0, &mut gb);
                        acc(&mut grads, nodes, *b, gb);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (r, c) = node.value.view2();
                    let (va, vb) = (ta.view2(), tb.view2());
                    let (da, db) = (ta.data(), tb.data());
                    let at = |k: usize| da[bidx(va, k / c, k % c)];
                    let bt = |k: usize| db[bidx(vb, k / c, k % c)];
                    let op = &node.op;
                    if nodes[a.0].needs_grad {
                        let ga = match op {
                            Op::Add(..) | Op::Sub(..) => reduce_to(ta, r, c, |k| g[k]),
                            Op::Mul(..) => reduce_to(ta, r, c, |k| g[k] * bt(k)),
                            _ => reduce_to(ta, r, c, |k| g[k] / bt(k)),
                        };
                        acc(&mut grads, nodes, *a, ga);
                    }
                    if nodes[b.0].needs_grad {
                        let gb = match op {
                            Op::Add(..) => reduce_to(tb, r, c, |k| g[k]),
                            Op::Sub(..) => reduce_to(tb, r, c, |k| -g[k]),
                            Op::Mul(..) => reduce_to(tb, r, c, |k| g[k] * at(k)),
                            _ => reduce_to(tb, r, c, |k| {
                                let b = bt(k);
                                -g[k] * at(k) / (b * b)
                            }),
                        };
                        acc(&mut grads, nodes, *b, gb);
                    }
                }
                Op::AddScalar(a) => acc(&mut grads, nodes, *a, g),
                Op::MulScalar(a, s) => {
                    let s = *s;
                    acc(&mut grads, nodes, *a, g.iter().map(|x| x * s).collect())
                }
                Op::Exp(a) => acc(&mut grads, nodes, *a, map1(*a, &|k| g[k] * y[k])),
                Op::Ln(a) => {
                    let x = val(*a).data();
                    acc(&mut grads, nodes, *a, map1(*a, &|k| g[k] / x[k]))
                }
                Op::Tanh(a) => acc(
                    &mut grads,
                    nodes,
                    *a,
                    map1(*a, &|k| g[k] * (1.0 - y[k] * y[k])),
                ),
                Op::Sigmoid(a) => acc(
                    &mut grads,
                    nodes,
                    *a,
                    map1(*a, &|k| g[k] * y[k] * (1.0 - y[k])),
                ),
                Op::LeakyRelu(a, slope) => {
                    let x = val(*a).data();
                    let s = *slope;
                    acc(
                        &mut grads,
                        nodes,
                        *a,
                        map1(*a, &|k| if x[k] > 0.0 { g[k] } else { s * g[k] }),
                    )
                }
                Op::Square(a) => {
                    let x = val(*a).data();
                    acc(&mut grads, nodes, *a, map1(*a, &|k| 2.0 * x[k] * g[k]))
                }
                Op::Abs(a) => {
                    let x = val(*a).data();
                    acc(
                        &mut grads,
                        nodes,
                        *a,
                        map1(*a, &|k| {
                            if x[k] > 0.0 {
                                g[k]
                            } else if x[k] < 0.0 {
                                -g[k]
                            } else {
                                0.0
                            }
                        }),
                    )
                }
                Op::Sqrt(a) => acc(&mut grads, nodes, *a, map1(*a, &|k| g[k] / (2.0 * y[k]))),
                Op::Clamp(a, lo, hi) => {
                    let x = val(*a).data();
                    let (lo, hi) = (*lo, *hi);
                    acc(
                        &mut grads,
                        nodes,
                        *a,
                        map1(*a, &|k| if x[k] >= lo && x[k] <= hi { g[k] } else { 0.0 }),
                    )
                }
                Op::Sum(a) => acc(&mut grads, nodes, *a, vec![g[0]; val(*a).numel()]),
                Op::Mean(a) => {
                    let n = val(*a).numel();
                    acc(&mut grads, nodes, *a, vec![g[0] / n as f64; n])
                }
                Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                    let t = val(*a);
                    let (r, c) = (t.shape()[0], t.shape()[1]);
                    let scale = match node.op {
                        Op::MeanAxis(..) => 1.0 / (if *axis == 0 { r } else { c }) as f64,
                        _ => 1.0,
                    };
                    let ga = (0..r * c)
                        .map(|k| scale * if *axis == 0 { g[k % c] } else { g[k / c] })
                        .collect();
                    acc(&mut grads, nodes, *a, ga)
                }
                Op::Concat(parts, axis) => {
                    let cols = node.value.shape()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let s = val(p).shape();
                        let (pr, pc) = (s[0], s[1]);
                        if nodes[p.0].needs_grad {
                            let gp = if *axis == 0 {
                                g[offset * cols..(offset + pr) * cols].to_vec()
                            } else {
                                (0..pr * pc)
                                    .map(|k| g[(k / pc) * cols + offset + k % pc])
                                    .collect()
                            };
                            acc(&mut grads, nodes, p, gp);
                        }
                        offset += if *axis == 0 { pr } else { pc };
                    }
                }
                Op::SliceCols(a, start) => {
                    let t = val(*a);
                    let (r, c) = (t.shape()[0], t.shape()[1]);
                    let len = node.value.shape()[1];
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        ga[i * c + start..i * c + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    acc(&mut grads, nodes, *a, ga)
                }
                Op::SliceRows(a, start) => {
                    let t = val(*a);
                    let c = t.shape()[1];
                    let mut ga = vec![0.0; t.numel()];
                    ga[start * c..start * c + g.len()].copy_from_slice(&g);
                    acc(&mut grads, nodes, *a, ga)
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(nodes)
            .map(|(g, n)| match (g, &n.op) {
                (Some(g), Op::Leaf) => {
                    Some(Tensor::new(n.value.shape().to_vec(), g).expect("leaf shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }
}
