//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are kept
//! on the tape so that [`Tape::backward`] can replay the graph in reverse and
//! accumulate adjoints. Everything is a 2-D matrix; scalars are `1 x 1`.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::scalar::{gelu, gelu_grad, sigmoid, softplus, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Gelu,
    Softplus,
    Exp,
    Ln,
    Sigmoid,
}

/// Row/column visibility pattern for [`Tape::masked_softmax`]; `true` keeps
/// the entry.
#[derive(Debug, Clone)]
pub struct Mask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl Mask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut keep = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                keep.push(f(i, j));
            }
        }
        Self { rows, cols, keep }
    }

    pub fn keeps(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.keep[i * self.cols..(i + 1) * self.cols]
            .iter()
            .filter(|&&k| k)
            .count()
    }
}

enum Op<T> {
    Leaf,
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<Option<usize>>),
    Segment(Var, Vec<(usize, T)>),
    Transpose(Var),
    Unary(Var, Unary),
    Clamp(Var, T, T),
    MaskedSoftmax(Var, Rc<Mask>),
    LogSoftmax(Var),
    LayerNorm(Var, T),
    Sum(Var),
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

/// Recorded computation graph.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<T>> {
        self.grads[v.0].take()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        let x = self.value(v);
        debug_assert_eq!(x.dim(), (1, 1));
        x[[0, 0]]
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf that never receives an adjoint.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn constant_scalar(&mut self, x: T) -> Var {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Array2::zeros((rows, cols)))
    }

    /// Copy of `v` with no path back to its inputs.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// `a + b` with `b` a `1 x n` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(b).nrows(), 1, "add_row expects a 1 x n row");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::AddRow(a, b))
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(b).nrows(), 1, "mul_row expects a 1 x n row");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::MulRow(a, b))
    }

    /// `a + c` with `c` an `m x 1` column broadcast over the columns of `a`.
    pub fn add_col(&mut self, a: Var, c: Var) -> Var {
        assert_eq!(self.value(c).ncols(), 1, "add_col expects an m x 1 column");
        let value = self.value(a) + self.value(c);
        self.push(value, Op::AddCol(a, c))
    }

    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        assert_eq!(self.value(c).ncols(), 1, "mul_col expects an m x 1 column");
        let value = self.value(a) * self.value(c);
        self.push(value, Op::MulCol(a, c))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        let value = self.value(a) + k;
        self.push(value, Op::AddScalar(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start))
    }

    /// Row `i` of the result is row `index[i]` of `a`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<Option<usize>>) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((index.len(), src.ncols()));
        for (i, idx) in index.iter().enumerate() {
            if let Some(r) = *idx {
                value.row_mut(i).assign(&src.row(r));
            }
        }
        self.push(value, Op::Gather(a, index))
    }

    /// Weighted scatter-add of rows: `out[dst] += w * a[i]` for
    /// `routes[i] = (dst, w)`.
    pub fn segment_sum(&mut self, a: Var, routes: Vec<(usize, T)>, out_rows: usize) -> Var {
        let src = self.value(a);
        assert_eq!(routes.len(), src.nrows());
        let mut value = Array2::zeros((out_rows, src.ncols()));
        for (i, &(dst, w)) in routes.iter().enumerate() {
            value.row_mut(dst).scaled_add(w, &src.row(i));
        }
        self.push(value, Op::Segment(a, routes))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let value = self.value(a).mapv(|x| match f {
            Unary::Gelu => gelu(x),
            Unary::Softplus => softplus(x),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sigmoid => sigmoid(x),
        });
        self.push(value, Op::Unary(a, f))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let value = self.value(a).mapv(|x| x.max(lo).min(hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Row-wise softmax over kept entries. Rows with nothing kept are zero.
    pub fn masked_softmax(&mut self, a: Var, mask: Rc<Mask>) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), mask.shape());
        let mut value = Array2::zeros(x.dim());
        for i in 0..x.nrows() {
            let mut max = T::neg_infinity();
            for j in 0..x.ncols() {
                if mask.keeps(i, j) {
                    max = max.max(x[[i, j]]);
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let mut total = T::zero();
            for j in 0..x.ncols() {
                if mask.keeps(i, j) {
                    let e = (x[[i, j]] - max).exp();
                    value[[i, j]] = e;
                    total += e;
                }
            }
            value.row_mut(i).mapv_inplace(|e| e / total);
        }
        self.push(value, Op::MaskedSoftmax(a, mask))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.fold(T::zero(), |acc, &v| acc + (v - max).exp()).ln() + max;
            row.mapv_inplace(|v| v - lse);
        }
        self.push(value, Op::LogSoftmax(a))
    }

    /// Row-wise standardisation without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Var {
        let x = self.value(a);
        let n = T::of(x.ncols() as f64);
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let mean = row.sum() / n;
            let var = row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
            let inv = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
        }
        self.push(value, Op::LayerNorm(a, eps))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Adjoints of every node with respect to the `1 x 1` node `out`.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<T>>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(Array2::ones((1, 1)));

        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf | Op::Const) {
                if matches!(node.op, Op::Const) {
                    grads[id] = None;
                }
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Const => unreachable!(),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.mapv(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, b) => {
                    let gb = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*b);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddCol(a, c) => {
                    let gc = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads, *c, gc);
                    accumulate(&mut grads, *a, g);
                }
                Op::MulCol(a, c) => {
                    let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &g * self.value(*c);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *c, gc);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g * *k),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        let gp = g.slice(s![.., start..start + w]).to_owned();
                        accumulate(&mut grads, p, gp);
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather(a, index) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (i, idx) in index.iter().enumerate() {
                        if let Some(r) = *idx {
                            ga.row_mut(r).scaled_add(T::one(), &g.row(i));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Segment(a, routes) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (i, &(dst, w)) in routes.iter().enumerate() {
                        ga.row_mut(i).scaled_add(w, &g.row(dst));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::Unary(a, f) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut ga = g;
                    Zip::from(&mut ga).and(x).and(y).for_each(|gi, &xi, &yi| {
                        let d = match f {
                            Unary::Gelu => gelu_grad(xi),
                            Unary::Softplus => sigmoid(xi),
                            Unary::Exp => yi,
                            Unary::Ln => T::one() / xi,
                            Unary::Sigmoid => yi * (T::one() - yi),
                        };
                        *gi *= d;
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    Zip::from(&mut ga).and(x).for_each(|gi, &xi| {
                        if xi < *lo || xi > *hi {
                            *gi = T::zero();
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::MaskedSoftmax(a, mask) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let dot = (&g.row(i) * &y.row(i)).sum();
                        for j in 0..y.ncols() {
                            if mask.keeps(i, j) {
                                ga[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let total = grow.sum();
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|gi, &yi| *gi -= yi.exp() * total);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, eps) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let n = T::of(x.ncols() as f64);
                    let mut ga = Array2::zeros(x.dim());
                    for i in 0..x.nrows() {
                        let row = x.row(i);
                        let mean = row.sum() / n;
                        let var = row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
                        let inv = T::one() / (var + *eps).sqrt();
                        let gm = g.row(i).sum() / n;
                        let gy = (&g.row(i) * &y.row(i)).sum() / n;
                        for j in 0..x.ncols() {
                            ga[[i, j]] = inv * (g[[i, j]] - gm - y[[i, j]] * gy);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let k = g[[0, 0]];
                    accumulate(&mut grads, *a, Array2::from_elem(self.value(*a).dim(), k));
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
