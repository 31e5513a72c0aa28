//! A small reverse-mode automatic differentiation tape over dense row-major
//! matrices.
//!
//! Backward passes are recorded on the same tape as ordinary operations, so a
//! gradient is itself a differentiable [`Var`]. This is what lets attribution
//! maps (which are built from input gradients) be differentiated again, both
//! for the importance ranking of the attack and for the attribution term of
//! the robust training objective.
//!
//! Binary element-wise operations broadcast a `1 x c` row, an `r x 1` column or
//! a `1 x 1` scalar against a full `r x c` operand.

use std::fmt;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(1, 1, vec![value])
    }

    pub fn row(data: Vec<f64>) -> Self {
        let cols = data.len();
        Self::new(1, cols, data)
    }

    pub fn column(data: Vec<f64>) -> Self {
        let rows = data.len();
        Self::new(rows, 1, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Scalar value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum over columns, one value per row.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row_slice(r).iter().sum()).collect()
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Reduce by summation to `shape`, which must be a broadcast source of
    /// this tensor's shape.
    fn sum_to(&self, shape: (usize, usize)) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let mut out = Tensor::zeros(shape.0, shape.1);
        for r in 0..self.rows {
            for c in 0..self.cols {
                let rr = if shape.0 == 1 { 0 } else { r };
                let cc = if shape.1 == 1 { 0 } else { c };
                out.data[rr * shape.1 + cc] += self.data[r * self.cols + c];
            }
        }
        out
    }

    fn broadcast_to(&self, shape: (usize, usize)) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let mut out = Tensor::zeros(shape.0, shape.1);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                out.data[r * shape.1 + c] = self.bget(r, c);
            }
        }
        out
    }

    /// Broadcasting read.
    #[inline]
    fn bget(&self, r: usize, c: usize) -> f64 {
        let rr = if self.rows == 1 { 0 } else { r };
        let cc = if self.cols == 1 { 0 } else { c };
        self.data[rr * self.cols + cc]
    }

    fn zip_broadcast(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        if self.shape() == other.shape() {
            return Tensor {
                rows: self.rows,
                cols: self.cols,
                data: self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            };
        }
        let shape = broadcast_shape(self.shape(), other.shape());
        let mut data = Vec::with_capacity(shape.0 * shape.1);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                data.push(f(self.bget(r, c), other.bget(r, c)));
            }
        }
        Tensor {
            rows: shape.0,
            cols: shape.1,
            data,
        }
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast {a:?} with {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Softplus(Var),
    SumTo(Var),
    BroadcastTo(Var),
}

impl Op {
    fn parents(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf | Const => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => [Some(a), Some(b)],
            Neg(a) | Scale(a, _) | Offset(a) | Transpose(a) | Relu(a) | Tanh(a) | Exp(a)
            | Log(a) | Abs(a) | Sqrt(a) | Sigmoid(a) | Softplus(a) | SumTo(a)
            | BroadcastTo(a) => [Some(a), None],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recording tape. Nodes are appended in evaluation order, which is a valid
/// topological order for the backward sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A value that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Copy of `v`'s value that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op) -> Var {
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_broadcast(self.value(b), |x, y| x + y);
        self.record(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_broadcast(self.value(b), |x, y| x - y);
        self.record(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_broadcast(self.value(b), |x, y| x * y);
        self.record(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_broadcast(self.value(b), |x, y| x / y);
        self.record(value, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| -x);
        self.record(value, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.record(value, Op::Scale(a, factor))
    }

    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a).map(|x| x + shift);
        self.record(value, Op::Offset(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.record(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.record(value, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.record(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.record(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.record(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.record(value, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.record(value, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        self.record(value, Op::Sqrt(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.record(value, Op::Sigmoid(a))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.record(value, Op::Softplus(a))
    }

    pub fn sum_to(&mut self, a: Var, shape: (usize, usize)) -> Var {
        if self.shape(a) == shape {
            return a;
        }
        let value = self.value(a).sum_to(shape);
        self.record(value, Op::SumTo(a))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: (usize, usize)) -> Var {
        if self.shape(a) == shape {
            return a;
        }
        let value = self.value(a).broadcast_to(shape);
        self.record(value, Op::BroadcastTo(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.sum_to(a, (1, 1))
    }

    /// Per-row sums as an `r x 1` column.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let rows = self.shape(a).0;
        self.sum_to(a, (rows, 1))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }

    /// Softmax over all entries of `a`.
    pub fn softmax(&mut self, a: Var) -> Var {
        let max = self
            .value(a)
            .data()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let shift = self.scalar(max);
        let shifted = self.sub(a, shift);
        let e = self.exp(shifted);
        let total = self.sum(e);
        self.div(e, total)
    }

    /// `ln(sum(exp(a)))` over all entries.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let max = self
            .value(a)
            .data()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let shift = self.scalar(max);
        let shifted = self.sub(a, shift);
        let e = self.exp(shifted);
        let total = self.sum(e);
        let log = self.ln(total);
        self.offset(log, max)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The returned variables live on this tape and can be differentiated
    /// again. Inputs that `output` does not depend on get a zero gradient.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.shape(output), (1, 1), "grad() needs a scalar output");
        let end = output.0 + 1;
        let mut needs = vec![false; end];
        for w in wrt {
            if w.0 < end {
                needs[w.0] = true;
            }
        }
        for i in 0..end {
            if !needs[i] {
                needs[i] = self.nodes[i]
                    .op
                    .parents()
                    .iter()
                    .flatten()
                    .any(|p| needs[p.0]);
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; end];
        if needs[output.0] {
            grads[output.0] = Some(self.scalar(1.0));
        }
        for i in (0..end).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op;
            let y = Var(i);
            for (parent, contrib) in self.backward_op(op, y, g, &needs) {
                if needs[parent.0] {
                    grads[parent.0] = Some(match grads[parent.0] {
                        Some(prev) => self.add(prev, contrib),
                        None => contrib,
                    });
                }
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.shape(*w);
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect()
    }

    /// Vector-Jacobian products of one node, built only for parents flagged
    /// in `needs`.
    fn backward_op(&mut self, op: Op, y: Var, g: Var, needs: &[bool]) -> Vec<(Var, Var)> {
        use Op::*;
        let want = |v: Var| needs[v.0];
        match op {
            Leaf | Const => vec![],
            Add(a, b) => {
                let mut out = Vec::with_capacity(2);
                if want(a) {
                    let sa = self.shape(a);
                    out.push((a, self.sum_to(g, sa)));
                }
                if want(b) {
                    let sb = self.shape(b);
                    out.push((b, self.sum_to(g, sb)));
                }
                out
            }
            Sub(a, b) => {
                let mut out = Vec::with_capacity(2);
                if want(a) {
                    let sa = self.shape(a);
                    out.push((a, self.sum_to(g, sa)));
                }
                if want(b) {
                    let sb = self.shape(b);
                    let ng = self.neg(g);
                    out.push((b, self.sum_to(ng, sb)));
                }
                out
            }
            Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if want(a) {
                    let sa = self.shape(a);
                    let t = self.mul(g, b);
                    out.push((a, self.sum_to(t, sa)));
                }
                if want(b) {
                    let sb = self.shape(b);
                    let t = self.mul(g, a);
                    out.push((b, self.sum_to(t, sb)));
                }
                out
            }
            Div(a, b) => {
                let mut out = Vec::with_capacity(2);
                if want(a) {
                    let sa = self.shape(a);
                    let t = self.div(g, b);
                    out.push((a, self.sum_to(t, sa)));
                }
                if want(b) {
                    let sb = self.shape(b);
                    let t = self.mul(g, y);
                    let t = self.div(t, b);
                    let t = self.neg(t);
                    out.push((b, self.sum_to(t, sb)));
                }
                out
            }
            Neg(a) => vec![(a, self.neg(g))],
            Scale(a, f) => vec![(a, self.scale(g, f))],
            Offset(a) => vec![(a, g)],
            MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if want(a) {
                    let bt = self.transpose(b);
                    out.push((a, self.matmul(g, bt)));
                }
                if want(b) {
                    let at = self.transpose(a);
                    out.push((b, self.matmul(at, g)));
                }
                out
            }
            Transpose(a) => vec![(a, self.transpose(g))],
            Relu(a) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                vec![(a, self.mul(g, mask))]
            }
            Tanh(a) => {
                let y2 = self.mul(y, y);
                let ny2 = self.neg(y2);
                let d = self.offset(ny2, 1.0);
                vec![(a, self.mul(g, d))]
            }
            Exp(a) => vec![(a, self.mul(g, y))],
            Log(a) => vec![(a, self.div(g, a))],
            Abs(a) => {
                let sign = self.value(a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                let sign = self.constant(sign);
                vec![(a, self.mul(g, sign))]
            }
            Sqrt(a) => {
                let twice = self.scale(y, 2.0);
                vec![(a, self.div(g, twice))]
            }
            Sigmoid(a) => {
                let ny = self.neg(y);
                let one_minus = self.offset(ny, 1.0);
                let d = self.mul(y, one_minus);
                vec![(a, self.mul(g, d))]
            }
            Softplus(a) => {
                let s = self.sigmoid(a);
                vec![(a, self.mul(g, s))]
            }
            SumTo(a) => {
                let sa = self.shape(a);
                vec![(a, self.broadcast_to(g, sa))]
            }
            BroadcastTo(a) => {
                let sa = self.shape(a);
                vec![(a, self.sum_to(g, sa))]
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
