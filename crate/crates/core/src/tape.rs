//! Define-by-run computation tape with reverse-mode differentiation.
//!
//! Every primitive records its operands, result and backward rule on the
//! [`Tape`]; a single [`Tape::backward`] pass fills gradients for all
//! `requires_grad` leaves. The tape is rebuilt for every training step.
//!
//! All reductions run in a fixed sequential order, so identical inputs
//! produce bitwise-identical outputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Per-category multiply-add tallies. Monotone within a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCounter {
    pub matmul: u64,
    pub elementwise: u64,
    pub reduction: u64,
}

impl FlopCounter {
    pub fn total(&self) -> u64 {
        self.matmul + self.elementwise + self.reduction
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Divisor magnitudes below `floor` are clamped to `floor`, sign kept.
    /// `clamped` marks entries whose divisor was clamped (zero gradient).
    Div {
        a: Var,
        b: Var,
        floor: f64,
        clamped: Vec<bool>,
    },
    Relu(Var),
    Exp {
        a: Var,
        saturated: Vec<bool>,
    },
    Scale(Var, f64),
    /// Row-wise max; `argmax` holds the first maximal column per row.
    RowMax {
        a: Var,
        argmax: Vec<usize>,
    },
    RowSum(Var),
    SumAll(Var),
    Abs(Var),
    Sqrt(Var),
    /// Concatenation along the column axis; `cols` are operand widths.
    ConcatCols {
        parts: Vec<Var>,
        cols: Vec<usize>,
    },
    /// m x 1 column vector broadcast across n columns.
    BroadcastCol(Var),
    /// 1 x n row vector broadcast across m rows.
    BroadcastRow(Var),
    Reshape(Var),
    /// Every column entry repeated `times` times consecutively.
    RepeatCols {
        a: Var,
        times: usize,
    },
    /// Entries below `floor` replaced by `substitute`; replaced entries
    /// pass no gradient.
    FloorSubstitute {
        a: Var,
        replaced: Vec<bool>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

/// The recorded computation graph.
pub struct Tape {
    nodes: Vec<Node>,
    flops: FlopCounter,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            flops: FlopCounter::default(),
            backward_done: false,
        }
    }

    pub fn flops(&self) -> FlopCounter {
        self.flops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass, if this node required one.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape mirrors value")
        })
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check_finite(&self, t: &Tensor, op: &'static str) -> Result<()> {
        if t.all_finite() {
            Ok(())
        } else {
            Err(CoreError::NonFinite { op })
        }
    }

    fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
        if a.shape() == b.shape() {
            Ok(())
        } else {
            Err(CoreError::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })
        }
    }

    // ---- forward primitives -------------------------------------------

    /// (m x k) . (k x n) matrix product; counts m*n*k multiply-adds.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = ta.row(i);
            for (kk, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = tb.row(kk);
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                    *o += av * bv;
                }
            }
        }
        self.flops.matmul += (m * n * k) as u64;
        let t = Tensor::matrix(m, n, out)?;
        self.check_finite(&t, "matmul")?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MatMul(a, b), t, req))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ta.at(i, j);
            }
        }
        let t = Tensor::matrix(n, m, out)?;
        let req = self.requires(a);
        Ok(self.push(Op::Transpose(a), t, req))
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        Self::same_shape(ta, tb, op_name)?;
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.flops.elementwise += data.len() as u64;
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.check_finite(&t, op_name)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(make(a, b), t, req))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// Elementwise division under the caller-supplied divisor floor:
    /// divisor magnitudes below `floor` are clamped to `floor`, keeping the
    /// sign (zeros count as positive). Clamped entries pass no gradient to
    /// the divisor.
    pub fn div(&mut self, a: Var, b: Var, floor: f64) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        Self::same_shape(ta, tb, "div")?;
        let n = ta.len();
        let mut data = Vec::with_capacity(n);
        let mut clamped = vec![false; n];
        for (i, (&x, &y)) in ta.data().iter().zip(tb.data().iter()).enumerate() {
            let d = if y.abs() < floor {
                clamped[i] = true;
                if y.is_sign_negative() {
                    -floor
                } else {
                    floor
                }
            } else {
                y
            };
            data.push(x / d);
        }
        self.flops.elementwise += n as u64;
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.check_finite(&t, "div")?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Div { a, b, floor, clamped }, t, req))
    }

    /// ReLU with subgradient 0 at the origin.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let data: Vec<f64> = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.flops.elementwise += data.len() as u64;
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let req = self.requires(a);
        Ok(self.push(Op::Relu(a), t, req))
    }

    /// Elementwise exponential. Overflow is an error unless `saturate` is
    /// set, in which case overflowing entries clamp to `f64::MAX` with a
    /// logged warning; saturated entries use the clamped value as their
    /// derivative.
    pub fn exp(&mut self, a: Var, saturate: bool) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let n = ta.len();
        let mut data = Vec::with_capacity(n);
        let mut saturated = vec![false; n];
        let mut warned = false;
        for (i, &x) in ta.data().iter().enumerate() {
            let e = libm::exp(x);
            if e.is_infinite() {
                if !saturate {
                    return Err(CoreError::NonFinite { op: "exp" });
                }
                if !warned {
                    log::warn!("exp overflow saturated to f64::MAX");
                    warned = true;
                }
                saturated[i] = true;
                data.push(f64::MAX);
            } else {
                data.push(e);
            }
        }
        self.flops.elementwise += n as u64;
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.check_finite(&t, "exp")?;
        let req = self.requires(a);
        Ok(self.push(Op::Exp { a, saturated }, t, req))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let data: Vec<f64> = ta.data().iter().map(|&x| x * c).collect();
        self.flops.elementwise += data.len() as u64;
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.check_finite(&t, "scale")?;
        let req = self.requires(a);
        Ok(self.push(Op::Scale(a, c), t, req))
    }

    /// Row-wise maximum: m x n -> m x 1. Gradient flows to the first
    /// maximal entry of each row.
    pub fn row_max(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = (ta.rows(), ta.cols());
        if n == 0 {
            return Err(CoreError::ShapeMismatch {
                op: "row_max",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut data = Vec::with_capacity(m);
        let mut argmax = Vec::with_capacity(m);
        for i in 0..m {
            let row = ta.row(i);
            let mut best = row[0];
            let mut bi = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    bi = j;
                }
            }
            data.push(best);
            argmax.push(bi);
        }
        self.flops.reduction += (m * n) as u64;
        let t = Tensor::matrix(m, 1, data)?;
        let req = self.requires(a);
        Ok(self.push(Op::RowMax { a, argmax }, t, req))
    }

    /// Row-wise sum: m x n -> m x 1.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = (ta.rows(), ta.cols());
        let data: Vec<f64> = (0..m).map(|i| ta.row(i).iter().sum()).collect();
        self.flops.reduction += (m * n) as u64;
        let t = Tensor::matrix(m, 1, data)?;
        self.check_finite(&t, "row_sum")?;
        let req = self.requires(a);
        Ok(self.push(Op::RowSum(a), t, req))
    }

    /// Sum of all entries -> scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let s: f64 = ta.data().iter().sum();
        self.flops.reduction += ta.len() as u64;
        let t = Tensor::scalar(s);
        self.check_finite(&t, "sum")?;
        let req = self.requires(a);
        Ok(self.push(Op::SumAll(a), t, req))
    }

    /// Elementwise absolute value; subgradient 0 at the origin.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let data: Vec<f64> = ta.data().iter().map(|&x| libm::fabs(x)).collect();
        self.flops.elementwise += data.len() as u64;
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let req = self.requires(a);
        Ok(self.push(Op::Abs(a), t, req))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let data: Vec<f64> = ta.data().iter().map(|&x| libm::sqrt(x)).collect();
        self.flops.elementwise += data.len() as u64;
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.check_finite(&t, "sqrt")?;
        let req = self.requires(a);
        Ok(self.push(Op::Sqrt(a), t, req))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.nodes[parts[0].0].value.rows();
        let mut cols = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows() != m {
                return Err(CoreError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0].0].value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            cols.push(t.cols());
        }
        let total: usize = cols.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let t = Tensor::matrix(m, total, data)?;
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
                cols,
            },
            t,
            req,
        ))
    }

    /// Broadcast an m x 1 column vector across `n` columns.
    pub fn broadcast_col(&mut self, a: Var, n: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.cols() != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "broadcast_col",
                lhs: ta.shape().to_vec(),
                rhs: vec![ta.rows(), 1],
            });
        }
        let m = ta.rows();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let v = ta.at(i, 0);
            data.extend(core::iter::repeat(v).take(n));
        }
        let t = Tensor::matrix(m, n, data)?;
        let req = self.requires(a);
        Ok(self.push(Op::BroadcastCol(a), t, req))
    }

    /// Broadcast a 1 x n row vector across `m` rows.
    pub fn broadcast_row(&mut self, a: Var, m: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.rows() != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "broadcast_row",
                lhs: ta.shape().to_vec(),
                rhs: vec![1, ta.cols()],
            });
        }
        let n = ta.cols();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(ta.row(0));
        }
        let t = Tensor::matrix(m, n, data)?;
        let req = self.requires(a);
        Ok(self.push(Op::BroadcastRow(a), t, req))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let n: usize = shape.iter().product();
        if n != ta.len() {
            return Err(CoreError::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape().to_vec(),
                rhs: shape,
            });
        }
        let t = Tensor::new(shape, ta.data().to_vec())?;
        let req = self.requires(a);
        Ok(self.push(Op::Reshape(a), t, req))
    }

    /// Repeat every column entry `times` times consecutively:
    /// out[i, j*times + t] = a[i, j].
    pub fn repeat_cols(&mut self, a: Var, times: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let (m, n) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(m * n * times);
        for i in 0..m {
            for j in 0..n {
                let v = ta.at(i, j);
                data.extend(core::iter::repeat(v).take(times));
            }
        }
        let t = Tensor::matrix(m, n * times, data)?;
        let req = self.requires(a);
        Ok(self.push(Op::RepeatCols { a, times }, t, req))
    }

    /// Replace entries below `floor` with `substitute`; replaced entries
    /// pass no gradient. Used to guard degenerate normalizers.
    pub fn floor_substitute(&mut self, a: Var, floor: f64, substitute: f64) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let n = ta.len();
        let mut data = Vec::with_capacity(n);
        let mut replaced = vec![false; n];
        for (i, &x) in ta.data().iter().enumerate() {
            if x < floor {
                replaced[i] = true;
                data.push(substitute);
            } else {
                data.push(x);
            }
        }
        self.flops.elementwise += n as u64;
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let req = self.requires(a);
        Ok(self.push(Op::FloorSubstitute { a, replaced }, t, req))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse-mode pass from a scalar loss; fills gradients of every
    /// `requires_grad` node reachable from it. A tape can run backward
    /// only once; rebuild the graph for the next step.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(CoreError::BackwardEmptyGraph);
        }
        if self.backward_done {
            return Err(CoreError::BackwardReplay);
        }
        let loss_len = self.nodes[loss.0].value.len();
        if loss_len != 1 {
            return Err(CoreError::BackwardNonScalar { len: loss_len });
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let g = self.nodes[idx].grad.as_ref().unwrap().clone();
            self.propagate(idx, &op, &g);
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, contrib: impl Fn(usize) -> f64) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        if self.nodes[v.0].grad.is_none() {
            self.nodes[v.0].grad = Some(vec![0.0; n]);
        }
        let g = self.nodes[v.0].grad.as_mut().unwrap();
        for (i, slot) in g.iter_mut().enumerate() {
            *slot += contrib(i);
        }
    }

    fn propagate(&mut self, idx: usize, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                // dA = G . B^T ; dB = A^T . G
                let ta = self.nodes[a.0].value.clone();
                let tb = self.nodes[b.0].value.clone();
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                if self.requires(*a) {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                da[i * k + kk] += gv * tb.at(kk, j);
                            }
                        }
                    }
                    self.accum(*a, |i| da[i]);
                }
                if self.requires(*b) {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for kk in 0..k {
                            let av = ta.at(i, kk);
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[kk * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                    self.accum(*b, |i| db[i]);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = {
                    let ta = &self.nodes[a.0].value;
                    (ta.rows(), ta.cols())
                };
                // out is n x m; g indexed [j, i]
                self.accum(*a, |i| {
                    let r = i / n;
                    let c = i % n;
                    g[c * m + r]
                });
            }
            Op::Add(a, b) => {
                self.accum(*a, |i| g[i]);
                self.accum(*b, |i| g[i]);
            }
            Op::Sub(a, b) => {
                self.accum(*a, |i| g[i]);
                self.accum(*b, |i| -g[i]);
            }
            Op::Mul(a, b) => {
                let ta = self.nodes[a.0].value.clone();
                let tb = self.nodes[b.0].value.clone();
                self.accum(*a, |i| g[i] * tb.data()[i]);
                self.accum(*b, |i| g[i] * ta.data()[i]);
            }
            Op::Div { a, b, floor, clamped } => {
                let ta = self.nodes[a.0].value.clone();
                let tb = self.nodes[b.0].value.clone();
                let floor = *floor;
                let eff = |i: usize| {
                    let y = tb.data()[i];
                    if clamped[i] {
                        if y.is_sign_negative() {
                            -floor
                        } else {
                            floor
                        }
                    } else {
                        y
                    }
                };
                self.accum(*a, |i| g[i] / eff(i));
                let clamped = clamped.clone();
                self.accum(*b, |i| {
                    if clamped[i] {
                        0.0
                    } else {
                        let d = eff(i);
                        -g[i] * ta.data()[i] / (d * d)
                    }
                });
            }
            Op::Relu(a) => {
                let ta = self.nodes[a.0].value.clone();
                self.accum(*a, |i| if ta.data()[i] > 0.0 { g[i] } else { 0.0 });
            }
            Op::Exp { a, saturated } => {
                let out = self.nodes[idx].value.clone();
                let _ = saturated;
                self.accum(*a, |i| g[i] * out.data()[i]);
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accum(*a, |i| g[i] * c);
            }
            Op::RowMax { a, argmax } => {
                let n = self.nodes[a.0].value.cols();
                let argmax = argmax.clone();
                self.accum(*a, |i| {
                    let r = i / n;
                    let c = i % n;
                    if argmax[r] == c {
                        g[r]
                    } else {
                        0.0
                    }
                });
            }
            Op::RowSum(a) => {
                let n = self.nodes[a.0].value.cols();
                self.accum(*a, |i| g[i / n]);
            }
            Op::SumAll(a) => {
                self.accum(*a, |_| g[0]);
            }
            Op::Abs(a) => {
                let ta = self.nodes[a.0].value.clone();
                self.accum(*a, |i| {
                    let x = ta.data()[i];
                    if x > 0.0 {
                        g[i]
                    } else if x < 0.0 {
                        -g[i]
                    } else {
                        0.0
                    }
                });
            }
            Op::Sqrt(a) => {
                let out = self.nodes[idx].value.clone();
                self.accum(*a, |i| {
                    let s = out.data()[i];
                    if s == 0.0 {
                        0.0
                    } else {
                        g[i] / (2.0 * s)
                    }
                });
            }
            Op::ConcatCols { parts, cols } => {
                let m = self.nodes[parts[0].0].value.rows();
                let total: usize = cols.iter().sum();
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(cols.iter()) {
                    let off = offset;
                    self.accum(p, |i| {
                        let r = i / w;
                        let c = i % w;
                        g[r * total + off + c]
                    });
                    offset += w;
                    let _ = m;
                }
            }
            Op::BroadcastCol(a) => {
                let n = self.nodes[idx].value.cols();
                self.accum(*a, |i| g[i * n..(i + 1) * n].iter().sum());
            }
            Op::BroadcastRow(a) => {
                let m = self.nodes[idx].value.rows();
                let n = self.nodes[idx].value.cols();
                self.accum(*a, |j| (0..m).map(|r| g[r * n + j]).sum());
            }
            Op::Reshape(a) => {
                self.accum(*a, |i| g[i]);
            }
            Op::RepeatCols { a, times } => {
                let n = self.nodes[a.0].value.cols();
                let times = *times;
                self.accum(*a, |i| {
                    let r = i / n;
                    let c = i % n;
                    let base = r * n * times + c * times;
                    g[base..base + times].iter().sum()
                });
            }
            Op::FloorSubstitute { a, replaced } => {
                let replaced = replaced.clone();
                self.accum(*a, |i| if replaced[i] { 0.0 } else { g[i] });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        tape.leaf(Tensor::matrix(rows, cols, data).unwrap(), true)
    }

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, 1, 3, vec![-1.0, 0.0, 2.0]);
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i3 = tape.constant(Tensor::identity(3));
        let a = leaf(&mut tape, 3, 2, vec![1., 2., 3., 4., 5., 6.]);
        let y = tape.matmul(i3, a).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(a).data());
    }

    #[test]
    fn exp_scaled_scalar() {
        // exp(10 * 0.5) = e^5
        let mut tape = Tape::new();
        let x = leaf(&mut tape, 1, 1, vec![0.5]);
        let s = tape.scale(x, 10.0).unwrap();
        let y = tape.exp(s, false).unwrap();
        assert!((tape.value(y).data()[0] - 148.4131591025766).abs() < 1e-9);
    }

    #[test]
    fn exp_overflow_errors_without_saturation() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, 1, 1, vec![1000.0]);
        assert_eq!(
            tape.exp(x, false).unwrap_err(),
            CoreError::NonFinite { op: "exp" }
        );
    }

    #[test]
    fn exp_saturates_when_opted_in() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, 1, 1, vec![1000.0]);
        let y = tape.exp(x, true).unwrap();
        assert_eq!(tape.value(y).data()[0], f64::MAX);
    }

    #[test]
    fn backward_relu_sum() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, 1, 2, vec![-1.0, 2.0]);
        let r = tape.relu(x).unwrap();
        let loss = tape.sum(r).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_elementwise_product() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, 1, 2, vec![2.0, 3.0]);
        let b = leaf(&mut tape, 1, 2, vec![5.0, 7.0]);
        let p = tape.mul(a, b).unwrap();
        let loss = tape.sum(p).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[5.0, 7.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn backward_twice_rejected() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, 1, 1, vec![2.0]);
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.backward(loss).unwrap_err(), CoreError::BackwardReplay);
    }

    #[test]
    fn backward_non_scalar_rejected() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, 1, 2, vec![1.0, 2.0]);
        assert_eq!(
            tape.backward(x).unwrap_err(),
            CoreError::BackwardNonScalar { len: 2 }
        );
    }

    #[test]
    fn backward_empty_graph_rejected() {
        let mut tape = Tape::new();
        assert_eq!(
            tape.backward(Var(0)).unwrap_err(),
            CoreError::BackwardEmptyGraph
        );
    }

    #[test]
    fn matmul_flop_count_exact() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, 3, 4, vec![1.0; 12]);
        let b = leaf(&mut tape, 4, 5, vec![1.0; 20]);
        tape.matmul(a, b).unwrap();
        assert_eq!(tape.flops().matmul, 3 * 5 * 4);
    }

    #[test]
    fn shape_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, 2, 3, vec![0.0; 6]);
        let b = leaf(&mut tape, 2, 2, vec![0.0; 4]);
        match tape.matmul(a, b).unwrap_err() {
            CoreError::ShapeMismatch { op, lhs, rhs } => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn div_floor_clamps_small_divisors() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, 1, 3, vec![1.0, 1.0, 1.0]);
        let b = leaf(&mut tape, 1, 3, vec![0.001, -0.001, 2.0]);
        let q = tape.div(a, b, 0.01).unwrap();
        let d = tape.value(q).data();
        assert_eq!(d[0], 100.0);
        assert_eq!(d[1], -100.0);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn concat_and_repeat_shapes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, 2, 1, vec![1.0, 2.0]);
        let b = leaf(&mut tape, 2, 2, vec![3.0, 4.0, 5.0, 6.0]);
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 3., 4., 2., 5., 6.]);
        let r = tape.repeat_cols(b, 2).unwrap();
        assert_eq!(tape.value(r).data(), &[3., 3., 4., 4., 5., 5., 6., 6.]);
    }

    #[test]
    fn deterministic_forward_is_bitwise_stable() {
        let run = || {
            let mut tape = Tape::new();
            let a = tape.leaf(
                Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
                true,
            );
            let b = tape.leaf(
                Tensor::matrix(2, 2, vec![0.5, 0.6, 0.7, 0.8]).unwrap(),
                true,
            );
            let m = tape.matmul(a, b).unwrap();
            let e = tape.exp(m, false).unwrap();
            let s = tape.sum(e).unwrap();
            tape.value(s).data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
