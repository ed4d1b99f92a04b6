use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicUsize, Ordering};

use std::cmp::Ordering as CmpOrdering;
use std::sync::Arc;

use crate::tensor::{matmul_nt, matmul_raw, matmul_tn};
use crate::{AutodiffError, Result, RowGroups, Tensor};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    id: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    AddScalar(usize, usize),
    OuterAdd(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    Transpose(usize),
    LeakyRelu(usize, f64),
    Relu(usize),
    Tanh(usize),
    Log(usize),
    Scale(usize, f64),
    Mul(usize, usize),
    Softmax(usize),
    MaskedRowSoftmax(usize, Vec<bool>),
    SumRows(usize),
    MeanRows(usize),
    MaxRows(usize, Vec<usize>),
    Sum(usize),
    SquaredEuclidean(usize, usize),
    SelectRows(Vec<bool>, usize, usize),
    AggregateRows(usize, Arc<RowGroups>),
    GatherElements(usize, Vec<(usize, usize)>),
    SegmentSoftmax(usize, Arc<[usize]>),
    ScaleRows(usize, usize),
    ClampMin(usize, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records executed operations for a single forward pass.
///
/// A tape is confined to one thread. Values computed by every op are checked
/// for finiteness; a NaN or infinity aborts the forward pass with
/// [`AutodiffError::NonFinite`] naming the op.
#[derive(Debug)]
pub struct Tape {
    id: usize,
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf variable.
#[derive(Debug)]
pub struct Gradients {
    tape: usize,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when the loss
    /// does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable leaf; gradients are reported for it.
    pub fn param(&self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes.borrow()[v.id].value.shape()
    }

    /// Runs `f` against the stored value without cloning it.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.id].value)
    }

    /// Allows [`Tape::backward`] to run again on this tape.
    pub fn reset_backward(&self) {
        self.consumed.set(false);
    }

    fn push_unchecked(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let needs_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].needs_grad)
        };
        let op = if needs_grad { op } else { Op::Leaf };
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(AutodiffError::Detached);
        }
        Ok(v.id)
    }

    fn unary(
        &self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(usize) -> Op,
    ) -> Result<Var> {
        let ia = self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[ia].value;
            Tensor::new(x.rows(), x.cols(), x.data().iter().map(|&v| f(v)).collect())?
        };
        self.push(name, value, op(ia), &[ia])
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[ia].value, &nodes[ib].value);
            if x.cols() != y.rows() {
                return Err(mismatch("matmul", x, y));
            }
            matmul_raw(x, y)
        };
        self.push("matmul", value, Op::MatMul(ia, ib), &[ia, ib])
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[ia].value, &nodes[ib].value);
            if x.shape() != y.shape() {
                return Err(mismatch("add", x, y));
            }
            let mut out = x.clone();
            out.add_assign(y);
            out
        };
        self.push("add", value, Op::Add(ia, ib), &[ia, ib])
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[ia].value, &nodes[ib].value);
            if y.rows() != 1 || y.cols() != x.cols() {
                return Err(mismatch("add_row", x, y));
            }
            let mut out = x.clone();
            let cols = x.cols();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += y.data()[i % cols];
            }
            out
        };
        self.push("add_row", value, Op::AddRow(ia, ib), &[ia, ib])
    }

    /// Adds the `1 x 1` scalar `s` to every entry of `a`.
    pub fn add_scalar(&self, a: Var, s: Var) -> Result<Var> {
        let (ia, is) = (self.check(a)?, self.check(s)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[ia].value, &nodes[is].value);
            if y.shape() != [1, 1] {
                return Err(mismatch("add_scalar", x, y));
            }
            let s = y.item();
            Tensor::new(x.rows(), x.cols(), x.data().iter().map(|v| v + s).collect())?
        };
        self.push("add_scalar", value, Op::AddScalar(ia, is), &[ia, is])
    }

    /// `out[i][j] = col[i] + row[j]` for an `n x 1` column and `1 x m` row.
    pub fn outer_add(&self, col: Var, row: Var) -> Result<Var> {
        let (ic, ir) = (self.check(col)?, self.check(row)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (c, r) = (&nodes[ic].value, &nodes[ir].value);
            if c.cols() != 1 || r.rows() != 1 {
                return Err(mismatch("outer_add", c, r));
            }
            let (n, m) = (c.rows(), r.cols());
            let mut data = Vec::with_capacity(n * m);
            for i in 0..n {
                for j in 0..m {
                    data.push(c.data()[i] + r.data()[j]);
                }
            }
            Tensor::new(n, m, data)?
        };
        self.push("outer_add", value, Op::OuterAdd(ic, ir), &[ic, ir])
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(AutodiffError::Invalid {
                op: "concat_cols",
                msg: "no inputs".into(),
            });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[ids[0]].value.rows();
            let mut cols = 0;
            for &i in &ids {
                let t = &nodes[i].value;
                if t.rows() != rows {
                    return Err(mismatch("concat_cols", &nodes[ids[0]].value, t));
                }
                cols += t.cols();
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &i in &ids {
                    data.extend_from_slice(nodes[i].value.row_slice(r));
                }
            }
            Tensor::new(rows, cols, data)?
        };
        let inputs = ids.clone();
        self.push("concat_cols", value, Op::ConcatCols(ids), &inputs)
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(AutodiffError::Invalid {
                op: "concat_rows",
                msg: "no inputs".into(),
            });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let cols = nodes[ids[0]].value.cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for &i in &ids {
                let t = &nodes[i].value;
                if t.cols() != cols {
                    return Err(mismatch("concat_rows", &nodes[ids[0]].value, t));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::new(rows, cols, data)?
        };
        let inputs = ids.clone();
        self.push("concat_rows", value, Op::ConcatRows(ids), &inputs)
    }

    /// Selects rows of `a` by index; indices may repeat.
    pub fn gather_rows(&self, a: Var, index: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[ia].value;
            let mut data = Vec::with_capacity(index.len() * x.cols());
            for &r in index {
                if r >= x.rows() {
                    return Err(AutodiffError::Invalid {
                        op: "gather_rows",
                        msg: format!("row {r} out of bounds for {} rows", x.rows()),
                    });
                }
                data.extend_from_slice(x.row_slice(r));
            }
            Tensor::new(index.len(), x.cols(), data)?
        };
        self.push("gather_rows", value, Op::GatherRows(ia, index.to_vec()), &[ia])
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.nodes.borrow()[ia].value.transpose();
        self.push("transpose", value, Op::Transpose(ia), &[ia])
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Result<Var> {
        self.unary("leaky_relu", a, |x| leaky(x, slope), |i| Op::LeakyRelu(i, slope))
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu)
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh)
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log)
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn scale(&self, a: Var, k: f64) -> Result<Var> {
        self.unary("scale", a, |x| k * x, |i| Op::Scale(i, k))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[ia].value, &nodes[ib].value);
            if x.shape() != y.shape() {
                return Err(mismatch("mul", x, y));
            }
            Tensor::new(
                x.rows(),
                x.cols(),
                x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect(),
            )?
        };
        self.push("mul", value, Op::Mul(ia, ib), &[ia, ib])
    }

    /// Softmax over every entry of `a` (treated as one list).
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[ia].value;
            if x.is_empty() {
                return Err(AutodiffError::Invalid {
                    op: "softmax",
                    msg: "empty input".into(),
                });
            }
            Tensor::new(x.rows(), x.cols(), softmax_slice(x.data()))?
        };
        self.push("softmax", value, Op::Softmax(ia), &[ia])
    }

    /// Row-wise softmax restricted to entries where `mask` is true. Rows with
    /// no admitted entry come out as all zeros.
    pub fn masked_row_softmax(&self, a: Var, mask: &[bool]) -> Result<Var> {
        let ia = self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[ia].value;
            if mask.len() != x.len() {
                return Err(AutodiffError::Invalid {
                    op: "masked_row_softmax",
                    msg: format!("mask has {} entries for shape {:?}", mask.len(), x.shape()),
                });
            }
            let cols = x.cols();
            let mut out = vec![0.0; x.len()];
            for r in 0..x.rows() {
                let row = x.row_slice(r);
                let m = &mask[r * cols..(r + 1) * cols];
                let max = row
                    .iter()
                    .zip(m)
                    .filter(|(_, &keep)| keep)
                    .map(|(v, _)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut total = 0.0;
                for c in 0..cols {
                    if m[c] {
                        let e = (row[c] - max).exp();
                        out[r * cols + c] = e;
                        total += e;
                    }
                }
                for c in 0..cols {
                    out[r * cols + c] /= total;
                }
            }
            Tensor::new(x.rows(), cols, out)?
        };
        self.push(
            "masked_row_softmax",
            value,
            Op::MaskedRowSoftmax(ia, mask.to_vec()),
            &[ia],
        )
    }

    /// Sum over rows, producing a `1 x cols` row.
    pub fn sum_rows(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = Tensor::row(column_sums(&self.nodes.borrow()[ia].value));
        self.push("sum_rows", value, Op::SumRows(ia), &[ia])
    }

    pub fn mean_rows(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[ia].value;
            if x.rows() == 0 {
                return Err(AutodiffError::Invalid {
                    op: "mean_rows",
                    msg: "no rows".into(),
                });
            }
            let n = x.rows() as f64;
            Tensor::row(column_sums(x).into_iter().map(|s| s / n).collect())
        };
        self.push("mean_rows", value, Op::MeanRows(ia), &[ia])
    }

    /// Column-wise max over rows; ties resolve to the first row.
    pub fn max_rows(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let (value, argmax) = {
            let nodes = self.nodes.borrow();
            let x = &nodes[ia].value;
            if x.rows() == 0 {
                return Err(AutodiffError::Invalid {
                    op: "max_rows",
                    msg: "no rows".into(),
                });
            }
            let mut best = x.row_slice(0).to_vec();
            let mut argmax = vec![0; x.cols()];
            for r in 1..x.rows() {
                for (c, v) in x.row_slice(r).iter().enumerate() {
                    if *v > best[c] {
                        best[c] = *v;
                        argmax[c] = r;
                    }
                }
            }
            (Tensor::row(best), argmax)
        };
        self.push("max_rows", value, Op::MaxRows(ia, argmax), &[ia])
    }

    /// Sum of every entry, as a scalar.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = Tensor::scalar(self.nodes.borrow()[ia].value.data().iter().sum());
        self.push("sum", value, Op::Sum(ia), &[ia])
    }

    /// `sum((a - b)^2)` as a scalar.
    pub fn squared_euclidean(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[ia].value, &nodes[ib].value);
            if x.shape() != y.shape() {
                return Err(mismatch("squared_euclidean", x, y));
            }
            Tensor::scalar(
                x.data()
                    .iter()
                    .zip(y.data())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum(),
            )
        };
        self.push(
            "squared_euclidean",
            value,
            Op::SquaredEuclidean(ia, ib),
            &[ia, ib],
        )
    }

    /// Row `i` of the result comes from `a` when `take_a[i]`, else from `b`.
    pub fn select_rows(&self, take_a: &[bool], a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[ia].value, &nodes[ib].value);
            if x.shape() != y.shape() || take_a.len() != x.rows() {
                return Err(mismatch("select_rows", x, y));
            }
            let mut data = Vec::with_capacity(x.len());
            for (r, &from_a) in take_a.iter().enumerate() {
                data.extend_from_slice(if from_a { x.row_slice(r) } else { y.row_slice(r) });
            }
            Tensor::new(x.rows(), x.cols(), data)?
        };
        self.push(
            "select_rows",
            value,
            Op::SelectRows(take_a.to_vec(), ia, ib),
            &[ia, ib],
        )
    }

    /// Row `g` of the result is `sum w * a[row]` over the entries of group
    /// `g`; an empty group yields a zero row.
    ///
    /// Each group's terms are summed in ascending value order, so the result
    /// depends only on the multiset of weighted rows and not on the order in
    /// which members were listed.
    pub fn aggregate_rows(&self, a: Var, groups: &Arc<RowGroups>) -> Result<Var> {
        let ia = self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[ia].value;
            if let Some(r) = groups.max_row().filter(|&r| r >= x.rows()) {
                return Err(AutodiffError::Invalid {
                    op: "aggregate_rows",
                    msg: format!("row {r} out of bounds for {} rows", x.rows()),
                });
            }
            let cols = x.cols();
            let mut data = vec![0.0; groups.len() * cols];
            let mut order: Vec<usize> = Vec::new();
            for g in 0..groups.len() {
                let entries = groups.group(g);
                order.clear();
                order.extend(0..entries.len());
                order.sort_by(|&p, &q| {
                    let (rp, wp) = entries[p];
                    let (rq, wq) = entries[q];
                    let (xp, xq) = (x.row_slice(rp), x.row_slice(rq));
                    (0..cols)
                        .map(|c| (wp * xp[c]).total_cmp(&(wq * xq[c])))
                        .find(|o| *o != CmpOrdering::Equal)
                        .unwrap_or(CmpOrdering::Equal)
                });
                let out = &mut data[g * cols..(g + 1) * cols];
                for &k in &order {
                    let (r, w) = entries[k];
                    for (o, v) in out.iter_mut().zip(x.row_slice(r)) {
                        *o += w * v;
                    }
                }
            }
            Tensor::new(groups.len(), cols, data)?
        };
        self.push(
            "aggregate_rows",
            value,
            Op::AggregateRows(ia, Arc::clone(groups)),
            &[ia],
        )
    }

    /// Picks entries `(row, col)` of `a` into an `n x 1` column.
    pub fn gather_elements(&self, a: Var, index: &[(usize, usize)]) -> Result<Var> {
        let ia = self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[ia].value;
            let mut data = Vec::with_capacity(index.len());
            for &(r, c) in index {
                if r >= x.rows() || c >= x.cols() {
                    return Err(AutodiffError::Invalid {
                        op: "gather_elements",
                        msg: format!("({r}, {c}) out of bounds for {:?}", x.shape()),
                    });
                }
                data.push(x.get(r, c));
            }
            Tensor::column(data)
        };
        self.push(
            "gather_elements",
            value,
            Op::GatherElements(ia, index.to_vec()),
            &[ia],
        )
    }

    /// Softmax within contiguous segments of an `n x 1` column; segment `s`
    /// spans rows `offsets[s]..offsets[s + 1]`. Normalizers are summed in
    /// ascending order.
    pub fn segment_softmax(&self, a: Var, offsets: &Arc<[usize]>) -> Result<Var> {
        let ia = self.check(a)?;
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[ia].value;
            let valid = x.cols() == 1
                && offsets.first() == Some(&0)
                && offsets.last() == Some(&x.rows())
                && offsets.windows(2).all(|w| w[0] <= w[1]);
            if !valid {
                return Err(AutodiffError::Invalid {
                    op: "segment_softmax",
                    msg: format!("segments do not tile a column of shape {:?}", x.shape()),
                });
            }
            let mut data = Vec::with_capacity(x.rows());
            for w in offsets.windows(2) {
                data.extend(softmax_slice(&x.data()[w[0]..w[1]]));
            }
            Tensor::column(data)
        };
        self.push(
            "segment_softmax",
            value,
            Op::SegmentSoftmax(ia, Arc::clone(offsets)),
            &[ia],
        )
    }

    /// Multiplies row `i` of `a` by `col[i]`.
    pub fn scale_rows(&self, a: Var, col: Var) -> Result<Var> {
        let (ia, ic) = (self.check(a)?, self.check(col)?);
        let value = {
            let nodes = self.nodes.borrow();
            let (x, s) = (&nodes[ia].value, &nodes[ic].value);
            if s.cols() != 1 || s.rows() != x.rows() {
                return Err(mismatch("scale_rows", x, s));
            }
            let cols = x.cols();
            let mut data = x.data().to_vec();
            for (r, chunk) in data.chunks_mut(cols.max(1)).enumerate().take(x.rows()) {
                let k = s.data()[r];
                chunk.iter_mut().for_each(|v| *v *= k);
            }
            Tensor::new(x.rows(), cols, data)?
        };
        self.push("scale_rows", value, Op::ScaleRows(ia, ic), &[ia, ic])
    }

    /// Elementwise `max(a, lo)`; entries at or below `lo` pass no gradient.
    pub fn clamp_min(&self, a: Var, lo: f64) -> Result<Var> {
        self.unary("clamp_min", a, |x| x.max(lo), |i| Op::ClampMin(i, lo))
    }

    /// Propagates `d loss / d node` back through the tape.
    ///
    /// Fails if `loss` is not `1 x 1`, belongs to another tape, or backward
    /// already ran since the last [`Tape::reset_backward`].
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        if self.consumed.get() {
            return Err(AutodiffError::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[il].value.shape();
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[il] = Some(Tensor::scalar(1.0));

        for id in (0..=il).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            let mut acc = |target: usize, contribution: Tensor| {
                if !nodes[target].needs_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            };
            let val = |i: usize| &nodes[i].value;
            let wants = |i: usize| nodes[i].needs_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        acc(*a, matmul_nt(&g, val(*b)));
                    }
                    if wants(*b) {
                        acc(*b, matmul_tn(val(*a), &g));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(a, b) => {
                    acc(*b, Tensor::row(column_sums(&g)));
                    acc(*a, g);
                }
                Op::AddScalar(a, s) => {
                    acc(*s, Tensor::scalar(g.data().iter().sum()));
                    acc(*a, g);
                }
                Op::OuterAdd(c, r) => {
                    let row_sums = (0..g.rows()).map(|i| g.row_slice(i).iter().sum()).collect();
                    acc(*c, Tensor::column(row_sums));
                    acc(*r, Tensor::row(column_sums(&g)));
                }
                Op::ConcatCols(ids) => {
                    let mut offset = 0;
                    for &i in ids {
                        let w = val(i).cols();
                        if wants(i) {
                            let mut part = Vec::with_capacity(g.rows() * w);
                            for r in 0..g.rows() {
                                part.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                            }
                            acc(i, Tensor::new(g.rows(), w, part).expect("shape"));
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(ids) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &i in ids {
                        let h = val(i).rows();
                        if wants(i) {
                            let part = g.data()[offset * cols..(offset + h) * cols].to_vec();
                            acc(i, Tensor::new(h, cols, part).expect("shape"));
                        }
                        offset += h;
                    }
                }
                Op::GatherRows(a, index) => {
                    let x = val(*a);
                    let mut out = Tensor::zeros(x.rows(), x.cols());
                    let cols = x.cols();
                    for (k, &r) in index.iter().enumerate() {
                        let src = g.row_slice(k);
                        let dst = &mut out.data_mut()[r * cols..(r + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    acc(*a, out);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::LeakyRelu(a, slope) => {
                    acc(*a, zip_map(&g, val(*a), |gv, x| if x > 0.0 { gv } else { slope * gv }));
                }
                Op::Relu(a) => acc(*a, zip_map(&g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
                Op::Tanh(a) => {
                    acc(*a, zip_map(&g, &node.value, |gv, y| gv * (1.0 - y * y)));
                }
                Op::Log(a) => acc(*a, zip_map(&g, val(*a), |gv, x| gv / x)),
                Op::Scale(a, k) => acc(*a, map(&g, |gv| k * gv)),
                Op::Mul(a, b) => {
                    if wants(*a) {
                        acc(*a, zip_map(&g, val(*b), |gv, y| gv * y));
                    }
                    if wants(*b) {
                        acc(*b, zip_map(&g, val(*a), |gv, x| gv * x));
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let dot: f64 = g.data().iter().zip(y).map(|(gv, yv)| gv * yv).sum();
                    acc(*a, zip_map(&g, &node.value, |gv, yv| yv * (gv - dot)));
                }
                Op::MaskedRowSoftmax(a, mask) => {
                    let cols = g.cols();
                    let mut out = Tensor::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        let y = node.value.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: f64 = gr.iter().zip(y).map(|(gv, yv)| gv * yv).sum();
                        for c in 0..cols {
                            if mask[r * cols + c] {
                                out.data_mut()[r * cols + c] = y[c] * (gr[c] - dot);
                            }
                        }
                    }
                    acc(*a, out);
                }
                Op::SumRows(a) | Op::MeanRows(a) => {
                    let x = val(*a);
                    let k = if matches!(node.op, Op::MeanRows(_)) {
                        1.0 / x.rows() as f64
                    } else {
                        1.0
                    };
                    let mut data = Vec::with_capacity(x.len());
                    for _ in 0..x.rows() {
                        data.extend(g.data().iter().map(|gv| k * gv));
                    }
                    acc(*a, Tensor::new(x.rows(), x.cols(), data).expect("shape"));
                }
                Op::MaxRows(a, argmax) => {
                    let x = val(*a);
                    let mut out = Tensor::zeros(x.rows(), x.cols());
                    let cols = x.cols();
                    for (c, &r) in argmax.iter().enumerate() {
                        out.data_mut()[r * cols + c] += g.data()[c];
                    }
                    acc(*a, out);
                }
                Op::Sum(a) => {
                    let x = val(*a);
                    let gv = g.item();
                    acc(*a, Tensor::new(x.rows(), x.cols(), vec![gv; x.len()]).expect("shape"));
                }
                Op::SquaredEuclidean(a, b) => {
                    let gv = g.item();
                    let diff = zip_map(val(*a), val(*b), |p, q| 2.0 * gv * (p - q));
                    if wants(*b) {
                        acc(*b, map(&diff, |d| -d));
                    }
                    acc(*a, diff);
                }
                Op::SelectRows(take_a, a, b) => {
                    let cols = g.cols();
                    let mut ga = Tensor::zeros(g.rows(), cols);
                    let mut gb = Tensor::zeros(g.rows(), cols);
                    for (r, &from_a) in take_a.iter().enumerate() {
                        let dst = if from_a { &mut ga } else { &mut gb };
                        dst.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.row_slice(r));
                    }
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::AggregateRows(a, groups) => {
                    let x = val(*a);
                    let cols = x.cols();
                    let mut out = Tensor::zeros(x.rows(), cols);
                    for grp in 0..groups.len() {
                        let src = g.row_slice(grp);
                        for &(r, w) in groups.group(grp) {
                            let dst = &mut out.data_mut()[r * cols..(r + 1) * cols];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += w * s;
                            }
                        }
                    }
                    acc(*a, out);
                }
                Op::GatherElements(a, index) => {
                    let x = val(*a);
                    let cols = x.cols();
                    let mut out = Tensor::zeros(x.rows(), cols);
                    for (k, &(r, c)) in index.iter().enumerate() {
                        out.data_mut()[r * cols + c] += g.data()[k];
                    }
                    acc(*a, out);
                }
                Op::SegmentSoftmax(a, offsets) => {
                    let y = node.value.data();
                    let mut out = vec![0.0; y.len()];
                    for w in offsets.windows(2) {
                        let (ys, gs) = (&y[w[0]..w[1]], &g.data()[w[0]..w[1]]);
                        let dot: f64 = gs.iter().zip(ys).map(|(gv, yv)| gv * yv).sum();
                        for (k, (gv, yv)) in gs.iter().zip(ys).enumerate() {
                            out[w[0] + k] = yv * (gv - dot);
                        }
                    }
                    acc(*a, Tensor::column(out));
                }
                Op::ScaleRows(a, c) => {
                    let (x, s) = (val(*a), val(*c));
                    let cols = x.cols();
                    if wants(*c) {
                        let col = (0..x.rows())
                            .map(|r| g.row_slice(r).iter().zip(x.row_slice(r)).map(|(p, q)| p * q).sum())
                            .collect();
                        acc(*c, Tensor::column(col));
                    }
                    if wants(*a) {
                        let mut ga = g.clone();
                        for r in 0..x.rows() {
                            let k = s.data()[r];
                            ga.data_mut()[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v *= k);
                        }
                        acc(*a, ga);
                    }
                }
                Op::ClampMin(a, lo) => {
                    acc(*a, zip_map(&g, val(*a), |gv, x| if x > *lo { gv } else { 0.0 }));
                }
            }
        }

        // Only leaves keep their gradients.
        for (id, slot) in grads.iter_mut().enumerate() {
            if !matches!(nodes[id].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.rows(), t.cols(), t.data().iter().map(|&v| f(v)).collect()).expect("shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("shape")
}

fn column_sums(t: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
            *o += v;
        }
    }
    out
}

/// Max-subtracted softmax of a flat list.
pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let mut sorted = exps.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
