//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar (1×1) variable walks the record in reverse
//! and accumulates gradients for every node that depends on a leaf created
//! with [`Tape::leaf`]. Constants never receive gradients.
//!
//! Everything is single-threaded and allocation order is fixed, so results
//! are bitwise reproducible for identical inputs.

use std::cell::RefCell;

use ndarray::{s, Array2, Axis, Zip};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    AddCol(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    LogSumExpRows(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize, usize),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    /// Max over contiguous groups of rows; stores the winning source row for
    /// every output element (row-major).
    SegmentMax(usize, Vec<usize>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Array2<f64>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros of `shape` if the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Array2<f64> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Array2::zeros(var.shape()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable input; gradients are accumulated for it.
    pub fn leaf(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Fixed input; no gradient flows into it.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Array2<f64>) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    fn unary(&self, a: usize, op: Op, f: impl FnOnce(&Array2<f64>) -> Array2<f64>) -> Var<'_> {
        let value = self.with_value(a, f);
        let rg = self.requires(&[a]);
        self.push(value, op, rg)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op,
        f: impl FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Var<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        let rg = self.requires(&[a, b]);
        self.push(value, op, rg)
    }

    /// Reverse pass from a 1×1 `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.dim(), (1, 1), "backward requires a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let y = &node.value;
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        accumulate(&mut grads, *a, g.dot(&val(*b).t()));
                    }
                    if nodes[*b].requires_grad {
                        accumulate(&mut grads, *b, val(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    accumulate_if(&nodes, &mut grads, *a, || g.clone());
                    accumulate_if(&nodes, &mut grads, *b, || g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate_if(&nodes, &mut grads, *a, || g.clone());
                    accumulate_if(&nodes, &mut grads, *b, || -&g);
                }
                Op::Mul(a, b) => {
                    accumulate_if(&nodes, &mut grads, *a, || &g * val(*b));
                    accumulate_if(&nodes, &mut grads, *b, || &g * val(*a));
                }
                Op::AddRow(a, r) => {
                    accumulate_if(&nodes, &mut grads, *a, || g.clone());
                    accumulate_if(&nodes, &mut grads, *r, || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::AddCol(a, c) => {
                    accumulate_if(&nodes, &mut grads, *a, || g.clone());
                    accumulate_if(&nodes, &mut grads, *c, || g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
                Op::Scale(a, k) => accumulate_if(&nodes, &mut grads, *a, || &g * *k),
                Op::Offset(a) => accumulate_if(&nodes, &mut grads, *a, || g.clone()),
                Op::Tanh(a) => {
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let mut d = g.clone();
                        Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                        d
                    })
                }
                Op::Sigmoid(a) => {
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let mut d = g.clone();
                        Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                        d
                    })
                }
                Op::Relu(a) => {
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let mut d = g.clone();
                        Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                            if x <= 0.0 {
                                *d = 0.0
                            }
                        });
                        d
                    })
                }
                Op::Exp(a) => accumulate_if(&nodes, &mut grads, *a, || &g * y),
                Op::Log(a) => accumulate_if(&nodes, &mut grads, *a, || &g / val(*a)),
                Op::Square(a) => accumulate_if(&nodes, &mut grads, *a, || &g * val(*a) * 2.0),
                Op::Clamp(a, lo, hi) => {
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let mut d = g.clone();
                        Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                            if x < *lo || x > *hi {
                                *d = 0.0
                            }
                        });
                        d
                    })
                }
                Op::Transpose(a) => accumulate_if(&nodes, &mut grads, *a, || g.t().to_owned()),
                Op::Sum(a) => {
                    let dim = val(*a).dim();
                    accumulate_if(&nodes, &mut grads, *a, || Array2::from_elem(dim, g[[0, 0]]))
                }
                Op::Mean(a) => {
                    let dim = val(*a).dim();
                    let n = (dim.0 * dim.1) as f64;
                    accumulate_if(&nodes, &mut grads, *a, || Array2::from_elem(dim, g[[0, 0]] / n))
                }
                Op::RowSum(a) => {
                    let dim = val(*a).dim();
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let mut d = Array2::zeros(dim);
                        for (mut row, gi) in d.rows_mut().into_iter().zip(g.column(0)) {
                            row.fill(*gi);
                        }
                        d
                    })
                }
                Op::LogSumExpRows(a) => {
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let mut p = softmax_rows(val(*a));
                        for (mut row, gi) in p.rows_mut().into_iter().zip(g.column(0)) {
                            row *= *gi;
                        }
                        p
                    })
                }
                Op::SoftmaxRows(a) => {
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let gy = &g * y;
                        let dot = gy.sum_axis(Axis(1));
                        let mut d = gy;
                        for ((mut row, yrow), s) in d.rows_mut().into_iter().zip(y.rows()).zip(dot.iter()) {
                            row.scaled_add(-*s, &yrow);
                        }
                        d
                    })
                }
                Op::LogSoftmaxRows(a) => {
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let gsum = g.sum_axis(Axis(1));
                        let mut d = g.clone();
                        for ((mut row, yrow), s) in d.rows_mut().into_iter().zip(y.rows()).zip(gsum.iter()) {
                            Zip::from(&mut row).and(&yrow).for_each(|d, &ly| *d -= ly.exp() * s);
                        }
                        d
                    })
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        if nodes[p].requires_grad {
                            accumulate(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let dim = val(*a).dim();
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let mut d = Array2::zeros(dim);
                        d.slice_mut(s![.., *start..*end]).assign(&g);
                        d
                    })
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = val(p).nrows();
                        if nodes[p].requires_grad {
                            accumulate(&mut grads, p, g.slice(s![offset..offset + h, ..]).to_owned());
                        }
                        offset += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let dim = val(*a).dim();
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let mut d = Array2::zeros(dim);
                        for (grow, &src) in g.rows().into_iter().zip(idx) {
                            let mut target = d.row_mut(src);
                            target += &grow;
                        }
                        d
                    })
                }
                Op::SegmentMax(a, arg) => {
                    let dim = val(*a).dim();
                    accumulate_if(&nodes, &mut grads, *a, || {
                        let mut d = Array2::zeros(dim);
                        let cols = g.ncols();
                        for (k, gv) in g.iter().enumerate() {
                            d[[arg[k], k % cols]] += *gv;
                        }
                        d
                    })
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: usize, g: Array2<f64>) {
    match &mut grads[id] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_if(
    nodes: &[Node],
    grads: &mut [Option<Array2<f64>>],
    id: usize,
    g: impl FnOnce() -> Array2<f64>,
) {
    if nodes[id].requires_grad {
        accumulate(grads, id, g());
    }
}

/// Row-wise log-sum-exp with max shift.
pub fn logsumexp_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), 1));
    for (i, row) in x.rows().into_iter().enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        out[[i, 0]] = m + s.ln();
    }
    out
}

/// Row-wise softmax with max shift.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Array2<f64> {
        self.tape.with_value(self.id, |v| v.clone())
    }

    pub fn scalar(&self) -> f64 {
        self.tape.with_value(self.id, |v| v[[0, 0]])
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.with_value(self.id, |v| v.dim())
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, rhs.id, Op::MatMul(self.id, rhs.id), |a, b| a.dot(b))
    }

    pub fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, rhs.id, Op::Add(self.id, rhs.id), |a, b| a + b)
    }

    pub fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, rhs.id, Op::Sub(self.id, rhs.id), |a, b| a - b)
    }

    pub fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, rhs.id, Op::Mul(self.id, rhs.id), |a, b| a * b)
    }

    /// Broadcast-add a 1×m row to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, row.id, Op::AddRow(self.id, row.id), |a, r| a + r)
    }

    /// Broadcast-add an n×1 column to every column.
    pub fn add_col(self, col: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, col.id, Op::AddCol(self.id, col.id), |a, c| a + c)
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Scale(self.id, k), |a| a * k)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Offset(self.id), |a| a + c)
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Tanh(self.id), |a| a.mapv(f64::tanh))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sigmoid(self.id), |a| a.mapv(|v| 1.0 / (1.0 + (-v).exp())))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Relu(self.id), |a| a.mapv(|v| v.max(0.0)))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Exp(self.id), |a| a.mapv(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Log(self.id), |a| a.mapv(f64::ln))
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Square(self.id), |a| a.mapv(|v| v * v))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Clamp(self.id, lo, hi), |a| a.mapv(|v| v.clamp(lo, hi)))
    }

    pub fn t(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Transpose(self.id), |a| a.t().to_owned())
    }

    pub fn sum(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sum(self.id), |a| Array2::from_elem((1, 1), a.sum()))
    }

    pub fn mean(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Mean(self.id), |a| {
            Array2::from_elem((1, 1), a.sum() / a.len() as f64)
        })
    }

    /// n×m → n×1.
    pub fn row_sum(self) -> Var<'t> {
        self.tape.unary(self.id, Op::RowSum(self.id), |a| a.sum_axis(Axis(1)).insert_axis(Axis(1)))
    }

    /// n×m → n×1.
    pub fn logsumexp_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::LogSumExpRows(self.id), logsumexp_rows)
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SoftmaxRows(self.id), softmax_rows)
    }

    pub fn log_softmax_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::LogSoftmaxRows(self.id), |a| a - &logsumexp_rows(a))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        self.tape.unary(self.id, Op::SliceCols(self.id, start, end), |a| {
            a.slice(s![.., start..end]).to_owned()
        })
    }

    pub fn gather_rows(self, idx: Vec<usize>) -> Var<'t> {
        let value = self.tape.with_value(self.id, |a| a.select(Axis(0), &idx));
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, Op::GatherRows(self.id, idx), rg)
    }

    /// Column-wise maximum over consecutive groups of `group` rows:
    /// (n·group)×m → n×m. Ties resolve to the first row.
    pub fn segment_max(self, group: usize) -> Var<'t> {
        assert!(group > 0);
        let (value, arg) = self.tape.with_value(self.id, |a| {
            let (rows, cols) = a.dim();
            assert_eq!(rows % group, 0, "segment_max: rows not divisible by group");
            let n = rows / group;
            let mut out = Array2::from_elem((n, cols), f64::NEG_INFINITY);
            let mut arg = vec![0usize; n * cols];
            for seg in 0..n {
                for r in seg * group..(seg + 1) * group {
                    for c in 0..cols {
                        let v = a[[r, c]];
                        if v > out[[seg, c]] {
                            out[[seg, c]] = v;
                            arg[seg * cols + c] = r;
                        }
                    }
                }
            }
            (out, arg)
        });
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, Op::SegmentMax(self.id, arg), rg)
    }
}

pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty());
    let tape = parts[0].tape;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let value = {
        let nodes = tape.nodes.borrow();
        let views: Vec<_> = ids.iter().map(|&i| nodes[i].value.view()).collect();
        ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ")
    };
    let rg = tape.requires(&ids);
    tape.push(value, Op::ConcatCols(ids), rg)
}

pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty());
    let tape = parts[0].tape;
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let value = {
        let nodes = tape.nodes.borrow();
        let views: Vec<_> = ids.iter().map(|&i| nodes[i].value.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ")
    };
    let rg = tape.requires(&ids);
    tape.push(value, Op::ConcatRows(ids), rg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn finite_diff(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            g.as_slice_mut().unwrap()[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn check(build: impl for<'t> Fn(Var<'t>) -> Var<'t>, x: Array2<f64>) {
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let loss = build(v);
        let grads = tape.backward(loss);
        let analytic = grads.get_or_zeros(v);
        let numeric = finite_diff(
            |p| {
                let t = Tape::new();
                build(t.leaf(p.clone())).scalar()
            },
            &x,
        );
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            assert!((a - n).abs() / denom < 1e-5 || (a - n).abs() < 1e-8, "{a} vs {n}");
        }
    }

    fn sample() -> Array2<f64> {
        array![[0.3, -1.2, 0.5], [1.1, 0.2, -0.7]]
    }

    #[test]
    fn elementwise_grads() {
        check(|v| v.tanh().sum(), sample());
        check(|v| v.sigmoid().square().mean(), sample());
        check(|v| v.relu().scale(3.0).sum(), sample());
        check(|v| v.exp().row_sum().ln().sum(), sample());
        check(|v| v.clamp(-0.5, 0.6).square().sum(), sample());
    }

    #[test]
    fn softmax_family_grads() {
        check(|v| v.logsumexp_rows().sum(), sample());
        check(|v| v.log_softmax_rows().slice_cols(1, 2).sum(), sample());
        check(|v| v.softmax_rows().square().sum(), sample());
    }

    #[test]
    fn structural_grads() {
        check(|v| v.matmul(v.t()).sum(), sample());
        check(|v| concat_cols(&[v, v.tanh()]).square().sum(), sample());
        check(|v| concat_rows(&[v, v.square()]).gather_rows(vec![3, 0, 0]).sum(), sample());
        check(|v| v.segment_max(2).square().sum(), sample());
        check(|v| v.slice_cols(0, 1).add_row(v.slice_cols(2, 3).t().slice_cols(0, 1)).sum(), sample());
        check(|v| v.add_col(v.slice_cols(1, 2)).mul(v).sum(), sample());
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(sample());
        let c = tape.constant(sample());
        let loss = a.mul(c).sum();
        let grads = tape.backward(loss);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(a).unwrap(), &sample());
    }

    #[test]
    fn segment_max_picks_group_maximum() {
        let tape = Tape::new();
        let x = tape.constant(array![[1.0, 5.0], [3.0, 2.0], [0.0, -1.0], [-2.0, 4.0]]);
        assert_eq!(x.segment_max(2).value(), array![[3.0, 5.0], [0.0, 4.0]]);
    }
}
