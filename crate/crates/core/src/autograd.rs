//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on the tape is a 2-D row-major matrix. Scalars are `1 × 1`,
//! row vectors are `1 × c`. A [`Tape`] records operations in creation order;
//! [`Var::backward`] walks it in reverse and returns a [`Grads`] table.
//!
//! Constants are leaves that never receive gradient. Parameters are leaves
//! created with [`Tape::param`].

use std::cell::RefCell;

use ndarray::{s, Array2, Axis};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Sigmoid(usize),
    Gelu(usize),
    Relu(usize),
    Abs(usize),
    Sqrt(usize),
    Powf(usize, f64),
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    SumAll(usize),
    SumRows(usize),
    SumCols(usize),
    NormalizeRows(usize, f64),
    LayerNormRows(usize, f64),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Reshape(usize),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Operation recorder. Values are stored once and referenced by index.
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
        let (r, c) = self.shape();
        write!(f, "Var#{}[{}x{}]", self.id, r, c)
    }
}

/// Gradients keyed by tape position.
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var<'_>) -> Option<&Mat> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the right shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Mat {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = v.shape();
                Mat::zeros((r, c))
            }
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub(crate) fn log_softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn row_norms(x: &Mat, eps: f64) -> Vec<f64> {
    x.rows().into_iter().map(|r| r.dot(&r).sqrt().max(eps)).collect()
}

fn reshape(x: &Mat, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_vec((rows, cols), x.iter().cloned().collect()).expect("reshape preserves element count")
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

    fn push(&self, value: Mat, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Mat) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&self, value: Mat) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Mat::from_elem((1, 1), value))
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.id].value.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch")
        };
        let needs = self.any_needs(parts);
        self.push(value, Op::ConcatRows(parts.iter().map(|p| p.id).collect()), needs)
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.id].value.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch")
        };
        let needs = self.any_needs(parts);
        self.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), needs)
    }

    /// Sum of a non-empty list of same-shape values.
    pub fn sum<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        let mut acc = parts[0];
        for p in &parts[1..] {
            acc = acc.add(*p);
        }
        acc
    }

    fn any_needs(&self, parts: &[Var<'_>]) -> bool {
        let nodes = self.nodes.borrow();
        parts.iter().any(|p| nodes[p.id].needs_grad)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Mat {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    /// The single element of a `1 × 1` value.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].value;
        assert_eq!(v.dim(), (1, 1), "item() on non-scalar");
        v[[0, 0]]
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    /// Copy of this value as a new constant (gradient stops here).
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn unary(self, op: Op, f: impl FnOnce(&Mat) -> Mat) -> Var<'t> {
        let (value, needs) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (f(&n.value), n.needs_grad)
        };
        self.tape.push(value, op, needs)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl FnOnce(&Mat, &Mat) -> Mat) -> Var<'t> {
        let (value, needs) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let b = &nodes[other.id];
            (f(&a.value, &b.value), a.needs_grad || b.needs_grad)
        };
        self.tape.push(value, op, needs)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| {
            assert_eq!(a.ncols(), b.nrows(), "matmul: inner dims differ");
            a.dot(b)
        })
    }

    pub fn t(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), |a| a.t().as_standard_layout().into_owned())
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| {
            assert_eq!(a.dim(), b.dim(), "add: shape mismatch");
            a + b
        })
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| {
            assert_eq!(a.dim(), b.dim(), "sub: shape mismatch");
            a - b
        })
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| {
            assert_eq!(a.dim(), b.dim(), "mul: shape mismatch");
            a * b
        })
    }

    /// `self [r×c] + row [1×c]` broadcast over rows.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, b| {
            assert_eq!((1, a.ncols()), b.dim(), "add_row: shape mismatch");
            a + b
        })
    }

    /// `self [r×c] * col [r×1]` broadcast over columns.
    pub fn mul_col(self, col: Var<'t>) -> Var<'t> {
        self.binary(col, Op::MulCol(self.id, col.id), |a, b| {
            assert_eq!((a.nrows(), 1), b.dim(), "mul_col: shape mismatch");
            a * b
        })
    }

    /// `self [r×c] * row [1×c]` broadcast over rows.
    pub fn mul_row(self, row: Var<'t>) -> Var<'t> {
        self.binary(row, Op::MulRow(self.id, row.id), |a, b| {
            assert_eq!((1, a.ncols()), b.dim(), "mul_row: shape mismatch");
            a * b
        })
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, k), |a| a * k)
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |a| a + k)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| a.mapv(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), |a| a.mapv(f64::ln))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |a| a.mapv(f64::tanh))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |a| a.mapv(sigmoid))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'t> {
        self.unary(Op::Gelu(self.id), |a| a.mapv(gelu))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| a.mapv(|v| v.max(0.0)))
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), |a| a.mapv(f64::abs))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), |a| a.mapv(f64::sqrt))
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(Op::Powf(self.id, p), |a| a.mapv(|v| v.powf(p)))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |a| a.mapv(|v| v.clamp(lo, hi)))
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), softmax_rows)
    }

    pub fn log_softmax_rows(self) -> Var<'t> {
        self.unary(Op::LogSoftmaxRows(self.id), log_softmax_rows)
    }

    pub fn sum_all(self) -> Var<'t> {
        self.unary(Op::SumAll(self.id), |a| Mat::from_elem((1, 1), a.sum()))
    }

    pub fn mean_all(self) -> Var<'t> {
        let (r, c) = self.shape();
        self.sum_all().scale(1.0 / (r * c) as f64)
    }

    /// Row sums as an `r × 1` column.
    pub fn sum_rows(self) -> Var<'t> {
        self.unary(Op::SumRows(self.id), |a| a.sum_axis(Axis(1)).insert_axis(Axis(1)))
    }

    /// Column sums as a `1 × c` row.
    pub fn sum_cols(self) -> Var<'t> {
        self.unary(Op::SumCols(self.id), |a| a.sum_axis(Axis(0)).insert_axis(Axis(0)))
    }

    pub fn mean_cols(self) -> Var<'t> {
        let r = self.shape().0;
        self.sum_cols().scale(1.0 / r as f64)
    }

    /// Each row divided by `max(‖row‖₂, eps)`.
    pub fn normalize_rows(self, eps: f64) -> Var<'t> {
        self.unary(Op::NormalizeRows(self.id, eps), |a| {
            let norms = row_norms(a, eps);
            let mut out = a.clone();
            for (mut row, n) in out.rows_mut().into_iter().zip(norms) {
                row.mapv_inplace(|v| v / n);
            }
            out
        })
    }

    /// Per-row standardisation `(x − mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(self, eps: f64) -> Var<'t> {
        self.unary(Op::LayerNormRows(self.id, eps), |a| {
            let mut out = a.clone();
            for mut row in out.rows_mut() {
                let n = row.len() as f64;
                let mean = row.sum() / n;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let inv = 1.0 / (var + eps).sqrt();
                row.mapv_inplace(|v| (v - mean) * inv);
            }
            out
        })
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Var<'t> {
        self.unary(Op::SliceRows(self.id, start), |a| {
            a.slice(s![start..start + len, ..]).to_owned()
        })
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        self.unary(Op::SliceCols(self.id, start), |a| {
            a.slice(s![.., start..start + len]).as_standard_layout().into_owned()
        })
    }

    /// Row-major reshape.
    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        self.unary(Op::Reshape(self.id), |a| {
            assert_eq!(a.len(), rows * cols, "reshape: element count differs");
            reshape(a, rows, cols)
        })
    }

    /// Reverse pass from a scalar output (seed gradient 1).
    pub fn backward(self) -> Grads {
        assert_eq!(self.shape(), (1, 1), "backward() needs a scalar output");
        self.backward_with(Mat::from_elem((1, 1), 1.0))
    }

    pub fn backward_with(self, seed: Mat) -> Grads {
        let nodes = self.tape.nodes.borrow();
        let mut grads: Vec<Option<Mat>> = vec![None; nodes.len()];
        grads[self.id] = Some(seed);

        fn acc(grads: &mut [Option<Mat>], nodes: &[Node], id: usize, g: Mat) {
            if !nodes[id].needs_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=self.id).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out = &nodes[id].value;
            match &nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    if nodes[*a].needs_grad {
                        acc(&mut grads, &nodes, *a, g.dot(&bv.t()));
                    }
                    if nodes[*b].needs_grad {
                        acc(&mut grads, &nodes, *b, av.t().dot(&g));
                    }
                }
                Op::Transpose(a) => acc(&mut grads, &nodes, *a, g.t().as_standard_layout().into_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *a, g.clone());
                    acc(&mut grads, &nodes, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &nodes, *b, -&g);
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &nodes[*b].value;
                    let gb = &g * &nodes[*a].value;
                    acc(&mut grads, &nodes, *a, ga);
                    acc(&mut grads, &nodes, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, &nodes, *b, gb);
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::MulCol(a, b) => {
                    let ga = &g * &nodes[*b].value;
                    let gb = (&g * &nodes[*a].value).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, &nodes, *a, ga);
                    acc(&mut grads, &nodes, *b, gb);
                }
                Op::MulRow(a, b) => {
                    let ga = &g * &nodes[*b].value;
                    let gb = (&g * &nodes[*a].value).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, &nodes, *a, ga);
                    acc(&mut grads, &nodes, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut grads, &nodes, *a, g * *k),
                Op::AddScalar(a) => acc(&mut grads, &nodes, *a, g),
                Op::Exp(a) => acc(&mut grads, &nodes, *a, g * out),
                Op::Ln(a) => {
                    let x = &nodes[*a].value;
                    acc(&mut grads, &nodes, *a, g / x)
                }
                Op::Tanh(a) => acc(&mut grads, &nodes, *a, g * &out.mapv(|y| 1.0 - y * y)),
                Op::Sigmoid(a) => acc(&mut grads, &nodes, *a, g * &out.mapv(|y| y * (1.0 - y))),
                Op::Gelu(a) => {
                    let d = nodes[*a].value.mapv(gelu_grad);
                    acc(&mut grads, &nodes, *a, g * &d)
                }
                Op::Relu(a) => {
                    let d = nodes[*a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, &nodes, *a, g * &d)
                }
                Op::Abs(a) => {
                    let d = nodes[*a].value.mapv(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, &nodes, *a, g * &d)
                }
                Op::Sqrt(a) => acc(&mut grads, &nodes, *a, g * &out.mapv(|y| 0.5 / y)),
                Op::Powf(a, p) => {
                    let d = nodes[*a]
                        .value
                        .mapv(|x| if *p == 0.0 { 0.0 } else { p * x.powf(p - 1.0) });
                    acc(&mut grads, &nodes, *a, g * &d)
                }
                Op::Clamp(a, lo, hi) => {
                    let d = nodes[*a].value.mapv(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 });
                    acc(&mut grads, &nodes, *a, g * &d)
                }
                Op::SoftmaxRows(a) => {
                    let dot = (&g * out).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = out * &(&g - &dot);
                    acc(&mut grads, &nodes, *a, ga)
                }
                Op::LogSoftmaxRows(a) => {
                    let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let sm = out.mapv(f64::exp);
                    let ga = &g - &(&sm * &gsum);
                    acc(&mut grads, &nodes, *a, ga)
                }
                Op::SumAll(a) => {
                    let x = &nodes[*a].value;
                    acc(&mut grads, &nodes, *a, Mat::from_elem(x.dim(), g[[0, 0]]))
                }
                Op::SumRows(a) => {
                    let x = &nodes[*a].value;
                    let ga = Mat::from_shape_fn(x.dim(), |(i, _)| g[[i, 0]]);
                    acc(&mut grads, &nodes, *a, ga)
                }
                Op::SumCols(a) => {
                    let x = &nodes[*a].value;
                    let ga = Mat::from_shape_fn(x.dim(), |(_, j)| g[[0, j]]);
                    acc(&mut grads, &nodes, *a, ga)
                }
                Op::NormalizeRows(a, eps) => {
                    let x = &nodes[*a].value;
                    let norms = row_norms(x, *eps);
                    let mut ga = g.clone();
                    for (i, mut row) in ga.rows_mut().into_iter().enumerate() {
                        let raw = x.row(i).dot(&x.row(i)).sqrt();
                        let n = norms[i];
                        if raw < *eps {
                            // clamped branch: y = x / eps
                            row.mapv_inplace(|v| v / n);
                        } else {
                            let y = out.row(i);
                            let proj = y.dot(&g.row(i));
                            for (k, v) in row.iter_mut().enumerate() {
                                *v = (*v - y[k] * proj) / n;
                            }
                        }
                    }
                    acc(&mut grads, &nodes, *a, ga)
                }
                Op::LayerNormRows(a, eps) => {
                    let x = &nodes[*a].value;
                    let mut ga = g.clone();
                    for (i, mut row) in ga.rows_mut().into_iter().enumerate() {
                        let xr = x.row(i);
                        let n = xr.len() as f64;
                        let mean = xr.sum() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let y = out.row(i);
                        let gr = g.row(i);
                        let gmean = gr.sum() / n;
                        let gy = gr.dot(&y) / n;
                        for (k, v) in row.iter_mut().enumerate() {
                            *v = inv * (gr[k] - gmean - y[k] * gy);
                        }
                    }
                    acc(&mut grads, &nodes, *a, ga)
                }
                Op::ConcatRows(ids) => {
                    let mut start = 0;
                    for pid in ids {
                        let r = nodes[*pid].value.nrows();
                        let part = g.slice(s![start..start + r, ..]).to_owned();
                        acc(&mut grads, &nodes, *pid, part);
                        start += r;
                    }
                }
                Op::ConcatCols(ids) => {
                    let mut start = 0;
                    for pid in ids {
                        let c = nodes[*pid].value.ncols();
                        let part = g.slice(s![.., start..start + c]).as_standard_layout().into_owned();
                        acc(&mut grads, &nodes, *pid, part);
                        start += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let x = &nodes[*a].value;
                    let mut ga = Mat::zeros(x.dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, &nodes, *a, ga)
                }
                Op::SliceCols(a, start) => {
                    let x = &nodes[*a].value;
                    let mut ga = Mat::zeros(x.dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, &nodes, *a, ga)
                }
                Op::Reshape(a) => {
                    let (r, c) = nodes[*a].value.dim();
                    acc(&mut grads, &nodes, *a, reshape(&g, r, c))
                }
            }
        }
        Grads { grads }
    }
}
