use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::dense::{gelu_grad_scalar, gelu_scalar, normalize_row, sigmoid_scalar, softmax_in_place, DenseTensor};
use super::real::{gemm, Real, View, ViewMut};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

/// One block of a block-diagonal attention pattern: query rows `q` attend to
/// key/value rows `kv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnGroup {
    pub q: Range<usize>,
    pub kv: Range<usize>,
}

impl AttnGroup {
    pub fn square(rows: Range<usize>) -> Self {
        AttnGroup { q: rows.clone(), kv: rows }
    }
}

enum Op<T> {
    Leaf,
    Const,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    NormalizeRows { x: Var, inv_std: Vec<T> },
    Gelu(Var),
    Silu(Var),
    Sigmoid(Var),
    Exp(Var),
    Tanh(Var),
    Clamp { x: Var, lo: T, hi: T },
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, idx: Arc<[Option<u32>]> },
    Reshape(Var),
    GatherFlat { x: Var, idx: Arc<[u32]> },
    Rope { x: Var, cos: Vec<T>, sin: Vec<T>, heads: usize },
    Attention { q: Var, k: Var, v: Var, groups: Arc<[AttnGroup]>, heads: usize, probs: Vec<T> },
}

struct Node<T> {
    value: DenseTensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations for reverse-mode differentiation. Recording order is
/// a topological order; [`Tape::backward`] walks it in reverse.
pub struct Tape<T: Real = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<DenseTensor<T>>>,
    visits: Vec<u32>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&DenseTensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index()).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<DenseTensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index()).and_then(|g| g.take())
    }

    /// How many times backward processed each node.
    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        if v.tape != self.id {
            return Err(Error::DetachedTensor);
        }
        self.nodes.get(v.index()).ok_or(Error::DetachedTensor)
    }

    pub fn value(&self, v: Var) -> &DenseTensor<T> {
        &self.node(v).expect("variable from another tape").value
    }

    pub fn try_value(&self, v: Var) -> Result<&DenseTensor<T>> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn rows(&self, v: Var) -> usize {
        self.value(v).rows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.value(v).cols()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.node(v).map(|n| n.needs_grad).unwrap_or(false)
    }

    fn push(&mut self, value: DenseTensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|&v| self.nodes[v.index()].needs_grad);
        self.push_raw(value, op, needs_grad)
    }

    fn push_raw(&mut self, mut value: DenseTensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        value.requires_grad = false;
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.id, idx }
    }

    /// Records an input. Gradients are produced when `t.requires_grad` is set.
    pub fn leaf(&mut self, t: DenseTensor<T>) -> Var {
        let g = t.requires_grad;
        self.push_raw(t, Op::Leaf, g)
    }

    pub fn constant(&mut self, t: DenseTensor<T>) -> Var {
        self.push_raw(t, Op::Const, false)
    }

    /// Copies the value of `v` as a new constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.node(v)?.value.clone();
        Ok(self.constant(t))
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.index()].value.data()
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.index()].value;
        (t.rows(), t.cols())
    }

    fn check(&self, vars: &[Var]) -> Result<()> {
        for &v in vars {
            self.node(v)?;
        }
        Ok(())
    }

    fn check_2d(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let t = &self.node(v)?.value;
        if t.shape().len() != 2 {
            return Err(Error::shape(format!("{what} expects a matrix, got {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.check_2d(a, "matmul")?;
        let (k2, n) = self.check_2d(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul [{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(T::one(), View::dense(self.data(a), m, k), View::dense(self.data(b), k, n), T::zero(), ViewMut::dense(&mut out, m, n));
        Ok(self.push(DenseTensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `[m, k] · [n, k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.check_2d(a, "matmul_nt")?;
        let (n, k2) = self.check_2d(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul_nt [{m}, {k}] x [{n}, {k2}]ᵀ")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(T::one(), View::dense(self.data(a), m, k), View::dense(self.data(b), n, k).t(), T::zero(), ViewMut::dense(&mut out, m, n));
        Ok(self.push(DenseTensor::new(vec![m, n], out)?, Op::MatMulNT(a, b), &[a, b]))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<DenseTensor<T>> {
        self.check(&[a, b])?;
        let (ta, tb) = (&self.nodes[a.index()].value, &self.nodes[b.index()].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!("{what} {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        DenseTensor::new(ta.shape().to_vec(), data)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T) -> Result<DenseTensor<T>> {
        let t = &self.node(a)?.value;
        DenseTensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::lit(s);
        let out = self.map(a, |x| x * s)?;
        Ok(self.push(out, Op::Scale(a, s), &[a]))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::lit(s);
        let out = self.map(a, |x| x + s)?;
        Ok(self.push(out, Op::AddScalar(a), &[a]))
    }

    fn row_op(&mut self, a: Var, row: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<DenseTensor<T>> {
        self.check(&[a, row])?;
        let (ta, tr) = (&self.nodes[a.index()].value, &self.nodes[row.index()].value);
        let c = ta.cols();
        if tr.numel() != c {
            return Err(Error::shape(format!("{what}: row of {} for width {c}", tr.numel())));
        }
        let mut out = ta.data().to_vec();
        for chunk in out.chunks_mut(c.max(1)) {
            for (v, r) in chunk.iter_mut().zip(tr.data()) {
                *v = f(*v, *r);
            }
        }
        DenseTensor::new(ta.shape().to_vec(), out)
    }

    /// Adds `row` (numel = last dim) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_op(a, row, "add_row", |x, r| x + r)?;
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    /// Multiplies every row of `a` elementwise by `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_op(a, row, "mul_row", |x, r| x * r)?;
        Ok(self.push(out, Op::MulRow(a, row), &[a, row]))
    }

    /// Per-row standardization over the last axis (layer norm without affine).
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = &self.node(a)?.value;
        let c = t.cols().max(1);
        let mut out = t.data().to_vec();
        let inv_std = out.chunks_mut(c).map(|row| normalize_row(row, eps)).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(DenseTensor::new(shape, out)?, Op::NormalizeRows { x: a, inv_std }, &[a]))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, gelu_scalar)?;
        Ok(self.push(out, Op::Gelu(a), &[a]))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| x * sigmoid_scalar(x))?;
        Ok(self.push(out, Op::Silu(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, sigmoid_scalar)?;
        Ok(self.push(out, Op::Sigmoid(a), &[a]))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| x.exp())?;
        Ok(self.push(out, Op::Exp(a), &[a]))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| x.tanh())?;
        Ok(self.push(out, Op::Tanh(a), &[a]))
    }

    /// Gradient passes only where `lo < x < hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let out = self.map(a, |x| x.max(lo).min(hi))?;
        Ok(self.push(out, Op::Clamp { x: a, lo, hi }, &[a]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = &self.node(a)?.value;
        let c = t.cols().max(1);
        let mut out = t.data().to_vec();
        out.chunks_mut(c).for_each(softmax_in_place);
        let shape = t.shape().to_vec();
        Ok(self.push(DenseTensor::new(shape, out)?, Op::SoftmaxRows(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.node(a)?.value.data().iter().map(|v| v.f64()).sum();
        Ok(self.push(DenseTensor::scalar(T::lit(s)), Op::Sum(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.node(a)?.value;
        let s: f64 = t.data().iter().map(|v| v.f64()).sum();
        let n = t.numel().max(1) as f64;
        Ok(self.push(DenseTensor::scalar(T::lit(s / n)), Op::Mean(a), &[a]))
    }

    /// Mean of `(a - b)²`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.check_2d(a, "slice_cols")?;
        if start + len > c {
            return Err(Error::shape(format!("slice_cols {start}+{len} of {c}")));
        }
        let src = self.data(a);
        let mut out = Vec::with_capacity(r * len);
        for row in 0..r {
            out.extend_from_slice(&src[row * c + start..row * c + start + len]);
        }
        Ok(self.push(DenseTensor::new(vec![r, len], out)?, Op::SliceCols { x: a, start }, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        let mut rows = None;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.check_2d(p, "concat_cols")?;
            if *rows.get_or_insert(r) != r {
                return Err(Error::shape("concat_cols row counts differ".to_string()));
            }
            total += c;
        }
        let r = rows.unwrap_or(0);
        let mut out = vec![T::zero(); r * total];
        let mut off = 0;
        for &p in parts {
            let c = self.nodes[p.index()].value.cols();
            let src = self.data(p);
            for row in 0..r {
                out[row * total + off..row * total + off + c].copy_from_slice(&src[row * c..row * c + c]);
            }
            off += c;
        }
        Ok(self.push(DenseTensor::new(vec![r, total], out)?, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Rows `[start, start + len)` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.check_2d(a, "slice_rows")?;
        if start + len > r {
            return Err(Error::shape(format!("slice_rows {start}+{len} of {r}")));
        }
        let out = self.data(a)[start * c..(start + len) * c].to_vec();
        Ok(self.push(DenseTensor::new(vec![len, c], out)?, Op::SliceRows { x: a, start }, &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        let mut cols = None;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.check_2d(p, "concat_rows")?;
            if *cols.get_or_insert(c) != c {
                return Err(Error::shape("concat_rows widths differ".to_string()));
            }
            out.extend_from_slice(self.data(p));
            rows += r;
        }
        let c = cols.unwrap_or(0);
        Ok(self.push(DenseTensor::new(vec![rows, c], out)?, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Output row `i` is row `idx[i]` of `a`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[Option<u32>]>) -> Result<Var> {
        let (r, c) = self.check_2d(a, "gather_rows")?;
        let src = self.data(a);
        let mut out = vec![T::zero(); idx.len() * c];
        for (i, j) in idx.iter().enumerate() {
            if let Some(j) = *j {
                let j = j as usize;
                if j >= r {
                    return Err(Error::shape(format!("gather row {j} of {r}")));
                }
                out[i * c..i * c + c].copy_from_slice(&src[j * c..j * c + c]);
            }
        }
        let n = idx.len();
        Ok(self.push(DenseTensor::new(vec![n, c], out)?, Op::GatherRows { x: a, idx }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.node(a)?.value.clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// Flat gather: `out.flat[i] = a.flat[idx[i]]`, shaped as `shape`.
    pub fn gather_flat(&mut self, a: Var, idx: Arc<[u32]>, shape: Vec<usize>) -> Result<Var> {
        let src = self.node(a)?.value.data();
        let mut out = Vec::with_capacity(idx.len());
        for &j in idx.iter() {
            out.push(*src.get(j as usize).ok_or_else(|| Error::shape(format!("flat index {j} of {}", src.len())))?);
        }
        let t = DenseTensor::new(shape, out)?;
        Ok(self.push(t, Op::GatherFlat { x: a, idx }, &[a]))
    }

    /// Rotary embedding per head: consecutive pairs `(2j, 2j + 1)` of each
    /// head are rotated by `positions[row] · base^(−2j/d_h)`.
    pub fn rope(&mut self, a: Var, positions: &[f32], heads: usize, base: f64) -> Result<Var> {
        let (r, c) = self.check_2d(a, "rope")?;
        if heads == 0 || c % heads != 0 {
            return Err(Error::shape(format!("{heads} heads for width {c}")));
        }
        let dh = c / heads;
        if dh % 2 != 0 {
            return Err(Error::OddDim(dh));
        }
        if positions.len() != r {
            return Err(Error::shape(format!("{} positions for {r} rows", positions.len())));
        }
        let half = dh / 2;
        let mut cos = Vec::with_capacity(r * half);
        let mut sin = Vec::with_capacity(r * half);
        for &p in positions {
            for j in 0..half {
                let theta = base.powf(-2.0 * j as f64 / dh as f64);
                let ang = p as f64 * theta;
                cos.push(T::lit(ang.cos()));
                sin.push(T::lit(ang.sin()));
            }
        }
        let mut out = self.data(a).to_vec();
        rotate(&mut out, &cos, &sin, c, heads, false);
        let t = DenseTensor::new(vec![r, c], out)?;
        Ok(self.push(t, Op::Rope { x: a, cos, sin, heads }, &[a]))
    }

    /// Multi-head scaled dot-product attention over block-diagonal groups.
    /// Query rows outside every group produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: Arc<[AttnGroup]>, heads: usize) -> Result<Var> {
        let (nq, c) = self.check_2d(q, "attention")?;
        let (nk, ck) = self.check_2d(k, "attention")?;
        let (nv, cv) = self.check_2d(v, "attention")?;
        if ck != c || cv != c || nk != nv {
            return Err(Error::shape(format!("attention q [{nq}, {c}] k [{nk}, {ck}] v [{nv}, {cv}]")));
        }
        if heads == 0 || c % heads != 0 {
            return Err(Error::shape(format!("{heads} heads for width {c}")));
        }
        let mut covered = vec![false; nq];
        for g in groups.iter() {
            if g.q.end > nq || g.kv.end > nk || g.kv.is_empty() {
                return Err(Error::shape(format!("attention group {g:?} for {nq} queries, {nk} keys")));
            }
            for r in g.q.clone() {
                if std::mem::replace(&mut covered[r], true) {
                    return Err(Error::shape(format!("query row {r} in two attention groups")));
                }
            }
        }
        let dh = c / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let total: usize = groups.iter().map(|g| g.q.len() * g.kv.len()).sum::<usize>() * heads;
        let mut probs = vec![T::zero(); total];
        let mut out = vec![T::zero(); nq * c];
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut off = 0;
        for g in groups.iter() {
            let (m, n) = (g.q.len(), g.kv.len());
            for h in 0..heads {
                let p = &mut probs[off..off + m * n];
                gemm(
                    scale,
                    View::block(qd, c, g.q.start, m, h * dh, dh),
                    View::block(kd, c, g.kv.start, n, h * dh, dh).t(),
                    T::zero(),
                    ViewMut::dense(p, m, n),
                );
                p.chunks_mut(n).for_each(softmax_in_place);
                gemm(
                    T::one(),
                    View::dense(p, m, n),
                    View::block(vd, c, g.kv.start, n, h * dh, dh),
                    T::zero(),
                    ViewMut::block(&mut out, c, g.q.start, m, h * dh, dh),
                );
                off += m * n;
            }
        }
        let t = DenseTensor::new(vec![nq, c], out)?;
        Ok(self.push(t, Op::Attention { q, k, v, groups, heads, probs }, &[q, k, v]))
    }

    /// `x · W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let root = self.node(loss)?;
        if root.value.numel() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        let mut visits = vec![0u32; n];
        let mut leaf_grads: Vec<Option<DenseTensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.index()] = Some(vec![T::one()]);
        for i in (0..=loss.index()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            visits[i] += 1;
            self.backward_node(node, &g, &mut grads);
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(DenseTensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: leaf_grads,
            visits,
        })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr, |$d:ident| $body:expr) => {
                if let Some($d) = slot(nodes, grads, $v) {
                    $body;
                }
            };
        }
        let val = |v: Var| nodes[v.index()].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).1;
                acc!(*a, |d| gemm(T::one(), View::dense(g, m, n), View::dense(val(*b), k, n).t(), T::one(), ViewMut::dense(d, m, k)));
                acc!(*b, |d| gemm(T::one(), View::dense(val(*a), m, k).t(), View::dense(g, m, n), T::one(), ViewMut::dense(d, k, n)));
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).0;
                acc!(*a, |d| gemm(T::one(), View::dense(g, m, n), View::dense(val(*b), n, k), T::one(), ViewMut::dense(d, m, k)));
                acc!(*b, |d| gemm(T::one(), View::dense(g, m, n).t(), View::dense(val(*a), m, k), T::one(), ViewMut::dense(d, n, k)));
            }
            Op::Add(a, b) => {
                acc!(*a, |d| add_into(d, g));
                acc!(*b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc!(*a, |d| add_into(d, g));
                acc!(*b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= *g));
            }
            Op::Mul(a, b) => {
                acc!(*a, |d| d.iter_mut().zip(g).zip(val(*b)).for_each(|((d, g), y)| *d += *g * *y));
                acc!(*b, |d| d.iter_mut().zip(g).zip(val(*a)).for_each(|((d, g), x)| *d += *g * *x));
            }
            Op::Scale(a, s) => acc!(*a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += *g * *s)),
            Op::AddScalar(a) => acc!(*a, |d| add_into(d, g)),
            Op::AddRow(a, row) => {
                acc!(*a, |d| add_into(d, g));
                let c = node.value.cols().max(1);
                acc!(*row, |d| g.chunks(c).for_each(|gr| add_into(d, gr)));
            }
            Op::MulRow(a, row) => {
                let c = node.value.cols().max(1);
                let r = val(*row);
                acc!(*a, |d| d.chunks_mut(c).zip(g.chunks(c)).for_each(|(dr, gr)| {
                    for ((d, g), r) in dr.iter_mut().zip(gr).zip(r) {
                        *d += *g * *r;
                    }
                }));
                let x = val(*a);
                acc!(*row, |d| x.chunks(c).zip(g.chunks(c)).for_each(|(xr, gr)| {
                    for ((d, g), x) in d.iter_mut().zip(gr).zip(xr) {
                        *d += *g * *x;
                    }
                }));
            }
            Op::NormalizeRows { x, inv_std } => {
                let c = node.value.cols().max(1);
                let cf = c as f64;
                acc!(*x, |d| {
                    for (((dr, gr), yr), inv) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)).zip(inv_std) {
                        let mg = gr.iter().map(|v| v.f64()).sum::<f64>() / cf;
                        let mgy = gr.iter().zip(yr).map(|(g, y)| g.f64() * y.f64()).sum::<f64>() / cf;
                        for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += T::lit(inv.f64() * (g.f64() - mg - y.f64() * mgy));
                        }
                    }
                });
            }
            Op::Gelu(a) => acc!(*a, |d| d.iter_mut().zip(g).zip(val(*a)).for_each(|((d, g), x)| *d += *g * gelu_grad_scalar(*x))),
            Op::Silu(a) => acc!(*a, |d| d.iter_mut().zip(g).zip(val(*a)).for_each(|((d, g), x)| {
                let s = sigmoid_scalar(*x);
                *d += *g * (s + *x * s * (T::one() - s));
            })),
            Op::Sigmoid(a) => acc!(*a, |d| d.iter_mut().zip(g).zip(out).for_each(|((d, g), y)| *d += *g * *y * (T::one() - *y))),
            Op::Exp(a) => acc!(*a, |d| d.iter_mut().zip(g).zip(out).for_each(|((d, g), y)| *d += *g * *y)),
            Op::Tanh(a) => acc!(*a, |d| d.iter_mut().zip(g).zip(out).for_each(|((d, g), y)| *d += *g * (T::one() - *y * *y))),
            Op::Clamp { x, lo, hi } => acc!(*x, |d| d.iter_mut().zip(g).zip(val(*x)).for_each(|((d, g), v)| {
                if *v > *lo && *v < *hi {
                    *d += *g;
                }
            })),
            Op::SoftmaxRows(a) => {
                let c = node.value.cols().max(1);
                acc!(*a, |d| {
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let dot = gr.iter().zip(yr).map(|(g, y)| g.f64() * y.f64()).sum::<f64>();
                        for ((d, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += *y * (*g - T::lit(dot));
                        }
                    }
                });
            }
            Op::Sum(a) => acc!(*a, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = nodes[a.index()].value.numel().max(1);
                let s = g[0] / T::lit(n as f64);
                acc!(*a, |d| d.iter_mut().for_each(|d| *d += s));
            }
            Op::SliceCols { x, start } => {
                let c = node.value.cols();
                let w = nodes[x.index()].value.cols();
                acc!(*x, |d| {
                    for (row, gr) in g.chunks(c.max(1)).enumerate() {
                        add_into(&mut d[row * w + start..row * w + start + c], gr);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let c = nodes[p.index()].value.cols();
                    acc!(p, |d| {
                        for row in 0..rows {
                            add_into(&mut d[row * c..row * c + c], &g[row * total + off..row * total + off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::SliceRows { x, start } => {
                let c = node.value.cols();
                acc!(*x, |d| add_into(&mut d[start * c..start * c + g.len()], g));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = nodes[p.index()].value.numel();
                    acc!(p, |d| add_into(d, &g[off..off + n]));
                    off += n;
                }
            }
            Op::GatherRows { x, idx } => {
                let c = node.value.cols();
                acc!(*x, |d| {
                    for (i, j) in idx.iter().enumerate() {
                        if let Some(j) = *j {
                            let j = j as usize;
                            add_into(&mut d[j * c..j * c + c], &g[i * c..i * c + c]);
                        }
                    }
                });
            }
            Op::Reshape(a) => acc!(*a, |d| add_into(d, g)),
            Op::GatherFlat { x, idx } => acc!(*x, |d| {
                for (i, &j) in idx.iter().enumerate() {
                    d[j as usize] += g[i];
                }
            }),
            Op::Rope { x, cos, sin, heads } => {
                let c = node.value.cols();
                acc!(*x, |d| {
                    let mut back = g.to_vec();
                    rotate(&mut back, cos, sin, c, *heads, true);
                    add_into(d, &back);
                });
            }
            Op::Attention { q, k, v, groups, heads, probs } => {
                let (nq, c) = self.dims2(*q);
                let nk = self.dims2(*k).0;
                let dh = c / heads;
                let scale = T::lit(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                let mut dq = vec![T::zero(); nq * c];
                let mut dk = vec![T::zero(); nk * c];
                let mut dv = vec![T::zero(); nk * c];
                let mut off = 0;
                for grp in groups.iter() {
                    let (m, n) = (grp.q.len(), grp.kv.len());
                    let mut ds = vec![T::zero(); m * n];
                    for h in 0..*heads {
                        let p = &probs[off..off + m * n];
                        let go = View::block(g, c, grp.q.start, m, h * dh, dh);
                        gemm(T::one(), View::dense(p, m, n).t(), go, T::one(), ViewMut::block(&mut dv, c, grp.kv.start, n, h * dh, dh));
                        gemm(T::one(), go, View::block(vd, c, grp.kv.start, n, h * dh, dh).t(), T::zero(), ViewMut::dense(&mut ds, m, n));
                        for (dr, pr) in ds.chunks_mut(n).zip(p.chunks(n)) {
                            let dot = dr.iter().zip(pr).map(|(a, b)| a.f64() * b.f64()).sum::<f64>();
                            for (d, p) in dr.iter_mut().zip(pr) {
                                *d = *p * (*d - T::lit(dot));
                            }
                        }
                        gemm(scale, View::dense(&ds, m, n), View::block(kd, c, grp.kv.start, n, h * dh, dh), T::one(), ViewMut::block(&mut dq, c, grp.q.start, m, h * dh, dh));
                        gemm(scale, View::dense(&ds, m, n).t(), View::block(qd, c, grp.q.start, m, h * dh, dh), T::one(), ViewMut::block(&mut dk, c, grp.kv.start, n, h * dh, dh));
                        off += m * n;
                    }
                }
                acc!(*q, |d| add_into(d, &dq));
                acc!(*k, |d| add_into(d, &dk));
                acc!(*v, |d| add_into(d, &dv));
            }
        }
    }
}

fn slot<'a, T: Real>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
    let n = &nodes[v.index()];
    if !n.needs_grad {
        return None;
    }
    Some(grads[v.index()].get_or_insert_with(|| vec![T::zero(); n.value.numel()]))
}

fn rotate<T: Real>(data: &mut [T], cos: &[T], sin: &[T], c: usize, heads: usize, inverse: bool) {
    let dh = c / heads;
    let half = dh / 2;
    for (r, row) in data.chunks_mut(c.max(1)).enumerate() {
        let (cr, sr) = (&cos[r * half..(r + 1) * half], &sin[r * half..(r + 1) * half]);
        for h in 0..heads {
            for j in 0..half {
                let (co, mut si) = (cr[j], sr[j]);
                if inverse {
                    si = -si;
                }
                let i = h * dh + 2 * j;
                let (a, b) = (row[i], row[i + 1]);
                row[i] = a * co - b * si;
                row[i + 1] = a * si + b * co;
            }
        }
    }
}
