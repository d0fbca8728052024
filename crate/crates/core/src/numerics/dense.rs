use super::real::{gemm, Real, View, ViewMut};
use crate::error::{Error, Result};

/// Row-major dense array. Rank-2 views treat every leading axis as rows and
/// the last axis as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
}

impl<T: Real> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!("shape {shape:?} needs {numel} values, got {}", data.len())));
        }
        Ok(DenseTensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        DenseTensor {
            shape,
            data: vec![T::zero(); numel],
            requires_grad: false,
        }
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let numel = shape.iter().product();
        DenseTensor {
            shape,
            data: vec![v; numel],
            requires_grad: false,
        }
    }

    /// A `[1, 1]` tensor.
    pub fn scalar(v: T) -> Self {
        DenseTensor {
            shape: vec![1, 1],
            data: vec![v],
            requires_grad: false,
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.numel() / self.cols().max(1)
        }
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Real>(&self) -> DenseTensor<U> {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if self.shape.len() != 2 || other.shape.len() != 2 || k != k2 {
            return Err(Error::shape(format!("matmul {:?} x {:?}", self.shape, other.shape)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            View::dense(&self.data, m, k),
            View::dense(&other.data, k, n),
            T::zero(),
            ViewMut::dense(&mut out, m, n),
        );
        Self::new(vec![m, n], out)
    }

    /// Softmax along `axis`, with the running maximum subtracted first.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.shape.len() {
            return Err(Error::shape(format!("axis {axis} for shape {:?}", self.shape)));
        }
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = self.data.clone();
        let mut buf = vec![0.0f64; len];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| self.data[at(j)].f64()).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = (self.data[at(j)].f64() - max).exp();
                    sum += *b;
                }
                for (j, b) in buf.iter().enumerate() {
                    out[at(j)] = T::lit(b / sum);
                }
            }
        }
        Self::new(self.shape.clone(), out)
    }
}

impl<T: Real> DenseTensor<T> {
    /// Normalizes the last axis to mean 0 and variance 1, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Self, bias: &Self, eps: f64) -> Result<Self> {
        let c = self.cols();
        if gain.numel() != c || bias.numel() != c {
            return Err(Error::shape(format!("layer_norm affine of {} for width {c}", gain.numel())));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(c.max(1)) {
            normalize_row(row, eps);
            for ((v, g), b) in row.iter_mut().zip(&gain.data).zip(&bias.data) {
                *v = *v * *g + *b;
            }
        }
        Self::new(self.shape.clone(), out)
    }

    pub fn gelu(&self) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| gelu_scalar(v)).collect(),
            requires_grad: false,
        }
    }

    /// `x · W + b` with `W: [in, out]` and `b: [out]`.
    pub fn linear(&self, w: &Self, b: Option<&Self>) -> Result<Self> {
        let mut y = self.matmul(w)?;
        if let Some(b) = b {
            let n = y.cols();
            if b.numel() != n {
                return Err(Error::shape(format!("bias of {} for width {n}", b.numel())));
            }
            for row in y.data.chunks_mut(n.max(1)) {
                for (v, bv) in row.iter_mut().zip(&b.data) {
                    *v += *bv;
                }
            }
        }
        Ok(y)
    }
}

/// In-place `(x - mean) / sqrt(var + eps)`; returns `1 / sqrt(var + eps)`.
pub(crate) fn normalize_row<T: Real>(row: &mut [T], eps: f64) -> T {
    let n = row.len().max(1) as f64;
    let mean = row.iter().map(|v| v.f64()).sum::<f64>() / n;
    let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for v in row.iter_mut() {
        *v = T::lit((v.f64() - mean) * inv);
    }
    T::lit(inv)
}

/// Numerically stable softmax of one row, written into `row` (f64 sums).
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += v.f64();
    }
    let inv = T::lit(1.0 / sum);
    for v in row.iter_mut() {
        *v *= inv;
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044715;

/// Tanh-approximated GELU.
pub(crate) fn gelu_scalar<T: Real>(x: T) -> T {
    let xf = x.f64();
    T::lit(0.5 * xf * (1.0 + (GELU_K * (xf + GELU_C * xf * xf * xf)).tanh()))
}

pub(crate) fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let xf = x.f64();
    let u = GELU_K * (xf + GELU_C * xf * xf * xf);
    let th = u.tanh();
    T::lit(0.5 * (1.0 + th) + 0.5 * xf * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * xf * xf))
}

pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    let xf = x.f64();
    T::lit(if xf >= 0.0 {
        1.0 / (1.0 + (-xf).exp())
    } else {
        let e = xf.exp();
        e / (1.0 + e)
    })
}
