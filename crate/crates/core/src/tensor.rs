//! Dense row-major `f64` tensors and the eager kernels the autodiff graph is
//! built on.

use std::fmt;

/// Errors raised by tensor kernels and the autodiff graph.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// `data.len()` does not match the product of the shape extents.
    DataLength { expected: usize, got: usize },
    /// Two operands have shapes the kernel cannot combine.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// The kernel expected a tensor of a particular rank.
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// `log` was applied to a value that is zero or negative.
    LogDomain { value: f64 },
    /// An index (column or class label) is out of range.
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    /// `backward` was called on a node that is not a scalar.
    NonScalarLoss { shape: Vec<usize> },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DataLength { expected, got } => {
                write!(f, "tensor data length {got} does not match shape volume {expected}")
            }
            TensorError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            TensorError::Rank { op, expected, got } => {
                write!(f, "{op}: expected rank {expected}, got rank {got}")
            }
            TensorError::LogDomain { value } => write!(f, "log of non-positive value {value}"),
            TensorError::Index { op, index, bound } => {
                write!(f, "{op}: index {index} out of range (bound {bound})")
            }
            TensorError::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense n-dimensional array stored row-major.
///
/// A rank-0 tensor (empty shape) is a scalar holding exactly one value.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `[rows, cols]` matrix from row slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar_like(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers the listed rows into a new `[indices.len(), cols]` matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![indices.len(), c],
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn require_rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(TensorError::Rank {
                op,
                expected: 2,
                got: self.shape.len(),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self · other` for `[r,k] · [k,c]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (r, k) = self.require_rank2("matmul")?;
        let (k2, c) = other.require_rank2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * c..(i + 1) * c];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * c..(p + 1) * c];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![r, c],
            data: out,
        })
    }

    /// `self · otherᵀ` for `[r,k] · [c,k]ᵀ`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (r, k) = self.require_rank2("matmul_nt")?;
        let (c, k2) = other.require_rank2("matmul_nt")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..c {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * c + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(Tensor {
            shape: vec![r, c],
            data: out,
        })
    }

    /// `selfᵀ · other` for `[k,r]ᵀ · [k,c]`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, r) = self.require_rank2("matmul_tn")?;
        let (k2, c) = other.require_rank2("matmul_tn")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_tn",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; r * c];
        for p in 0..k {
            let a_row = &self.data[p * r..(p + 1) * r];
            let b_row = &other.data[p * c..(p + 1) * c];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * c..(i + 1) * c];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![r, c],
            data: out,
        })
    }

    /// Element-wise combination with scalar-vs-tensor or equal-shape broadcasting.
    pub fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        if other.is_scalar_like() {
            let b = other.data[0];
            return Ok(self.map(|a| f(a, b)));
        }
        if self.is_scalar_like() {
            let a = self.data[0];
            return Ok(other.map(|b| f(a, b)));
        }
        Err(TensorError::ShapeMismatch {
            op,
            left: self.shape.clone(),
            right: other.shape.clone(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn ln(&self) -> Result<Tensor> {
        if let Some(&bad) = self.data.iter().find(|&&v| v.is_nan() || v <= 0.0) {
            return Err(TensorError::LogDomain { value: bad });
        }
        Ok(self.map(f64::ln))
    }

    /// Applies `f(row_value, vector_value)` for a `[r,c]` matrix and a `[c]` vector.
    pub fn zip_rows(
        &self,
        row: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (r, c) = self.require_rank2(op)?;
        if row.len() != c || row.rank() != 1 {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: row.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(self.row(i).iter().zip(&row.data).map(|(&a, &b)| f(a, b)));
        }
        Ok(Tensor {
            shape: vec![r, c],
            data,
        })
    }

    /// Per-row sum of a `[r,c]` matrix, giving `[r]`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (r, _) = self.require_rank2("sum_rows")?;
        Ok(Tensor::vector((0..r).map(|i| self.row(i).iter().sum()).collect()))
    }

    /// Column sums of a `[r,c]` matrix, giving `[c]`.
    pub fn sum_cols(&self) -> Result<Tensor> {
        let (r, c) = self.require_rank2("sum_cols")?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        Ok(Tensor::vector(out))
    }

    /// Gathers columns `cols` of a `[r,c]` matrix.
    pub fn select_cols(&self, cols: &[usize]) -> Result<Tensor> {
        let (r, c) = self.require_rank2("select_cols")?;
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(TensorError::Index {
                op: "select_cols",
                index: bad,
                bound: c,
            });
        }
        let mut data = Vec::with_capacity(r * cols.len());
        for i in 0..r {
            let row = self.row(i);
            data.extend(cols.iter().map(|&j| row[j]));
        }
        Ok(Tensor {
            shape: vec![r, cols.len()],
            data,
        })
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let (r, c) = self.require_rank2("log_softmax")?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = self.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|v| v - lse));
        }
        Ok(Tensor {
            shape: vec![r, c],
            data,
        })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (r, c) = self.require_rank2("softmax")?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = self.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|v| (v - max).exp()));
            let total: f64 = data[start..].iter().sum();
            for v in &mut data[start..] {
                *v /= total;
            }
        }
        Ok(Tensor {
            shape: vec![r, c],
            data,
        })
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Tensor> {
        let expected = shape.iter().product::<usize>();
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }
}
