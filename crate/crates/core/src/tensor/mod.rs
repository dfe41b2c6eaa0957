//! Dense `f64` tensors with a reverse-mode tape.
//!
//! Tensors are rank 0 (scalar), rank 1 (vector) or rank 2 (row-major
//! matrix). Every model equation is assembled from the kernels on
//! [`Tape`]; gradients come back from [`Tape::backward`].

mod check;
mod tape;

pub use check::{finite_diff_check, GradCheck};
pub use tape::{Gradients, KernelId, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{kernel}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        kernel: KernelId,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{kernel}: axis {axis} is empty or out of range for shape {shape:?}")]
    EmptyAxis {
        kernel: KernelId,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} values but {got} were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by backward; run the forward pass again")]
    TapeConsumed,
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
    #[error("objective returned a non-finite value ({0})")]
    NonFinite(f64),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Rank-1 tensor. Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
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

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => 1,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        match self.shape.as_slice() {
            [r, c] => {
                let (r, c) = (*r, *c);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = self.data[i * c + j];
                    }
                }
                Self {
                    shape: vec![c, r],
                    data: out,
                }
            }
            _ => self.clone(),
        }
    }

    /// Inverse of concatenation along `axis`: `sizes` are the extents of
    /// the pieces along that axis and must add up to the axis extent.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
        let bad_axis = || TensorError::EmptyAxis {
            kernel: KernelId::Concat,
            axis,
            shape: self.shape.clone(),
        };
        if axis >= self.rank() {
            return Err(bad_axis());
        }
        if sizes.iter().sum::<usize>() != self.shape[axis] || sizes.contains(&0) {
            return Err(TensorError::Shape {
                kernel: KernelId::Concat,
                lhs: self.shape.clone(),
                rhs: sizes.to_vec(),
            });
        }
        let mut pieces = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &size in sizes {
            let piece = match (self.rank(), axis) {
                (1, 0) => Tensor::vector(self.data[offset..offset + size].to_vec()),
                (2, 0) => {
                    let c = self.shape[1];
                    Tensor::matrix(size, c, self.data[offset * c..(offset + size) * c].to_vec())?
                }
                (2, 1) => {
                    let (r, c) = (self.shape[0], self.shape[1]);
                    let mut data = Vec::with_capacity(r * size);
                    for i in 0..r {
                        data.extend_from_slice(&self.data[i * c + offset..i * c + offset + size]);
                    }
                    Tensor::matrix(r, size, data)?
                }
                _ => return Err(bad_axis()),
            };
            pieces.push(piece);
            offset += size;
        }
        Ok(pieces)
    }
}
