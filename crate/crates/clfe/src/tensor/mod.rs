//! Dense tensors with tape-based reverse-mode automatic differentiation.
//!
//! Every learnable computation in the crate runs through a [`Tape`]. Forward
//! calls record one node per operation; [`Tape::backward`] replays the
//! records in reverse order and accumulates gradients into every node that
//! requires them. All arithmetic is 64-bit.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_H, DEFAULT_TOL};
pub use tape::{BatchNormState, Phase, SegmentMean, SparseMatrix, Tape, TensorId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs} and {rhs}")]
    DimMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },
    #[error("{op}: index {index} out of range for {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: index list has length {found}, expected {expected}")]
    IndexLength {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("backward needs a scalar loss, got {shape}")]
    NonScalarLoss { shape: String },
    #[error("backward was already called on this tape")]
    BackwardTwice,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class weights have length {found}, expected {expected}")]
    WeightLength { expected: usize, found: usize },
    #[error("batch_norm: training mode needs at least one row")]
    EmptyBatch,
}

fn shape_str(rows: usize, cols: usize) -> String {
    format!("{rows}x{cols}")
}

/// Dense row-major matrix of 64-bit floats. Vectors are 1xN or Nx1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "tensor data length {} does not match shape {}",
            data.len(),
            shape_str(rows, cols)
        );
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor::new(rows, cols, vec![value; rows * cols])
    }

    /// 1xN row vector.
    pub fn row(values: &[f64]) -> Self {
        Tensor::new(1, values.len(), values.to_vec())
    }

    /// Nx1 column vector.
    pub fn col(values: &[f64]) -> Self {
        Tensor::new(values.len(), 1, values.to_vec())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor::new(rows.len(), cols, rows.concat())
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(1, 1, vec![value])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn shape_str(&self) -> String {
        shape_str(self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Splits columns [0, p) and [p, cols); inverse of column concatenation.
    pub fn split_cols(&self, p: usize) -> (Tensor, Tensor) {
        assert!(p <= self.cols);
        let mut a = Tensor::zeros(self.rows, p);
        let mut b = Tensor::zeros(self.rows, self.cols - p);
        for i in 0..self.rows {
            let r = self.row_slice(i);
            a.data[i * p..(i + 1) * p].copy_from_slice(&r[..p]);
            b.data[i * (self.cols - p)..(i + 1) * (self.cols - p)].copy_from_slice(&r[p..]);
        }
        (a, b)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
