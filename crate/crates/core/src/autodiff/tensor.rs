use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// Dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, AutodiffError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutodiffError::Length { expected: n, got: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor { shape: vec![1, 1], data: vec![x] }
    }

    /// A `1 × n` matrix.
    pub fn row(values: Vec<f64>) -> Tensor {
        Tensor { shape: vec![1, values.len()], data: values }
    }

    /// Stacks equally long rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor, AutodiffError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(AutodiffError::Length { expected: cols, got: bad.len() });
        }
        Ok(Tensor { shape: vec![rows.len(), cols], data: rows.concat() })
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

    /// Leading dimension of a matrix.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of the trailing dimensions.
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// The single value of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Tensor, AutodiffError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(AutodiffError::Length { expected: n, got: self.data.len() });
        }
        self.shape = shape;
        Ok(self)
    }
}
