use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense row-major array of `f64`. Clones share storage until one of them
/// is written.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} must be a non-empty list of positive sizes"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data: Arc::new(data),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// `n`×`n` identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            data: Arc::new(data),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new((0..n).map(&mut f).collect()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_data(self) -> Vec<f64> {
        Arc::unwrap_or_clone(self.data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.view2().0
    }

    pub fn cols(&self) -> usize {
        self.view2().1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Rows×cols view used by broadcasting: scalars are 1×1, rank-2 tensors
    /// keep their shape and anything else is one row.
    pub(crate) fn view2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            _ if self.data.len() == 1 => (1, 1),
            _ => (1, self.data.len()),
        }
    }
}
