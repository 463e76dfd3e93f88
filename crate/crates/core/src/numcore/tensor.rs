use crate::error::{Error, Result};

/// Dense row-major `f64` array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} holds {numel} values but {} were supplied",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; numel]).expect("zeros: positive extents")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; numel]).expect("full: positive extents")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value]).expect("scalar")
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor::new(vec![data.len()], data).expect("vector: nonempty")
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::contract("ragged rows"));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    /// Rows and columns of a rank-2 tensor; a rank-1 tensor is a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [c] => Ok((1, *c)),
            other => Err(Error::contract(format!("expected rank 1 or 2, got {other:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map(|d| d.0).unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.dims2().map(|d| d.1).unwrap_or(0)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.contains(&0) {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Rejects NaN or infinite values anywhere in data or grad.
    pub fn validate(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite value {} at flat index {pos}",
                self.data[pos]
            )));
        }
        if let Some(g) = &self.grad {
            if g.len() != self.data.len() {
                return Err(Error::contract("gradient length differs from data"));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract("non-finite gradient"));
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Little-endian bytes of the payload, used for content hashing.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}
