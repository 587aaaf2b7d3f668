use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;

/// Dense row-major array of 64-bit floats.
///
/// Everything the models compute flows through this type. 64-bit precision is
/// deliberate: the gradient checks compare against central finite differences
/// at h = 1e-4 and need the headroom.
/// Values are shared behind an `Arc`, so cloning a tensor (e.g. binding
/// model parameters onto a tape) never copies data; mutation copies on
/// write only if the buffer is actually shared at that moment.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    /// Marks leaf tensors whose gradients the tape must produce.
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self { shape, data: Arc::new(data), requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![0.0; numel]), requires_grad: false }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![value; numel]), requires_grad: false }
    }

    /// 1-D tensor from a plain vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data: Arc::new(data), requires_grad: false }
    }

    /// Shape `[1]` scalar.
    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: Arc::new(vec![value]), requires_grad: false }
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("std must be finite and positive");
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| dist.sample(rng)).collect();
        Self { shape: shape.to_vec(), data: Arc::new(data), requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a 2-D `[rows, cols]` tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Stacks equal-length 1-D rows into a `[n, d]` tensor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("rows have unequal lengths".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), d], data)
    }
}

/// A named, trainable tensor. The name is the stable identity used by the
/// checkpoint format and by gradient bookkeeping.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self { name: name.into(), value: value.with_grad() }
    }
}
