//! Reverse-mode differentiation, dense layers and the Adam update.

mod adam;
mod nn;
mod tape;

pub use adam::{adam_step, AdamState};
pub use nn::{forward_dense, Activation, BoundNet, Dense, DenseNet};
pub use tape::{Gradients, Tape, Var};

/// Dense row-major real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> crate::Result<Self> {
        if data.len() != rows * cols {
            return Err(crate::Error::Shape(format!("{} values for a {rows}x{cols} tensor", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(crate::Error::NonFinite { op: "tensor", node: 0 });
        }
        Ok(Self { rows, cols, data })
    }

    /// A single row.
    pub fn row(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
