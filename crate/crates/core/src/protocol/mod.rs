//! The RPS round: local SGD step, lossy reduce-scatter, lossy all-gather.

mod exchange;
mod outcome;

pub use exchange::{
    gradient_averaging_round, perfect_average, rps_round, Channel, Message, Worker,
};
pub use outcome::{
    extract_mixing_matrix, sample_comm_outcome, CommOutcome, DropModel, MixingMatrix, OwnerMode,
    Stage,
};

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Worker models stored column-wise: `d` rows, one column per worker.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrix {
    data: DMatrix<f64>,
}

impl ModelMatrix {
    pub fn zeros(d: usize, n: usize) -> Self {
        Self { data: DMatrix::zeros(d, n) }
    }

    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::Shape {
                expected: "at least one row and one worker".into(),
                actual: format!("{}x{}", data.nrows(), data.ncols()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model matrix"));
        }
        Ok(Self { data })
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Shape {
                expected: "at least one worker".into(),
                actual: "0".into(),
            });
        }
        Self::from_matrix(DMatrix::from_columns(columns))
    }

    /// Every worker holds the same vector.
    pub fn replicated(x: &DVector<f64>, n: usize) -> Self {
        Self { data: DMatrix::from_fn(x.len(), n, |r, _| x[r]) }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn workers(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, worker: usize) -> DVector<f64> {
        self.data.column(worker).into_owned()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// The average model: sum of columns in worker order, divided by n.
    pub fn mean_column(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for col in self.data.column_iter() {
            acc += col;
        }
        acc / self.workers() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &ModelMatrix) -> Result<()> {
        if self.data.shape() != other.data.shape() {
            return Err(Error::Shape {
                expected: format!("{:?}", self.data.shape()),
                actual: format!("{:?}", other.data.shape()),
            });
        }
        Ok(())
    }
}

/// Contiguous coordinate ranges, one per block owner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    ranges: Vec<Range<usize>>,
}

impl BlockPartition {
    pub fn blocks(&self) -> usize {
        self.ranges.len()
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        self.ranges[block].clone()
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn dim(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }
}

/// Splits `d` coordinates into `n` contiguous blocks. When `n` does not
/// divide `d`, the first `d % n` blocks get one extra coordinate.
pub fn make_partition(d: usize, n: usize) -> Result<BlockPartition> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one block".into()));
    }
    if d < n {
        return Err(Error::MoreBlocksThanCoords { d, n });
    }
    let base = d / n;
    let extra = d % n;
    let mut start = 0;
    let ranges = (0..n)
        .map(|j| {
            let len = base + usize::from(j < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect();
    Ok(BlockPartition { ranges })
}

/// `v = x - gamma * g`, column by column.
pub fn local_sgd_step(x: &ModelMatrix, grads: &ModelMatrix, gamma: f64) -> Result<ModelMatrix> {
    x.check_same_shape(grads)?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate {gamma}")));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(ModelMatrix { data: &x.data - &grads.data * gamma })
}
