//! The Frobenius inner product, `⟨X, Y⟩ = Tr(XᵀY)`, which every matrix
//! chain-rule step in the backward pass reduces to.

use nalgebra::storage::RawStorage;
use nalgebra::{Dim, Matrix};

use crate::error::{Result, SplatError};

/// `Tr(XᵀY)`, the element-wise product sum of two equally shaped matrices.
pub fn frobenius_inner<R1, C1, S1, R2, C2, S2>(
    x: &Matrix<f64, R1, C1, S1>,
    y: &Matrix<f64, R2, C2, S2>,
) -> Result<f64>
where
    R1: Dim,
    C1: Dim,
    S1: RawStorage<f64, R1, C1>,
    R2: Dim,
    C2: Dim,
    S2: RawStorage<f64, R2, C2>,
{
    if x.shape() != y.shape() {
        return Err(SplatError::ShapeMismatch {
            expected: format!("{:?}", x.shape()),
            actual: format!("{:?}", y.shape()),
        });
    }
    Ok(x.iter().zip(y.iter()).map(|(a, b)| a * b).sum())
}
