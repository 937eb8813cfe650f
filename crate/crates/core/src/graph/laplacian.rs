use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{sym_eig, SpectralBasis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianMode {
    /// `L = D - W`
    Combinatorial,
    /// `L = I - D^{-1/2} W D^{-1/2}`
    SymmetricNormalized,
}

/// Graph Laplacian of a symmetric nonnegative weight matrix.
///
/// Degrees include the diagonal (self-affinity), which cancels in `D - W`
/// but not in the normalized form.
pub fn laplacian(weights: &DMatrix<f64>, mode: LaplacianMode) -> Result<DMatrix<f64>> {
    let n = weights.nrows();
    if weights.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "weight matrix must be square, got {}x{}",
            n,
            weights.ncols()
        )));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let degrees: Vec<f64> = (0..n).map(|i| weights.row(i).sum()).collect();
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroDegree(i));
    }
    let l = match mode {
        LaplacianMode::Combinatorial => {
            let mut l = -weights.clone();
            for i in 0..n {
                l[(i, i)] += degrees[i];
            }
            l
        }
        LaplacianMode::SymmetricNormalized => {
            let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
            DMatrix::from_fn(n, n, |i, j| {
                let v = -weights[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
                if i == j {
                    1.0 + v
                } else {
                    v
                }
            })
        }
    };
    Ok(l)
}

/// Laplacian followed by its eigendecomposition, tagged with the mode.
pub fn spectral_basis(weights: &DMatrix<f64>, mode: LaplacianMode) -> Result<SpectralBasis> {
    let mut basis = sym_eig(&laplacian(weights, mode)?)?;
    basis.laplacian_mode = Some(mode);
    Ok(basis)
}
