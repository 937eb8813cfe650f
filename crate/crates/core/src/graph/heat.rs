use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SpectralBasis;
use crate::error::{Error, Result};

/// Diffusion times, divided by the largest eigenvalue to get the actual scales.
pub const DEFAULT_HEAT_TIMES: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

/// Multi-scale heat self-diffusion `K_τ(i,i)`, one row per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatDescriptor {
    pub scales: Vec<f64>,
    /// G x S_τ
    pub values: DMatrix<f64>,
}

impl HeatDescriptor {
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.values.nrows())
            .map(|i| self.values.row(i).norm())
            .collect()
    }
}

pub fn default_heat_scales(basis: &SpectralBasis) -> Vec<f64> {
    let lmax = basis.max_eigenvalue();
    let lmax = if lmax > 0.0 { lmax } else { 1.0 };
    DEFAULT_HEAT_TIMES.iter().map(|t| t / lmax).collect()
}

/// `values[i][s] = Σ_k exp(-λ_k τ_s) φ_k(i)^2`
pub fn heat_descriptor(basis: &SpectralBasis, scales: &[f64]) -> Result<HeatDescriptor> {
    if scales.is_empty() {
        return Err(Error::Empty("heat scales"));
    }
    if scales.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument("heat scales must be positive".into()));
    }
    if scales.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("heat scales must ascend".into()));
    }
    let n = basis.size();
    let phi = &basis.eigenvectors;
    let mut values = DMatrix::zeros(n, scales.len());
    for (s, &tau) in scales.iter().enumerate() {
        let decay: Vec<f64> = basis.eigenvalues.iter().map(|&l| (-l * tau).exp()).collect();
        for i in 0..n {
            let mut acc = 0.0;
            for (k, &e) in decay.iter().enumerate() {
                let p = phi[(i, k)];
                acc += e * p * p;
            }
            values[(i, s)] = acc;
        }
    }
    Ok(HeatDescriptor {
        scales: scales.to_vec(),
        values,
    })
}
