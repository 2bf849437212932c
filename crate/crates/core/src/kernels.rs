//! Polynomial kernel over endmember rows and the associated Gram matrix.
//!
//! The nonlinear fluctuation is modelled as a function `ψ` in the RKHS of
//! `κ`, evaluated at the `L` rows `m̃_ℓ` of the endmember matrix. With
//! `ψ = Σ β_ℓ κ(·, m̃_ℓ)` the vector of its values at the rows is `Kβ`.

use nalgebra::{DMatrix, DVector};

use crate::data_model::EndmemberMatrix;
use crate::error::{Result, UnmixError};

/// Polynomial kernel `κ(u, v) = (uᵀv + c)^d`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelConfig {
    pub degree: u32,
    pub offset: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            degree: 2,
            offset: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn new(degree: u32, offset: f64) -> Result<Self> {
        if degree == 0 {
            return Err(UnmixError::InvalidArgument("kernel degree must be >= 1".into()));
        }
        if !(offset >= 0.0) || !offset.is_finite() {
            return Err(UnmixError::InvalidArgument(format!(
                "kernel offset must be finite and nonnegative, got {offset}"
            )));
        }
        Ok(KernelConfig { degree, offset })
    }
}

pub fn poly_kernel(u: &[f64], v: &[f64], cfg: KernelConfig) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (dot + cfg.offset).powi(cfg.degree as i32)
}

/// Kernel matrix over the rows of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(DMatrix<f64>);

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }
}

pub fn gram_matrix(m: &EndmemberMatrix, cfg: KernelConfig) -> GramMatrix {
    gram_of_rows(m.matrix(), cfg)
}

/// Gram matrix over the rows of an arbitrary matrix. Filled from the upper
/// triangle so the result is exactly symmetric.
pub fn gram_of_rows(m: &DMatrix<f64>, cfg: KernelConfig) -> GramMatrix {
    let l = m.nrows();
    let inner = m * m.transpose();
    let mut k = DMatrix::zeros(l, l);
    for j in 0..l {
        for i in 0..=j {
            let v = (inner[(i, j)] + cfg.offset).powi(cfg.degree as i32);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    GramMatrix(k)
}

/// Values `Kβ` of `ψ = Σ β_ℓ κ(·, m̃_ℓ)` at the endmember rows.
pub fn eval_nonlinear(k: &GramMatrix, beta: &DVector<f64>) -> DVector<f64> {
    &k.0 * beta
}
