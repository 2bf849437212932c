use std::time::Instant;

use nalgebra::DMatrix;

use super::{snap_to_simplex, Diagnostics, UnmixResult};
use crate::data_model::{AbundanceMap, EndmemberMatrix, NonlinearPart, SpectralImage};
use crate::dual_solver::{
    batch_objective, coarse_hessian, coarse_linear_terms, DualLayout, DualSolution,
    InnerQpSolver, Multipliers,
};
use crate::error::{Result, UnmixError};
use crate::kernels::{gram_matrix, KernelConfig};
use crate::metrics::rmse;

/// Regularisation values tried by the K-Hype grid search.
pub const KHYPE_MU_GRID: [f64; 7] = [0.001, 0.002, 0.005, 0.01, 0.02, 0.1, 1.0];

/// K-Hype: per-pixel kernel regression with a linear trend on the simplex,
/// `min ½(‖ψ‖²_H + ‖a‖²) + (1/2μ)‖ξ‖²`, solved through its dual.
pub fn khype(
    img: &SpectralImage,
    m: &EndmemberMatrix,
    mu: f64,
    cfg: KernelConfig,
) -> Result<UnmixResult> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(UnmixError::InvalidArgument(format!(
            "K-Hype regularisation must be positive, got {mu}"
        )));
    }
    let start = Instant::now();
    let y = img.data();
    let mm = m.matrix();
    if mm.nrows() != y.nrows() {
        return Err(UnmixError::Dimension(format!(
            "image has {} bands, endmembers {}",
            y.nrows(),
            mm.nrows()
        )));
    }
    let layout = DualLayout::coarse(mm.nrows(), mm.ncols());
    let gram = gram_matrix(m, cfg);
    let h = coarse_hessian(&gram, mm, mu);
    let c = coarse_linear_terms(y, mm.ncols());
    let omega = InnerQpSolver::new(&(&h * -0.5), &layout.nonneg())?.solve_batch(&c)?;
    let objective = batch_objective(&h, &c, &omega);
    let dual = DualSolution {
        omega,
        layout,
        multipliers: Multipliers::Fixed { mu },
        objective,
    };
    let mut a = dual.abundance_direction(mm);
    let psi = gram.matrix() * dual.beta();
    let correction = snap_to_simplex(&mut a);
    let residual = y - mm * &a - &psi;
    Ok(UnmixResult {
        abundances: AbundanceMap::new(a, img.width(), img.height())?,
        nonlinear: NonlinearPart { data: psi },
        residual,
        dual: Some(dual),
        diagnostics: Diagnostics {
            algorithm: "khype".into(),
            mu: Some(mu),
            simplex_correction: correction,
            ..Default::default()
        },
        timings: vec![("khype".into(), start.elapsed().as_secs_f64())],
    })
}

/// Outcome of running K-Hype over a grid of `μ` values against known
/// abundances.
#[derive(Debug, Clone)]
pub struct GridSearch {
    /// `(μ, RMSE_A)` for every grid point, in grid order.
    pub table: Vec<(f64, f64)>,
    pub best_mu: f64,
    pub best: UnmixResult,
}

/// Runs K-Hype for every `μ` in `grid` and keeps the one with the lowest
/// abundance RMSE against `truth`.
pub fn khype_grid_search(
    img: &SpectralImage,
    m: &EndmemberMatrix,
    grid: &[f64],
    cfg: KernelConfig,
    truth: &DMatrix<f64>,
) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(UnmixError::InvalidArgument("empty μ grid".into()));
    }
    if let Some(bad) = grid.iter().find(|&&mu| !(mu > 0.0)) {
        return Err(UnmixError::InvalidArgument(format!("non-positive μ {bad} in grid")));
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, UnmixResult)> = None;
    for &mu in grid {
        let r = khype(img, m, mu, cfg)?;
        let e = rmse(truth, &r.abundances.data)?;
        table.push((mu, e));
        if best.as_ref().is_none_or(|b| e < b.1) {
            best = Some((mu, e, r));
        }
    }
    let (best_mu, _, best) = best.expect("grid is non-empty");
    Ok(GridSearch {
        table,
        best_mu,
        best,
    })
}
