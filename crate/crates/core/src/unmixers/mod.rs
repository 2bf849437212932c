//! Abundance estimators: the FCLS and K-Hype baselines and the blind
//! two-scale algorithm.

mod bmua;
mod fcls;
mod khype;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data_model::{AbundanceMap, NonlinearPart};
use crate::dual_solver::DualSolution;
use crate::statistics::ScaleConstants;

pub use bmua::{bmua_coarse, bmua_fine, bmua_n, BmuaConfig, CoarseOutcome};
pub use fcls::fcls;
pub use khype::{khype, khype_grid_search, GridSearch, KHYPE_MU_GRID};

/// Target and attained value of one quadratic equality constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub target: f64,
    pub achieved: f64,
}

impl ConstraintCheck {
    /// `|achieved − target| / target`.
    pub fn relative_error(&self) -> f64 {
        (self.achieved - self.target).abs() / self.target.abs().max(f64::MIN_POSITIVE)
    }
}

/// Bisection bookkeeping for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchStats {
    pub iterations: usize,
    pub evaluations: usize,
}

/// Everything a run reports besides the estimates. Contains no timings, so
/// identical inputs give identical diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub algorithm: String,
    pub mu: Option<f64>,
    pub mu0: Option<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub constants: Option<ScaleConstants>,
    pub superpixels: Option<usize>,
    /// `(requested K, realised K, Hom)` for each candidate.
    pub homogeneity: Vec<(usize, usize, f64)>,
    pub coarse_constraint: Option<ConstraintCheck>,
    pub fine_residual_constraint: Option<ConstraintCheck>,
    pub fine_anchor_constraint: Option<ConstraintCheck>,
    pub coarse_search: Option<SearchStats>,
    pub fine_search: Option<SearchStats>,
    /// Relative primal–dual objective gaps.
    pub coarse_duality_gap: Option<f64>,
    pub fine_duality_gap: Option<f64>,
    /// Largest simplex violation fixed up by the final projection.
    pub simplex_correction: f64,
    pub warnings: Vec<String>,
}

/// Output of every unmixer.
#[derive(Debug, Clone)]
pub struct UnmixResult {
    pub abundances: AbundanceMap,
    pub nonlinear: NonlinearPart,
    /// `Y − M·A − Ψ`.
    pub residual: DMatrix<f64>,
    pub dual: Option<DualSolution>,
    pub diagnostics: Diagnostics,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
}

impl UnmixResult {
    /// Whether the method estimates a nonlinear part at all.
    pub fn has_nonlinear_part(&self) -> bool {
        self.dual.is_some()
    }
}

/// Clips negative abundances and rescales columns to sum to one. Returns
/// the largest correction applied.
pub(crate) fn snap_to_simplex(a: &mut DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for mut col in a.column_iter_mut() {
        let before = col.clone_owned();
        col.iter_mut().for_each(|v| *v = v.max(0.0));
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        } else {
            let p = col.len() as f64;
            col.fill(1.0 / p);
        }
        worst = worst.max((&col - before).amax());
    }
    worst
}

pub(crate) fn relative_gap(primal: f64, dual: f64) -> f64 {
    (primal - dual).abs() / primal.abs().max(dual.abs()).max(f64::MIN_POSITIVE)
}
