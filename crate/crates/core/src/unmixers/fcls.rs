use std::time::Instant;

use nalgebra::DMatrix;

use super::{snap_to_simplex, Diagnostics, UnmixResult};
use crate::data_model::{AbundanceMap, EndmemberMatrix, NonlinearPart, SpectralImage};
use crate::dual_solver::nnqp;
use crate::error::{Result, UnmixError};

/// Weight of the sum-to-one row appended to the endmember matrix.
const SUM_TO_ONE_WEIGHT: f64 = 1e4;

/// Fully constrained least squares: `min ‖y − Ma‖²` over the unit simplex,
/// solved as a nonnegative least-squares problem on `M` augmented with a
/// heavily weighted row of ones.
pub fn fcls(img: &SpectralImage, m: &EndmemberMatrix) -> Result<UnmixResult> {
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
    let p = mm.ncols();
    let delta2 = SUM_TO_ONE_WEIGHT * SUM_TO_ONE_WEIGHT;
    let gram = mm.transpose() * mm + DMatrix::from_element(p, p, delta2);
    let rhs = mm.transpose() * y;
    let mut a = DMatrix::zeros(p, y.ncols());
    for (j, col) in rhs.column_iter().enumerate() {
        let d = col.add_scalar(delta2);
        a.column_mut(j).copy_from(&nnqp(&gram, &d)?);
    }
    let correction = snap_to_simplex(&mut a);
    let residual = y - mm * &a;
    Ok(UnmixResult {
        abundances: AbundanceMap::new(a, img.width(), img.height())?,
        nonlinear: NonlinearPart::zeros(y.nrows(), y.ncols()),
        residual,
        dual: None,
        diagnostics: Diagnostics {
            algorithm: "fcls".into(),
            simplex_correction: correction,
            ..Default::default()
        },
        timings: vec![("fcls".into(), start.elapsed().as_secs_f64())],
    })
}
