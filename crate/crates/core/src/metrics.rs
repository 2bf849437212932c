//! Abundance and reconstruction error measures.

use nalgebra::{DMatrix, DVectorView};

use crate::error::{Result, UnmixError};

/// Floor applied to spectra before normalising them for SID.
pub const SID_FLOOR: f64 = 1e-12;

/// `sqrt(‖X − X̂‖²_F / numel)`.
pub fn rmse(x: &DMatrix<f64>, xhat: &DMatrix<f64>) -> Result<f64> {
    if x.shape() != xhat.shape() {
        return Err(UnmixError::Dimension(format!(
            "rmse of {:?} and {:?}",
            x.shape(),
            xhat.shape()
        )));
    }
    if x.is_empty() {
        return Err(UnmixError::Dimension("rmse of empty matrices".into()));
    }
    Ok(((x - xhat).norm_squared() / x.len() as f64).sqrt())
}

/// Spectral angle in radians.
pub fn sam(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(UnmixError::Dimension(format!(
            "sam of lengths {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nh = yhat.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ny == 0.0 || nh == 0.0 {
        return Err(UnmixError::InvalidArgument("spectral angle of a zero vector".into()));
    }
    // atan2 form stays accurate near 0 and pi where acos of the cosine does not.
    let (mut d, mut s) = (0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (u, v) = (a / ny, b / nh);
        d += (u - v) * (u - v);
        s += (u + v) * (u + v);
    }
    Ok(2.0 * d.sqrt().atan2(s.sqrt()))
}

/// Symmetric spectral information divergence `D(p‖q) + D(q‖p)` between the
/// two spectra normalised to unit sum.
pub fn sid(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(UnmixError::Dimension(format!(
            "sid of lengths {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.iter().chain(yhat).any(|&v| v < 0.0) {
        return Err(UnmixError::InvalidArgument("sid needs nonnegative spectra".into()));
    }
    let normalise = |v: &[f64]| {
        let floored: Vec<f64> = v.iter().map(|x| x.max(SID_FLOOR)).collect();
        let s: f64 = floored.iter().sum();
        floored.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (p, q) = (normalise(y), normalise(yhat));
    Ok(p.iter().zip(&q).map(|(a, b)| (a - b) * (a / b).ln()).sum::<f64>().max(0.0))
}

fn column_mean<F>(y: &DMatrix<f64>, yhat: &DMatrix<f64>, f: F) -> Result<f64>
where
    F: Fn(DVectorView<f64>, DVectorView<f64>) -> Result<f64>,
{
    if y.shape() != yhat.shape() || y.ncols() == 0 {
        return Err(UnmixError::Dimension(format!(
            "{:?} vs {:?}",
            y.shape(),
            yhat.shape()
        )));
    }
    let mut total = 0.0;
    for (a, b) in y.column_iter().zip(yhat.column_iter()) {
        total += f(a.as_view(), b.as_view())?;
    }
    Ok(total / y.ncols() as f64)
}

/// Mean spectral angle over pixels, radians.
pub fn mean_sam(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<f64> {
    column_mean(y, yhat, |a, b| sam(a.as_slice(), b.as_slice()))
}

/// Mean SID over pixels. Negative reconstructed values are clipped to zero.
pub fn mean_sid(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<f64> {
    column_mean(y, yhat, |a, b| {
        let a: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
        let b: Vec<f64> = b.iter().map(|v| v.max(0.0)).collect();
        sid(&a, &b)
    })
}

/// Summary of one estimate against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub rmse_a: f64,
    pub rmse_y: f64,
    /// Radians.
    pub sam_mean: f64,
    pub sid_mean: f64,
}

impl EvalReport {
    /// Compares abundances and the reconstruction of the image.
    pub fn compute(
        a_true: &DMatrix<f64>,
        a_est: &DMatrix<f64>,
        y: &DMatrix<f64>,
        y_rec: &DMatrix<f64>,
    ) -> Result<Self> {
        Ok(EvalReport {
            rmse_a: rmse(a_true, a_est)?,
            rmse_y: rmse(y, y_rec)?,
            sam_mean: mean_sam(y, y_rec)?,
            sid_mean: mean_sid(y, y_rec)?,
        })
    }

    /// `key = value` lines, SAM in degrees.
    pub fn to_text(&self) -> String {
        format!(
            "rmse_a = {:.6e}\nrmse_y = {:.6e}\nsam_deg = {:.6}\nsid = {:.6e}\n",
            self.rmse_a,
            self.rmse_y,
            self.sam_mean.to_degrees(),
            self.sid_mean
        )
    }

    pub const CSV_HEADER: &'static str = "rmse_a,rmse_y,sam_deg,sid";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e}",
            self.rmse_a,
            self.rmse_y,
            self.sam_mean.to_degrees(),
            self.sid_mean
        )
    }
}
