//! Noise covariance estimation and the constants that fix the quadratic
//! equality constraints at each scale.

use nalgebra::DMatrix;

use crate::data_model::SpectralImage;
use crate::error::{Result, UnmixError};

/// Relative ridge added to the band Gram matrix before the regressions.
pub const RIDGE: f64 = 1e-6;
/// Default modelling-error power relative to the mean pixel energy.
pub const DEFAULT_SIGMA_PSI2_FACTOR: f64 = 1e-8;

/// Per-band noise covariance `Σₑ`, shared by all pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance(DMatrix<f64>);

impl NoiseCovariance {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(UnmixError::Dimension("noise covariance must be square".into()));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-10 * sigma.amax().max(1.0) {
            return Err(UnmixError::InvalidArgument(format!(
                "noise covariance not symmetric (max deviation {asym:e})"
            )));
        }
        if sigma.diagonal().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(UnmixError::InvalidArgument(
                "noise covariance diagonal must be finite and nonnegative".into(),
            ));
        }
        Ok(NoiseCovariance(sigma))
    }

    pub fn isotropic(bands: usize, variance: f64) -> Result<Self> {
        NoiseCovariance::new(DMatrix::from_diagonal_element(bands, bands, variance))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let d = nalgebra::DVector::from_column_slice(diag);
        NoiseCovariance::new(DMatrix::from_diagonal(&d))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

/// Residual-method noise estimate: each band is regressed (with intercept
/// and a small ridge) on all the others, and the residual variances form a
/// diagonal `Σₑ`.
///
/// All `L` regressions come out of a single inverse of the damped centred
/// Gram matrix `H = G + δI`: the coefficients of band `ℓ` are
/// `-H⁻¹[o,ℓ] / H⁻¹[ℓ,ℓ]` and the ridge residual sum of squares is
/// `1/H⁻¹[ℓ,ℓ] - δ(1 + ‖b‖²)`.
pub fn estimate_noise_cov(img: &SpectralImage) -> Result<NoiseCovariance> {
    let (l, n) = (img.bands(), img.num_pixels());
    if n <= l {
        return Err(UnmixError::InvalidArgument(format!(
            "residual noise estimation needs more pixels than bands ({n} <= {l})"
        )));
    }
    let y = img.data();
    let mean = y.column_mean();
    let centred = y - &mean * nalgebra::RowDVector::from_element(n, 1.0);
    let gram = &centred * centred.transpose();
    let delta = RIDGE * gram.trace() / l as f64;
    if delta == 0.0 {
        return NoiseCovariance::isotropic(l, 0.0);
    }
    let damped = &gram + DMatrix::from_diagonal_element(l, l, delta);
    let inv = damped
        .cholesky()
        .ok_or_else(|| UnmixError::NotPsd("damped band Gram matrix".into()))?
        .inverse();
    let dof = (n - l) as f64;
    let diag: Vec<f64> = (0..l)
        .map(|b| {
            let h = inv[(b, b)];
            let coef_sq: f64 = (0..l)
                .filter(|&o| o != b)
                .map(|o| (inv[(o, b)] / h).powi(2))
                .sum();
            let rss = 1.0 / h - delta * (1.0 + coef_sq);
            rss.max(0.0) / dof
        })
        .collect();
    NoiseCovariance::from_diagonal(&diag)
}

/// Default `σ²ₑ,ψ`: a tiny fraction of the mean pixel energy.
pub fn default_sigma_psi2(img: &SpectralImage) -> f64 {
    DEFAULT_SIGMA_PSI2_FACTOR * img.mean_energy()
}

/// Fine-scale residual budget `C1 = tr Σₑ + σ²ₑ,ψ`.
pub fn compute_c1(sigma: &NoiseCovariance, sigma_psi2: f64) -> f64 {
    sigma.trace() + sigma_psi2
}

/// Coarse-scale residual budget `C0 = tr Σₑ / S + σ²ₑ,ψ`.
pub fn compute_c0(sigma: &NoiseCovariance, sigma_psi2: f64, s: f64) -> Result<f64> {
    if !(s >= 1.0) {
        return Err(UnmixError::InvalidArgument(format!(
            "average superpixel size must be >= 1, got {s}"
        )));
    }
    Ok(sigma.trace() / s + sigma_psi2)
}

/// `C_Y = (1/N) Σ ‖M†(y_n − y_Dn)‖²`.
pub fn compute_cy(pinv: &DMatrix<f64>, y: &DMatrix<f64>, y_d: &DMatrix<f64>) -> Result<f64> {
    if y.shape() != y_d.shape() || pinv.ncols() != y.nrows() {
        return Err(UnmixError::Dimension(format!(
            "C_Y: pinv {:?}, Y {:?}, Y_D {:?}",
            pinv.shape(),
            y.shape(),
            y_d.shape()
        )));
    }
    let proj = pinv * (y - y_d);
    Ok(proj.norm_squared() / y.ncols() as f64)
}

/// `C_E = ‖M† Σₑ^{1/2}‖²_F (S − 1)/S`, evaluated as `tr(M† Σₑ M†ᵀ)` after
/// checking that `Σₑ` is PSD. `S = ∞` gives the factor 1.
pub fn compute_ce(pinv: &DMatrix<f64>, sigma: &NoiseCovariance, s: f64) -> Result<f64> {
    if !(s >= 1.0) {
        return Err(UnmixError::InvalidArgument(format!(
            "average superpixel size must be >= 1, got {s}"
        )));
    }
    let sig = sigma.matrix();
    if pinv.ncols() != sig.nrows() {
        return Err(UnmixError::Dimension(format!(
            "C_E: pinv {:?}, covariance {:?}",
            pinv.shape(),
            sig.shape()
        )));
    }
    let is_diagonal = sig.iter().enumerate().all(|(i, v)| i % (sig.nrows() + 1) == 0 || *v == 0.0);
    if !is_diagonal {
        let min_eig = sig.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-12 * sig.amax().max(f64::MIN_POSITIVE) {
            return Err(UnmixError::NotPsd(format!(
                "noise covariance has eigenvalue {min_eig:e}"
            )));
        }
    }
    let factor = if s.is_infinite() { 1.0 } else { (s - 1.0) / s };
    Ok((pinv * sig * pinv.transpose()).trace() * factor)
}

/// All blind constants used by the two-scale solver.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScaleConstants {
    pub c0: f64,
    pub c1: f64,
    pub cy: f64,
    pub ce: f64,
    pub sigma_psi2: f64,
    /// Average superpixel size `N / K`, used by `C_E`.
    pub s: f64,
    /// Harmonic mean of the superpixel sizes, used by `C0`. Equals `s` when
    /// all superpixels have the same size.
    pub s_coarse: f64,
    /// Set when `C_Y − C_E` was negative and had to be clamped.
    pub fine_budget_clamped: bool,
}

impl ScaleConstants {
    /// Collects the constants; `y_d` is the image after coarsening and
    /// expansion, `s` and `s_coarse` the arithmetic and harmonic mean
    /// superpixel sizes.
    pub fn compute(
        pinv: &DMatrix<f64>,
        y: &DMatrix<f64>,
        y_d: &DMatrix<f64>,
        sigma: &NoiseCovariance,
        sigma_psi2: f64,
        s: f64,
        s_coarse: f64,
    ) -> Result<Self> {
        if !(sigma_psi2 >= 0.0) {
            return Err(UnmixError::InvalidArgument(format!(
                "sigma_psi2 must be nonnegative, got {sigma_psi2}"
            )));
        }
        let cy = compute_cy(pinv, y, y_d)?;
        let ce = compute_ce(pinv, sigma, s)?;
        let consts = ScaleConstants {
            c0: compute_c0(sigma, sigma_psi2, s_coarse)?,
            c1: compute_c1(sigma, sigma_psi2),
            cy,
            ce,
            sigma_psi2,
            s,
            s_coarse,
            fine_budget_clamped: cy - ce < 0.0,
        };
        if consts.fine_budget_clamped {
            log::warn!("C_Y - C_E = {:e} is negative; clamping", cy - ce);
        }
        Ok(consts)
    }

    /// `C_Y − C_E`, clamped to `1e-12 C_Y` when negative.
    pub fn fine_budget(&self) -> f64 {
        let d = self.cy - self.ce;
        if d < 0.0 {
            1e-12 * self.cy
        } else {
            d
        }
    }
}
