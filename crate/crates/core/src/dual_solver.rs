//! Concave quadratic dual problems and the bisection searches over their
//! scale multipliers.
//!
//! For fixed multipliers the per-pixel dual is
//! `max ωᵀBω + cᵀω  s.t.  ω[j] ≥ 0 for j in nonneg`.
//! Writing `H = −2B`, stationarity reads `Hω = c`. The unconstrained
//! coordinates are eliminated through a Cholesky factor of their block of
//! `H`, which leaves a small nonnegative QP on the Schur complement. That
//! complement may be singular (the unmixing duals have a flat direction
//! `γ = t·1, λ = t`), so the reduced solver tolerates PSD matrices.
//!
//! The factorisation depends only on `B`, so all pixels sharing the same
//! multipliers are solved as one batch.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, UnmixError};
use crate::kernels::GramMatrix;

/// Concave quadratic `ωᵀBω + cᵀω` with sign constraints on some coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    b: DMatrix<f64>,
    c: DVector<f64>,
    nonneg: Vec<usize>,
}

impl QuadraticForm {
    /// Checks symmetry and negative semidefiniteness of `B`.
    pub fn new(b: DMatrix<f64>, c: DVector<f64>, nonneg: Vec<usize>) -> Result<Self> {
        let n = b.nrows();
        if !b.is_square() || c.len() != n {
            return Err(UnmixError::Dimension(format!(
                "quadratic form: B is {:?}, c has {} entries",
                b.shape(),
                c.len()
            )));
        }
        if let Some(&j) = nonneg.iter().find(|&&j| j >= n) {
            return Err(UnmixError::Dimension(format!("constrained index {j} >= {n}")));
        }
        let scale = b.amax().max(f64::MIN_POSITIVE);
        if (&b - b.transpose()).amax() > 1e-10 * scale.max(1.0) {
            return Err(UnmixError::InvalidArgument("B is not symmetric".into()));
        }
        let max_eig = b.clone().symmetric_eigen().eigenvalues.max();
        if max_eig > 1e-10 * scale {
            return Err(UnmixError::NotPsd(format!(
                "-B has eigenvalue {:e}",
                -max_eig
            )));
        }
        let mut nonneg = nonneg;
        nonneg.sort_unstable();
        nonneg.dedup();
        Ok(QuadraticForm { b, c, nonneg })
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn nonneg(&self) -> &[usize] {
        &self.nonneg
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Largest eigenvalue of `B`; strictly negative for strictly concave forms.
    pub fn max_eigenvalue(&self) -> f64 {
        self.b.clone().symmetric_eigen().eigenvalues.max()
    }

    pub fn objective(&self, omega: &DVector<f64>) -> f64 {
        omega.dot(&(&self.b * omega)) + self.c.dot(omega)
    }

    pub fn is_feasible(&self, omega: &DVector<f64>, tol: f64) -> bool {
        self.nonneg.iter().all(|&j| omega[j] >= -tol)
    }

    /// Largest violation of the KKT conditions at `omega`.
    pub fn kkt_residual(&self, omega: &DVector<f64>) -> f64 {
        let grad = &self.c + (&self.b * omega) * 2.0;
        let mut worst: f64 = 0.0;
        for j in 0..self.dim() {
            let r = if self.nonneg.binary_search(&j).is_ok() {
                // ω ≥ 0, ∂ ≤ 0, ω·∂ = 0
                (-omega[j]).max(grad[j]).max((omega[j] * grad[j]).abs())
            } else {
                grad[j].abs()
            };
            worst = worst.max(r);
        }
        worst
    }
}

/// Maximiser of a single quadratic form.
pub fn solve_inner_qp(q: &QuadraticForm) -> Result<DVector<f64>> {
    let solver = InnerQpSolver::new(&q.b, &q.nonneg)?;
    solver.solve(&q.c)
}

/// Pre-factorised solver for many linear terms sharing one `B`.
#[derive(Debug, Clone)]
pub struct InnerQpSolver {
    n: usize,
    free: Vec<usize>,
    nonneg: Vec<usize>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    /// `H_FF⁻¹ H_FG`.
    t: DMatrix<f64>,
    /// Schur complement `H_GG − H_GF H_FF⁻¹ H_FG`.
    schur: DMatrix<f64>,
}

impl InnerQpSolver {
    pub fn new(b: &DMatrix<f64>, nonneg: &[usize]) -> Result<Self> {
        let n = b.nrows();
        let mut nonneg = nonneg.to_vec();
        nonneg.sort_unstable();
        nonneg.dedup();
        let free: Vec<usize> = (0..n).filter(|j| nonneg.binary_search(j).is_err()).collect();
        let h = b * -2.0;
        let pick = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| h[(rows[i], cols[j])])
        };
        let h_gg = pick(&nonneg, &nonneg);
        if free.is_empty() {
            return Ok(InnerQpSolver {
                n,
                free,
                nonneg,
                chol: None,
                t: DMatrix::zeros(0, h_gg.ncols()),
                schur: h_gg,
            });
        }
        let h_ff = pick(&free, &free);
        let h_fg = pick(&free, &nonneg);
        let chol = h_ff.cholesky().ok_or_else(|| {
            UnmixError::QpFailure("unconstrained block of the dual is not strictly concave".into())
        })?;
        let t = chol.solve(&h_fg);
        let mut schur = h_gg - h_fg.transpose() * &t;
        schur = (&schur + schur.transpose()) * 0.5;
        Ok(InnerQpSolver {
            n,
            free,
            nonneg,
            chol: Some(chol),
            t,
            schur,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        let cm = DMatrix::from_column_slice(c.len(), 1, c.as_slice());
        Ok(self.solve_batch(&cm)?.column(0).into_owned())
    }

    /// Solves one problem per column of `c`.
    pub fn solve_batch(&self, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if c.nrows() != self.n {
            return Err(UnmixError::Dimension(format!(
                "linear terms have {} rows, solver expects {}",
                c.nrows(),
                self.n
            )));
        }
        let m = c.ncols();
        let rows = |idx: &[usize]| DMatrix::from_fn(idx.len(), m, |i, j| c[(idx[i], j)]);
        let c_f = rows(&self.free);
        let c_g = rows(&self.nonneg);
        let u = match &self.chol {
            Some(ch) => ch.solve(&c_f),
            None => DMatrix::zeros(0, m),
        };
        let d = &c_g - self.t.transpose() * &c_f;
        let gammas: Vec<DVector<f64>> = if self.nonneg.is_empty() {
            vec![DVector::zeros(0); m]
        } else {
            (0..m)
                .into_par_iter()
                .map(|j| nnqp(&self.schur, &d.column(j).into_owned()))
                .collect::<Result<Vec<_>>>()?
        };
        let mut out = DMatrix::zeros(self.n, m);
        for (j, gamma) in gammas.iter().enumerate() {
            let omega_f = u.column(j) - &self.t * gamma;
            for (k, &row) in self.free.iter().enumerate() {
                out[(row, j)] = omega_f[k];
            }
            for (k, &row) in self.nonneg.iter().enumerate() {
                out[(row, j)] = gamma[k];
            }
        }
        Ok(out)
    }
}

/// `min ½xᵀSx − dᵀx  s.t.  x ≥ 0` for PSD `S`, by a Lawson–Hanson style
/// active-set method.
pub fn nnqp(s: &DMatrix<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
    let n = d.len();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return Ok(x);
    }
    let scale = 1.0 + d.amax() + s.amax();
    let tol = 1e-13 * scale;
    let mut passive = vec![false; n];
    let mut blocked = vec![false; n];
    let max_iter = 30 * (n + 1);
    let mut iter = 0;
    loop {
        let w = d - s * &x;
        let entering = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = entering else { break };
        passive[j] = true;
        let mut first = true;
        loop {
            iter += 1;
            if iter > max_iter {
                return Err(UnmixError::QpFailure(format!(
                    "active set did not settle after {max_iter} steps"
                )));
            }
            let z = passive_solve(s, d, &passive)?;
            if first && z[j] <= tol {
                // Adding j does not help; keep it out until x moves.
                passive[j] = false;
                blocked[j] = true;
                break;
            }
            first = false;
            let mut alpha: f64 = 1.0;
            for k in 0..n {
                if passive[k] && z[k] <= 0.0 {
                    alpha = alpha.min(x[k] / (x[k] - z[k]));
                }
            }
            if alpha >= 1.0 {
                x = z;
                blocked.fill(false);
                break;
            }
            x += (&z - &x) * alpha;
            for k in 0..n {
                if passive[k] && x[k] <= tol {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
            blocked.fill(false);
        }
    }
    Ok(x)
}

/// Solves `S_PP z_P = d_P` with `z` zero off the passive set. A singular
/// `S_PP` is handled with a tiny diagonal shift, which sends `z` far along
/// the flat direction so the line search stops at the next bound.
fn passive_solve(s: &DMatrix<f64>, d: &DVector<f64>, passive: &[bool]) -> Result<DVector<f64>> {
    let idx: Vec<usize> = (0..d.len()).filter(|&k| passive[k]).collect();
    let mut z = DVector::zeros(d.len());
    if idx.is_empty() {
        return Ok(z);
    }
    let sp = DMatrix::from_fn(idx.len(), idx.len(), |i, j| s[(idx[i], idx[j])]);
    let dp = DVector::from_fn(idx.len(), |i, _| d[idx[i]]);
    let max_diag = sp.diagonal().amax();
    let min_pivot = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let well_posed = sp
        .clone()
        .cholesky()
        .filter(|ch| ch.l_dirty().diagonal().iter().all(|&v| v * v > min_pivot));
    let sol = match well_posed {
        Some(ch) => ch.solve(&dp),
        None => {
            let shift = 1e-12 * max_diag.max(1e-300);
            let shifted = &sp + DMatrix::from_diagonal_element(idx.len(), idx.len(), shift);
            shifted
                .cholesky()
                .ok_or_else(|| UnmixError::QpFailure("reduced Hessian is indefinite".into()))?
                .solve(&dp)
        }
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(UnmixError::QpFailure("non-finite active-set step".into()));
    }
    for (k, &i) in idx.iter().enumerate() {
        z[i] = sol[k];
    }
    Ok(z)
}

/// Block layout of a per-pixel dual vector `[β; μ₃; γ; λ]` (fine scale) or
/// `[β; γ; λ]` (coarse scale and K-Hype).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualLayout {
    pub bands: usize,
    pub endmembers: usize,
    pub fine: bool,
}

impl DualLayout {
    pub fn coarse(bands: usize, endmembers: usize) -> Self {
        DualLayout {
            bands,
            endmembers,
            fine: false,
        }
    }

    pub fn fine(bands: usize, endmembers: usize) -> Self {
        DualLayout {
            bands,
            endmembers,
            fine: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.bands + self.endmembers * (1 + self.fine as usize) + 1
    }

    pub fn beta(&self) -> Range<usize> {
        0..self.bands
    }

    pub fn mu3(&self) -> Option<Range<usize>> {
        self.fine
            .then(|| self.bands..self.bands + self.endmembers)
    }

    pub fn gamma(&self) -> Range<usize> {
        let start = self.bands + if self.fine { self.endmembers } else { 0 };
        start..start + self.endmembers
    }

    pub fn lambda(&self) -> usize {
        self.dim() - 1
    }

    pub fn nonneg(&self) -> Vec<usize> {
        self.gamma().collect()
    }
}

/// Scale multipliers attached to a dual solution.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum Multipliers {
    /// K-Hype regularisation weight.
    Fixed { mu: f64 },
    Coarse { mu0: f64 },
    Fine { mu1: f64, mu2: f64 },
}

impl Multipliers {
    pub fn all_positive(&self) -> bool {
        match *self {
            Multipliers::Fixed { mu } => mu > 0.0,
            Multipliers::Coarse { mu0 } => mu0 > 0.0,
            Multipliers::Fine { mu1, mu2 } => mu1 > 0.0 && mu2 > 0.0,
        }
    }
}

/// Dual vectors for every pixel (or superpixel), one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub omega: DMatrix<f64>,
    pub layout: DualLayout,
    pub multipliers: Multipliers,
    /// Attained dual objective, including the constant multiplier terms.
    pub objective: f64,
}

impl DualSolution {
    fn rows(&self, r: Range<usize>) -> DMatrix<f64> {
        self.omega.rows(r.start, r.len()).into_owned()
    }

    pub fn beta(&self) -> DMatrix<f64> {
        self.rows(self.layout.beta())
    }

    pub fn gamma(&self) -> DMatrix<f64> {
        self.rows(self.layout.gamma())
    }

    pub fn mu3(&self) -> Option<DMatrix<f64>> {
        self.layout.mu3().map(|r| self.rows(r))
    }

    pub fn lambda(&self) -> DVector<f64> {
        self.omega.row(self.layout.lambda()).transpose()
    }

    /// `Mᵀβ + γ − λ1` per column.
    pub fn abundance_direction(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        abundance_direction(&self.omega, self.layout, m)
    }
}

fn abundance_direction(omega: &DMatrix<f64>, layout: DualLayout, m: &DMatrix<f64>) -> DMatrix<f64> {
    let beta = omega.rows(0, layout.bands);
    let g = layout.gamma();
    let gamma = omega.rows(g.start, g.len());
    let lambda = omega.row(layout.lambda());
    let mut v = m.transpose() * beta + gamma;
    for (j, mut col) in v.column_iter_mut().enumerate() {
        col.add_scalar_mut(-lambda[j]);
    }
    v
}

/// `−2B` for the coarse dual (and K-Hype), `reg` being `1/μ₀` (resp. `μ`):
/// `[[K + reg·I + MMᵀ, M, −M1], [Mᵀ, I, −1], [−1ᵀMᵀ, −1ᵀ, P]]`.
pub fn coarse_hessian(k: &GramMatrix, m: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    let (l, p) = m.shape();
    let layout = DualLayout::coarse(l, p);
    let n = layout.dim();
    let m1 = m.column_sum();
    let mut h = DMatrix::zeros(n, n);
    let top = k.matrix() + m * m.transpose() + DMatrix::from_diagonal_element(l, l, reg);
    h.view_mut((0, 0), (l, l)).copy_from(&top);
    h.view_mut((0, l), (l, p)).copy_from(m);
    h.view_mut((l, 0), (p, l)).copy_from(&m.transpose());
    h.view_mut((l, l), (p, p)).fill_with_identity();
    for i in 0..l {
        h[(i, n - 1)] = -m1[i];
        h[(n - 1, i)] = -m1[i];
    }
    for j in 0..p {
        h[(l + j, n - 1)] = -1.0;
        h[(n - 1, l + j)] = -1.0;
    }
    h[(n - 1, n - 1)] = p as f64;
    h
}

/// Coarse linear terms `[y; 0; −1]`, one column per superpixel.
pub fn coarse_linear_terms(y: &DMatrix<f64>, endmembers: usize) -> DMatrix<f64> {
    let layout = DualLayout::coarse(y.nrows(), endmembers);
    let mut c = DMatrix::zeros(layout.dim(), y.ncols());
    c.rows_mut(0, y.nrows()).copy_from(y);
    c.row_mut(layout.lambda()).fill(-1.0);
    c
}

/// `−2B(μ₁, μ₂)` for the fine dual with blocks ordered `[β; μ₃; γ; λ]`.
pub fn fine_hessian(
    k: &GramMatrix,
    m: &DMatrix<f64>,
    pinv: &DMatrix<f64>,
    mu1: f64,
    mu2: f64,
) -> DMatrix<f64> {
    let (l, p) = m.shape();
    let layout = DualLayout::fine(l, p);
    let n = layout.dim();
    let km = k.matrix();
    let (i2, ig, il) = (l, l + p, n - 1);
    let inv2 = 1.0 / mu2;
    let m1 = m.column_sum();
    let mut h = DMatrix::zeros(n, n);

    let bb = km + m * m.transpose() * inv2 + DMatrix::from_diagonal_element(l, l, 1.0 / mu1);
    h.view_mut((0, 0), (l, l)).copy_from(&bb);
    let k_pt = km * pinv.transpose();
    h.view_mut((0, i2), (l, p)).copy_from(&(-&k_pt));
    h.view_mut((i2, 0), (p, l)).copy_from(&(-k_pt.transpose()));
    let mm = pinv * &k_pt + DMatrix::from_diagonal_element(p, p, inv2);
    h.view_mut((i2, i2), (p, p)).copy_from(&mm);
    h.view_mut((0, ig), (l, p)).copy_from(&(m * inv2));
    h.view_mut((ig, 0), (p, l)).copy_from(&(m.transpose() * inv2));
    for j in 0..p {
        h[(ig + j, ig + j)] = inv2;
        h[(ig + j, il)] = -inv2;
        h[(il, ig + j)] = -inv2;
    }
    for i in 0..l {
        h[(i, il)] = -m1[i] * inv2;
        h[(il, i)] = -m1[i] * inv2;
    }
    h[(il, il)] = p as f64 * inv2;
    h
}

/// Fine linear terms `[y − M a_D; −M†ψ_D; −a_D; 1ᵀa_D − 1]` per pixel.
pub fn fine_linear_terms(
    y: &DMatrix<f64>,
    m: &DMatrix<f64>,
    pinv: &DMatrix<f64>,
    a_d: &DMatrix<f64>,
    psi_d: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (l, p) = m.shape();
    let layout = DualLayout::fine(l, p);
    let n = y.ncols();
    let mut c = DMatrix::zeros(layout.dim(), n);
    c.rows_mut(0, l).copy_from(&(y - m * a_d));
    c.rows_mut(l, p).copy_from(&(-(pinv * psi_d)));
    c.rows_mut(l + p, p).copy_from(&(-a_d));
    let sums = a_d.row_sum();
    for j in 0..n {
        c[(layout.lambda(), j)] = sums[j] - 1.0;
    }
    c
}

/// `Σ_j ω_jᵀBω_j + cᵀω_j` with `B = −H/2`.
pub fn batch_objective(h: &DMatrix<f64>, c: &DMatrix<f64>, omega: &DMatrix<f64>) -> f64 {
    let hw = h * omega;
    omega
        .column_iter()
        .zip(hw.column_iter())
        .zip(c.column_iter())
        .map(|((w, hw), c)| -0.5 * w.dot(&hw) + c.dot(&w))
        .sum()
}

/// `g₀(μ₀) = (1/μ₀²) Σ ‖β_Ci‖² − K·C₀`, one column of `beta` per superpixel.
pub fn g0_residual(mu0: f64, beta: &DMatrix<f64>, c0: f64) -> f64 {
    beta.norm_squared() / (mu0 * mu0) - beta.ncols() as f64 * c0
}

/// `(g₁, g₂)` of the fine problem for dual vectors laid out per `layout`.
/// `budget` is `C_Y − C_E`.
pub fn g_fine_residuals(
    mu1: f64,
    mu2: f64,
    omega: &DMatrix<f64>,
    layout: DualLayout,
    m: &DMatrix<f64>,
    c1: f64,
    budget: f64,
) -> (f64, f64) {
    let n = omega.ncols() as f64;
    let beta_sq = omega.rows(0, layout.bands).norm_squared();
    let v_sq = abundance_direction(omega, layout, m).norm_squared();
    let mu3_sq = layout
        .mu3()
        .map_or(0.0, |r| omega.rows(r.start, r.len()).norm_squared());
    (
        beta_sq / (mu1 * mu1) - n * c1,
        (v_sq + mu3_sq) / (mu2 * mu2) - n * budget,
    )
}

/// Coordinates in which a bracket is halved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Spacing {
    Linear,
    /// Halve in `ln μ`; requires strictly positive brackets.
    Log,
}

impl Spacing {
    fn mid(self, a: f64, b: f64) -> f64 {
        match self {
            Spacing::Linear => 0.5 * (a + b),
            Spacing::Log => (a * b).sqrt(),
        }
    }

    fn width(self, a: f64, b: f64) -> f64 {
        match self {
            Spacing::Linear => b - a,
            Spacing::Log => (b / a).ln(),
        }
    }

    fn coord(self, x: f64) -> f64 {
        match self {
            Spacing::Linear => x,
            Spacing::Log => x.ln(),
        }
    }

    fn uncoord(self, t: f64) -> f64 {
        match self {
            Spacing::Linear => t,
            Spacing::Log => t.exp(),
        }
    }

    /// Zero of the line through `(lo, flo)` and `(hi, fhi)`.
    fn secant(self, lo: f64, flo: f64, hi: f64, fhi: f64) -> f64 {
        let (tl, th) = (self.coord(lo), self.coord(hi));
        let t = tl + (th - tl) * flo / (flo - fhi);
        self.uncoord(t.clamp(tl.min(th), tl.max(th)))
    }
}

/// Strategy for two-multiplier searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Search2d {
    /// [`bisect_nested_with`].
    #[default]
    Nested,
    /// [`bisect_2d_with`], the alternating rectangle bisection.
    Corner,
}

impl Search2d {
    pub fn run<G>(self, g: G, rect: Bracket2D, opts: &BisectOptions) -> Result<Bisect2dOutcome>
    where
        G: FnMut(f64, f64) -> Result<(f64, f64)>,
    {
        match self {
            Search2d::Nested => bisect_nested_with(g, rect, opts),
            Search2d::Corner => bisect_2d_with(g, rect, opts),
        }
    }
}

/// Stopping rules and bracket handling shared by both bisections.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BisectOptions {
    pub max_iter: usize,
    /// Stop once the centre moves by less than this fraction between
    /// iterations.
    pub rel_tol: f64,
    /// Stop once every side is at most this fraction of its initial width.
    pub width_tol: f64,
    pub spacing: Spacing,
    /// How many times a failing initial bracket is widened tenfold on each
    /// side (log spacing only).
    pub expansions: usize,
    /// Replace the final midpoint by the secant root of the last bracket,
    /// interpolating in the bisection coordinate. One-dimensional searches
    /// and the inner and outer loops of [`bisect_nested_with`] only.
    pub secant_finish: bool,
}

impl Default for BisectOptions {
    fn default() -> Self {
        BisectOptions {
            max_iter: 10,
            rel_tol: 0.1,
            width_tol: 0.0,
            spacing: Spacing::Log,
            expansions: 3,
            secant_finish: true,
        }
    }
}

impl BisectOptions {
    fn validate(&self, lo: f64) -> Result<()> {
        if self.spacing == Spacing::Log && !(lo > 0.0) {
            return Err(UnmixError::InvalidArgument(
                "log-spaced bisection needs a positive bracket".into(),
            ));
        }
        if self.rel_tol < 0.0 || self.width_tol < 0.0 {
            return Err(UnmixError::InvalidArgument("negative bisection tolerance".into()));
        }
        Ok(())
    }
}

fn relative_change(old: f64, new: f64) -> f64 {
    if old == 0.0 {
        if new == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        ((new - old) / old).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisect1dOutcome {
    pub root: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Plain bisection on `[lo, hi]`, stopping when the bracket has shrunk to
/// `tol·(hi − lo)` or after `max_iter` halvings.
pub fn bisect_1d<F>(f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let opts = BisectOptions {
        max_iter,
        rel_tol: 0.0,
        width_tol: tol,
        spacing: Spacing::Linear,
        expansions: 0,
        secant_finish: false,
    };
    bisect_1d_with(f, lo, hi, &opts).map(|o| o.root)
}

/// Bisection with configurable spacing, stopping rules and bracket
/// expansion.
pub fn bisect_1d_with<F>(mut f: F, lo: f64, hi: f64, opts: &BisectOptions) -> Result<Bisect1dOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) {
        return Err(UnmixError::InvalidArgument(format!("empty bracket [{lo}, {hi}]")));
    }
    opts.validate(lo)?;
    let (mut lo, mut hi) = (lo, hi);
    let mut evaluations = 2;
    let mut flo = f(lo)?;
    let mut fhi = f(hi)?;
    let mut widened = 0;
    while flo.signum() * fhi.signum() > 0.0 {
        if opts.spacing != Spacing::Log || widened == opts.expansions {
            return Err(UnmixError::Bracket(format!(
                "f({lo:e}) = {flo:e} and f({hi:e}) = {fhi:e} share a sign"
            )));
        }
        lo /= 10.0;
        hi *= 10.0;
        flo = f(lo)?;
        fhi = f(hi)?;
        evaluations += 2;
        widened += 1;
    }
    for (x, fx) in [(lo, flo), (hi, fhi)] {
        if fx == 0.0 {
            return Ok(Bisect1dOutcome { root: x, lo, hi, iterations: 0, evaluations });
        }
    }
    let initial = opts.spacing.width(lo, hi);
    let mut centre = opts.spacing.mid(lo, hi);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let mid = centre;
        let fm = f(mid)?;
        evaluations += 1;
        iterations += 1;
        if fm == 0.0 {
            return Ok(Bisect1dOutcome { root: mid, lo, hi, iterations, evaluations });
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fhi = fm;
        }
        let next = opts.spacing.mid(lo, hi);
        let moved = relative_change(centre, next);
        centre = next;
        if opts.spacing.width(lo, hi) <= opts.width_tol * initial || moved < opts.rel_tol {
            break;
        }
    }
    let root = if opts.secant_finish {
        opts.spacing.secant(lo, flo, hi, fhi)
    } else {
        centre
    };
    Ok(Bisect1dOutcome { root, lo, hi, iterations, evaluations })
}

/// Axis-aligned rectangle `[a₁, a₂] × [b₁, b₂]` in multiplier space.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Bracket2D {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Bracket2D {
    pub fn new(a1: f64, a2: f64, b1: f64, b2: f64) -> Result<Self> {
        if !(a1 < a2 && b1 < b2) {
            return Err(UnmixError::InvalidArgument(format!(
                "degenerate rectangle [{a1}, {a2}] x [{b1}, {b2}]"
            )));
        }
        Ok(Bracket2D { a1, a2, b1, b2 })
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.a1, self.b1),
            (self.a2, self.b1),
            (self.a1, self.b2),
            (self.a2, self.b2),
        ]
    }

    pub fn centre(&self, spacing: Spacing) -> (f64, f64) {
        (spacing.mid(self.a1, self.a2), spacing.mid(self.b1, self.b2))
    }

    pub fn area(&self) -> f64 {
        (self.a2 - self.a1) * (self.b2 - self.b1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bisect2dOutcome {
    pub root: (f64, f64),
    pub rect: Bracket2D,
    pub iterations: usize,
    pub evaluations: usize,
}

fn straddles(values: [f64; 4]) -> bool {
    values.iter().any(|&v| v <= 0.0) && values.iter().any(|&v| v >= 0.0)
}

/// Evaluates `g` once per distinct point.
struct Memo<G> {
    g: G,
    cache: HashMap<(u64, u64), (f64, f64)>,
}

impl<G: FnMut(f64, f64) -> Result<(f64, f64)>> Memo<G> {
    fn at(&mut self, x: f64, y: f64) -> Result<(f64, f64)> {
        let key = (x.to_bits(), y.to_bits());
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let v = (self.g)(x, y)?;
        self.cache.insert(key, v);
        Ok(v)
    }

    /// Poincaré–Miranda corner test: both components change sign.
    fn contains_root(&mut self, r: &Bracket2D) -> Result<bool> {
        let mut g1 = [0.0; 4];
        let mut g2 = [0.0; 4];
        for (k, (x, y)) in r.corners().into_iter().enumerate() {
            (g1[k], g2[k]) = self.at(x, y)?;
        }
        Ok(straddles(g1) && straddles(g2))
    }
}

/// Two-dimensional bisection with linear halving.
pub fn bisect_2d<G>(g: G, rect: Bracket2D, tol: f64, max_iter: usize) -> Result<(f64, f64)>
where
    G: FnMut(f64, f64) -> Result<(f64, f64)>,
{
    let opts = BisectOptions {
        max_iter,
        rel_tol: tol,
        width_tol: 0.0,
        spacing: Spacing::Linear,
        expansions: 0,
        secant_finish: false,
    };
    bisect_2d_with(g, rect, &opts).map(|o| o.root)
}

/// Alternating two-dimensional bisection. Each iteration halves the
/// rectangle along the first coordinate and then along the second, keeping
/// the lower half whenever it passes the corner sign test and the upper
/// half otherwise. Returns the centre of the final rectangle.
pub fn bisect_2d_with<G>(g: G, rect: Bracket2D, opts: &BisectOptions) -> Result<Bisect2dOutcome>
where
    G: FnMut(f64, f64) -> Result<(f64, f64)>,
{
    opts.validate(rect.a1.min(rect.b1))?;
    let mut memo = Memo {
        g,
        cache: HashMap::new(),
    };
    let mut r = rect;
    let mut widened = 0;
    while !memo.contains_root(&r)? {
        if opts.spacing != Spacing::Log || widened == opts.expansions {
            let corners: Vec<String> = r
                .corners()
                .iter()
                .map(|&(x, y)| {
                    let v = memo.cache[&(x.to_bits(), y.to_bits())];
                    format!("g({x:.3e}, {y:.3e}) = ({:.3e}, {:.3e})", v.0, v.1)
                })
                .collect();
            return Err(UnmixError::Bracket(corners.join("; ")));
        }
        r = Bracket2D {
            a1: r.a1 / 10.0,
            a2: r.a2 * 10.0,
            b1: r.b1 / 10.0,
            b2: r.b2 * 10.0,
        };
        widened += 1;
    }
    let sp = opts.spacing;
    let (wa0, wb0) = (sp.width(r.a1, r.a2), sp.width(r.b1, r.b2));
    let mut centre = r.centre(sp);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let ac = sp.mid(r.a1, r.a2);
        let lower = Bracket2D { a2: ac, ..r };
        if memo.contains_root(&lower)? {
            r.a2 = ac;
        } else {
            r.a1 = ac;
        }
        let bc = sp.mid(r.b1, r.b2);
        let lower = Bracket2D { b2: bc, ..r };
        if memo.contains_root(&lower)? {
            r.b2 = bc;
        } else {
            r.b1 = bc;
        }
        let next = r.centre(sp);
        let moved = relative_change(centre.0, next.0).max(relative_change(centre.1, next.1));
        centre = next;
        let narrow = sp.width(r.a1, r.a2) <= opts.width_tol * wa0
            && sp.width(r.b1, r.b2) <= opts.width_tol * wb0;
        if narrow || moved < opts.rel_tol {
            break;
        }
    }
    Ok(Bisect2dOutcome {
        root: centre,
        rect: r,
        iterations,
        evaluations: memo.cache.len(),
    })
}

/// Nested bisection for systems where `g₁` changes sign along the first
/// coordinate and `g₂` along the second. For each trial `b` the inner
/// search solves `g₁(a, b) = 0` over `[a₁, a₂]`; the outer search solves
/// `g₂(a*(b), b) = 0` over `[b₁, b₂]`. When the inner bracket holds no sign
/// change, `a*(b)` is clamped to the end with the smaller `|g₁|`.
///
/// Unlike the corner test of [`bisect_2d_with`], this tracks the root when
/// the zero curves of `g₁` and `g₂` are oblique to the axes.
pub fn bisect_nested_with<G>(g: G, rect: Bracket2D, opts: &BisectOptions) -> Result<Bisect2dOutcome>
where
    G: FnMut(f64, f64) -> Result<(f64, f64)>,
{
    opts.validate(rect.a1.min(rect.b1))?;
    let memo = RefCell::new(Memo {
        g,
        cache: HashMap::new(),
    });
    let inner_opts = BisectOptions {
        expansions: 0,
        ..*opts
    };
    let inner_bracket = Cell::new((rect.a1, rect.a2));
    let solve_a = |b: f64| -> Result<f64> {
        let f = |a: f64| memo.borrow_mut().at(a, b).map(|v| v.0);
        match bisect_1d_with(f, rect.a1, rect.a2, &inner_opts) {
            Ok(out) => {
                inner_bracket.set((out.lo, out.hi));
                Ok(out.root)
            }
            Err(UnmixError::Bracket(_)) => {
                let lo = memo.borrow_mut().at(rect.a1, b)?.0;
                let hi = memo.borrow_mut().at(rect.a2, b)?.0;
                let a = if lo.abs() <= hi.abs() { rect.a1 } else { rect.a2 };
                log::debug!("no sign change of g1 at b = {b:e}; clamping a to {a:e}");
                inner_bracket.set((a, a));
                Ok(a)
            }
            Err(e) => Err(e),
        }
    };
    let outer = bisect_1d_with(
        |b| {
            let a = solve_a(b)?;
            memo.borrow_mut().at(a, b).map(|v| v.1)
        },
        rect.b1,
        rect.b2,
        opts,
    )?;
    let b = outer.root;
    let a = solve_a(b)?;
    let (a1, a2) = inner_bracket.get();
    let evaluations = memo.borrow().cache.len();
    Ok(Bisect2dOutcome {
        root: (a, b),
        rect: Bracket2D {
            a1,
            a2,
            b1: outer.lo,
            b2: outer.hi,
        },
        iterations: outer.iterations,
        evaluations,
    })
}
