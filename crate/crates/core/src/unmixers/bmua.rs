use std::cell::RefCell;
use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DMatrix;

use super::{
    relative_gap, snap_to_simplex, ConstraintCheck, Diagnostics, SearchStats, UnmixResult,
};
use crate::data_model::{AbundanceMap, EndmemberMatrix, NonlinearPart, SpectralImage};
use crate::dual_solver::{
    batch_objective, bisect_1d_with, coarse_hessian, coarse_linear_terms,
    fine_hessian, fine_linear_terms, g0_residual, g_fine_residuals, BisectOptions, Bracket2D,
    DualLayout, DualSolution, InnerQpSolver, Multipliers, Search2d,
};
use crate::error::{Result, UnmixError};
use crate::kernels::{gram_matrix, GramMatrix, KernelConfig};
use crate::multiscale::{
    coarsen, default_compactness, expand, select_num_superpixels, slic_segment,
    KSelectionPreference,
};
use crate::statistics::{default_sigma_psi2, estimate_noise_cov, NoiseCovariance, ScaleConstants};

/// Settings of the blind two-scale unmixer. Everything is optional except
/// the kernel; unset values are derived from the image.
#[derive(Debug, Clone, PartialEq)]
pub struct BmuaConfig {
    pub kernel: KernelConfig,
    /// Modelling-error power `σ²ₑ,ψ`; defaults to `1e-8` times the mean
    /// pixel energy.
    pub sigma_psi2: Option<f64>,
    /// Known noise covariance; estimated from the image when absent.
    pub noise: Option<NoiseCovariance>,
    /// Bounds on the superpixel count; default `N/170` and `N/8`.
    pub kmin: Option<usize>,
    pub kmax: Option<usize>,
    /// Skips the homogeneity search and segments with this count.
    pub num_superpixels: Option<usize>,
    pub hom_eps: f64,
    pub k_preference: KSelectionPreference,
    pub compactness: Option<f64>,
    /// Initial multiplier interval, used for every multiplier.
    pub bracket: (f64, f64),
    pub coarse_search: BisectOptions,
    pub fine_search: BisectOptions,
    pub fine_strategy: Search2d,
}

impl Default for BmuaConfig {
    fn default() -> Self {
        BmuaConfig {
            kernel: KernelConfig::default(),
            sigma_psi2: None,
            noise: None,
            kmin: None,
            kmax: None,
            num_superpixels: None,
            hom_eps: 0.1,
            k_preference: KSelectionPreference::LargestSize,
            compactness: None,
            bracket: (1e-4, 1e4),
            coarse_search: BisectOptions::default(),
            fine_search: BisectOptions::default(),
            fine_strategy: Search2d::default(),
        }
    }
}

impl BmuaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(UnmixError::InvalidArgument(what.to_string()));
        if !(0.0..1.0).contains(&self.hom_eps) {
            return bad("homogeneity tolerance must lie in [0, 1)");
        }
        if !(self.bracket.0 > 0.0 && self.bracket.0 < self.bracket.1) {
            return bad("multiplier bracket must satisfy 0 < lo < hi");
        }
        for s in [&self.coarse_search, &self.fine_search] {
            if s.max_iter == 0 || !(s.rel_tol > 0.0 || s.width_tol > 0.0) {
                return bad("bisection needs iterations and a positive tolerance");
            }
        }
        if let Some(c) = self.compactness {
            if !(c >= 0.0) {
                return bad("compactness must be nonnegative");
            }
        }
        if let Some(s) = self.sigma_psi2 {
            if !(s >= 0.0) {
                return bad("sigma_psi2 must be nonnegative");
            }
        }
        Ok(())
    }
}

/// Coarse-scale estimates, one column per superpixel.
#[derive(Debug, Clone)]
pub struct CoarseOutcome {
    pub abundances: DMatrix<f64>,
    /// `ψ_C(M) = Kβ_C`.
    pub nonlinear: DMatrix<f64>,
    /// `ξ_C = β_C / μ₀`.
    pub residual: DMatrix<f64>,
    pub dual: DualSolution,
    pub search: SearchStats,
    pub constraint: ConstraintCheck,
    pub duality_gap: f64,
    pub simplex_correction: f64,
}

/// Solves the coarse problem
/// `min Σ ½(‖ψ_Ci‖²_H + ‖a_Ci‖²)` s.t. the superpixel model, the simplex and
/// `Σ‖ξ_Ci‖² = K·C₀`, by bisection on `μ₀`.
pub fn bmua_coarse(
    yc: &DMatrix<f64>,
    m: &EndmemberMatrix,
    gram: &GramMatrix,
    c0: f64,
    cfg: &BmuaConfig,
) -> Result<CoarseOutcome> {
    if !(c0 > 0.0) {
        return Err(UnmixError::InvalidArgument(format!("C0 must be positive, got {c0}")));
    }
    let mm = m.matrix();
    if yc.nrows() != mm.nrows() {
        return Err(UnmixError::Dimension(format!(
            "coarse image has {} bands, endmembers {}",
            yc.nrows(),
            mm.nrows()
        )));
    }
    let layout = DualLayout::coarse(mm.nrows(), mm.ncols());
    let nonneg = layout.nonneg();
    let c = coarse_linear_terms(yc, mm.ncols());
    let cache: RefCell<HashMap<u64, DMatrix<f64>>> = RefCell::new(HashMap::new());
    let solve = |mu0: f64| -> Result<DMatrix<f64>> {
        if let Some(w) = cache.borrow().get(&mu0.to_bits()) {
            return Ok(w.clone());
        }
        let h = coarse_hessian(gram, mm, 1.0 / mu0);
        let w = InnerQpSolver::new(&(h * -0.5), &nonneg)?.solve_batch(&c)?;
        cache.borrow_mut().insert(mu0.to_bits(), w.clone());
        Ok(w)
    };
    let g = |mu0: f64| -> Result<f64> {
        let w = solve(mu0)?;
        Ok(g0_residual(mu0, &w.rows(0, layout.bands).into_owned(), c0))
    };
    let out = bisect_1d_with(g, cfg.bracket.0, cfg.bracket.1, &cfg.coarse_search)?;
    let mu0 = out.root;
    let omega = solve(mu0)?;
    let k = yc.ncols() as f64;
    let h = coarse_hessian(gram, mm, 1.0 / mu0);
    let objective = batch_objective(&h, &c, &omega) - 0.5 * mu0 * k * c0;
    let dual = DualSolution {
        omega,
        layout,
        multipliers: Multipliers::Coarse { mu0 },
        objective,
    };
    let evaluations = cache.borrow().len();
    let beta = dual.beta();
    let raw_a = dual.abundance_direction(mm);
    let psi = gram.matrix() * &beta;
    let primal = 0.5 * (beta.dot(&psi) + raw_a.norm_squared());
    let mut a = raw_a;
    let correction = snap_to_simplex(&mut a);
    let xi = &beta / mu0;
    Ok(CoarseOutcome {
        abundances: a,
        nonlinear: psi,
        constraint: ConstraintCheck {
            target: c0,
            achieved: xi.norm_squared() / k,
        },
        residual: xi,
        duality_gap: relative_gap(primal, dual.objective),
        dual,
        search: SearchStats {
            iterations: out.iterations,
            evaluations,
        },
        simplex_correction: correction,
    })
}

/// Solves the fine problem
/// `min Σ ½‖ψ_n‖²_H` s.t. the pixel model, the simplex,
/// `Σ‖ξ_n‖² = N·C₁` and `Σ(‖a_n − a_Dn‖² + ‖M†(ψ_n − ψ_Dn)‖²) = N(C_Y − C_E)`,
/// by two-dimensional bisection on `(μ₁, μ₂)`.
pub fn bmua_fine(
    img: &SpectralImage,
    m: &EndmemberMatrix,
    a_d: &DMatrix<f64>,
    psi_d: &DMatrix<f64>,
    consts: &ScaleConstants,
    cfg: &BmuaConfig,
) -> Result<UnmixResult> {
    let start = Instant::now();
    let y = img.data();
    let (mm, pinv) = (m.matrix(), m.pinv());
    let n = y.ncols();
    if a_d.shape() != (mm.ncols(), n) || psi_d.shape() != y.shape() || mm.nrows() != y.nrows() {
        return Err(UnmixError::Dimension(format!(
            "fine stage: Y {:?}, M {:?}, A_D {:?}, Psi_D {:?}",
            y.shape(),
            mm.shape(),
            a_d.shape(),
            psi_d.shape()
        )));
    }
    let c1 = consts.c1;
    let budget = consts.fine_budget();
    if !(c1 > 0.0) || !(budget > 0.0) {
        return Err(UnmixError::InvalidArgument(format!(
            "fine constraints need C1 > 0 and C_Y - C_E > 0 (got {c1:e}, {budget:e})"
        )));
    }
    let gram = gram_matrix(m, cfg.kernel);
    let layout = DualLayout::fine(mm.nrows(), mm.ncols());
    let nonneg = layout.nonneg();
    let c = fine_linear_terms(y, mm, pinv, a_d, psi_d);
    let cache: RefCell<HashMap<(u64, u64), DMatrix<f64>>> = RefCell::new(HashMap::new());
    let solve = |mu1: f64, mu2: f64| -> Result<DMatrix<f64>> {
        let key = (mu1.to_bits(), mu2.to_bits());
        if let Some(w) = cache.borrow().get(&key) {
            return Ok(w.clone());
        }
        let h = fine_hessian(&gram, mm, pinv, mu1, mu2);
        let w = InnerQpSolver::new(&(h * -0.5), &nonneg)?.solve_batch(&c)?;
        cache.borrow_mut().insert(key, w.clone());
        Ok(w)
    };
    let g = |mu1: f64, mu2: f64| -> Result<(f64, f64)> {
        let w = solve(mu1, mu2)?;
        Ok(g_fine_residuals(mu1, mu2, &w, layout, mm, c1, budget))
    };
    let (lo, hi) = cfg.bracket;
    let rect = Bracket2D::new(lo, hi, lo, hi)?;
    let out = cfg.fine_strategy.run(g, rect, &cfg.fine_search)?;
    let (mu1, mu2) = out.root;
    let mut warnings = Vec::new();
    if !(mu1 > 0.0 && mu2 > 0.0) {
        let msg = format!("fine multipliers ({mu1:e}, {mu2:e}) not strictly positive; strong duality not guaranteed");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let omega = solve(mu1, mu2)?;
    let nf = n as f64;
    let h = fine_hessian(&gram, mm, pinv, mu1, mu2);
    let objective = batch_objective(&h, &c, &omega) - 0.5 * nf * (mu1 * c1 + mu2 * budget);
    let dual = DualSolution {
        omega,
        layout,
        multipliers: Multipliers::Fine { mu1, mu2 },
        objective,
    };
    let evaluations = cache.borrow().len();
    let beta = dual.beta();
    let mu3 = dual.mu3().expect("fine layout carries mu3");
    let v = dual.abundance_direction(mm);
    let alpha = &beta - pinv.transpose() * &mu3;
    let psi = gram.matrix() * &alpha;
    let primal = 0.5 * alpha.dot(&psi);
    let mut a = a_d + &v / mu2;
    let correction = snap_to_simplex(&mut a);
    let residual = y - mm * &a - &psi;
    let diagnostics = Diagnostics {
        algorithm: "bmua-n".into(),
        mu1: Some(mu1),
        mu2: Some(mu2),
        fine_residual_constraint: Some(ConstraintCheck {
            target: c1,
            achieved: beta.norm_squared() / (mu1 * mu1 * nf),
        }),
        fine_anchor_constraint: Some(ConstraintCheck {
            target: budget,
            achieved: (v.norm_squared() + mu3.norm_squared()) / (mu2 * mu2 * nf),
        }),
        fine_search: Some(SearchStats {
            iterations: out.iterations,
            evaluations,
        }),
        fine_duality_gap: Some(relative_gap(primal, dual.objective)),
        simplex_correction: correction,
        warnings,
        ..Default::default()
    };
    Ok(UnmixResult {
        abundances: AbundanceMap::new(a, img.width(), img.height())?,
        nonlinear: NonlinearPart { data: psi },
        residual,
        dual: Some(dual),
        diagnostics,
        timings: vec![("fine".into(), start.elapsed().as_secs_f64())],
    })
}

/// The complete blind pipeline: noise estimation, blind constants,
/// superpixel selection, coarse solve, expansion and fine solve.
pub fn bmua_n(img: &SpectralImage, m: &EndmemberMatrix, cfg: &BmuaConfig) -> Result<UnmixResult> {
    cfg.validate()?;
    if m.bands() != img.bands() {
        return Err(UnmixError::Dimension(format!(
            "image has {} bands, endmembers {}",
            img.bands(),
            m.bands()
        )));
    }
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let noise = match &cfg.noise {
        Some(s) => s.clone(),
        None => estimate_noise_cov(img).map_err(|e| e.in_stage("noise"))?,
    };
    let sigma_psi2 = cfg.sigma_psi2.unwrap_or_else(|| default_sigma_psi2(img));
    lap("noise", &mut timings);

    let n = img.num_pixels();
    let compactness = cfg.compactness.unwrap_or_else(|| default_compactness(img));
    let (map, homogeneity) = match cfg.num_superpixels {
        Some(k) => (
            slic_segment(img, k, compactness).map_err(|e| e.in_stage("superpixels"))?,
            Vec::new(),
        ),
        None => {
            let kmin = cfg.kmin.unwrap_or((n as f64 / 170.0).round().max(1.0) as usize);
            let kmax = cfg.kmax.unwrap_or((n as f64 / 8.0).round().max(1.0) as usize);
            let sel = select_num_superpixels(img, kmin, kmax, cfg.hom_eps, compactness, cfg.k_preference)
                .map_err(|e| e.in_stage("superpixels"))?;
            (sel.map, sel.profile.candidates)
        }
    };
    lap("superpixels", &mut timings);

    let yc = coarsen(img.data(), &map).map_err(|e| e.in_stage("constants"))?;
    let y_d = expand(&yc, &map).map_err(|e| e.in_stage("constants"))?;
    let consts = ScaleConstants::compute(
        m.pinv(),
        img.data(),
        &y_d,
        &noise,
        sigma_psi2,
        map.mean_size(),
        map.harmonic_mean_size(),
    )
        .map_err(|e| e.in_stage("constants"))?;
    let mut warnings = Vec::new();
    if consts.fine_budget_clamped {
        warnings.push(format!(
            "C_Y - C_E = {:e} was negative and has been clamped",
            consts.cy - consts.ce
        ));
    }
    lap("constants", &mut timings);

    let gram = gram_matrix(m, cfg.kernel);
    let coarse = bmua_coarse(&yc, m, &gram, consts.c0, cfg).map_err(|e| e.in_stage("coarse"))?;
    lap("coarse", &mut timings);

    let a_d = expand(&coarse.abundances, &map).map_err(|e| e.in_stage("fine"))?;
    let psi_d = expand(&coarse.nonlinear, &map).map_err(|e| e.in_stage("fine"))?;
    let mut result =
        bmua_fine(img, m, &a_d, &psi_d, &consts, cfg).map_err(|e| e.in_stage("fine"))?;
    lap("fine", &mut timings);

    let mu0 = match coarse.dual.multipliers {
        Multipliers::Coarse { mu0 } => mu0,
        _ => unreachable!(),
    };
    let d = &mut result.diagnostics;
    d.mu0 = Some(mu0);
    d.constants = Some(consts);
    d.superpixels = Some(map.count());
    d.homogeneity = homogeneity;
    d.coarse_constraint = Some(coarse.constraint);
    d.coarse_search = Some(coarse.search);
    d.coarse_duality_gap = Some(coarse.duality_gap);
    d.simplex_correction = d.simplex_correction.max(coarse.simplex_correction);
    warnings.append(&mut d.warnings);
    d.warnings = warnings;
    result.timings = timings;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiscale::SuperpixelMap;
    use crate::unmixers::khype;
    use approx::assert_relative_eq;

    fn endmembers() -> EndmemberMatrix {
        EndmemberMatrix::new(DMatrix::from_fn(12, 3, |l, p| {
            let x = l as f64 / 11.0;
            match p {
                0 => 0.2 + 0.6 * x,
                1 => 0.8 - 0.5 * x * x,
                _ => 0.3 + 0.4 * (3.0 * x).sin().abs(),
            }
        }))
        .unwrap()
    }

    fn abundances(n: usize) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(3, n, |p, j| 1.0 + ((j * (2 * p + 3) + p) % 7) as f64);
        DMatrix::from_fn(3, n, |p, j| raw[(p, j)] / raw.column(j).sum())
    }

    fn spectra() -> EndmemberMatrix {
        crate::simulation::synthetic_endmembers(3, 224, 5).unwrap()
    }

    fn single_superpixel(m: &EndmemberMatrix, a: &DMatrix<f64>) -> DMatrix<f64> {
        let yc = (m.matrix() * a).column_mean();
        DMatrix::from_column_slice(yc.len(), 1, yc.as_slice())
    }

    fn tight_coarse() -> BmuaConfig {
        BmuaConfig {
            coarse_search: BisectOptions { max_iter: 60, rel_tol: 1e-9, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn coarse_single_superpixel_recovers_mean_abundance() {
        // Without the offset the RKHS holds no linear functions, so the
        // linear part of the data can only be explained by a.
        let m = spectra();
        let a = abundances(20);
        let kernel = KernelConfig::new(2, 0.0).unwrap();
        let gram = gram_matrix(&m, kernel);
        let out = bmua_coarse(&single_superpixel(&m, &a), &m, &gram, 1e-9, &tight_coarse()).unwrap();
        let mean = a.column_mean();
        for p in 0..3 {
            assert!((out.abundances[(p, 0)] - mean[p]).abs() < 1e-2, "{} vs {}", out.abundances, mean);
        }
    }

    #[test]
    fn coarse_offset_kernel_shrinks_towards_uniform() {
        // With (uᵀv + c)² a linear function δᵀu costs ‖δ‖²/(2c) in the RKHS
        // while moving a costs ‖δ‖², so the exact-fit solution is
        // ū + (ā − ū)/(1 + 2c) whenever it stays inside the simplex.
        let m = spectra();
        let a = abundances(20);
        for c in [0.25, 1.0] {
            let gram = gram_matrix(&m, KernelConfig::new(2, c).unwrap());
            let out = bmua_coarse(&single_superpixel(&m, &a), &m, &gram, 1e-10, &tight_coarse()).unwrap();
            let mean = a.column_mean();
            for p in 0..3 {
                let oracle = 1.0 / 3.0 + (mean[p] - 1.0 / 3.0) / (1.0 + 2.0 * c);
                assert!((out.abundances[(p, 0)] - oracle).abs() < 1e-3, "c={c}: {} vs {oracle}", out.abundances[(p, 0)]);
            }
        }
    }

    #[test]
    fn coarse_matches_khype_on_single_pixel_superpixels() {
        let m = endmembers();
        let a = abundances(9);
        let mut y = m.matrix() * &a;
        y.iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * ((i * 7 % 5) as f64 - 2.0));
        let img = SpectralImage::new(y.clone(), 3, 3).unwrap();
        let mu = 0.02;
        let kh = khype(&img, &m, mu, KernelConfig::default()).unwrap();
        let beta = kh.dual.as_ref().unwrap().beta();
        let c0 = (&beta * mu).norm_squared() / 9.0;
        let map = SuperpixelMap::identity(3, 3);
        let yc = coarsen(&y, &map).unwrap();
        let gram = gram_matrix(&m, KernelConfig::default());
        let cfg = BmuaConfig {
            coarse_search: BisectOptions { max_iter: 80, rel_tol: 1e-12, ..Default::default() },
            ..Default::default()
        };
        let out = bmua_coarse(&yc, &m, &gram, c0, &cfg).unwrap();
        let Multipliers::Coarse { mu0 } = out.dual.multipliers else { panic!() };
        assert_relative_eq!(mu0, 1.0 / mu, max_relative = 1e-6);
        let diff = crate::metrics::rmse(&out.abundances, &kh.abundances.data).unwrap();
        assert!(diff < 1e-3, "{diff}");
        assert!(out.constraint.relative_error() < 0.15);
    }

    #[test]
    fn coarse_zero_image_stays_on_simplex() {
        let m = endmembers();
        let yc = DMatrix::zeros(12, 2);
        let gram = gram_matrix(&m, KernelConfig::default());
        let out = bmua_coarse(&yc, &m, &gram, 1e-3, &BmuaConfig::default()).unwrap();
        for col in out.abundances.column_iter() {
            assert_relative_eq!(col.sum(), 1.0, epsilon = 1e-9);
            assert!(col.min() >= 0.0);
        }
    }

    fn noisy(y: &DMatrix<f64>, sd: f64, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        y.map(|v| v + sd * rng.sample::<f64, _>(rand_distr::StandardNormal))
    }

    fn fine_constants(c1: f64, budget: f64) -> ScaleConstants {
        ScaleConstants {
            c0: c1,
            c1,
            cy: budget,
            ce: 0.0,
            sigma_psi2: 0.0,
            s: 1.0,
            s_coarse: 1.0,
            fine_budget_clamped: false,
        }
    }

    #[test]
    fn fine_stage_anchors_to_exact_coarse_solution() {
        let m = spectra();
        let a = abundances(16);
        let sd = 1e-3;
        let y = noisy(&(m.matrix() * &a), sd, 3);
        let img = SpectralImage::new(y.clone(), 4, 4).unwrap();
        let consts = fine_constants(224.0 * sd * sd, 1e-6);
        let psi_d = DMatrix::zeros(224, 16);
        let r = bmua_fine(&img, &m, &a, &psi_d, &consts, &BmuaConfig::default()).unwrap();
        assert!(crate::metrics::rmse(&a, &r.abundances.data).unwrap() < 1e-2);
        for col in r.abundances.data.column_iter() {
            assert_relative_eq!(col.sum(), 1.0, epsilon = 1e-6);
        }
        let rebuilt = m.matrix() * &r.abundances.data + &r.nonlinear.data + &r.residual;
        assert_relative_eq!(rebuilt, y, epsilon = 1e-8);
        let fit = r.diagnostics.fine_residual_constraint.unwrap();
        assert!(fit.relative_error() < 0.15, "{fit:?}");
    }

    #[test]
    fn fine_single_pixel_satisfies_simplex() {
        let m = spectra();
        let a = abundances(1);
        let sd = 1e-2;
        let y = noisy(&(m.matrix() * &a), sd, 4);
        let img = SpectralImage::new(y, 1, 1).unwrap();
        let consts = fine_constants(224.0 * sd * sd, 1e-7);
        let r = bmua_fine(&img, &m, &a, &DMatrix::zeros(224, 1), &consts, &BmuaConfig::default()).unwrap();
        let dual = r.dual.unwrap();
        assert!(dual.gamma().min() >= -1e-9);
        let Multipliers::Fine { mu2, .. } = dual.multipliers else { unreachable!() };
        let raw = &a + dual.abundance_direction(m.matrix()) / mu2;
        assert_relative_eq!(raw.sum(), 1.0, epsilon = 1e-6);
        assert!(raw.min() >= -1e-9);
        // complementary slackness between γ and a
        for p in 0..3 {
            assert!(dual.gamma()[(p, 0)] * raw[(p, 0)] <= 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = BmuaConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.hom_eps = 1.5;
        assert!(cfg.validate().is_err());
        let cfg = BmuaConfig { bracket: (0.0, 1.0), ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
