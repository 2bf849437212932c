//! Runs the blind two-scale unmixer stage by stage: noise estimate,
//! superpixels, constants, coarse solve, fine solve.

use nlunmix::kernels::gram_matrix;
use nlunmix::metrics::rmse;
use nlunmix::multiscale::{coarsen, default_compactness, expand, slic_segment};
use nlunmix::simulation::{generate_scene, synthetic_endmembers, SceneSpec, SYNTHETIC_BANDS};
use nlunmix::statistics::{default_sigma_psi2, estimate_noise_cov, ScaleConstants};
use nlunmix::unmixers::{bmua_coarse, bmua_fine, bmua_n, BmuaConfig};

fn main() -> nlunmix::Result<()> {
    let mut spec = SceneSpec::new(40, 40, 3);
    spec.snr_db = Some(25.0);
    let m = synthetic_endmembers(3, SYNTHETIC_BANDS, 1)?;
    let scene = generate_scene(&spec, &m)?;
    let (img, truth) = (&scene.image, &scene.abundances.data);
    let cfg = BmuaConfig::default();

    let noise = estimate_noise_cov(img)?;
    let map = slic_segment(img, img.num_pixels() / 20, default_compactness(img))?;
    let yc = coarsen(img.data(), &map)?;
    let consts = ScaleConstants::compute(
        m.pinv(),
        img.data(),
        &expand(&yc, &map)?,
        &noise,
        default_sigma_psi2(img),
        map.mean_size(),
        map.harmonic_mean_size(),
    )?;

    let coarse = bmua_coarse(&yc, &m, &gram_matrix(&m, cfg.kernel), consts.c0, &cfg)?;
    let a_d = expand(&coarse.abundances, &map)?;
    println!(
        "coarse: {} superpixels, residual {:.4e} vs C0 {:.4e}, rmse_a {:.4}",
        map.count(),
        coarse.constraint.achieved,
        consts.c0,
        rmse(truth, &a_d)?
    );

    let fine = bmua_fine(img, &m, &a_d, &expand(&coarse.nonlinear, &map)?, &consts, &cfg)?;
    let d = &fine.diagnostics;
    println!("fine: mu1 {:?} mu2 {:?}, rmse_a {:.4}", d.mu1, d.mu2, rmse(truth, &fine.abundances.data)?);
    for c in [&d.fine_residual_constraint, &d.fine_anchor_constraint].into_iter().flatten() {
        println!("  constraint {:.4e} vs {:.4e}", c.achieved, c.target);
    }

    // the same thing in one call, with the superpixel count picked by Hom
    let r = bmua_n(img, &m, &cfg)?;
    println!("bmua_n: K = {:?}, rmse_a {:.4}", r.diagnostics.superpixels, rmse(truth, &r.abundances.data)?);
    for (stage, secs) in &r.timings {
        println!("  {stage:<12} {secs:.3}s");
    }
    Ok(())
}
