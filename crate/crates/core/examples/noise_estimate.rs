//! Estimates the noise covariance of a scene with known noise and derives
//! the constraint constants used by the two-scale solver.

use nlunmix::multiscale::{coarsen, default_compactness, expand, slic_segment};
use nlunmix::simulation::{generate_scene, synthetic_endmembers, MixingModel, SceneSpec, SYNTHETIC_BANDS};
use nlunmix::statistics::{default_sigma_psi2, estimate_noise_cov, ScaleConstants};

fn main() -> nlunmix::Result<()> {
    let mut spec = SceneSpec::new(50, 50, 3);
    spec.model = MixingModel::Linear;
    spec.snr_db = Some(25.0);
    let m = synthetic_endmembers(3, SYNTHETIC_BANDS, 2)?;
    let scene = generate_scene(&spec, &m)?;
    let img = &scene.image;

    let est = estimate_noise_cov(img)?;
    println!("true  tr(Sigma) = {:.4e}", scene.noise.trace());
    println!("estim tr(Sigma) = {:.4e}", est.trace());

    let map = slic_segment(img, 300, default_compactness(img))?;
    let y_d = expand(&coarsen(img.data(), &map)?, &map)?;
    let c = ScaleConstants::compute(
        m.pinv(),
        img.data(),
        &y_d,
        &est,
        default_sigma_psi2(img),
        map.mean_size(),
        map.harmonic_mean_size(),
    )?;
    println!("{c:#?}");
    println!("fine anchor budget = {:.4e}", c.fine_budget());
    Ok(())
}
