//! Fully constrained least squares on linear and bilinear scenes.

use nlunmix::metrics::rmse;
use nlunmix::simulation::{generate_scene, synthetic_endmembers, MixingModel, SceneSpec, SYNTHETIC_BANDS};
use nlunmix::unmixers::fcls;

fn main() -> nlunmix::Result<()> {
    let m = synthetic_endmembers(3, SYNTHETIC_BANDS, 3)?;
    for model in [MixingModel::Linear, MixingModel::Bilinear, MixingModel::pnmm()] {
        for snr in [None, Some(30.0), Some(20.0)] {
            let mut spec = SceneSpec::new(30, 30, 3);
            spec.model = model;
            spec.snr_db = snr;
            let scene = generate_scene(&spec, &m)?;
            let r = fcls(&scene.image, &m)?;
            let (neg, sum) = r.abundances.simplex_violation();
            println!(
                "{model:>9} snr {:>4}  rmse_a {:.4}  simplex violation ({neg:.1e}, {sum:.1e})",
                snr.map_or("inf".into(), |s| s.to_string()),
                rmse(&scene.abundances.data, &r.abundances.data)?
            );
        }
    }
    Ok(())
}
