//! K-Hype over its regularisation grid, scored against the true abundances.

use nlunmix::kernels::KernelConfig;
use nlunmix::simulation::{generate_scene, synthetic_endmembers, SceneSpec, SYNTHETIC_BANDS};
use nlunmix::unmixers::{khype_grid_search, KHYPE_MU_GRID};

fn main() -> nlunmix::Result<()> {
    let mut spec = SceneSpec::new(30, 30, 3);
    spec.snr_db = Some(30.0);
    let m = synthetic_endmembers(3, SYNTHETIC_BANDS, 4)?;
    let scene = generate_scene(&spec, &m)?;

    // the offset c of (u'v + c)^2 pulls abundances towards the uniform
    // point, so try a small one next to the default
    for offset in [1.0, 0.01] {
        let kernel = KernelConfig::new(2, offset)?;
        let g = khype_grid_search(&scene.image, &m, &KHYPE_MU_GRID, kernel, &scene.abundances.data)?;
        println!("offset {offset}");
        for (mu, e) in &g.table {
            println!("  mu {mu:<6} rmse_a {e:.4}");
        }
        println!("  best mu = {}", g.best_mu);
    }
    Ok(())
}
