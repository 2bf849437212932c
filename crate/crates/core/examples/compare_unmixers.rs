//! Unmixes one synthetic bilinear scene with FCLS, K-Hype and BMUA-N and
//! prints the abundance RMSE of each.
//!
//! `cargo run --release --example compare_unmixers -- [seed] [lmm|blmm|pnmm] [snr_db]`

use nlunmix::kernels::KernelConfig;
use nlunmix::metrics::rmse;
use nlunmix::simulation::{generate_scene, synthetic_endmembers, SceneSpec, SYNTHETIC_BANDS};
use nlunmix::unmixers::{bmua_n, fcls, khype_grid_search, BmuaConfig, KHYPE_MU_GRID};

fn main() -> nlunmix::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut spec = SceneSpec::new(50, 50, 3);
    spec.seed = seed;
    spec.model = args.get(1).map_or(Ok(spec.model), |s| s.parse())?;
    spec.snr_db = match args.get(2).map(String::as_str) {
        Some("inf") => None,
        other => Some(other.and_then(|s| s.parse().ok()).unwrap_or(20.0)),
    };

    let m = synthetic_endmembers(3, SYNTHETIC_BANDS, seed)?;
    let scene = generate_scene(&spec, &m)?;
    let truth = &scene.abundances.data;

    let f = fcls(&scene.image, &m)?;
    println!("FCLS    rmse_a = {:.4}", rmse(truth, &f.abundances.data)?);

    let kh = khype_grid_search(&scene.image, &m, &KHYPE_MU_GRID, KernelConfig::default(), truth)?;
    println!("K-Hype  rmse_a = {:.4}  (mu = {})", rmse(truth, &kh.best.abundances.data)?, kh.best_mu);

    let b = bmua_n(&scene.image, &m, &BmuaConfig::default())?;
    println!("BMUA-N  rmse_a = {:.4}", rmse(truth, &b.abundances.data)?);
    println!("{}", serde_json::to_string_pretty(&b.diagnostics).unwrap_or_default());
    Ok(())
}
