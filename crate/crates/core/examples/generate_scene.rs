//! Draws a synthetic scene and writes it as a bundle directory.
//!
//! `cargo run --example generate_scene -- [out_dir] [lmm|blmm|pnmm] [snr_db|inf]`

use nlunmix::simulation::{generate_scene, synthetic_endmembers, SceneSpec, SYNTHETIC_BANDS};

fn main() -> nlunmix::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().cloned().unwrap_or_else(|| "scene".into());
    let mut spec = SceneSpec::new(50, 50, 3);
    if let Some(model) = args.get(1) {
        spec.model = model.parse()?;
    }
    spec.snr_db = match args.get(2).map(String::as_str) {
        Some("inf") => None,
        Some(s) => s.parse().ok(),
        None => Some(30.0),
    };
    spec.seed = 7;

    let m = synthetic_endmembers(spec.endmembers, SYNTHETIC_BANDS, spec.seed)?;
    let scene = generate_scene(&spec, &m)?;
    scene.save_bundle(std::path::Path::new(&out))?;

    let a = &scene.abundances.data;
    println!("{spec:?}");
    for p in 0..a.nrows() {
        let row = a.row(p);
        println!("endmember {p}: mean {:.3}, min {:.3}, max {:.3}", row.mean(), row.min(), row.max());
    }
    println!("noise trace = {:.3e}", scene.noise.trace());
    println!("wrote {out}/");
    Ok(())
}
