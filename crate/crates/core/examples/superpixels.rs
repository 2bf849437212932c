//! Segments a scene with SLIC, prints the homogeneity of each candidate
//! superpixel count and checks the coarsen/expand round trip.

use nlunmix::multiscale::{
    coarsen, default_compactness, expand, select_num_superpixels, KSelectionPreference,
};
use nlunmix::simulation::{generate_scene, synthetic_endmembers, SceneSpec, SYNTHETIC_BANDS};

fn main() -> nlunmix::Result<()> {
    let mut spec = SceneSpec::new(50, 50, 3);
    spec.snr_db = Some(30.0);
    let m = synthetic_endmembers(3, SYNTHETIC_BANDS, 1)?;
    let scene = generate_scene(&spec, &m)?;
    let img = &scene.image;

    let n = img.num_pixels();
    let compactness = default_compactness(img);
    let sel = select_num_superpixels(
        img,
        n / 170,
        n / 8,
        0.1,
        compactness,
        KSelectionPreference::LargestSize,
    )?;
    println!("requested  realised  Hom");
    for (k, real, hom) in &sel.profile.candidates {
        println!("{k:>9}  {real:>8}  {hom:.3}");
    }
    let map = &sel.map;
    println!(
        "chosen K = {} ({} superpixels, mean size {:.1}, harmonic {:.1}, connected: {})",
        sel.k,
        map.count(),
        map.mean_size(),
        map.harmonic_mean_size(),
        map.is_connected()
    );

    let yc = coarsen(img.data(), map)?;
    let back = coarsen(&expand(&yc, map)?, map)?;
    println!("coarse image {}x{}, round trip error {:e}", yc.nrows(), yc.ncols(), (&back - &yc).amax());
    Ok(())
}
