//! The command-line workflow driven from code: generate a bundle, unmix it,
//! evaluate, then replay the unmix run from its manifest.

use nlunmix::cli::run_from;

fn main() -> nlunmix::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| nlunmix::UnmixError::InvalidArgument(e.to_string()))?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (scene, est, replay) = (p("scene"), p("est"), p("replay"));

    let run = |args: &[&str]| run_from(std::iter::once("nlunmix").chain(args.iter().copied()));
    run(&["generate", "--width", "30", "--height", "30", "--synthetic-endmembers", "3", "--snr", "30", "--seed", "3", "--out", &scene])?;
    let image = format!("{scene}/image.cube");
    let endmembers = format!("{scene}/endmembers.csv");
    run(&["unmix", "--image", &image, "--endmembers", &endmembers, "--algorithm", "bmua-n", "--out", &est])?;
    run(&["evaluate", "--truth", &scene, "--estimate", &est])?;
    run(&["replay", "--manifest", &format!("{est}/manifest.json"), "--out", &replay])?;

    let same = std::fs::read(format!("{est}/abundances.cube")).ok() == std::fs::read(format!("{replay}/abundances.cube")).ok();
    println!("replay reproduces abundances: {same}");
    Ok(())
}
