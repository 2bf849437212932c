//! Command-line front end: scene generation, unmixing, evaluation, μ sweeps
//! and replay of recorded runs.
//!
//! Every run writes `manifest.json` into its output directory. The manifest
//! holds the exact argument vector, so `replay` re-executes the command and
//! reproduces every output file except the manifest's own timings.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data_model::{read_cube, write_cube, AbundanceMap, EndmemberMatrix, SpectralImage};
use crate::error::{Result, UnmixError};
use crate::kernels::KernelConfig;
use crate::metrics::EvalReport;
use crate::simulation::{self, MixingModel, Scene, SceneSpec, SYNTHETIC_BANDS};
use crate::unmixers::{self, BmuaConfig, UnmixResult, KHYPE_MU_GRID};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const ABUNDANCES_FILE: &str = "abundances.cube";
pub const PSI_FILE: &str = "psi.cube";
pub const EVAL_TEXT_FILE: &str = "eval.txt";
pub const EVAL_CSV_FILE: &str = "eval.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "nlunmix", version, about = "Blind multiscale nonlinear spectral unmixing")]
pub struct Cli {
    /// Worker threads for the per-pixel solves (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene bundle.
    Generate(GenerateArgs),
    /// Unmix an image.
    Unmix(UnmixArgs),
    /// Compare an estimate with the ground truth.
    Evaluate(EvaluateArgs),
    /// Run K-Hype over a grid of μ values.
    Sweep(SweepArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 50)]
    pub width: usize,
    #[arg(long, default_value_t = 50)]
    pub height: usize,
    /// Endmember CSV (bands x endmembers).
    #[arg(long, conflicts_with = "synthetic_endmembers")]
    pub endmembers: Option<PathBuf>,
    /// Draw this many smooth synthetic signatures instead of reading a CSV.
    #[arg(long)]
    pub synthetic_endmembers: Option<usize>,
    /// Number of bands of synthetic signatures.
    #[arg(long, default_value_t = SYNTHETIC_BANDS)]
    pub bands: usize,
    /// lmm, blmm, pnmm or pnmm:<exponent>.
    #[arg(long, default_value = "blmm")]
    pub model: String,
    /// SNR in dB; omit for a noiseless scene.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Correlation length of the abundance fields, in pixels.
    #[arg(long, default_value_t = 5.0)]
    pub smoothness: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Algorithm {
    Fcls,
    Khype,
    #[value(name = "bmua-n")]
    #[serde(rename = "bmua-n")]
    BmuaN,
}

#[derive(Debug, Args)]
pub struct UnmixArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub endmembers: PathBuf,
    #[arg(long, value_enum, default_value_t = Algorithm::BmuaN)]
    pub algorithm: Algorithm,
    /// K-Hype regularisation.
    #[arg(long, default_value_t = 0.01)]
    pub mu: f64,
    #[arg(long)]
    pub kmin: Option<usize>,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Fixes the superpixel count and skips the homogeneity search.
    #[arg(long)]
    pub superpixels: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub hom_eps: f64,
    #[arg(long)]
    pub sigma_psi2: Option<f64>,
    #[arg(long)]
    pub compactness: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub degree: u32,
    #[arg(long, default_value_t = 1.0)]
    pub offset: f64,
    /// Recorded in the manifest; the unmixers themselves are deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// True abundance cube, or a scene bundle directory.
    #[arg(long)]
    pub truth: PathBuf,
    /// Estimated abundance cube, or an unmix output directory.
    #[arg(long)]
    pub estimate: PathBuf,
    /// Observed image; taken from the bundle when `--truth` is a directory.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub endmembers: Option<PathBuf>,
    /// Nonlinear part; taken from the unmix directory when present there.
    #[arg(long)]
    pub psi: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub endmembers: PathBuf,
    /// True abundance cube used to score each μ.
    #[arg(long)]
    pub truth: PathBuf,
    /// Comma-separated μ values.
    #[arg(long, value_delimiter = ',', default_values_t = KHYPE_MU_GRID.to_vec())]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub degree: u32,
    #[arg(long, default_value_t = 1.0)]
    pub offset: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a run did and how to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub overrides: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Wall-clock seconds per stage.
    pub timings: Vec<(String, f64)>,
    pub version: String,
}

impl RunManifest {
    fn new(subcommand: &str, args: &[String], out: &Path) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            args: args.to_vec(),
            inputs: Vec::new(),
            overrides: BTreeMap::new(),
            seed: None,
            out: out.to_path_buf(),
            timings: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| UnmixError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| UnmixError::format(path, e.to_string()))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| UnmixError::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| UnmixError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| UnmixError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| UnmixError::io(dir, e))
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(UnmixError::InvalidArgument(e.to_string())),
    };
    let raw: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    run(cli, &raw)
}

/// Runs a parsed command; `raw` is its argument vector for the manifest.
pub fn run(cli: Cli, raw: &[String]) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UnmixError::InvalidArgument("--threads must be positive".into()));
        }
        // The global pool can only be set once per process.
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, raw).map_err(|e| tag(e, "generate")),
        Command::Unmix(a) => cmd_unmix(&a, raw).map_err(|e| tag(e, "unmix")),
        Command::Evaluate(a) => cmd_evaluate(&a, raw).map(|_| ()).map_err(|e| tag(e, "evaluate")),
        Command::Sweep(a) => cmd_sweep(&a, raw).map_err(|e| tag(e, "sweep")),
        Command::Replay(a) => cmd_replay(&a),
    }
}

// Keeps the innermost stage when the unmixer already tagged the error.
fn tag(e: UnmixError, stage: &'static str) -> UnmixError {
    if e.stage().is_some() {
        e
    } else {
        e.in_stage(stage)
    }
}

pub fn cmd_generate(a: &GenerateArgs, raw: &[String]) -> Result<()> {
    let start = Instant::now();
    let model: MixingModel = a.model.parse()?;
    let m = match (&a.endmembers, a.synthetic_endmembers) {
        (Some(path), None) => EndmemberMatrix::load_csv(path)?,
        (None, Some(p)) => simulation::synthetic_endmembers(p, a.bands, a.seed)?,
        _ => {
            return Err(UnmixError::InvalidArgument(
                "give either --endmembers <csv> or --synthetic-endmembers <count>".into(),
            ))
        }
    };
    let spec = SceneSpec {
        width: a.width,
        height: a.height,
        endmembers: m.count(),
        model,
        snr_db: a.snr,
        seed: a.seed,
        smoothness: a.smoothness,
    };
    let scene: Scene = simulation::generate_scene(&spec, &m)?;
    scene.save_bundle(&a.out)?;
    for p in 0..m.count() {
        write_pgm(&a.out.join(format!("abundance_{p}.pgm")), &scene.abundances, p)?;
    }
    let mut manifest = RunManifest::new("generate", raw, &a.out);
    manifest.inputs.extend(a.endmembers.clone());
    manifest.seed = Some(a.seed);
    manifest.overrides.insert("model".into(), model.to_string());
    manifest.timings.push(("generate".into(), start.elapsed().as_secs_f64()));
    manifest.save(&a.out)?;
    log::info!("wrote scene bundle to {}", a.out.display());
    Ok(())
}

fn bmua_config(a: &UnmixArgs, kernel: KernelConfig) -> BmuaConfig {
    BmuaConfig {
        kernel,
        sigma_psi2: a.sigma_psi2,
        kmin: a.kmin,
        kmax: a.kmax,
        num_superpixels: a.superpixels,
        hom_eps: a.hom_eps,
        compactness: a.compactness,
        ..Default::default()
    }
}

/// Report written next to the estimates. Timings go to the manifest, so
/// identical runs give identical reports.
#[derive(Debug, Serialize)]
struct UnmixReport<'a> {
    algorithm: Algorithm,
    psi_written: bool,
    diagnostics: &'a unmixers::Diagnostics,
}

pub fn cmd_unmix(a: &UnmixArgs, raw: &[String]) -> Result<()> {
    let img = SpectralImage::load(&a.image)?;
    let m = EndmemberMatrix::load_csv(&a.endmembers)?;
    let kernel = KernelConfig::new(a.degree, a.offset)?;
    let result: UnmixResult = match a.algorithm {
        Algorithm::Fcls => unmixers::fcls(&img, &m)?,
        Algorithm::Khype => unmixers::khype(&img, &m, a.mu, kernel)?,
        Algorithm::BmuaN => unmixers::bmua_n(&img, &m, &bmua_config(a, kernel))?,
    };
    create_dir(&a.out)?;
    result.abundances.save(a.out.join(ABUNDANCES_FILE))?;
    let psi_written = result.has_nonlinear_part();
    if psi_written {
        write_cube(&a.out.join(PSI_FILE), &result.nonlinear.data, img.width(), img.height())?;
    }
    for p in 0..m.count() {
        write_pgm(&a.out.join(format!("abundance_{p}.pgm")), &result.abundances, p)?;
    }
    let report = UnmixReport {
        algorithm: a.algorithm,
        psi_written,
        diagnostics: &result.diagnostics,
    };
    write_json(&a.out.join(REPORT_FILE), &report)?;
    let mut manifest = RunManifest::new("unmix", raw, &a.out);
    manifest.inputs = vec![a.image.clone(), a.endmembers.clone()];
    manifest.seed = Some(a.seed);
    manifest.overrides.insert("algorithm".into(), format!("{:?}", a.algorithm));
    manifest.overrides.insert("psi_written".into(), psi_written.to_string());
    if a.algorithm == Algorithm::Khype {
        manifest.overrides.insert("mu".into(), a.mu.to_string());
    }
    manifest.timings = result.timings.clone();
    manifest.save(&a.out)?;
    if !psi_written {
        log::info!("{:?} has no nonlinear part; {PSI_FILE} not written", a.algorithm);
    }
    Ok(())
}

fn resolve(path: &Path, file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(file)
    } else {
        path.to_path_buf()
    }
}

/// Evaluates an estimate; the report is printed and, with `--out`, saved as
/// `eval.txt` and `eval.csv`.
pub fn cmd_evaluate(a: &EvaluateArgs, raw: &[String]) -> Result<EvalReport> {
    let truth = AbundanceMap::load(resolve(&a.truth, simulation::BUNDLE_ABUNDANCES))?;
    let est = AbundanceMap::load(resolve(&a.estimate, ABUNDANCES_FILE))?;
    if truth.data.shape() != est.data.shape() {
        return Err(UnmixError::Dimension(format!(
            "truth has {} endmembers x {} pixels, estimate {} x {}",
            truth.endmembers(),
            truth.data.ncols(),
            est.endmembers(),
            est.data.ncols()
        )));
    }
    let bundle = a.truth.is_dir().then_some(a.truth.as_path());
    let image_path = a
        .image
        .clone()
        .or_else(|| bundle.map(|d| d.join(simulation::BUNDLE_IMAGE)))
        .ok_or_else(|| UnmixError::InvalidArgument("--image is required unless --truth is a bundle".into()))?;
    let m_path = a
        .endmembers
        .clone()
        .or_else(|| bundle.map(|d| d.join(simulation::BUNDLE_ENDMEMBERS)))
        .ok_or_else(|| {
            UnmixError::InvalidArgument("--endmembers is required unless --truth is a bundle".into())
        })?;
    let img = SpectralImage::load(&image_path)?;
    let m = EndmemberMatrix::load_csv(&m_path)?;
    if m.count() != est.endmembers() {
        return Err(UnmixError::Dimension(format!(
            "{} endmembers but {} abundance rows",
            m.count(),
            est.endmembers()
        )));
    }
    let mut y_rec = m.matrix() * &est.data;
    let psi_path = a.psi.clone().or_else(|| {
        let p = a.estimate.join(PSI_FILE);
        (a.estimate.is_dir() && p.exists()).then_some(p)
    });
    if let Some(p) = &psi_path {
        let (psi, _, _) = read_cube(p)?;
        if psi.shape() != y_rec.shape() {
            return Err(UnmixError::Dimension(format!(
                "psi is {:?}, reconstruction {:?}",
                psi.shape(),
                y_rec.shape()
            )));
        }
        y_rec += psi;
    }
    let report = EvalReport::compute(&truth.data, &est.data, img.data(), &y_rec)?;
    print!("{}", report.to_text());
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_text(&out.join(EVAL_TEXT_FILE), &report.to_text())?;
        write_text(
            &out.join(EVAL_CSV_FILE),
            &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.to_csv_row()),
        )?;
        let mut manifest = RunManifest::new("evaluate", raw, out);
        manifest.inputs = vec![a.truth.clone(), a.estimate.clone(), image_path, m_path];
        manifest.inputs.extend(psi_path);
        manifest.save(out)?;
    }
    Ok(report)
}

pub fn cmd_sweep(a: &SweepArgs, raw: &[String]) -> Result<()> {
    let start = Instant::now();
    let img = SpectralImage::load(&a.image)?;
    let m = EndmemberMatrix::load_csv(&a.endmembers)?;
    let truth = AbundanceMap::load(&a.truth)?;
    let kernel = KernelConfig::new(a.degree, a.offset)?;
    let search = unmixers::khype_grid_search(&img, &m, &a.grid, kernel, &truth.data)?;
    create_dir(&a.out)?;
    let path = a.out.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| UnmixError::format(&path, e.to_string()))?;
    w.write_record(["mu", "rmse_a"]).map_err(|e| UnmixError::format(&path, e.to_string()))?;
    for (mu, e) in &search.table {
        w.write_record([mu.to_string(), format!("{e:e}")])
            .map_err(|e| UnmixError::format(&path, e.to_string()))?;
    }
    w.flush().map_err(|e| UnmixError::io(&path, e))?;
    search.best.abundances.save(a.out.join(ABUNDANCES_FILE))?;
    write_cube(&a.out.join(PSI_FILE), &search.best.nonlinear.data, img.width(), img.height())?;
    println!("best mu = {}", search.best_mu);
    let mut manifest = RunManifest::new("sweep", raw, &a.out);
    manifest.inputs = vec![a.image.clone(), a.endmembers.clone(), a.truth.clone()];
    manifest.overrides.insert("best_mu".into(), search.best_mu.to_string());
    manifest.timings.push(("sweep".into(), start.elapsed().as_secs_f64()));
    manifest.save(&a.out)
}

/// Re-runs a recorded command, optionally redirecting its output.
pub fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    let mut args = manifest.args.clone();
    if let Some(out) = &a.out {
        let flag = args.iter().position(|s| s == "--out");
        match flag {
            Some(i) if i + 1 < args.len() => args[i + 1] = out.to_string_lossy().into_owned(),
            _ => {
                args.push("--out".into());
                args.push(out.to_string_lossy().into_owned());
            }
        }
    }
    if args.first().map(String::as_str) == Some("replay") {
        return Err(UnmixError::InvalidArgument("manifest records a replay".into()));
    }
    log::info!("replaying `{}`", args.join(" "));
    run_from(std::iter::once("nlunmix".to_string()).chain(args))
}

/// Binary 8-bit PGM of one abundance row, clamped to `[0, 1]`.
pub fn write_pgm(path: &Path, a: &AbundanceMap, p: usize) -> Result<()> {
    if p >= a.endmembers() {
        return Err(UnmixError::InvalidArgument(format!("no endmember {p}")));
    }
    let mut bytes = format!("P5\n{} {}\n255\n", a.width, a.height).into_bytes();
    bytes.extend(a.data.row(p).iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut f = fs::File::create(path).map_err(|e| UnmixError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| UnmixError::io(path, e))
}

/// Logging setup; verbosity comes from `NLUNMIX_LOG` (default `warn`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("NLUNMIX_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}
