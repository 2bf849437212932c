//! Synthetic scenes: smooth abundance maps, linear and nonlinear mixing,
//! and white Gaussian noise at a prescribed SNR.
//!
//! Every random draw comes from a ChaCha stream derived from the scene seed,
//! so a seed fully determines the scene.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data_model::{AbundanceMap, EndmemberMatrix, SpectralImage};
use crate::error::{Result, UnmixError};
use crate::statistics::NoiseCovariance;

/// Default exponent of the post-nonlinear model.
pub const PNMM_EXPONENT: f64 = 0.7;
/// Number of bands of the built-in synthetic signatures.
pub const SYNTHETIC_BANDS: usize = 224;

const STREAM_ABUNDANCES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_ENDMEMBERS: u64 = 3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Forward mixing model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum MixingModel {
    /// `y = M a`.
    Linear,
    /// `y = M a + Σ_{i<j} a_i a_j m_i ∘ m_j`.
    Bilinear,
    /// `y = (M a)^exponent`, elementwise.
    PostNonlinear { exponent: f64 },
}

impl MixingModel {
    pub fn pnmm() -> Self {
        MixingModel::PostNonlinear {
            exponent: PNMM_EXPONENT,
        }
    }
}

impl fmt::Display for MixingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixingModel::Linear => write!(f, "lmm"),
            MixingModel::Bilinear => write!(f, "blmm"),
            MixingModel::PostNonlinear { exponent } if *exponent == PNMM_EXPONENT => {
                write!(f, "pnmm")
            }
            MixingModel::PostNonlinear { exponent } => write!(f, "pnmm:{exponent}"),
        }
    }
}

impl FromStr for MixingModel {
    type Err = UnmixError;

    /// Accepts `lmm`, `blmm`, `pnmm` and `pnmm:<exponent>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "lmm" | "linear" => Ok(MixingModel::Linear),
            "blmm" | "bilinear" => Ok(MixingModel::Bilinear),
            "pnmm" => Ok(MixingModel::pnmm()),
            other => match other.strip_prefix("pnmm:") {
                Some(e) => e
                    .parse::<f64>()
                    .ok()
                    .filter(|e| e.is_finite() && *e > 0.0)
                    .map(|exponent| MixingModel::PostNonlinear { exponent })
                    .ok_or_else(|| UnmixError::InvalidArgument(format!("bad exponent in `{s}`"))),
                None => Err(UnmixError::InvalidArgument(format!("unknown mixing model `{s}`"))),
            },
        }
    }
}

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub endmembers: usize,
    pub model: MixingModel,
    /// `None` for a noiseless scene.
    pub snr_db: Option<f64>,
    pub seed: u64,
    /// Standard deviation, in pixels, of the blur applied to the white-noise
    /// fields behind the abundance maps.
    pub smoothness: f64,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, endmembers: usize) -> Self {
        SceneSpec {
            width,
            height,
            endmembers,
            model: MixingModel::Linear,
            snr_db: None,
            seed: 0,
            smoothness: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.endmembers == 0 {
            return Err(UnmixError::InvalidArgument(
                "scene needs positive size and at least one endmember".into(),
            ));
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(UnmixError::InvalidArgument(format!("SNR must be finite, got {s}")));
            }
        }
        if !(self.smoothness > 0.0) {
            return Err(UnmixError::InvalidArgument("smoothness must be positive".into()));
        }
        Ok(())
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let snr = self.snr_db.map_or("inf".to_string(), |s| s.to_string());
        format!(
            "width = {}\nheight = {}\nendmembers = {}\nmodel = {}\nsnr_db = {}\nseed = {}\nsmoothness = {}\n",
            self.width, self.height, self.endmembers, self.model, snr, self.seed, self.smoothness
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = SceneSpec::new(1, 1, 1);
        let bad = |k: &str, v: &str| UnmixError::InvalidArgument(format!("bad value `{v}` for `{k}`"));
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UnmixError::InvalidArgument(format!("malformed line `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "width" => spec.width = v.parse().map_err(|_| bad(k, v))?,
                "height" => spec.height = v.parse().map_err(|_| bad(k, v))?,
                "endmembers" => spec.endmembers = v.parse().map_err(|_| bad(k, v))?,
                "model" => spec.model = v.parse()?,
                "snr_db" => {
                    spec.snr_db = if v == "inf" { None } else { Some(v.parse().map_err(|_| bad(k, v))?) }
                }
                "seed" => spec.seed = v.parse().map_err(|_| bad(k, v))?,
                "smoothness" => spec.smoothness = v.parse().map_err(|_| bad(k, v))?,
                _ => return Err(UnmixError::InvalidArgument(format!("unknown key `{k}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Separable Gaussian blur with weights renormalised at the borders.
fn blur(field: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = ((3.0 * sigma).ceil() as usize).min(w.max(h));
    let weights: Vec<f64> = (0..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let pass = |src: &[f64], len: usize, stride: usize, count: usize, step: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            let base = line * step;
            for i in 0..len {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(len - 1);
                let (mut acc, mut norm) = (0.0, 0.0);
                for j in lo..=hi {
                    let wgt = weights[i.abs_diff(j)];
                    acc += wgt * src[base + j * stride];
                    norm += wgt;
                }
                out[base + i * stride] = acc / norm;
            }
        }
        out
    };
    let rows = pass(field, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}

/// Smooth abundance maps: blurred Gaussian white noise, squared and
/// normalised per pixel onto the simplex.
pub fn gen_abundances(spec: &SceneSpec) -> Result<AbundanceMap> {
    spec.validate()?;
    let (w, h, p) = (spec.width, spec.height, spec.endmembers);
    let n = w * h;
    if p == 1 {
        return AbundanceMap::new(DMatrix::from_element(1, n, 1.0), w, h);
    }
    let mut rng = rng_for(spec.seed, STREAM_ABUNDANCES);
    let mut a = DMatrix::zeros(p, n);
    for k in 0..p {
        let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let smooth = blur(&noise, w, h, spec.smoothness);
        for (j, v) in smooth.iter().enumerate() {
            a[(k, j)] = v * v;
        }
    }
    for mut col in a.column_iter_mut() {
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        } else {
            col.fill(1.0 / p as f64);
        }
    }
    AbundanceMap::new(a, w, h)
}

/// Mixes endmembers and abundances under `model`.
pub fn mix(m: &EndmemberMatrix, a: &AbundanceMap, model: MixingModel) -> Result<SpectralImage> {
    let mm = m.matrix();
    if mm.ncols() != a.endmembers() {
        return Err(UnmixError::Dimension(format!(
            "{} endmembers but {} abundance rows",
            mm.ncols(),
            a.endmembers()
        )));
    }
    let mut y = mm * &a.data;
    match model {
        MixingModel::Linear => {}
        MixingModel::Bilinear => {
            let p = mm.ncols();
            for i in 0..p {
                for j in i + 1..p {
                    let prod = mm.column(i).component_mul(&mm.column(j));
                    for (n, mut col) in y.column_iter_mut().enumerate() {
                        col.axpy(a.data[(i, n)] * a.data[(j, n)], &prod, 1.0);
                    }
                }
            }
        }
        MixingModel::PostNonlinear { exponent } => {
            if let Some(v) = y.iter().find(|&&v| v < 0.0) {
                return Err(UnmixError::InvalidArgument(format!(
                    "post-nonlinear model needs nonnegative linear mixtures, found {v}"
                )));
            }
            y.apply(|v| *v = v.powf(exponent));
        }
    }
    SpectralImage::new(y, a.width, a.height)
}

/// Adds white Gaussian noise whose per-band variance is
/// `Σ y² / (L·N·10^(snr/10))`. An infinite SNR leaves the image untouched.
pub fn add_noise(
    img: &SpectralImage,
    snr_db: f64,
    seed: u64,
) -> Result<(SpectralImage, NoiseCovariance)> {
    let y = img.data();
    if snr_db == f64::INFINITY {
        return Ok((img.clone(), NoiseCovariance::isotropic(img.bands(), 0.0)?));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(UnmixError::InvalidArgument(format!("invalid SNR {snr_db}")));
    }
    let power = y.norm_squared();
    if power == 0.0 {
        return Err(UnmixError::InvalidArgument("cannot set an SNR on an all-zero image".into()));
    }
    let var = power / (y.len() as f64 * 10f64.powf(snr_db / 10.0));
    let sd = var.sqrt();
    let mut rng = rng_for(seed, STREAM_NOISE);
    let noisy = y.map(|v| v + sd * rng.sample::<f64, _>(StandardNormal));
    Ok((
        SpectralImage::new(noisy, img.width(), img.height())?,
        NoiseCovariance::isotropic(img.bands(), var)?,
    ))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smooth reflectance-like spectra built from shifted sigmoids, scaled into
/// `[0, 1]`. Sets with a pair closer than 5 degrees are redrawn.
pub fn synthetic_endmembers(p: usize, bands: usize, seed: u64) -> Result<EndmemberMatrix> {
    if p == 0 || bands < p.max(2) {
        return Err(UnmixError::InvalidArgument(format!(
            "cannot draw {p} endmembers with {bands} bands"
        )));
    }
    let mut rng = rng_for(seed, STREAM_ENDMEMBERS);
    let min_angle = 5f64.to_radians();
    for _ in 0..1000 {
        let mut m = DMatrix::zeros(bands, p);
        for k in 0..p {
            let steps = rng.random_range(3..=6);
            let mut raw = vec![0.0; bands];
            for _ in 0..steps {
                let height: f64 = rng.random_range(-1.0..1.0);
                let centre: f64 = rng.random_range(0.0..1.0);
                let width: f64 = rng.random_range(0.01..0.1);
                for (l, v) in raw.iter_mut().enumerate() {
                    let x = l as f64 / (bands - 1) as f64;
                    *v += height * logistic((x - centre) / width);
                }
            }
            let (lo, hi) = raw
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let floor: f64 = rng.random_range(0.02..0.3);
            let ceil: f64 = rng.random_range(0.55..0.95);
            let span = (hi - lo).max(1e-12);
            for (l, v) in raw.iter().enumerate() {
                m[(l, k)] = floor + (ceil - floor) * (v - lo) / span;
            }
        }
        let distinct = (0..p).all(|i| {
            (i + 1..p).all(|j| {
                let c = m.column(i).dot(&m.column(j)) / (m.column(i).norm() * m.column(j).norm());
                c.clamp(-1.0, 1.0).acos() > min_angle
            })
        });
        if distinct {
            if let Ok(em) = EndmemberMatrix::new(m) {
                return Ok(em);
            }
        }
    }
    Err(UnmixError::InvalidArgument("could not draw distinct endmembers".into()))
}

/// A generated scene together with its ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub image: SpectralImage,
    pub clean: SpectralImage,
    pub abundances: AbundanceMap,
    pub endmembers: EndmemberMatrix,
    pub noise: NoiseCovariance,
}

/// Draws abundances, mixes them with `m` and adds noise.
pub fn generate_scene(spec: &SceneSpec, m: &EndmemberMatrix) -> Result<Scene> {
    spec.validate()?;
    if m.count() != spec.endmembers {
        return Err(UnmixError::Dimension(format!(
            "spec asks for {} endmembers, matrix has {}",
            spec.endmembers,
            m.count()
        )));
    }
    let abundances = gen_abundances(spec)?;
    let clean = mix(m, &abundances, spec.model)?;
    let (image, noise) = add_noise(&clean, spec.snr_db.unwrap_or(f64::INFINITY), spec.seed)?;
    Ok(Scene {
        spec: spec.clone(),
        image,
        clean,
        abundances,
        endmembers: m.clone(),
        noise,
    })
}

pub const BUNDLE_IMAGE: &str = "image.cube";
pub const BUNDLE_ABUNDANCES: &str = "abundances.cube";
pub const BUNDLE_ENDMEMBERS: &str = "endmembers.csv";
pub const BUNDLE_SPEC: &str = "spec.txt";

impl Scene {
    /// Writes the image, true abundances, endmembers and spec into `dir`.
    pub fn save_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| UnmixError::io(dir, e))?;
        self.image.save(dir.join(BUNDLE_IMAGE))?;
        self.abundances.save(dir.join(BUNDLE_ABUNDANCES))?;
        self.endmembers.save_csv(dir.join(BUNDLE_ENDMEMBERS))?;
        let spec = dir.join(BUNDLE_SPEC);
        fs::write(&spec, self.spec.to_text()).map_err(|e| UnmixError::io(&spec, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_endmembers() -> EndmemberMatrix {
        EndmemberMatrix::new(DMatrix::from_row_slice(3, 2, &[0.2, 0.6, 0.5, 0.3, 0.9, 0.4])).unwrap()
    }

    #[test]
    fn single_endmember_map_is_ones() {
        let a = gen_abundances(&SceneSpec::new(4, 3, 1)).unwrap();
        assert_eq!(a.data, DMatrix::from_element(1, 12, 1.0));
    }

    #[test]
    fn abundances_on_simplex() {
        let mut spec = SceneSpec::new(20, 10, 4);
        spec.seed = 9;
        let a = gen_abundances(&spec).unwrap();
        let (neg, sum) = a.simplex_violation();
        assert_eq!(neg, 0.0);
        assert!(sum <= 1e-9);
    }

    #[test]
    fn very_smooth_maps_are_flat() {
        let mut spec = SceneSpec::new(16, 16, 3);
        spec.smoothness = 1e6;
        let a = gen_abundances(&spec).unwrap();
        let mut worst: f64 = 0.0;
        for r in 0..16 {
            for c in 0..15 {
                let n = r * 16 + c;
                worst = worst.max((a.data.column(n) - a.data.column(n + 1)).amax());
            }
        }
        assert!(worst <= 1e-3, "{worst}");
    }

    #[test]
    fn bilinear_examples() {
        let m = two_endmembers();
        let a = AbundanceMap::new(DMatrix::from_column_slice(2, 1, &[0.5, 0.5]), 1, 1).unwrap();
        let y = mix(&m, &a, MixingModel::Bilinear).unwrap();
        let (m1, m2) = (m.matrix().column(0), m.matrix().column(1));
        let expected = m1 * 0.5 + m2 * 0.5 + m1.component_mul(&m2) * 0.25;
        assert_relative_eq!(y.data().column(0).into_owned(), expected, epsilon = 1e-15);

        let one = EndmemberMatrix::new(DMatrix::from_column_slice(3, 1, &[0.1, 0.2, 0.3])).unwrap();
        let a1 = AbundanceMap::new(DMatrix::from_element(1, 2, 1.0), 2, 1).unwrap();
        assert_eq!(
            mix(&one, &a1, MixingModel::Bilinear).unwrap(),
            mix(&one, &a1, MixingModel::Linear).unwrap()
        );
        let onehot = AbundanceMap::new(DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), 2, 1).unwrap();
        assert_eq!(
            mix(&m, &onehot, MixingModel::Bilinear).unwrap(),
            mix(&m, &onehot, MixingModel::Linear).unwrap()
        );
    }

    #[test]
    fn post_nonlinear_examples() {
        let m = two_endmembers();
        let onehot = AbundanceMap::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), 1, 1).unwrap();
        let y = mix(&m, &onehot, MixingModel::pnmm()).unwrap();
        for l in 0..3 {
            assert_relative_eq!(y.data()[(l, 0)], m.matrix()[(l, 1)].powf(0.7), epsilon = 1e-15);
        }
        let a = gen_abundances(&SceneSpec::new(3, 3, 2)).unwrap();
        assert_eq!(
            mix(&m, &a, MixingModel::PostNonlinear { exponent: 1.0 }).unwrap(),
            mix(&m, &a, MixingModel::Linear).unwrap()
        );
        let neg = EndmemberMatrix::new(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(mix(&neg, &onehot_first(), MixingModel::pnmm()).is_err());
    }

    fn onehot_first() -> AbundanceMap {
        AbundanceMap::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), 1, 1).unwrap()
    }

    #[test]
    fn noise_levels() {
        let img = SpectralImage::new(DMatrix::from_element(4, 25, 1.0), 5, 5).unwrap();
        let (same, cov) = add_noise(&img, f64::INFINITY, 1).unwrap();
        assert_eq!(same, img);
        assert_eq!(cov.trace(), 0.0);

        let (_, cov) = add_noise(&img, 20.0, 1).unwrap();
        assert_relative_eq!(cov.matrix()[(0, 0)], 0.01, epsilon = 1e-15);

        let zero = SpectralImage::new(DMatrix::zeros(4, 25), 5, 5).unwrap();
        assert!(add_noise(&zero, 20.0, 1).is_err());
    }

    #[test]
    fn empirical_snr_close_to_target() {
        let m = synthetic_endmembers(3, 100, 4).unwrap();
        let mut spec = SceneSpec::new(40, 25, 3);
        spec.seed = 4;
        let a = gen_abundances(&spec).unwrap();
        let clean = mix(&m, &a, MixingModel::Linear).unwrap();
        let (noisy, _) = add_noise(&clean, 20.0, 4).unwrap();
        let noise = noisy.data() - clean.data();
        let snr = 10.0 * (clean.data().norm_squared() / noise.norm_squared()).log10();
        assert!((snr - 20.0).abs() < 0.2, "{snr}");
    }

    #[test]
    fn seeds_are_reproducible() {
        let m = synthetic_endmembers(3, 50, 1).unwrap();
        assert_eq!(m, synthetic_endmembers(3, 50, 1).unwrap());
        let mut spec = SceneSpec::new(10, 10, 3);
        spec.model = MixingModel::Bilinear;
        spec.snr_db = Some(25.0);
        spec.seed = 77;
        let a = generate_scene(&spec, &m).unwrap();
        let b = generate_scene(&spec, &m).unwrap();
        assert_eq!(a.image, b.image);
        spec.seed = 78;
        assert_ne!(generate_scene(&spec, &m).unwrap().image, a.image);
    }

    #[test]
    fn synthetic_spectra_in_unit_range() {
        let m = synthetic_endmembers(5, SYNTHETIC_BANDS, 2).unwrap();
        assert_eq!(m.matrix().shape(), (SYNTHETIC_BANDS, 5));
        assert!(m.matrix().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn spec_text_round_trip() {
        let mut spec = SceneSpec::new(50, 40, 3);
        spec.model = MixingModel::PostNonlinear { exponent: 0.5 };
        spec.snr_db = Some(30.0);
        spec.seed = 12;
        assert_eq!(SceneSpec::from_text(&spec.to_text()).unwrap(), spec);
        spec.snr_db = None;
        spec.model = MixingModel::pnmm();
        assert_eq!(SceneSpec::from_text(&spec.to_text()).unwrap(), spec);
        assert!("tlmm".parse::<MixingModel>().is_err());
    }
}
