//! Matrix-shaped domain types and their on-disk formats.
//!
//! Every image-like quantity is stored as a `D × N` matrix whose column `n`
//! holds pixel `n`; pixels are numbered in row-major order, so pixel `n` sits
//! at `(n / width, n % width)`.
//!
//! # Binary cube format
//!
//! ```text
//! offset  size        content
//! 0       8           magic  b"NLUXCUBE"
//! 8       4           bands  (u32, little endian)
//! 12      4           width  (u32, little endian)
//! 16      4           height (u32, little endian)
//! 20      4*bands*N   f32 little-endian samples, band-interleaved-by-pixel
//! ```
//!
//! Samples are stored as `f32`; anything that is already representable in
//! `f32` survives a save/load cycle bit for bit. Abundance maps use the same
//! layout with `bands = P`, label maps with `bands = 1`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Result, UnmixError};

pub const CUBE_MAGIC: &[u8; 8] = b"NLUXCUBE";
const HEADER_LEN: usize = 20;

/// Relative singular-value cutoff used when inverting endmember matrices.
pub const PINV_RCOND: f64 = 1e-12;

/// An `L`-band reflectance cube of `width × height` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    width: usize,
    height: usize,
    data: DMatrix<f64>,
}

impl SpectralImage {
    /// Builds an image from an `L × N` matrix, `N = width * height`.
    pub fn new(data: DMatrix<f64>, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(UnmixError::Dimension(format!(
                "image must have positive size, got {width}x{height}"
            )));
        }
        if data.ncols() != width * height {
            return Err(UnmixError::Dimension(format!(
                "{} pixel columns for a {width}x{height} image",
                data.ncols()
            )));
        }
        if data.nrows() < 2 {
            return Err(UnmixError::Dimension(format!(
                "need at least 2 bands, got {}",
                data.nrows()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            let (band, pixel) = (idx % data.nrows(), idx / data.nrows());
            return Err(UnmixError::NonFinite(format!("band {band}, pixel {pixel}")));
        }
        Ok(SpectralImage {
            width,
            height,
            data,
        })
    }

    pub fn bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.data.ncols()
    }

    /// Column-per-pixel view `Y = [y_1, ..., y_N]`.
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Index of the pixel at `(row, col)`.
    pub fn pixel_index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Mean squared pixel norm `(1/N) Σ ||y_n||²`.
    pub fn mean_energy(&self) -> f64 {
        self.data.norm_squared() / self.num_pixels() as f64
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (data, width, height) = read_cube(path.as_ref())?;
        SpectralImage::new(data, width, height).map_err(|e| match e {
            UnmixError::NonFinite(_) | UnmixError::Dimension(_) => {
                UnmixError::format(path.as_ref(), e.to_string())
            }
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_cube(path.as_ref(), &self.data, self.width, self.height)
    }
}

/// Reads a binary cube and returns its `bands × N` matrix with the image size.
pub fn read_cube(path: &Path) -> Result<(DMatrix<f64>, usize, usize)> {
    let bytes = fs::read(path).map_err(|e| UnmixError::io(path, e))?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != CUBE_MAGIC {
        return Err(UnmixError::format(path, "missing cube header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (bands, width, height) = (word(8), word(12), word(16));
    let expected = bands
        .checked_mul(width)
        .and_then(|v| v.checked_mul(height))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| UnmixError::format(path, "header dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(UnmixError::Dimension(format!(
            "{}: header declares {bands}x{width}x{height} ({expected} bytes) but payload has {} bytes",
            path.display(),
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(UnmixError::NonFinite(format!(
            "{}: sample {i}",
            path.display()
        )));
    }
    // BIP payload is column-major for a bands × N matrix.
    Ok((
        DMatrix::from_vec(bands, width * height, values),
        width,
        height,
    ))
}

/// Writes a `bands × N` matrix in the binary cube format.
pub fn write_cube(path: &Path, data: &DMatrix<f64>, width: usize, height: usize) -> Result<()> {
    if data.ncols() != width * height {
        return Err(UnmixError::Dimension(format!(
            "{} columns for a {width}x{height} cube",
            data.ncols()
        )));
    }
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| UnmixError::InvalidArgument(format!("{v} exceeds u32")))
    };
    let file = fs::File::create(path).map_err(|e| UnmixError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(CUBE_MAGIC);
    header.extend_from_slice(&to_u32(data.nrows())?.to_le_bytes());
    header.extend_from_slice(&to_u32(width)?.to_le_bytes());
    header.extend_from_slice(&to_u32(height)?.to_le_bytes());
    out.write_all(&header).map_err(|e| UnmixError::io(path, e))?;
    for v in data.iter() {
        out.write_all(&(*v as f32).to_le_bytes())
            .map_err(|e| UnmixError::io(path, e))?;
    }
    out.flush().map_err(|e| UnmixError::io(path, e))
}

/// Endmember signatures `M` (one column per material) and their left
/// pseudo-inverse `M†`, so that `M† M = I_P`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    m: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl EndmemberMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 || m.nrows() == 0 {
            return Err(UnmixError::Dimension("empty endmember matrix".into()));
        }
        if m.ncols() > m.nrows() {
            return Err(UnmixError::RankDeficient {
                rank: m.nrows(),
                required: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::NonFinite("endmember matrix".into()));
        }
        let pinv = pseudo_inverse(&m)?;
        Ok(EndmemberMatrix { m, pinv })
    }

    /// Number of bands `L`.
    pub fn bands(&self) -> usize {
        self.m.nrows()
    }

    /// Number of endmembers `P`.
    pub fn count(&self) -> usize {
        self.m.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// Loads an `L × P` CSV (one row per band, one column per endmember).
    /// A non-numeric first row is treated as a header.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if i == 0 => continue,
                Err(e) => {
                    return Err(UnmixError::format(path, format!("row {}: {e}", i + 1)));
                }
            }
        }
        let p = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || p == 0 {
            return Err(UnmixError::format(path, "no numeric rows"));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(UnmixError::format(
                path,
                format!("row {} has {} columns, expected {p}", bad + 1, rows[bad].len()),
            ));
        }
        let m = DMatrix::from_fn(rows.len(), p, |l, j| rows[l][j]);
        EndmemberMatrix::new(m)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for row in self.m.row_iter() {
            // `{:?}` on f64 prints the shortest representation that round-trips.
            let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writer.write_record(&fields).map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| UnmixError::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> UnmixError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => UnmixError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        UnmixError::format(path, e.to_string())
    }
}

/// Left pseudo-inverse `(MᵀM)⁻¹Mᵀ` of a full-column-rank matrix, computed
/// through the SVD with a relative singular-value cutoff of [`PINV_RCOND`].
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = m.ncols();
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = PINV_RCOND * smax;
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > cutoff && s > 0.0)
        .count();
    if rank < p {
        return Err(UnmixError::RankDeficient { rank, required: p });
    }
    svd.pseudo_inverse(cutoff)
        .map_err(|e| UnmixError::InvalidArgument(e.to_string()))
}

/// Fractional abundances, one `P`-vector per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMap {
    pub data: DMatrix<f64>,
    pub width: usize,
    pub height: usize,
}

impl AbundanceMap {
    pub fn new(data: DMatrix<f64>, width: usize, height: usize) -> Result<Self> {
        if data.ncols() != width * height {
            return Err(UnmixError::Dimension(format!(
                "{} abundance columns for a {width}x{height} map",
                data.ncols()
            )));
        }
        Ok(AbundanceMap {
            data,
            width,
            height,
        })
    }

    pub fn endmembers(&self) -> usize {
        self.data.nrows()
    }

    /// Largest violation of `a ≥ 0` and of `1ᵀa = 1` over all columns.
    pub fn simplex_violation(&self) -> (f64, f64) {
        let mut neg: f64 = 0.0;
        let mut sum: f64 = 0.0;
        for col in self.data.column_iter() {
            neg = neg.max(-col.min());
            sum = sum.max((col.sum() - 1.0).abs());
        }
        (neg.max(0.0), sum)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (data, width, height) = read_cube(path.as_ref())?;
        AbundanceMap::new(data, width, height)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_cube(path.as_ref(), &self.data, self.width, self.height)
    }
}

/// Nonlinear contributions `ψ_n(M)`, one `L`-vector per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearPart {
    pub data: DMatrix<f64>,
}

impl NonlinearPart {
    pub fn zeros(bands: usize, pixels: usize) -> Self {
        NonlinearPart {
            data: DMatrix::zeros(bands, pixels),
        }
    }
}
