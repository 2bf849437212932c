//! Superpixel decomposition and the two-scale transforms.
//!
//! `coarsen` averages the pixels of each superpixel (`X_C = X W`) and
//! `expand` replicates a superpixel value to all of its pixels (`W*`).

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;

use crate::data_model::{write_cube, SpectralImage};
use crate::error::{Result, UnmixError};

const SLIC_ITERATIONS: usize = 10;
/// Floor applied to the second singular value, relative to the first.
pub const HOM_SIGMA_FLOOR: f64 = 1e-6;
/// Upper bound on a single superpixel's homogeneity ratio.
pub const HOM_CAP: f64 = 1e6;
/// Number of log-spaced superpixel counts tried by [`select_num_superpixels`].
pub const K_GRID_SIZE: usize = 12;

/// Pixel-to-superpixel labelling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    labels: Vec<usize>,
    sizes: Vec<usize>,
    width: usize,
    height: usize,
}

impl SuperpixelMap {
    /// Builds a map from raw labels, checking that labels cover `0..K`.
    /// Spatial connectivity is not checked here.
    pub fn from_labels(labels: Vec<usize>, width: usize, height: usize) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(UnmixError::Dimension(format!(
                "{} labels for a {width}x{height} image",
                labels.len()
            )));
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(UnmixError::InvalidArgument(format!(
                "superpixel {empty} is empty"
            )));
        }
        Ok(SuperpixelMap {
            labels,
            sizes,
            width,
            height,
        })
    }

    /// One superpixel per pixel.
    pub fn identity(width: usize, height: usize) -> Self {
        let n = width * height;
        SuperpixelMap {
            labels: (0..n).collect(),
            sizes: vec![1; n],
            width,
            height,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of superpixels `K`.
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Average superpixel size `S = N / K`.
    pub fn mean_size(&self) -> f64 {
        self.num_pixels() as f64 / self.count() as f64
    }

    /// Harmonic mean of the superpixel sizes, `K / Σ 1/|Nᵢ|`.
    pub fn harmonic_mean_size(&self) -> f64 {
        let inv: f64 = self.sizes.iter().map(|&s| 1.0 / s as f64).sum();
        self.count() as f64 / inv
    }

    /// Pixel indices grouped by superpixel.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> =
            self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (n, &l) in self.labels.iter().enumerate() {
            groups[l].push(n);
        }
        groups
    }

    /// True when every superpixel is 4-connected.
    pub fn is_connected(&self) -> bool {
        let comps = connected_components(&self.labels, self.width, self.height);
        let ncomp = comps.iter().max().map_or(0, |m| m + 1);
        ncomp == self.count()
    }

    /// Writes the labels as a one-band cube.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let data = DMatrix::from_iterator(1, self.labels.len(), self.labels.iter().map(|&l| l as f64));
        write_cube(path.as_ref(), &data, self.width, self.height)
    }
}

fn neighbours4(n: usize, width: usize, height: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (n / width, n % width);
    let up = (r > 0).then(|| n - width);
    let down = (r + 1 < height).then(|| n + width);
    let left = (c > 0).then(|| n - 1);
    let right = (c + 1 < width).then(|| n + 1);
    [up, down, left, right].into_iter().flatten()
}

/// Labels each 4-connected run of equal input labels with a distinct id, in
/// scan order.
fn connected_components(labels: &[usize], width: usize, height: usize) -> Vec<usize> {
    let n = labels.len();
    let mut out = vec![usize::MAX; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if out[start] != usize::MAX {
            continue;
        }
        out[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbours4(p, width, height) {
                if out[q] == usize::MAX && labels[q] == labels[start] {
                    out[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    out
}

/// Default SLIC compactness: 5% of the mean pixel norm.
pub fn default_compactness(img: &SpectralImage) -> f64 {
    let y = img.data();
    let total: f64 = y.column_iter().map(|c| c.norm()).sum();
    0.05 * total / img.num_pixels() as f64
}

struct Center {
    spectrum: Vec<f64>,
    x: f64,
    y: f64,
}

/// SLIC superpixels on the full spectral vectors.
///
/// The distance between pixel and centre is `sqrt(d_c² + m² (d_s / S)²)`
/// with `d_c` the spectral Euclidean distance, `d_s` the spatial one,
/// `S = sqrt(N/K)` the grid step and `m` the compactness. Fragments left
/// after the assignment iterations are merged into a neighbour, so the final
/// count may differ slightly from `k`.
pub fn slic_segment(img: &SpectralImage, k: usize, compactness: f64) -> Result<SuperpixelMap> {
    let (w, h, n) = (img.width(), img.height(), img.num_pixels());
    if k == 0 || k > n {
        return Err(UnmixError::InvalidArgument(format!(
            "superpixel count {k} outside 1..={n}"
        )));
    }
    if !(compactness >= 0.0) {
        return Err(UnmixError::InvalidArgument(format!(
            "compactness must be nonnegative, got {compactness}"
        )));
    }
    if k == n {
        return Ok(SuperpixelMap::identity(w, h));
    }
    let y = img.data();
    let bands = img.bands();
    let step = (n as f64 / k as f64).sqrt();

    let mut seeds = grid_seeds(w, h, k);
    if step >= 3.0 {
        seeds = seeds
            .into_iter()
            .map(|p| lowest_gradient_nearby(img, p))
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
    }
    let mut centers: Vec<Center> = seeds
        .iter()
        .map(|&p| Center {
            spectrum: y.column(p).iter().copied().collect(),
            x: (p % w) as f64,
            y: (p / w) as f64,
        })
        .collect();

    let spatial_weight = (compactness / step).powi(2);
    let radius = step.ceil() as isize;
    let mut labels = vec![usize::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    let pixel_distance = |c: &Center, p: usize| -> f64 {
        let col = y.column(p);
        let dc: f64 = c
            .spectrum
            .iter()
            .zip(col.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dx = (p % w) as f64 - c.x;
        let dy = (p / w) as f64 - c.y;
        dc + spatial_weight * (dx * dx + dy * dy)
    };

    for _ in 0..SLIC_ITERATIONS {
        labels.fill(usize::MAX);
        dist.fill(f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let (cx, cy) = (c.x.round() as isize, c.y.round() as isize);
            let r0 = (cy - radius).max(0) as usize;
            let r1 = ((cy + radius) as usize).min(h - 1);
            let c0 = (cx - radius).max(0) as usize;
            let c1 = ((cx + radius) as usize).min(w - 1);
            for r in r0..=r1 {
                for col in c0..=c1 {
                    let p = r * w + col;
                    let d = pixel_distance(c, p);
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = ci;
                    }
                }
            }
        }
        for (p, label) in labels.iter_mut().enumerate() {
            if *label == usize::MAX {
                let (best, _) = centers
                    .iter()
                    .enumerate()
                    .map(|(ci, c)| (ci, pixel_distance(c, p)))
                    .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                *label = best;
            }
        }
        let mut sums = vec![0.0; centers.len() * bands];
        let mut pos = vec![(0.0, 0.0, 0usize); centers.len()];
        for (p, &ci) in labels.iter().enumerate() {
            let s = &mut sums[ci * bands..(ci + 1) * bands];
            for (acc, v) in s.iter_mut().zip(y.column(p).iter()) {
                *acc += v;
            }
            pos[ci].0 += (p % w) as f64;
            pos[ci].1 += (p / w) as f64;
            pos[ci].2 += 1;
        }
        for (ci, c) in centers.iter_mut().enumerate() {
            let cnt = pos[ci].2;
            if cnt == 0 {
                continue;
            }
            let inv = 1.0 / cnt as f64;
            for (dst, s) in c.spectrum.iter_mut().zip(&sums[ci * bands..(ci + 1) * bands]) {
                *dst = s * inv;
            }
            c.x = pos[ci].0 * inv;
            c.y = pos[ci].1 * inv;
        }
    }

    // Singletons would only survive by accident; K = N returned early.
    let min_size = ((n as f64 / k as f64) / 4.0).ceil().max(2.0) as usize;
    let labels = enforce_connectivity(&labels, w, h, min_size);
    SuperpixelMap::from_labels(labels, w, h)
}

/// Regular grid of about `k` seeds.
fn grid_seeds(w: usize, h: usize, k: usize) -> Vec<usize> {
    let nx = ((k as f64 * w as f64 / h as f64).sqrt().round() as usize).clamp(1, w);
    let ny = ((k as f64 / nx as f64).round() as usize).clamp(1, h);
    let mut seeds = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let r = (((j as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
        for i in 0..nx {
            let c = (((i as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            seeds.push(r * w + c);
        }
    }
    seeds.sort_unstable();
    seeds.dedup();
    seeds
}

/// Moves a seed to the lowest-gradient pixel of its 3×3 neighbourhood.
fn lowest_gradient_nearby(img: &SpectralImage, p: usize) -> usize {
    let (w, h) = (img.width(), img.height());
    let y = img.data();
    let grad = |q: usize| -> f64 {
        let (r, c) = (q / w, q % w);
        if r == 0 || c == 0 || r + 1 >= h || c + 1 >= w {
            return f64::INFINITY;
        }
        let gx = (y.column(q + 1) - y.column(q - 1)).norm_squared();
        let gy = (y.column(q + w) - y.column(q - w)).norm_squared();
        gx + gy
    };
    let (r, c) = (p / w, p % w);
    let mut best = (p, grad(p));
    for dr in -1isize..=1 {
        for dc in -1isize..=1 {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                continue;
            }
            let q = rr as usize * w + cc as usize;
            let g = grad(q);
            if g < best.1 {
                best = (q, g);
            }
        }
    }
    best.0
}

/// Relabels 4-connected components in scan order; components smaller than
/// `min_size` are absorbed by the component touching their first pixel.
fn enforce_connectivity(labels: &[usize], w: usize, h: usize, min_size: usize) -> Vec<usize> {
    let n = labels.len();
    let mut out = vec![usize::MAX; n];
    let mut next = 0usize;
    let mut component = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if out[start] != usize::MAX {
            continue;
        }
        let adjacent = neighbours4(start, w, h)
            .map(|q| out[q])
            .find(|&l| l != usize::MAX);
        component.clear();
        out[start] = next;
        component.push(start);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbours4(p, w, h) {
                if out[q] == usize::MAX && labels[q] == labels[start] {
                    out[q] = next;
                    component.push(q);
                    queue.push_back(q);
                }
            }
        }
        match adjacent {
            Some(a) if component.len() < min_size => {
                for &p in &component {
                    out[p] = a;
                }
            }
            _ => next += 1,
        }
    }
    out
}

fn check_columns(x: &DMatrix<f64>, expected: usize, what: &str) -> Result<()> {
    if x.ncols() != expected {
        return Err(UnmixError::Dimension(format!(
            "{what}: matrix has {} columns, expected {expected}",
            x.ncols()
        )));
    }
    Ok(())
}

/// Per-superpixel column means, `D × K`.
///
/// Uses a running mean so that averaging identical columns returns that
/// column exactly.
pub fn coarsen(x: &DMatrix<f64>, map: &SuperpixelMap) -> Result<DMatrix<f64>> {
    check_columns(x, map.num_pixels(), "coarsen")?;
    let mut out = DMatrix::zeros(x.nrows(), map.count());
    let mut seen = vec![0usize; map.count()];
    for (n, &l) in map.labels().iter().enumerate() {
        seen[l] += 1;
        let inv = 1.0 / seen[l] as f64;
        let src = x.column(n);
        let mut dst = out.column_mut(l);
        for (d, s) in dst.iter_mut().zip(src.iter()) {
            *d += (s - *d) * inv;
        }
    }
    Ok(out)
}

/// Replicates superpixel columns to their pixels, `D × N`.
pub fn expand(xc: &DMatrix<f64>, map: &SuperpixelMap) -> Result<DMatrix<f64>> {
    check_columns(xc, map.count(), "expand")?;
    let mut out = DMatrix::zeros(xc.nrows(), map.num_pixels());
    for (n, &l) in map.labels().iter().enumerate() {
        out.column_mut(n).copy_from(&xc.column(l));
    }
    Ok(out)
}

/// Ratio of the two largest singular values of the `L × |N_j|` block.
fn block_ratio(y: &DMatrix<f64>, members: &[usize]) -> f64 {
    if members.len() < 2 {
        return HOM_CAP;
    }
    let block = DMatrix::from_fn(y.nrows(), members.len(), |l, j| y[(l, members[j])]);
    let gram = if members.len() <= y.nrows() {
        block.transpose() * &block
    } else {
        &block * block.transpose()
    };
    let mut eig: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_unstable_by(|a, b| b.total_cmp(a));
    let s1 = eig[0].max(0.0).sqrt();
    let s2 = eig.get(1).copied().unwrap_or(0.0).max(0.0).sqrt();
    if s1 == 0.0 {
        return HOM_CAP;
    }
    (s1 / s2.max(HOM_SIGMA_FLOOR * s1)).min(HOM_CAP)
}

/// Mean over superpixels of `σ₁ / σ₂`, with `σ₂` floored at `1e-6 σ₁` and
/// single-pixel superpixels contributing [`HOM_CAP`].
pub fn homogeneity(img: &SpectralImage, map: &SuperpixelMap) -> Result<f64> {
    if map.num_pixels() != img.num_pixels() {
        return Err(UnmixError::Dimension(format!(
            "map covers {} pixels, image has {}",
            map.num_pixels(),
            img.num_pixels()
        )));
    }
    let total: f64 = map
        .members()
        .iter()
        .map(|m| block_ratio(img.data(), m))
        .sum();
    Ok(total / map.count() as f64)
}

/// Tie-breaking rule among candidates within tolerance of the best `Hom`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum KSelectionPreference {
    /// Prefer the largest superpixel count.
    LargestCount,
    /// Prefer the largest average superpixel size (smallest count).
    LargestSize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityProfile {
    /// `(requested K, realised K, Hom)` per candidate.
    pub candidates: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct KSelection {
    pub k: usize,
    pub map: SuperpixelMap,
    pub profile: HomogeneityProfile,
}

/// Log-spaced candidate counts between the two bounds, deduplicated.
pub fn candidate_grid(kmin: usize, kmax: usize, n: usize) -> Vec<usize> {
    let lo = kmin.min(kmax).clamp(1, n.max(1));
    let hi = kmin.max(kmax).clamp(1, n.max(1));
    let mut grid: Vec<usize> = if lo == hi {
        vec![lo]
    } else {
        let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
        (0..K_GRID_SIZE)
            .map(|i| {
                let t = i as f64 / (K_GRID_SIZE - 1) as f64;
                ((a + t * (b - a)).exp().round() as usize).clamp(lo, hi)
            })
            .collect()
    };
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Picks the superpixel count on a log grid whose `Hom` is within a factor
/// `1 - eps` of the best candidate, breaking ties by `preference`.
pub fn select_num_superpixels(
    img: &SpectralImage,
    kmin: usize,
    kmax: usize,
    eps: f64,
    compactness: f64,
    preference: KSelectionPreference,
) -> Result<KSelection> {
    if !(0.0..1.0).contains(&eps) {
        return Err(UnmixError::InvalidArgument(format!(
            "homogeneity tolerance must lie in [0, 1), got {eps}"
        )));
    }
    let grid = candidate_grid(kmin, kmax, img.num_pixels());
    if grid.is_empty() || kmin == 0 && kmax == 0 {
        return Err(UnmixError::InvalidArgument("empty superpixel grid".into()));
    }
    let mut maps = Vec::with_capacity(grid.len());
    let mut candidates = Vec::with_capacity(grid.len());
    for &k in &grid {
        let map = slic_segment(img, k, compactness)?;
        let hom = homogeneity(img, &map)?;
        log::debug!("K={k} (realised {}) Hom={hom:.4}", map.count());
        candidates.push((k, map.count(), hom));
        maps.push(map);
    }
    let best = candidates.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let threshold = (1.0 - eps) * best;
    let eligible = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.2 >= threshold);
    let chosen = match preference {
        KSelectionPreference::LargestCount => eligible.max_by_key(|(_, c)| (c.1, c.0)),
        KSelectionPreference::LargestSize => eligible.min_by_key(|(_, c)| (c.1, c.0)),
    }
    .map(|(i, _)| i)
    .expect("the best candidate is always eligible");
    Ok(KSelection {
        k: candidates[chosen].0,
        map: maps.swap_remove(chosen),
        profile: HomogeneityProfile { candidates },
    })
}
