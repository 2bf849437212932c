#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nlunmix::dual_solver::QuadraticForm;
use nlunmix::multiscale::SuperpixelMap;
use nlunmix::simulation::{generate_scene, synthetic_endmembers, MixingModel, Scene, SceneSpec, SYNTHETIC_BANDS};
use proptest::prelude::*;

/// 50x50, three endmembers, endmembers drawn with the scene seed.
pub fn scene(seed: u64, model: MixingModel, snr_db: Option<f64>) -> Scene {
    let mut spec = SceneSpec::new(50, 50, 3);
    spec.seed = seed;
    spec.model = model;
    spec.snr_db = snr_db;
    let m = synthetic_endmembers(3, SYNTHETIC_BANDS, seed).unwrap();
    generate_scene(&spec, &m).unwrap()
}

/// Maximiser of a strictly concave form by trying every set of clamped
/// coordinates: the optimum is the best primal-feasible stationary point.
pub fn enumerate_qp(q: &QuadraticForm) -> DVector<f64> {
    let n = q.dim();
    let nonneg = q.nonneg();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << nonneg.len()) {
        let clamped: Vec<usize> = (0..nonneg.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| nonneg[i])
            .collect();
        let free: Vec<usize> = (0..n).filter(|j| !clamped.contains(j)).collect();
        let mut w = DVector::zeros(n);
        if !free.is_empty() {
            // 2 B_FF w_F = -c_F
            let bff = DMatrix::from_fn(free.len(), free.len(), |i, j| 2.0 * q.b()[(free[i], free[j])]);
            let rhs = DVector::from_fn(free.len(), |i, _| -q.c()[free[i]]);
            let Some(sol) = bff.lu().solve(&rhs) else { continue };
            for (i, &j) in free.iter().enumerate() {
                w[j] = sol[i];
            }
        }
        if !q.is_feasible(&w, 0.0) {
            continue;
        }
        let f = q.objective(&w);
        if best.as_ref().is_none_or(|b| f > b.0) {
            best = Some((f, w));
        }
    }
    best.expect("the all-clamped point is feasible").1
}

/// Strictly concave random form of size `n` with a random subset of
/// sign-constrained coordinates.
pub fn random_qp() -> impl Strategy<Value = QuadraticForm> {
    (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(-2.0f64..2.0, n),
            prop::collection::vec(any::<bool>(), n),
            0.05f64..1.0,
        )
            .prop_map(move |(r, c, mask, shift)| {
                let r = DMatrix::from_vec(n, n, r);
                let b = -(&r * r.transpose() + DMatrix::identity(n, n) * shift);
                let nonneg = (0..n).filter(|&j| mask[j]).collect();
                QuadraticForm::new(b, DVector::from_vec(c), nonneg).unwrap()
            })
    })
}

/// Random map with every label in `0..k` used at least once.
pub fn random_map() -> impl Strategy<Value = SuperpixelMap> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(w, h)| {
        let n = w * h;
        (1usize..=n).prop_flat_map(move |k| {
            prop::collection::vec(0..k, n).prop_map(move |mut labels| {
                // the first k pixels take each label once so none is empty
                for (i, l) in labels.iter_mut().take(k).enumerate() {
                    *l = i;
                }
                SuperpixelMap::from_labels(labels, w, h).unwrap()
            })
        })
    })
}

pub fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

pub fn simplex_columns(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.0f64..1.0, rows * cols).prop_map(move |v| {
        let mut m = DMatrix::from_vec(rows, cols, v);
        for mut c in m.column_iter_mut() {
            let s = c.sum();
            if s == 0.0 {
                c.fill(1.0 / rows as f64);
            } else {
                c /= s;
            }
        }
        m
    })
}
