mod common;

use common::{matrix, random_map, simplex_columns};
use nlunmix::multiscale::{coarsen, expand, SuperpixelMap};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn coarsen_undoes_expand((map, xc) in random_map().prop_flat_map(|m| {
        let k = m.count();
        (Just(m), matrix(3, k))
    })) {
        let back = coarsen(&expand(&xc, &map).unwrap(), &map).unwrap();
        prop_assert_eq!(back, xc);
    }

    #[test]
    fn expand_coarsen_is_idempotent((map, x) in random_map().prop_flat_map(|m| {
        let n = m.num_pixels();
        (Just(m), matrix(4, n))
    })) {
        let p = |x| expand(&coarsen(x, &map).unwrap(), &map).unwrap();
        let once = p(&x);
        prop_assert_eq!(p(&once), once);
    }

    #[test]
    fn coarsening_keeps_simplex((map, a) in random_map().prop_flat_map(|m| {
        let n = m.num_pixels();
        (Just(m), simplex_columns(3, n))
    })) {
        let ac = coarsen(&a, &map).unwrap();
        prop_assert!(ac.min() >= 0.0);
        for c in ac.column_iter() {
            prop_assert!((c.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn sizes_add_up(map in random_map()) {
        prop_assert_eq!(map.sizes().iter().sum::<usize>(), map.num_pixels());
        prop_assert!(map.harmonic_mean_size() <= map.mean_size() + 1e-12);
        let members = map.members();
        for (k, m) in members.iter().enumerate() {
            prop_assert_eq!(m.len(), map.sizes()[k]);
        }
    }
}

#[test]
fn identity_map_is_a_no_op() {
    let map = SuperpixelMap::identity(3, 2);
    let x = nalgebra::DMatrix::from_fn(2, 6, |i, j| (i * 6 + j) as f64);
    assert_eq!(coarsen(&x, &map).unwrap(), x);
    assert_eq!(expand(&x, &map).unwrap(), x);
}

#[test]
fn shape_mismatch_is_an_error() {
    let map = SuperpixelMap::from_labels(vec![0, 0, 1, 1], 2, 2).unwrap();
    let x = nalgebra::DMatrix::zeros(2, 3);
    assert!(coarsen(&x, &map).is_err());
    assert!(expand(&x, &map).is_err());
    assert!(SuperpixelMap::from_labels(vec![0, 2, 2, 0], 2, 2).is_err());
}
