use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use nlunmix::metrics::{mean_sam, mean_sid, rmse, sam, sid, EvalReport};
use proptest::prelude::*;

#[test]
fn trivial_cases() {
    let u = [0.3, 0.1, 0.7, 0.2];
    let x = DMatrix::from_row_slice(2, 2, &u);
    assert_eq!(rmse(&x, &x).unwrap(), 0.0);
    assert_eq!(sam(&u, &u).unwrap(), 0.0);
    assert_eq!(sid(&u, &u).unwrap(), 0.0);
    assert_eq!(sam(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), FRAC_PI_2);
    assert!((rmse(&x, &x.map(|v| v + 0.5)).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn errors_on_bad_input() {
    assert!(sam(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!(sam(&[1.0], &[1.0, 0.0]).is_err());
    assert!(sid(&[-1.0, 1.0], &[1.0, 1.0]).is_err());
    assert!(rmse(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 3)).is_err());
}

#[test]
fn report_on_perfect_estimate() {
    let a = DMatrix::from_row_slice(2, 2, &[0.4, 0.9, 0.6, 0.1]);
    let y = DMatrix::from_fn(3, 2, |l, n| 0.2 + 0.1 * (l + n) as f64);
    let r = EvalReport::compute(&a, &a, &y, &y).unwrap();
    assert_eq!(r.rmse_a, 0.0);
    assert_eq!(r.rmse_y, 0.0);
    assert_eq!(r.sam_mean, 0.0);
    assert_eq!(r.sid_mean, 0.0);
    assert_eq!(r.to_csv_row().split(',').count(), EvalReport::CSV_HEADER.split(',').count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scale_invariance(v in prop::collection::vec(0.01f64..1.0, 2..40), w in prop::collection::vec(0.01f64..1.0, 40), k in 0.1f64..50.0) {
        let w = &w[..v.len()];
        let kv: Vec<f64> = v.iter().map(|x| x * k).collect();
        prop_assert!((sam(&kv, w).unwrap() - sam(&v, w).unwrap()).abs() <= 1e-12);
        prop_assert!((sid(&kv, w).unwrap() - sid(&v, w).unwrap()).abs() <= 1e-12);
        prop_assert!(sam(&v, &kv).unwrap() <= 1e-7);
    }

    #[test]
    fn symmetry_and_range(v in prop::collection::vec(0.0f64..1.0, 3), w in prop::collection::vec(0.0f64..1.0, 3)) {
        prop_assume!(v.iter().any(|&x| x > 0.0) && w.iter().any(|&x| x > 0.0));
        let s = sam(&v, &w).unwrap();
        prop_assert!((0.0..=FRAC_PI_2).contains(&s));
        prop_assert!((s - sam(&w, &v).unwrap()).abs() <= 1e-15);
        prop_assert!(sid(&v, &w).unwrap() >= 0.0);
        prop_assert!((sid(&v, &w).unwrap() - sid(&w, &v).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn means_are_column_averages(v in prop::collection::vec(0.05f64..1.0, 12), w in prop::collection::vec(0.05f64..1.0, 12)) {
        let y = DMatrix::from_vec(4, 3, v);
        let z = DMatrix::from_vec(4, 3, w);
        let sams: f64 = (0..3).map(|j| sam(y.column(j).as_slice(), z.column(j).as_slice()).unwrap()).sum();
        prop_assert!((mean_sam(&y, &z).unwrap() - sams / 3.0).abs() <= 1e-12);
        prop_assert!(mean_sid(&y, &z).unwrap() >= 0.0);
    }
}
