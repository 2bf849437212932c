//! Abundance RMSE, reconstruction RMSE, spectral angle and spectral
//! information divergence on a simple estimate.

use nalgebra::DMatrix;
use nlunmix::metrics::{rmse, sam, sid, EvalReport};

fn main() -> nlunmix::Result<()> {
    let u = [0.2, 0.4, 0.6, 0.3];
    let scaled: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
    let other = [0.5, 0.1, 0.2, 0.6];
    println!("sam(u, 2u) = {:.2e} rad", sam(&u, &scaled)?);
    println!("sam(u, v)  = {:.2} deg", sam(&u, &other)?.to_degrees());
    println!("sid(u, v)  = {:.4}", sid(&u, &other)?);

    let a = DMatrix::from_row_slice(2, 3, &[0.2, 0.5, 0.9, 0.8, 0.5, 0.1]);
    let a_hat = DMatrix::from_row_slice(2, 3, &[0.25, 0.5, 0.8, 0.75, 0.5, 0.2]);
    println!("rmse = {:.4}", rmse(&a, &a_hat)?);

    let y = DMatrix::from_fn(4, 3, |l, n| 0.1 + 0.2 * l as f64 + 0.05 * n as f64);
    let y_rec = y.map(|v| v * 1.01);
    let report = EvalReport::compute(&a, &a_hat, &y, &y_rec)?;
    print!("{}", report.to_text());
    println!("{}\n{}", EvalReport::CSV_HEADER, report.to_csv_row());
    Ok(())
}
