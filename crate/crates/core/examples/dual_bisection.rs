//! The numerical core on toy problems: a constrained QP and the 1-D and
//! 2-D multiplier searches.

use nalgebra::{DMatrix, DVector};
use nlunmix::dual_solver::{
    bisect_1d, bisect_1d_with, bisect_2d, bisect_nested_with, solve_inner_qp, BisectOptions,
    Bracket2D, QuadraticForm,
};

fn main() -> nlunmix::Result<()> {
    // max w'Bw + c'w with w[1], w[2] >= 0
    let b = -DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 1.5]);
    let q = QuadraticForm::new(b, DVector::from_vec(vec![1.0, -2.0, 3.0]), vec![1, 2])?;
    let w = solve_inner_qp(&q)?;
    println!("qp: w = {:?}, objective {:.6}, kkt residual {:.1e}", w.as_slice(), q.objective(&w), q.kkt_residual(&w));

    let f = |x: f64| Ok(x * x - 2.0);
    println!("bisect_1d: sqrt 2 ~ {:.6}", bisect_1d(f, 0.0, 2.0, 1e-6, 60)?);

    // a decreasing function of a multiplier, like the residual energies
    let g = |mu: f64| Ok(1.0 / (1.0 + mu) - 0.2);
    let o = bisect_1d_with(g, 1e-4, 1e4, &BisectOptions::default())?;
    println!("log bisection: mu = {:.5} (exact 4) after {} iterations", o.root, o.iterations);

    let sep = |x: f64, y: f64| Ok((x - 0.3, 0.7 - y));
    println!("bisect_2d: {:?}", bisect_2d(sep, Bracket2D::new(0.0, 1.0, 0.0, 1.0)?, 1e-4, 30)?);

    // coupled residuals: the root of the first moves with the second multiplier
    let coupled = |m1: f64, m2: f64| Ok((1.0 / m1 - 0.5 * m2, 1.0 / m2 - 0.25));
    let o = bisect_nested_with(coupled, Bracket2D::new(1e-2, 1e2, 1e-2, 1e2)?, &BisectOptions::default())?;
    println!("nested: {:?} (exact (0.5, 4)), {} evaluations", o.root, o.evaluations);
    Ok(())
}
