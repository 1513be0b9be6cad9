//! Gaussian observations: the sharper error-function bound against the generic one.

use minimax_affine::estimator::construct;
use minimax_affine::gaussian::{construct_gaussian, erfinv_tail, gaussian_two_point_value, psi_epsilon, GaussianOptions, GaussianProblem};
use minimax_affine::saddle::SolverOptions;
use minimax_affine::SignalSet;
use nalgebra::DMatrix;

fn main() -> minimax_affine::Result<()> {
    // Two noisy views of a 3-dimensional signal in a box; estimate x_1 - x_3.
    let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.0, 0.5, 2.0]);
    let set = SignalSet::boxed(vec![-1.0; 3], vec![1.0; 3])?;
    for eps in [0.05, 0.01, 0.001] {
        let p = GaussianProblem::new(a.clone(), set.clone(), vec![1.0, 0.0, -1.0], eps)?;
        let sharp = construct_gaussian(&p, &GaussianOptions::default())?;
        let generic = construct(&p.to_estimation_problem(), &SolverOptions::default())?;
        let two_point = 0.5 * gaussian_two_point_value(&p, 2.0 * erfinv_tail(eps / 2.0)?)?;
        println!(
            "eps {eps:<6} sharp {:.5}  two-point {:.5}  generic {:.5}  psi {:.3}",
            sharp.risk_bound,
            two_point,
            generic.risk_bound,
            psi_epsilon(eps)?
        );
    }
    Ok(())
}
