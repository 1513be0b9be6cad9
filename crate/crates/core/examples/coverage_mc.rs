//! Monte Carlo check that the certified bound covers the error with probability 1 - eps.

use minimax_affine::estimator::construct;
use minimax_affine::problem::{AffineMap, ChannelGroup, EstimationProblem};
use minimax_affine::risk::mc_risk;
use minimax_affine::saddle::SolverOptions;
use minimax_affine::{FamilySpec, SignalSet};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> minimax_affine::Result<()> {
    // Two Poisson detectors, each seeing a mix of three sources, three exposures each.
    let groups = vec![
        ChannelGroup::new(FamilySpec::poisson(), AffineMap::linear(DMatrix::from_row_slice(1, 3, &[1.0, 0.5, 0.0])), 3)?,
        ChannelGroup::new(FamilySpec::poisson(), AffineMap::linear(DMatrix::from_row_slice(1, 3, &[0.0, 0.5, 1.0])), 3)?,
    ];
    let set = SignalSet::simplex(3, 30.0, 1.0)?;
    let problem = EstimationProblem::new(groups, set, vec![1.0, 0.0, -1.0], 0.05)?;
    let est = construct(&problem, &SolverOptions::default())?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut xs = vec![est.x_bar.clone()];
    xs.extend((0..10).map(|_| problem.set.random_point(&mut rng)));
    let rep = mc_risk(&problem, &est, &xs, 100_000, 7)?;
    println!("risk bound {:.4}", est.risk_bound);
    for (i, p) in rep.points.iter().enumerate() {
        println!("point {i:>2}: violations {:>5} / {}  (Wilson upper {:.4})", p.violations, p.n_reps, p.wilson_upper);
    }
    println!("pass (freq < eps, Wilson < 1.2 eps): {}", rep.pass);
    Ok(())
}
