//! Load a problem file, build the estimator, and apply it to observations.
//!
//! cargo run --example solve_problem -- examples/data/bernoulli.json examples/data/bernoulli_obs.json

use std::path::PathBuf;

use minimax_affine::estimator::{construct, theta_epsilon};
use minimax_affine::risk::lower_bound_hellinger;
use minimax_affine::schema::{load_observations, ProblemFile};

fn main() -> minimax_affine::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let mut args = std::env::args().skip(1);
    let problem_path = args.next().map(PathBuf::from).unwrap_or(dir.join("bernoulli.json"));
    let obs_path = args.next().map(PathBuf::from).unwrap_or(dir.join("bernoulli_obs.json"));

    let file = ProblemFile::load(&problem_path)?;
    let problem = file.to_problem()?;
    let opts = file.solver_options();
    let est = construct(&problem, &opts)?;
    let lower = lower_bound_hellinger(&problem, &opts)?;
    println!("risk bound      {:.6}", est.risk_bound);
    println!("certified gap   {:.2e}", est.gap);
    println!("lower bound     {:.6}", lower);
    println!("theta(eps)      {:.3}", theta_epsilon(problem.epsilon)?);

    let obs = load_observations(&obs_path)?;
    println!("estimate        {:.6}", est.evaluate(&obs)?);
    Ok(())
}
