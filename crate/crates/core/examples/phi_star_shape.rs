//! Shape of the modulus Phi_*(r): nonnegative, nondecreasing, concave, Phi_*(t r) >= t Phi_*(r).

use minimax_affine::problem::bernoulli_problem;
use minimax_affine::saddle::{phi_star_concavity_check, SolverOptions};

fn main() -> minimax_affine::Result<()> {
    let problem = bernoulli_problem(0.05, 0.95, 20, 0.05)?;
    let rs: Vec<f64> = (0..=12).map(|i| 0.5 * i as f64).collect();
    let rep = phi_star_concavity_check(&problem, &rs, &SolverOptions::default())?;
    for p in &rep.points {
        println!("r {:>4.1}  Phi_* {:.6}", p.r, p.phi_star);
    }
    println!("nonnegative {}, monotone {}, all checks {}", rep.nonnegative, rep.monotone, rep.all_pass);
    Ok(())
}
