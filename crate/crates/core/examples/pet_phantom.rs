//! Emission tomography: estimate the activity of a region from Poisson bin counts.

use minimax_affine::estimator::{construct, theta_epsilon, GroupStat};
use minimax_affine::pet::{demo_model, pet_construct, pet_simulate, PetOptions};
use minimax_affine::risk::lower_bound_hellinger;
use minimax_affine::saddle::SolverOptions;

fn main() -> minimax_affine::Result<()> {
    let model = demo_model(0.05)?;
    let est = pet_construct(&model, &PetOptions::default())?;
    let problem = model.to_problem()?;
    let generic = construct(&problem, &SolverOptions { rel_tol: 1e-9, ..SolverOptions::default() })?;
    let lower = lower_bound_hellinger(&problem, &SolverOptions::default())?;
    println!("bins {}, risk bound {:.4} (generic route {:.4})", model.bins(), est.risk_bound, generic.risk_bound);
    println!("lower bound {:.4}, theta * lower {:.4}", lower, theta_epsilon(model.epsilon)? * lower);

    let x_true = [400.0, 300.0, 100.0, 60.0];
    for seed in 0..5 {
        let counts = pet_simulate(&model, &x_true, seed)?;
        let stats: Vec<GroupStat> = counts.iter().map(|&c| GroupStat::Sum(vec![c as f64])).collect();
        println!("counts {:?} -> estimate {:.1} (truth 700)", counts, est.evaluate_stats(&stats)?);
    }
    Ok(())
}
