//! Reproduces the Bernoulli risk table: affine upper bound vs two-point lower bound.

use minimax_affine::risk::{bernoulli_table, reference_diff};
use minimax_affine::saddle::SolverOptions;

fn main() -> minimax_affine::Result<()> {
    let start = std::time::Instant::now();
    let cells = bernoulli_table(&SolverOptions::default())?;
    println!("{:>6} {:>5} {:>10} {:>10} {:>10} {:>10} {:>6} {:>6}", "eps", "L", "gamma", "delta", "upper", "lower", "ratio", "theta");
    for c in &cells {
        println!(
            "{:>6} {:>5} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>6.2} {:>6.2}",
            c.epsilon, c.l, c.gamma, c.delta, c.upper, c.lower, c.ratio, c.theta
        );
    }
    println!("\nrelative difference from the published table (upper / lower / ratio):");
    for c in &cells {
        if let Some(d) = reference_diff(c) {
            println!("{:>6} {:>5} {:>8.2e} {:>8.2e} {:>8.2e}", d.epsilon, d.l, d.upper_rel, d.lower_rel, d.ratio_rel);
        }
    }
    println!("\nelapsed: {:.2?}", start.elapsed());
    Ok(())
}
