//! Batch front end. Exit codes: 0 certified, 1 invalid input, 2 not certified.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adaptive::{build_levels, interval_demo, AdaptiveEstimator, NestedProblem};
use crate::error::{Error, Result};
use crate::estimator::{construct, sample_stats, theta_epsilon, AffineEstimator};
use crate::families::dot;
use crate::gaussian::{construct_gaussian, gaussian_two_point, psi_epsilon, GaussianOptions};
use crate::pet::{demo_model, pet_construct, pet_simulate, PetModel, PetOptions};
use crate::problem::EstimationProblem;
use crate::risk::{bernoulli_cell, lower_bound_hellinger, mc_coverage, mc_risk, reference_diff, RiskReport, TABLE_EPSILONS, TABLE_LS};
use crate::saddle::{phi_star, SolverOptions};
use crate::schema::{load_observations, ProblemFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NOT_CERTIFIED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "minimax-affine", version, about = "Near-minimax affine estimation of linear functionals")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args)]
pub struct GlobalArgs {
    /// Absolute gap tolerance on the doubled saddle program (default: relative 1e-6).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed for Monte Carlo and random evaluation points.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Monte Carlo replications per point.
    #[arg(long, global = true, default_value_t = 100_000)]
    pub reps: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the estimator for a problem file (route chosen by family kind).
    Solve { problem: PathBuf },
    /// Gaussian route with the sharper error-function bound.
    Gaussian { problem: PathBuf },
    /// Bernoulli risk table with a diff against the published values.
    Table1,
    /// Monte Carlo coverage of the estimator at the extremal point and random points.
    Mc {
        problem: PathBuf,
        /// JSON array of evaluation points (default: extremal point + 10 random).
        #[arg(long)]
        x_list: Option<PathBuf>,
    },
    /// Adaptive estimate over nested sets (default: scalar Gaussian demo).
    Adaptive { problem: Option<PathBuf> },
    /// Emission tomography demo (default: 2x2 phantom).
    PetDemo { problem: Option<PathBuf> },
    /// Certified lower bound on the minimax risk.
    LowerBound { problem: PathBuf },
    /// Evaluate a saved estimator on an observation file.
    Evaluate { estimator: PathBuf, observations: PathBuf },
}

pub fn run(cli: Cli) -> i32 {
    let g = &cli.global;
    let res = match &cli.command {
        Command::Solve { problem } => cmd_solve(problem, g),
        Command::Gaussian { problem } => cmd_gaussian(problem, g),
        Command::Table1 => cmd_table1(g),
        Command::Mc { problem, x_list } => cmd_mc(problem, x_list.as_deref(), g),
        Command::Adaptive { problem } => cmd_adaptive(problem.as_deref(), g),
        Command::PetDemo { problem } => cmd_pet_demo(problem.as_deref(), g),
        Command::LowerBound { problem } => cmd_lower_bound(problem, g),
        Command::Evaluate { estimator, observations } => cmd_evaluate(estimator, observations),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn write_out(g: &GlobalArgs, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(&g.out)?;
    let path = g.out.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn write_json<T: Serialize>(g: &GlobalArgs, name: &str, value: &T) -> Result<PathBuf> {
    write_out(g, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn certified_code(certified: bool) -> i32 {
    if certified {
        EXIT_OK
    } else {
        EXIT_NOT_CERTIFIED
    }
}

fn solver_options(file: &ProblemFile, g: &GlobalArgs) -> SolverOptions {
    let mut o = file.solver_options();
    if g.tol.is_some() {
        o.tol = g.tol;
    }
    o
}

/// Estimator for a file, dispatched on the family kind, plus the generic problem.
pub fn build_estimator(file: &ProblemFile, g: &GlobalArgs) -> Result<(EstimationProblem, AffineEstimator)> {
    let opts = solver_options(file, g);
    let problem = file.to_problem()?;
    let est = if file.is_pet() {
        let mut po = PetOptions { abs_tol: opts.tol, ..PetOptions::default() };
        if let Some(m) = file.solver.max_iter {
            po.max_iter = m;
        }
        pet_construct(&file.to_pet()?, &po)?
    } else if let Ok(gp) = file.to_gaussian() {
        let mut go = GaussianOptions { abs_tol: opts.tol, ..GaussianOptions::default() };
        if let Some(m) = file.solver.max_iter {
            go.max_iter = m;
        }
        construct_gaussian(&gp, &go)?
    } else {
        construct(&problem, &opts)?
    };
    Ok((problem, est))
}

#[derive(Serialize)]
struct SolveSummary {
    method: String,
    certified: bool,
    risk_bound: f64,
    gap: f64,
    epsilon: f64,
    theta: f64,
    lower_bound: f64,
    /// `lower <= risk_bound <= theta * lower + gap`.
    sandwich: bool,
    iterations: usize,
    fingerprint: String,
}

pub fn cmd_solve(path: &Path, g: &GlobalArgs) -> Result<i32> {
    let file = ProblemFile::load(path)?;
    let (problem, est) = build_estimator(&file, g)?;
    let lower = lower_bound_hellinger(&problem, &solver_options(&file, g))?;
    let theta = theta_epsilon(problem.epsilon)?;
    let slack = est.gap + 1e-9 * (1.0 + lower);
    let summary = SolveSummary {
        method: est.method.clone(),
        certified: est.certified,
        risk_bound: est.risk_bound,
        gap: est.gap,
        epsilon: est.epsilon,
        theta,
        lower_bound: lower,
        sandwich: lower <= est.risk_bound + slack && est.risk_bound <= theta * lower + slack,
        iterations: est.iterations,
        fingerprint: est.fingerprint.clone(),
    };
    let p = write_out(g, "estimator.json", &(est.to_json()? + "\n"))?;
    write_json(g, "summary.json", &summary)?;
    println!(
        "{}: risk bound {:.6e} (gap {:.1e}), lower bound {:.6e}, theta {:.3}, method {}",
        if est.certified { "certified" } else { "NOT certified" },
        est.risk_bound,
        est.gap,
        lower,
        theta,
        est.method
    );
    println!("estimator written to {}", p.display());
    Ok(certified_code(est.certified))
}

#[derive(Serialize)]
struct GaussianSummary {
    certified: bool,
    risk_bound: f64,
    gap: f64,
    /// Half the two-point value at radius `2 ErfInv(eps/2)`.
    two_point_half: f64,
    /// Risk bound of the generic construction on the same problem.
    generic_risk_bound: f64,
    psi: f64,
    erfinv_ratio: f64,
}

pub fn cmd_gaussian(path: &Path, g: &GlobalArgs) -> Result<i32> {
    let file = ProblemFile::load(path)?;
    let gp = file.to_gaussian()?;
    let go = GaussianOptions { abs_tol: g.tol, ..GaussianOptions::default() };
    let est = construct_gaussian(&gp, &go)?;
    let kappa = crate::gaussian::erfinv_tail(gp.epsilon / 2.0)?;
    let two = gaussian_two_point(&gp, 2.0 * kappa)?;
    let generic = construct(&file.to_problem()?, &solver_options(&file, g))?;
    let summary = GaussianSummary {
        certified: est.certified,
        risk_bound: est.risk_bound,
        gap: est.gap,
        two_point_half: 0.5 * two.value,
        generic_risk_bound: generic.risk_bound,
        psi: psi_epsilon(gp.epsilon)?,
        erfinv_ratio: kappa / crate::gaussian::erfinv_tail(gp.epsilon)?,
    };
    write_out(g, "estimator.json", &(est.to_json()? + "\n"))?;
    write_json(g, "gaussian_summary.json", &summary)?;
    println!(
        "{}: risk bound {:.6e}, two-point {:.6e}, generic {:.6e}",
        if est.certified { "certified" } else { "NOT certified" },
        est.risk_bound,
        summary.two_point_half,
        generic.risk_bound
    );
    Ok(certified_code(est.certified))
}

pub fn cmd_table1(g: &GlobalArgs) -> Result<i32> {
    let opts = SolverOptions {
        tol: g.tol,
        ..SolverOptions::default()
    };
    fs::create_dir_all(&g.out)?;
    let path = g.out.join("table1.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "epsilon", "L", "gamma", "delta", "upper", "lower", "ratio", "theta", "certified", "rel_diff_gamma",
        "rel_diff_delta", "rel_diff_upper", "rel_diff_lower", "rel_diff_ratio",
    ])?;
    let mut all = true;
    for &e in &TABLE_EPSILONS {
        for &l in &TABLE_LS {
            // Rows are flushed one by one so a failure keeps the completed cells.
            let c = bernoulli_cell(e, l, &opts)?;
            let d = reference_diff(&c).expect("reference row exists");
            all &= c.certified;
            w.write_record([
                e.to_string(),
                l.to_string(),
                format!("{:.6e}", c.gamma),
                format!("{:.6e}", c.delta),
                format!("{:.6e}", c.upper),
                format!("{:.6e}", c.lower),
                format!("{:.4}", c.ratio),
                format!("{:.4}", c.theta),
                c.certified.to_string(),
                format!("{:.3e}", d.gamma_rel),
                format!("{:.3e}", d.delta_rel),
                format!("{:.3e}", d.upper_rel),
                format!("{:.3e}", d.lower_rel),
                format!("{:.3e}", d.ratio_rel),
            ])?;
            w.flush()?;
            println!(
                "eps {:<6} L {:<5} upper {:.3e} lower {:.3e} ratio {:.2} theta {:.2}",
                e, l, c.upper, c.lower, c.ratio, c.theta
            );
        }
    }
    println!("table written to {}", path.display());
    Ok(certified_code(all))
}

fn random_points(problem: &EstimationProblem, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    (0..count).map(|_| problem.set.random_point(&mut rng)).collect()
}

fn write_report(g: &GlobalArgs, stem: &str, rep: &RiskReport) -> Result<()> {
    write_json(g, &format!("{stem}.json"), rep)?;
    write_out(g, &format!("{stem}.csv"), &rep.to_csv()?)?;
    write_out(g, &format!("{stem}_hist.csv"), &rep.histogram_csv()?)?;
    Ok(())
}

pub fn cmd_mc(path: &Path, x_list: Option<&Path>, g: &GlobalArgs) -> Result<i32> {
    let file = ProblemFile::load(path)?;
    let seed = file.solver.seed.unwrap_or(g.seed);
    let (problem, est) = build_estimator(&file, g)?;
    let xs: Vec<Vec<f64>> = match x_list {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => {
            let mut v = vec![est.x_bar.clone()];
            v.extend(random_points(&problem, 10, seed));
            v
        }
    };
    let rep = mc_risk(&problem, &est, &xs, g.reps, seed)?;
    write_report(g, "mc", &rep)?;
    println!(
        "{}: worst frequency {:.3e}, Wilson upper {:.3e}, epsilon {} ({} reps x {} points)",
        if rep.pass { "covered" } else { "NOT covered" },
        rep.worst_frequency,
        rep.worst_wilson_upper,
        rep.epsilon,
        rep.n_reps,
        rep.points.len()
    );
    Ok(if !est.certified {
        EXIT_NOT_CERTIFIED
    } else if rep.pass {
        EXIT_OK
    } else {
        EXIT_INVALID
    })
}

/// Coverage of the adaptive estimate on each level against `3 Phi^k + 3 delta`.
pub fn adaptive_coverage(
    nested: &NestedProblem,
    ad: &AdaptiveEstimator,
    points_per_level: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<RiskReport>> {
    (0..nested.levels())
        .map(|k| {
            let level = nested.level_problem(k)?;
            let mut xs = vec![ad.levels[k].estimator.x_bar.clone()];
            xs.extend(random_points(&level, points_per_level, seed.wrapping_add(k as u64)));
            let base = &nested.base;
            let bound = ad.guaranteed_bound(k);
            mc_coverage(base.epsilon, &xs, reps, seed.wrapping_add(1000 + k as u64), |_| bound, |_, x, rng| {
                let stats = sample_stats(base, x, rng);
                let (_, v) = ad.select_and_estimate_stats(&stats).expect("statistics match the levels");
                (v - dot(&base.g, x)).abs()
            })
        })
        .collect()
}

pub fn cmd_adaptive(path: Option<&Path>, g: &GlobalArgs) -> Result<i32> {
    let (nested, opts) = match path {
        Some(p) => {
            let file = ProblemFile::load(p)?;
            (file.to_nested()?, solver_options(&file, g))
        }
        None => (
            interval_demo(4.0, &[0.2, 0.5, 2.0], 0.05)?,
            SolverOptions {
                tol: g.tol,
                ..SolverOptions::default()
            },
        ),
    };
    let ad = build_levels(&nested, &opts)?;
    write_json(g, "adaptive.json", &ad)?;
    for (k, l) in ad.levels.iter().enumerate() {
        println!(
            "level {}: risk bound {:.6e}, Phi^k {:.6e}, selection bound {:.6e}, guarantee {:.6e}",
            k + 1,
            l.estimator.risk_bound,
            l.phi_star,
            l.bound,
            ad.guaranteed_bound(k)
        );
    }
    let reports = adaptive_coverage(&nested, &ad, 10, g.reps, g.seed)?;
    let mut pass = true;
    for (k, rep) in reports.iter().enumerate() {
        write_report(g, &format!("adaptive_level{}", k + 1), rep)?;
        pass &= rep.pass;
        println!(
            "level {}: worst frequency {:.3e}, Wilson upper {:.3e}",
            k + 1,
            rep.worst_frequency,
            rep.worst_wilson_upper
        );
    }
    Ok(if pass { EXIT_OK } else { EXIT_INVALID })
}

#[derive(Serialize)]
struct PetSummary {
    estimator: AffineEstimator,
    generic_risk_bound: f64,
    relative_difference: f64,
    lower_bound: f64,
    theta: f64,
    sandwich: bool,
    x_true: Vec<f64>,
    counts: Vec<u64>,
    estimate: f64,
    truth: f64,
}

pub fn cmd_pet_demo(path: Option<&Path>, g: &GlobalArgs) -> Result<i32> {
    let (model, x_true): (PetModel, Vec<f64>) = match path {
        Some(p) => {
            let m = ProblemFile::load(p)?.to_pet()?;
            let c = m.set.center();
            (m, c)
        }
        None => (demo_model(0.05)?, vec![400.0, 300.0, 100.0, 60.0]),
    };
    let po = PetOptions { abs_tol: g.tol, ..PetOptions::default() };
    let est = pet_construct(&model, &po)?;
    let problem = model.to_problem()?;
    let opts = SolverOptions {
        tol: g.tol,
        rel_tol: 1e-9,
        ..SolverOptions::default()
    };
    let generic = construct(&problem, &opts)?;
    let lower = lower_bound_hellinger(&problem, &opts)?;
    let theta = theta_epsilon(model.epsilon)?;
    let counts = pet_simulate(&model, &x_true, g.seed)?;
    let stats: Vec<_> = counts.iter().map(|&c| crate::estimator::GroupStat::Sum(vec![c as f64])).collect();
    let estimate = est.evaluate_stats(&stats)?;
    let slack = est.gap + 1e-9 * (1.0 + lower);
    let summary = PetSummary {
        generic_risk_bound: generic.risk_bound,
        relative_difference: (est.risk_bound - generic.risk_bound).abs() / generic.risk_bound.abs().max(f64::MIN_POSITIVE),
        lower_bound: lower,
        theta,
        sandwich: lower <= est.risk_bound + slack && est.risk_bound <= theta * lower + slack,
        truth: dot(&model.g, &x_true),
        x_true,
        counts,
        estimate,
        estimator: est,
    };
    write_json(g, "pet.json", &summary)?;
    println!(
        "{}: risk bound {:.6e} (generic {:.6e}), lower bound {:.6e}, sandwich {}; estimate {:.3} vs truth {:.3}",
        if summary.estimator.certified { "certified" } else { "NOT certified" },
        summary.estimator.risk_bound,
        summary.generic_risk_bound,
        lower,
        summary.sandwich,
        estimate,
        summary.truth
    );
    Ok(certified_code(summary.estimator.certified))
}

#[derive(Serialize)]
struct LowerBoundSummary {
    epsilon: f64,
    lower_bound: f64,
    /// `Phi_*(ln(2/eps))`, the value the affine estimate attains up to the gap.
    phi_star_upper_radius: f64,
    theta: f64,
}

pub fn cmd_lower_bound(path: &Path, g: &GlobalArgs) -> Result<i32> {
    let file = ProblemFile::load(path)?;
    let problem = file.to_problem()?;
    let opts = solver_options(&file, g);
    let lower = lower_bound_hellinger(&problem, &opts)?;
    let upper_radius = phi_star(&problem, (2.0 / problem.epsilon).ln(), &opts)?;
    let s = LowerBoundSummary {
        epsilon: problem.epsilon,
        lower_bound: lower,
        phi_star_upper_radius: upper_radius,
        theta: theta_epsilon(problem.epsilon)?,
    };
    write_json(g, "lower_bound.json", &s)?;
    println!("lower bound on the minimax risk: {:.6e} (Phi_* at ln(2/eps): {:.6e})", lower, upper_radius);
    Ok(EXIT_OK)
}

pub fn cmd_evaluate(estimator: &Path, observations: &Path) -> Result<i32> {
    let est = AffineEstimator::from_json(&fs::read_to_string(estimator)?)?;
    let obs = load_observations(observations)?;
    let v = est.evaluate(&obs).map_err(|e| Error::InvalidInput(format!("{}: {e}", observations.display())))?;
    // Shortest representation that round-trips exactly.
    println!("{v:?}");
    Ok(EXIT_OK)
}
