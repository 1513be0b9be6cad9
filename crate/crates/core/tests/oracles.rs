//! Offline oracles: convexity probes, finite differences, closed forms against
//! quadrature and series, brute-force total variation, set primitives.

mod common;

use common::oracle::{self, random_phis, tight_inner};
use common::{random_problem, FAMILIES};
use minimax_affine::estimator::construct;
use minimax_affine::problem::EstimationProblem;
use minimax_affine::saddle::{outer_value, SolverOptions};
use minimax_affine::TestFunction;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn outer_value_is_jointly_convex(seed in any::<u64>()) {
        let res = oracle::outer_value_convex(seed);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn phi_r_is_jointly_concave(seed in any::<u64>()) {
        let res = oracle::phi_r_concave(seed);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn pet_objective_is_jointly_convex(seed in any::<u64>()) {
        let res = oracle::pet_objective_convex(seed);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn lem_gradient_matches_finite_differences(seed in any::<u64>()) {
        let res = oracle::lem_gradient(seed);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn affinity_equals_half_llr_moment(seed in any::<u64>()) {
        let res = oracle::affinity_via_moment(seed);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn poisson_affinity_matches_series(mu in 0.01f64..40.0, nu in 0.01f64..40.0) {
        let res = oracle::poisson_affinity_series(mu, nu);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn gaussian_affinity_matches_quadrature(mu in -4.0f64..4.0, nu in -4.0f64..4.0, var in 0.2f64..4.0) {
        let res = oracle::gaussian_affinity_quadrature(mu, nu, var);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn binomial_tv_matches_brute_force(l in 1u64..60, p in 0.01f64..0.99, q in 0.01f64..0.99) {
        let res = oracle::binomial_tv_brute_force(l, p, q);
        prop_assert!(res.is_ok(), "{:?}", res);
    }

    #[test]
    fn lin_max_and_projection_properties(seed in any::<u64>()) {
        let res = oracle::set_primitives(seed);
        prop_assert!(res.is_ok(), "{:?}", res);
    }
}

// [DERIVED] Untying copies into single channels does not change the problem.
#[test]
fn untying_preserves_outer_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for fam in FAMILIES {
        let p = random_problem(fam, &mut rng);
        let r = (2.0 / p.epsilon).ln();
        let phi = random_phis(&p, &mut rng);
        let untied = p.untied();
        let phi_u: Vec<TestFunction> = p.groups.iter().zip(&phi).flat_map(|(g, f)| vec![f.clone(); g.copies]).collect();
        let a = outer_value(&p, &phi, 0.7, r, tight_inner()).unwrap().value;
        let b = outer_value(&untied, &phi_u, 0.7, r, tight_inner()).unwrap().value;
        assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{fam:?}: {a} vs {b}");
    }
}

// [DERIVED] The optimal value is positively homogeneous in g.
#[test]
fn scaling_the_functional_scales_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for fam in FAMILIES {
        let p = random_problem(fam, &mut rng);
        let t = 3.5;
        let scaled = EstimationProblem::new(p.groups.clone(), p.set.clone(), p.g.iter().map(|v| t * v).collect(), p.epsilon).unwrap();
        let a = construct(&p, &SolverOptions::default()).unwrap().risk_bound;
        let b = construct(&scaled, &SolverOptions::default()).unwrap().risk_bound;
        assert!((t * a - b).abs() <= 1e-5 * (1.0 + b), "{fam:?}: {} vs {b}", t * a);
    }
}
