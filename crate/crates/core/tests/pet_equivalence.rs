mod common;

use common::{random_pet_model, rel_diff};
use minimax_affine::estimator::construct;
use minimax_affine::pet::{pet_construct, PetOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn pet_matches_generic_on_random_models() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..5 {
            let m = random_pet_model(&mut rng);
            let pet = pet_construct(&m, &PetOptions::default()).unwrap();
            let gen = construct(&m.to_problem().unwrap(), &common::tight_solver()).unwrap();
            assert!(pet.certified && gen.certified);
            let rel = rel_diff(pet.risk_bound, gen.risk_bound);
            assert!(rel <= 1e-6, "seed {seed} model {k}: relative difference {rel}");
        }
    }
}
