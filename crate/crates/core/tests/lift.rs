use nsgame::random::{max_canonical_mass, random_game, rng_for, GameParams};
use nsgame::transforms::{build_prover_reduction, lift_to_subns};
use nsgame::{check_strategy, evaluate_value, Model};

// Marginals of the lifted strategy on a subset need not agree across queries
// with the same restriction, so the lift can exceed canonical mass one.
#[test]
fn lift_can_leave_subns_for_three_players() {
    let g = random_game(&GameParams::uniform(3, 2, 2, 0.5), &mut rng_for(23, 500)).unwrap();
    let r = build_prover_reduction(&g).unwrap();
    let opt = r.ns_optimum().unwrap();
    let lift = lift_to_subns(&r, &opt.strategy, 1e-6).unwrap();
    let mass = max_canonical_mass(&g, &lift.strategy).unwrap();
    assert!(mass > 1.05, "canonical mass {mass}");
    assert!(lift.sim_excess > 0.05, "sim excess {}", lift.sim_excess);
    assert!(!check_strategy(&g, &lift.strategy, Model::SubNs, 1e-6).unwrap().pass);
    // The union-bound value guarantee survives.
    let k = 3.0f64;
    let eps_reduced = 1.0 - opt.value;
    let value = evaluate_value(&g, &lift.strategy).unwrap();
    assert!(1.0 - value <= 2.0f64.powf(k) * eps_reduced + 1e-9);
}

#[test]
fn lift_is_subns_for_two_players() {
    for stream in 0..10 {
        let g = random_game(&GameParams::uniform(2, 2, 2, 0.5), &mut rng_for(23, stream)).unwrap();
        let r = build_prover_reduction(&g).unwrap();
        let opt = r.ns_optimum().unwrap();
        let lift = lift_to_subns(&r, &opt.strategy, 1e-6).unwrap();
        assert!(check_strategy(&g, &lift.strategy, Model::SubNs, 1e-6).unwrap().pass);
    }
}
