use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use nsgame::io::{parse_game, parse_strategy, write_game, write_strategy};
use nsgame::lp::{dualize, solve_lp, LpStatus};
use nsgame::random::{random_game, random_lp, random_ns_strategy, random_subns_strategy, rng_for, GameParams};
use nsgame::transforms::{extended_game, run_subns_to_hrns};
use nsgame::value::exact_value;
use nsgame::{canonical_sim_family, check_strategy, evaluate_value, Model, Subset, CHECK_TOL};

fn small_params() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (2usize..=3, 1usize..=2, 2usize..=3, any::<u64>()).prop_filter("size", |(k, q, a, _)| *k == 2 || (*q == 1 || *a == 2))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn subsets_enumerate_power_set(bits in 0u32..256) {
        let s = Subset::from_bits(bits);
        let subs = s.subsets();
        prop_assert_eq!(subs.len(), 1usize << s.len());
        for t in &subs {
            prop_assert!(t.is_subset_of(s));
            prop_assert_eq!(t.union(s.minus(*t)), s);
        }
    }

    #[test]
    fn marginals_chain((k, q, a, seed) in small_params()) {
        let mut rng = rng_for(seed, 1);
        let g = random_game(&GameParams::uniform(k, q, a, 0.5), &mut rng).unwrap();
        let p = random_subns_strategy(&g, &mut rng).unwrap();
        for d in p.entries() {
            for s in Subset::all(k) {
                let m = d.marginalize(s).unwrap();
                assert_abs_diff_eq!(m.total(), d.total(), epsilon = 1e-12);
                for t in s.subsets() {
                    let direct = d.marginalize(t).unwrap();
                    let chained = m.marginalize(t).unwrap();
                    for (x, y) in direct.probs().iter().zip(chained.probs()) {
                        assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn canonical_family_dominates((k, q, a, seed) in small_params()) {
        let mut rng = rng_for(seed, 2);
        let g = random_game(&GameParams::uniform(k, q, a, 0.5), &mut rng).unwrap();
        let p = random_subns_strategy(&g, &mut rng).unwrap();
        let sim = canonical_sim_family(&g, &p).unwrap();
        for (s, qs, d) in sim.iter() {
            prop_assert!(d.total() <= 1.0 + 1e-9);
            for &query in g.fiber(s, qs) {
                let m = p.get(query).marginalize(s).unwrap();
                for (x, y) in m.probs().iter().zip(d.probs()) {
                    prop_assert!(x <= &(y + 1e-12));
                }
            }
        }
        prop_assert!(check_strategy(&g, &p, Model::SubNs, CHECK_TOL).unwrap().pass);
    }

    #[test]
    fn ns_strategies_have_query_independent_marginals((k, q, a, seed) in small_params()) {
        let mut rng = rng_for(seed, 3);
        let g = random_game(&GameParams::uniform(k, q, a, 0.5), &mut rng).unwrap();
        let p = random_ns_strategy(&g, &mut rng).unwrap();
        prop_assert!(check_strategy(&g, &p, Model::Ns, CHECK_TOL).unwrap().pass);
        let sim = canonical_sim_family(&g, &p).unwrap();
        for (s, qs, d) in sim.iter() {
            for &query in g.fiber(s, qs) {
                let m = p.get(query).marginalize(s).unwrap();
                for (x, y) in m.probs().iter().zip(d.probs()) {
                    assert_abs_diff_eq!(*x, *y, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn lp_duality(seed in any::<u64>(), n in 2usize..8, m in 1usize..6) {
        let lp = random_lp(&mut rng_for(seed, 4), n, m);
        let primal = solve_lp(&lp).unwrap();
        let dual = solve_lp(&dualize(&lp)).unwrap();
        match primal.status {
            LpStatus::Optimal => {
                prop_assert_eq!(dual.status, LpStatus::Optimal);
                let (x, y) = (primal.value.unwrap(), dual.value.unwrap());
                prop_assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()), "{} vs {}", x, y);
                prop_assert!(lp.is_feasible(&primal.x, 1e-7));
            }
            LpStatus::Unbounded => prop_assert_eq!(dual.status, LpStatus::Infeasible),
            LpStatus::Infeasible => prop_assert_ne!(dual.status, LpStatus::Optimal),
        }
    }

    #[test]
    fn model_values_are_ordered(seed in any::<u64>(), a in 2usize..=3) {
        let g = random_game(&GameParams::uniform(2, 2, a, 0.6), &mut rng_for(seed, 5)).unwrap();
        let ns = exact_value(&g, Model::Ns).unwrap().value;
        let hr = exact_value(&g, Model::HrNs).unwrap().value;
        let sub = exact_value(&g, Model::SubNs).unwrap().value;
        prop_assert!(ns <= hr + 1e-7);
        prop_assert!(hr <= sub + 1e-7);
        prop_assert!(sub <= 1.0 + 1e-9);
    }

    #[test]
    fn files_round_trip((k, q, a, seed) in small_params()) {
        let mut rng = rng_for(seed, 6);
        let g = random_game(&GameParams::uniform(k, q, a, 0.5), &mut rng).unwrap();
        let p = random_subns_strategy(&g, &mut rng).unwrap();
        let text = write_game(&g);
        let back = parse_game(&text).unwrap();
        prop_assert_eq!(write_game(&back), text);
        let q2 = parse_strategy(&back, &write_strategy(&g, &p), false).unwrap();
        for (x, y) in p.entries().iter().zip(q2.entries()) {
            for (u, v) in x.probs().iter().zip(y.probs()) {
                assert_abs_diff_eq!(*u, *v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pipeline_output_is_honest_referee_ns(seed in any::<u64>(), a in 2usize..=3, delta in 0.1f64..0.9) {
        let mut rng = rng_for(seed, 7);
        let g = random_game(&GameParams::uniform(2, 2, a, 0.5), &mut rng).unwrap();
        let p = random_subns_strategy(&g, &mut rng).unwrap();
        let t = run_subns_to_hrns(&g, &p, delta).unwrap();
        let failed: Vec<String> = t.checks.iter().filter(|c| !c.pass).map(|c| c.name.to_string()).collect();
        prop_assert!(failed.is_empty(), "failed invariants {:?}", failed);
        prop_assert!(t.bound_holds);
        prop_assert!(t.final_value >= t.bound - 1e-9);
        let ext = extended_game(&g, t.good.pi_star.clone()).unwrap();
        prop_assert!(check_strategy(&ext, &t.p_star_star, Model::HrNs, CHECK_TOL).unwrap().pass);
        assert_abs_diff_eq!(evaluate_value(&g, &p).unwrap(), t.input_value, epsilon = 1e-12);
    }
}
