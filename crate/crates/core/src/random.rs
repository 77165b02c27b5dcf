//! Seeded instance generators. Every generator draws from a [`ChaCha8Rng`]
//! obtained through [`rng_for`], so a `(seed, stream)` pair pins the output.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{canonical_sim_family, Game, Strategy, SubDist};
use crate::lp::{LinearProgram, RowKind, Sense, VarKind};
use crate::value::ns_point_with_objective;

/// Independent generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    pub queries: Vec<usize>,
    pub answers: Vec<usize>,
    /// Probability that a given `(q, a)` is accepted.
    pub density: f64,
}

impl GameParams {
    pub fn uniform(k: usize, nq: usize, na: usize, density: f64) -> Self {
        GameParams { queries: vec![nq; k], answers: vec![na; k], density }
    }

    fn validate(&self) -> Result<()> {
        if self.queries.is_empty() || self.queries.len() != self.answers.len() {
            return Err(Error::InvalidParams("need matching, nonempty alphabet size lists".into()));
        }
        if self.queries.iter().chain(&self.answers).any(|&n| n == 0) {
            return Err(Error::InvalidParams("alphabet sizes must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::InvalidParams(format!("density {} outside [0, 1]", self.density)));
        }
        Ok(())
    }
}

fn labels(sizes: &[usize], prefix: &str) -> Vec<Vec<String>> {
    sizes.iter().map(|&n| (0..n).map(|i| format!("{prefix}{i}")).collect()).collect()
}

/// Positive simplex sample: normalized i.i.d. exponentials.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1) + 1e-12).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn random_game<R: Rng>(params: &GameParams, rng: &mut R) -> Result<Game> {
    params.validate()?;
    let nq: usize = params.queries.iter().product();
    let na: usize = params.answers.iter().product();
    let pi = random_simplex(rng, nq);
    let coin = Bernoulli::new(params.density).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let predicate = (0..nq * na).map(|_| coin.sample(rng)).collect();
    Game::new(labels(&params.queries, "q"), labels(&params.answers, "a"), pi, predicate)
}

/// Product of independent per-player randomized answer functions.
pub fn random_local_strategy<R: Rng>(game: &Game, rng: &mut R) -> Strategy {
    let local: Vec<Vec<Vec<f64>>> = (0..game.k())
        .map(|i| {
            (0..game.query_sizes()[i])
                .map(|_| random_simplex(rng, game.answer_sizes()[i]))
                .collect()
        })
        .collect();
    let entries = (0..game.num_queries())
        .map(|q| {
            let qd = game.decode_query(q);
            let probs = (0..game.num_answers())
                .map(|a| {
                    game.decode_answer(a)
                        .iter()
                        .enumerate()
                        .map(|(i, &ai)| local[i][qd[i]][ai])
                        .product()
                })
                .collect();
            SubDist::raw(game.full(), game.answer_sizes().to_vec(), probs)
        })
        .collect();
    Strategy::from_entries_unchecked(entries)
}

/// A vertex of the NS polytope maximizing a random linear objective.
pub fn random_ns_strategy<R: Rng>(game: &Game, rng: &mut R) -> Result<Strategy> {
    let weights: Vec<Vec<f64>> = (0..game.num_queries())
        .map(|_| (0..game.num_answers()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    ns_point_with_objective(game, &weights)
}

/// Largest canonical simulator mass over all `(S, q_S)`.
pub fn max_canonical_mass(game: &Game, p: &Strategy) -> Result<f64> {
    Ok(canonical_sim_family(game, p)?
        .iter()
        .map(|(_, _, d)| d.total())
        .fold(0.0, f64::max))
}

/// Scales every entry by `1 / max canonical mass` when that mass exceeds one,
/// which makes the strategy subNS.
pub fn trim_to_subns(game: &Game, p: &Strategy) -> Result<Strategy> {
    let m = max_canonical_mass(game, p)?;
    if m <= 1.0 {
        return Ok(p.clone());
    }
    Ok(Strategy::from_entries_unchecked(p.entries().iter().map(|d| d.scaled(1.0 / m)).collect()))
}

/// Independent random sub-distribution per query, then trimmed to subNS.
pub fn random_subns_strategy<R: Rng>(game: &Game, rng: &mut R) -> Result<Strategy> {
    let entries = (0..game.num_queries())
        .map(|_| {
            let mass = rng.gen_range(0.5..1.0);
            let probs = random_simplex(rng, game.num_answers()).into_iter().map(|x| x * mass).collect();
            SubDist::raw(game.full(), game.answer_sizes().to_vec(), probs)
        })
        .collect();
    trim_to_subns(game, &Strategy::from_entries_unchecked(entries))
}

/// A game with a planted deterministic local strategy `f` that always wins,
/// and a subNS strategy that plays `f` with weight `1 - eta` and noise otherwise.
/// The strategy has uniform abort mass at most its loss `1 - value`.
pub fn planted_instance<R: Rng>(params: &GameParams, eta: f64, rng: &mut R) -> Result<(Game, Strategy)> {
    params.validate()?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParams(format!("noise weight {eta} outside [0, 1]")));
    }
    let plant: Vec<Vec<usize>> = params
        .queries
        .iter()
        .zip(&params.answers)
        .map(|(&nq, &na)| (0..nq).map(|_| rng.gen_range(0..na)).collect())
        .collect();
    let base = random_game(params, rng)?;
    let honest = |q: usize| {
        let qd = base.decode_query(q);
        base.encode_answer(&qd.iter().enumerate().map(|(i, &qi)| plant[i][qi]).collect::<Vec<_>>())
    };
    let na = base.num_answers();
    let mut predicate = base.predicate_table().to_vec();
    for q in 0..base.num_queries() {
        predicate[q * na + honest(q)] = true;
    }
    let game = Game::new(base.query_labels().to_vec(), base.answer_labels().to_vec(), base.pi().to_vec(), predicate)?;
    let entries = (0..game.num_queries())
        .map(|q| {
            let mut probs: Vec<f64> = random_simplex(rng, na).into_iter().map(|x| x * eta).collect();
            probs[honest(q)] += 1.0 - eta;
            SubDist::raw(game.full(), game.answer_sizes().to_vec(), probs)
        })
        .collect();
    let p = trim_to_subns(&game, &Strategy::from_entries_unchecked(entries))?;
    Ok((game, p))
}

/// `max c x` over `n` variables (the first free) with `m` random `≤` rows and one
/// equality, all satisfied by a hidden interior point, plus box rows for boundedness.
pub fn random_lp<R: Rng>(rng: &mut R, n: usize, m: usize) -> LinearProgram {
    let mut lp = LinearProgram::new(Sense::Max);
    let x0: Vec<f64> = (0..n)
        .map(|j| if j == 0 { rng.gen_range(-1.0..1.0) } else { rng.gen_range(0.0..1.0) })
        .collect();
    for j in 0..n {
        let kind = if j == 0 { VarKind::Free } else { VarKind::NonNeg };
        lp.add_var(kind, rng.gen_range(-1.0..1.0));
    }
    let dot = |c: &[(usize, f64)]| c.iter().map(|&(j, a)| a * x0[j]).sum::<f64>();
    for _ in 0..m {
        let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
        let rhs = dot(&coeffs) + rng.gen_range(0.1..1.0);
        lp.add_row(coeffs, RowKind::Le, rhs);
    }
    let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
    let rhs = dot(&coeffs);
    lp.add_row(coeffs, RowKind::Eq, rhs);
    lp.add_row((1..n).map(|j| (j, 1.0)).collect(), RowKind::Le, 10.0);
    lp.add_row(vec![(0, 1.0)], RowKind::Le, 5.0);
    lp.add_row(vec![(0, -1.0)], RowKind::Le, 5.0);
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{check_strategy, evaluate_value, Model, CHECK_TOL};

    #[test]
    fn same_seed_same_game() {
        let params = GameParams::uniform(3, 2, 2, 0.4);
        let a = random_game(&params, &mut rng_for(42, 0)).unwrap();
        let b = random_game(&params, &mut rng_for(42, 0)).unwrap();
        assert_eq!(a.pi(), b.pi());
        assert_eq!(a.predicate_table(), b.predicate_table());
        let c = random_game(&params, &mut rng_for(42, 1)).unwrap();
        assert_ne!(a.pi(), c.pi());
    }

    #[test]
    fn density_one_accepts_everything() {
        let g = random_game(&GameParams::uniform(2, 3, 2, 1.0), &mut rng_for(1, 0)).unwrap();
        assert!(g.predicate_table().iter().all(|&v| v));
        assert!(random_game(&GameParams::uniform(2, 0, 2, 1.0), &mut rng_for(1, 0)).is_err());
    }

    #[test]
    fn generators_meet_their_models() {
        for seed in 0..5 {
            let mut rng = rng_for(seed, 3);
            let g = random_game(&GameParams::uniform(3, 2, 2, 0.5), &mut rng).unwrap();
            let local = random_local_strategy(&g, &mut rng);
            assert!(check_strategy(&g, &local, Model::Ns, CHECK_TOL).unwrap().pass);
            let ns = random_ns_strategy(&g, &mut rng).unwrap();
            assert!(check_strategy(&g, &ns, Model::Ns, 1e-6).unwrap().pass);
            let sub = random_subns_strategy(&g, &mut rng).unwrap();
            assert!(check_strategy(&g, &sub, Model::SubNs, CHECK_TOL).unwrap().pass);
        }
    }

    #[test]
    fn planted_instances_have_small_loss() {
        let (g, p) = planted_instance(&GameParams::uniform(2, 2, 2, 0.3), 1e-3, &mut rng_for(9, 0)).unwrap();
        let eps = 1.0 - evaluate_value(&g, &p).unwrap();
        assert!(eps < 0.01);
        assert!(check_strategy(&g, &p, Model::SubNsDelta(eps.sqrt()), CHECK_TOL).unwrap().pass);
    }
}
