//! The 2-player consistency game `T(G)` and the lift of its NS strategies
//! back to sub-non-signaling strategies of `G`.
//!
//! Player 1 receives the full query `q` and answers `a ∈ A`. Player 2 receives
//! a uniformly random subset `S` together with `q_S` and answers some `a'_S`.
//! The referee accepts iff `V(q, a) = 1` and `a'` agrees with `a` on `S`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{check_strategy, decode, encode, Game, Model, SimFamily, Strategy, SubDist, Subset};
use crate::lp::{solve_lp, LinearProgram, RowKind, Sense, VarKind};

/// `T(G)` together with the bookkeeping needed to move between the two games.
#[derive(Clone, Debug)]
pub struct ReducedGame {
    base: Game,
    game: Game,
    // player-2 query index -> (S, q_S)
    pairs: Vec<(Subset, usize)>,
    // player-2 answer index -> (S, a_S)
    tags: Vec<(Subset, usize)>,
    // per subset mask: first player-2 query / answer index of that subset
    pair_offset: Vec<usize>,
    tag_offset: Vec<usize>,
}

fn join(labels: &[Vec<String>], players: impl Iterator<Item = usize>, digits: &[usize]) -> String {
    players
        .zip(digits)
        .map(|(i, &d)| labels[i][d].as_str())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn build_prover_reduction(base: &Game) -> Result<ReducedGame> {
    let k = base.k();
    if k < 2 {
        return Err(Error::InvalidParams(format!("the prover reduction needs k >= 2, got {k}")));
    }
    let mut pairs = Vec::new();
    let mut tags = Vec::new();
    let mut pair_offset = vec![0; 1 << k];
    let mut tag_offset = vec![0; 1 << k];
    let mut q2_labels = Vec::new();
    let mut a2_labels = Vec::new();
    for s in Subset::all(k) {
        pair_offset[s.bits() as usize] = pairs.len();
        tag_offset[s.bits() as usize] = tags.len();
        let qdims = base.query_dims(s);
        for qs in 0..base.sub_query_count(s) {
            pairs.push((s, qs));
            q2_labels.push(format!("{s}:{}", join(base.query_labels(), s.players(), &decode(&qdims, qs))));
        }
        let adims = base.answer_dims(s);
        for a_s in 0..base.sub_answer_count(s) {
            tags.push((s, a_s));
            a2_labels.push(format!("{s}:{}", join(base.answer_labels(), s.players(), &decode(&adims, a_s))));
        }
    }
    let q1_labels: Vec<String> = (0..base.num_queries())
        .map(|q| join(base.query_labels(), 0..k, &base.decode_query(q)))
        .collect();
    let a1_labels: Vec<String> = (0..base.num_answers())
        .map(|a| join(base.answer_labels(), 0..k, &base.decode_answer(a)))
        .collect();

    let weight = 1.0 / (1u64 << k) as f64;
    let (n1, n2) = (base.num_queries(), pairs.len());
    let mut pi = vec![0.0; n1 * n2];
    for q in 0..n1 {
        for (j, &(s, qs)) in pairs.iter().enumerate() {
            if base.project_query(s, q) == qs {
                pi[q * n2 + j] = base.pi()[q] * weight;
            }
        }
    }
    let (m1, m2) = (base.num_answers(), tags.len());
    let mut predicate = vec![false; n1 * n2 * m1 * m2];
    for q in 0..n1 {
        for (j, &(s, _)) in pairs.iter().enumerate() {
            let row = (q * n2 + j) * m1 * m2;
            let off = tag_offset[s.bits() as usize];
            for a in (0..m1).filter(|&a| base.accepts(q, a)) {
                predicate[row + a * m2 + off + base.project_answer(s, a)] = true;
            }
        }
    }
    let game = Game::new(vec![q1_labels, q2_labels], vec![a1_labels, a2_labels], pi, predicate)?;
    Ok(ReducedGame { base: base.clone(), game, pairs, tags, pair_offset, tag_offset })
}

/// Optimal NS strategy of `T(G)` and its value.
#[derive(Clone, Debug)]
pub struct ReducedNsOptimum {
    pub value: f64,
    pub strategy: Strategy,
}

impl ReducedGame {
    pub fn base(&self) -> &Game {
        &self.base
    }

    pub fn game(&self) -> &Game {
        &self.game
    }

    /// `(S, q_S)` behind a player-2 query.
    pub fn pair(&self, j: usize) -> (Subset, usize) {
        self.pairs[j]
    }

    /// `(S, a_S)` behind a player-2 answer.
    pub fn tag(&self, b: usize) -> (Subset, usize) {
        self.tags[b]
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair_index(&self, s: Subset, q_s: usize) -> usize {
        self.pair_offset[s.bits() as usize] + q_s
    }

    pub fn tag_index(&self, s: Subset, a_s: usize) -> usize {
        self.tag_offset[s.bits() as usize] + a_s
    }

    /// Both players use the local answer functions `f(i, q_i)` of `G`.
    pub fn honest_strategy(&self, f: impl Fn(usize, usize) -> usize) -> Strategy {
        let base = &self.base;
        Strategy::deterministic(&self.game, |player, qi| {
            if player == 0 {
                let digits: Vec<usize> = base.decode_query(qi).iter().enumerate().map(|(i, &x)| f(i, x)).collect();
                base.encode_answer(&digits)
            } else {
                let (s, qs) = self.pairs[qi];
                let qd = decode(&base.query_dims(s), qs);
                let ad: Vec<usize> = s.players().zip(&qd).map(|(i, &x)| f(i, x)).collect();
                self.tag_index(s, encode(&base.answer_dims(s), &ad))
            }
        })
    }

    /// Exact NS value of `T(G)` through a compact LP over consistent query
    /// pairs and well-typed player-2 answers, expanded to a full strategy.
    pub fn ns_optimum(&self) -> Result<ReducedNsOptimum> {
        let base = &self.base;
        let k = base.k();
        let subsets = Subset::all(k);
        let (nq, na) = (base.num_queries(), base.num_answers());
        let weight = 1.0 / (1u64 << k) as f64;

        let mut lp = LinearProgram::new(Sense::Max);
        // var_base[q][si] = first variable of the block (a, b)
        let mut var_base = vec![vec![0; subsets.len()]; nq];
        for q in 0..nq {
            for (si, &s) in subsets.iter().enumerate() {
                var_base[q][si] = lp.num_vars();
                let nb = base.sub_answer_count(s);
                for a in 0..na {
                    let hit = base.project_answer(s, a);
                    for b in 0..nb {
                        let cost = if base.accepts(q, a) && b == hit { base.pi()[q] * weight } else { 0.0 };
                        lp.add_var(VarKind::NonNeg, cost);
                    }
                }
            }
        }
        let block = |q: usize, si: usize, a: usize, b: usize| var_base[q][si] + a * base.sub_answer_count(subsets[si]) + b;

        for q in 0..nq {
            lp.add_row((0..na).map(|a| (block(q, 0, a, 0), 1.0)).collect(), RowKind::Eq, 1.0);
            for si in 1..subsets.len() {
                let (nb0, nb1) = (base.sub_answer_count(subsets[si - 1]), base.sub_answer_count(subsets[si]));
                for a in 0..na {
                    let mut row: Vec<(usize, f64)> = (0..nb0).map(|b| (block(q, si - 1, a, b), 1.0)).collect();
                    row.extend((0..nb1).map(|b| (block(q, si, a, b), -1.0)));
                    lp.add_row(row, RowKind::Eq, 0.0);
                }
            }
        }
        for (si, &s) in subsets.iter().enumerate() {
            for qs in 0..base.sub_query_count(s) {
                let fiber = base.fiber(s, qs);
                for w in fiber.windows(2) {
                    for b in 0..base.sub_answer_count(s) {
                        let mut row: Vec<(usize, f64)> = (0..na).map(|a| (block(w[0], si, a, b), 1.0)).collect();
                        row.extend((0..na).map(|a| (block(w[1], si, a, b), -1.0)));
                        lp.add_row(row, RowKind::Eq, 0.0);
                    }
                }
            }
        }

        let outcome = solve_lp(&lp)?;
        let value = outcome.optimal_value()?;
        let x: Vec<f64> = outcome.x.iter().map(|v| v.max(0.0)).collect();

        let n2 = self.pairs.len();
        let m2 = self.tags.len();
        let first = |q: usize| -> Vec<f64> { (0..na).map(|a| x[block(q, 0, a, 0)]).collect() };
        let second = |j: usize| -> Vec<f64> {
            let (s, qs) = self.pairs[j];
            let si = subsets.iter().position(|&t| t == s).unwrap();
            let q = base.fiber(s, qs)[0];
            let mut out = vec![0.0; m2];
            for b in 0..base.sub_answer_count(s) {
                out[self.tag_index(s, b)] = (0..na).map(|a| x[block(q, si, a, b)]).sum();
            }
            out
        };
        let seconds: Vec<Vec<f64>> = (0..n2).map(second).collect();
        let mut entries = Vec::with_capacity(nq * n2);
        for q in 0..nq {
            let m = first(q);
            for (j, &(s, qs)) in self.pairs.iter().enumerate() {
                let mut probs = vec![0.0; na * m2];
                if base.project_query(s, q) == qs {
                    let si = subsets.iter().position(|&t| t == s).unwrap();
                    for a in 0..na {
                        for b in 0..base.sub_answer_count(s) {
                            probs[a * m2 + self.tag_index(s, b)] = x[block(q, si, a, b)];
                        }
                    }
                } else {
                    for a in 0..na {
                        for b in 0..m2 {
                            probs[a * m2 + b] = m[a] * seconds[j][b];
                        }
                    }
                }
                entries.push(SubDist::raw(self.game.full(), self.game.answer_sizes().to_vec(), probs));
            }
        }
        Ok(ReducedNsOptimum { value: value.clamp(0.0, 1.0), strategy: Strategy::from_entries_unchecked(entries) })
    }
}

/// A lifted strategy with the simulator family read off player 2.
#[derive(Clone, Debug, Serialize)]
pub struct Lift {
    pub strategy: Strategy,
    pub sim: SimFamily,
    /// Largest `p_q(a_S) - Sim_{S,q_S}(a_S)` over everything.
    pub sim_excess: f64,
}

/// Runs the 2^k executions of `P` (one per subset) independently and outputs
/// a random accepting one's player-1 answer, or ⊥ when any execution rejects.
pub fn lift_to_subns(reduced: &ReducedGame, p: &Strategy, tol: f64) -> Result<Lift> {
    let report = check_strategy(reduced.game(), p, Model::Ns, tol)?;
    if !report.pass {
        return Err(Error::Precondition(format!(
            "strategy for the reduced game is not non-signaling (worst violation {:.3e})",
            report.worst_violation
        )));
    }
    let base = reduced.base();
    let k = base.k();
    let subsets = Subset::all(k);
    let (nq, na) = (base.num_queries(), base.num_answers());
    let n2 = reduced.num_pairs();
    let m2 = reduced.tags.len();
    let weight = 1.0 / (1u64 << k) as f64;

    let mut entries = Vec::with_capacity(nq);
    for q in 0..nq {
        let acc: Vec<Vec<f64>> = subsets
            .iter()
            .map(|&s| {
                let d = p.get(q * n2 + reduced.pair_index(s, base.project_query(s, q)));
                (0..na)
                    .map(|a| {
                        if base.accepts(q, a) {
                            d.get(a * m2 + reduced.tag_index(s, base.project_answer(s, a)))
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let totals: Vec<f64> = acc.iter().map(|row| row.iter().sum()).collect();
        let mut probs = vec![0.0; na];
        for (si, row) in acc.iter().enumerate() {
            let others: f64 = totals.iter().enumerate().filter(|&(i, _)| i != si).map(|(_, t)| t).product();
            for (slot, &x) in probs.iter_mut().zip(row) {
                *slot += weight * x * others;
            }
        }
        entries.push(SubDist::raw(base.full(), base.answer_sizes().to_vec(), probs));
    }
    let strategy = Strategy::from_entries_unchecked(entries);

    let mut sim = SimFamily::empty(base);
    for s in Subset::nonempty(k) {
        for qs in 0..base.sub_query_count(s) {
            let q = base.fiber(s, qs)[0];
            let d = p.get(q * n2 + reduced.pair_index(s, qs));
            let probs = (0..base.sub_answer_count(s))
                .map(|b| (0..na).map(|a| d.get(a * m2 + reduced.tag_index(s, b))).sum())
                .collect();
            sim.set(s, qs, SubDist::raw(s, base.answer_dims(s), probs));
        }
    }
    let mut sim_excess = f64::NEG_INFINITY;
    for (s, qs, d) in sim.iter() {
        for &q in base.fiber(s, qs) {
            let marg = strategy.get(q).marginalize(s)?;
            for (x, y) in marg.probs().iter().zip(d.probs()) {
                sim_excess = sim_excess.max(x - y);
            }
        }
    }
    Ok(Lift { strategy, sim, sim_excess })
}
