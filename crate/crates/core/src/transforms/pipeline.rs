//! Conversion of a sub-non-signaling strategy into an honest-referee
//! non-signaling strategy over answers extended by a star symbol.
//!
//! Stages: abort profile `ν`, outlier trimming, simulator correction
//! (`Sim'` then `Sim^(1)`), GOOD query selection and renormalization
//! (`Sim^(2)`), damping (`Sim^(3)`), inclusion-exclusion expansion into `p*`,
//! normalization into `p**`. Every stage's inequalities are checked as the
//! pipeline runs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{
    acceptance_at, canonical_sim_family, check_strategy, decode, encode, evaluate_value, marginal_table,
    project_index, Assignment, Game, Model, SimFamily, Strategy, SubDist, Subset, CHECK_TOL,
};

/// Absolute slack for the pipeline's inequalities.
pub const PIPE_TOL: f64 = 1e-9;
/// Label of the star answer appended to every alphabet.
pub const STAR: &str = "*";

/// A strategy over `A*_i = A_i ∪ {*}`; the star of player `i` has index `|A_i|`.
pub type ExtendedStrategy = Strategy;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn invariant(stage: &'static str, detail: String) -> Error {
    Error::PipelineInvariant { stage, detail }
}

/// `G*`: same queries, alphabets extended by a star, starred answers rejected.
pub fn extended_game(base: &Game, pi: Vec<f64>) -> Result<Game> {
    if base.answer_labels().iter().flatten().any(|l| l == STAR) {
        return Err(Error::InvalidGame(format!("answer label {STAR:?} is reserved")));
    }
    let answers: Vec<Vec<String>> = base
        .answer_labels()
        .iter()
        .map(|alpha| alpha.iter().cloned().chain(std::iter::once(STAR.to_string())).collect())
        .collect();
    let sizes = base.answer_sizes().to_vec();
    Game::from_fn(base.query_labels().to_vec(), answers, pi, |q, a| {
        a.iter().zip(&sizes).all(|(x, n)| x < n) && base.accepts(base.encode_query(q), base.encode_answer(a))
    })
}

fn extended_dims(base: &Game) -> Vec<usize> {
    base.answer_sizes().iter().map(|n| n + 1).collect()
}

/// Extended index of `(a_S, *, ..., *)`.
fn starred(base: &Game, s: Subset, a_s: usize) -> usize {
    let sub = decode(&base.answer_dims(s), a_s);
    let mut it = sub.iter();
    let digits: Vec<usize> = (0..base.k())
        .map(|i| if s.contains(i) { *it.next().unwrap() } else { base.answer_sizes()[i] })
        .collect();
    encode(&extended_dims(base), &digits)
}

/// `ν(q) = Σ_{S ⊆ [k]} E_{q* ← π | q*_S = q_S}[p_{q*}(⊥)]`; zero-mass fibers contribute 0.
pub fn compute_nu(game: &Game, p: &Strategy) -> Result<Vec<f64>> {
    if p.len() != game.num_queries() {
        return Err(Error::InvalidStrategy("strategy does not cover the game".into()));
    }
    let bottoms: Vec<f64> = p.entries().iter().map(SubDist::bottom).collect();
    let mut nu = vec![0.0; game.num_queries()];
    for s in Subset::all(game.k()) {
        for qs in 0..game.sub_query_count(s) {
            let mass = game.fiber_mass(s, qs);
            if mass <= 0.0 {
                continue;
            }
            let fiber = game.fiber(s, qs);
            let avg = fiber.iter().map(|&q| game.pi()[q] * bottoms[q]).sum::<f64>() / mass;
            for &q in fiber {
                nu[q] += avg;
            }
        }
    }
    Ok(nu)
}

/// One `δ_{S,a_S}(q)` record; `applied` is the marginal reduction actually made.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reduction {
    pub query: usize,
    pub subset: Subset,
    pub answer: usize,
    pub amount: f64,
    pub applied: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trimmed {
    pub strategy: Strategy,
    pub reductions: Vec<Reduction>,
    /// `δ(q) = Σ_{S, a_S} δ_{S,a_S}(q)`.
    pub delta: Vec<f64>,
}

/// Lowers every marginal `p̃_q(a_S)` above its π-conditional average (taken
/// under the original `p`) to that average, scaling the affected answers
/// proportionally.
pub fn trim_outliers(game: &Game, p: &Strategy) -> Result<Trimmed> {
    if p.len() != game.num_queries() {
        return Err(Error::InvalidStrategy("strategy does not cover the game".into()));
    }
    let mut probs: Vec<Vec<f64>> = p.entries().iter().map(|d| d.probs().to_vec()).collect();
    let mut reductions = Vec::new();
    let mut delta = vec![0.0; game.num_queries()];
    for s in Subset::nonempty(game.k()) {
        let proj = game.answer_projection(s);
        let nas = game.sub_answer_count(s);
        let marg = marginal_table(game, p, s);
        for qs in 0..game.sub_query_count(s) {
            let mass = game.fiber_mass(s, qs);
            if mass <= 0.0 {
                continue;
            }
            let fiber = game.fiber(s, qs);
            let avg: Vec<f64> = (0..nas)
                .map(|b| fiber.iter().map(|&q| game.pi()[q] * marg[q][b]).sum::<f64>() / mass)
                .collect();
            for &q in fiber {
                let mut cur = vec![0.0; nas];
                for (a, &x) in probs[q].iter().enumerate() {
                    cur[proj[a]] += x;
                }
                for b in 0..nas {
                    let amount = (marg[q][b] - avg[b]).max(0.0);
                    let applied = (cur[b] - avg[b]).max(0.0);
                    if applied > 0.0 {
                        let ratio = avg[b] / cur[b];
                        for (a, x) in probs[q].iter_mut().enumerate() {
                            if proj[a] == b {
                                *x *= ratio;
                            }
                        }
                    }
                    if amount > 0.0 || applied > 0.0 {
                        delta[q] += amount;
                        reductions.push(Reduction { query: q, subset: s, answer: b, amount, applied });
                    }
                }
            }
        }
    }
    let entries = probs
        .into_iter()
        .map(|v| SubDist::raw(game.full(), game.answer_sizes().to_vec(), v))
        .collect();
    Ok(Trimmed { strategy: Strategy::from_entries_unchecked(entries), reductions, delta })
}

/// One correction `ξ_{T,q_T}(S, a_S)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Correction {
    pub subset: Subset,
    pub query: usize,
    pub against: Subset,
    pub answer: usize,
    pub amount: f64,
}

/// `ξ_{T,q_T}`: total correction of one entry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct XiTotal {
    pub subset: Subset,
    pub query: usize,
    pub amount: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Sim1 {
    pub sim_prime: SimFamily,
    pub sim1: SimFamily,
    pub corrections: Vec<Correction>,
    pub xi: Vec<XiTotal>,
}

/// `Sim'` is the canonical family of `p̃`. `Sim^(1)` corrects each `Sim'_{T,q_T}`,
/// in increasing `|T|`, against its codimension-one restrictions.
pub fn build_sim1(game: &Game, trimmed: &Strategy) -> Result<Sim1> {
    let sim_prime = canonical_sim_family(game, trimmed)?;
    let mut sim1 = sim_prime.clone();
    let mut corrections = Vec::new();
    let mut xi = Vec::new();
    for t in Subset::nonempty(game.k()).into_iter().filter(|t| t.len() >= 2) {
        let dims = game.answer_dims(t);
        let lower: Vec<Subset> = t.subsets().into_iter().filter(|s| s.len() + 1 == t.len()).collect();
        for qt in 0..game.sub_query_count(t) {
            let mut probs = sim1.get(t, qt).expect("canonical family is total").probs().to_vec();
            let mut total = 0.0;
            for &s in &lower {
                let keep = t.positions_of(s)?;
                let proj: Vec<usize> = (0..probs.len()).map(|i| project_index(&dims, &keep, i)).collect();
                let target = sim1.get(s, game.restrict_query(t, qt, s)).expect("canonical family is total");
                let mut cur = vec![0.0; game.sub_answer_count(s)];
                for (i, &x) in probs.iter().enumerate() {
                    cur[proj[i]] += x;
                }
                for (b, &m) in cur.iter().enumerate() {
                    let goal = target.get(b);
                    if m > goal {
                        let ratio = goal / m;
                        for (i, x) in probs.iter_mut().enumerate() {
                            if proj[i] == b {
                                *x *= ratio;
                            }
                        }
                        total += m - goal;
                        corrections.push(Correction { subset: t, query: qt, against: s, answer: b, amount: m - goal });
                    }
                }
            }
            xi.push(XiTotal { subset: t, query: qt, amount: total });
            sim1.set(t, qt, SubDist::raw(t, dims.clone(), probs));
        }
    }
    Ok(Sim1 { sim_prime, sim1, corrections, xi })
}

#[derive(Clone, Debug, Serialize)]
pub struct GoodSelection {
    /// `E_π[Sim^(1)_{[k],q}(⊥)]`.
    pub eps1: f64,
    pub threshold: f64,
    pub good: Vec<bool>,
    pub good_mass: f64,
    pub pi_star: Vec<f64>,
    pub tv_distance: f64,
}

/// GOOD = supported queries whose full-answer abort mass is at most `ε₁ / δ`.
pub fn select_good(game: &Game, sim1: &SimFamily, delta: f64) -> Result<GoodSelection> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParams(format!("delta {delta} outside (0, 1]")));
    }
    let full = game.full();
    let bottoms: Vec<f64> = (0..game.num_queries())
        .map(|q| sim1.get(full, q).map(SubDist::bottom).unwrap_or(1.0))
        .collect();
    let eps1: f64 = game.pi().iter().zip(&bottoms).map(|(p, b)| p * b).sum();
    let threshold = eps1 / delta;
    let good: Vec<bool> = (0..game.num_queries())
        .map(|q| game.pi()[q] > 0.0 && bottoms[q] <= threshold + 1e-12)
        .collect();
    let good_mass: f64 = (0..game.num_queries()).filter(|&q| good[q]).map(|q| game.pi()[q]).sum();
    if good_mass <= 0.0 {
        return Err(invariant("select_good", "GOOD has no mass".into()));
    }
    let pi_star: Vec<f64> =
        (0..game.num_queries()).map(|q| if good[q] { game.pi()[q] / good_mass } else { 0.0 }).collect();
    let tv_distance = 0.5 * game.pi().iter().zip(&pi_star).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(GoodSelection { eps1, threshold, good, good_mass, pi_star, tv_distance })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BetaEntry {
    pub subset: Subset,
    pub query: usize,
    pub beta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Sim2 {
    pub sim2: SimFamily,
    pub beta: Vec<BetaEntry>,
    pub alpha: f64,
}

/// Entries consistent with some GOOD query, rescaled to mass `α^{|S|}`.
pub fn normalize_sim2(game: &Game, sim1: &SimFamily, good: &[bool], delta: f64, eps1: f64) -> Result<Sim2> {
    let alpha = (1.0 - eps1 / delta).max(0.0);
    let mut sim2 = SimFamily::empty(game);
    let mut beta = Vec::new();
    for s in Subset::nonempty(game.k()) {
        for qs in 0..game.sub_query_count(s) {
            if !game.fiber(s, qs).iter().any(|&q| good[q]) {
                continue;
            }
            let d = sim1.get(s, qs).ok_or_else(|| invariant("normalize_sim2", format!("Sim1 undefined at {s}")))?;
            let b = d.total();
            let factor = if b > 0.0 { alpha.powi(s.len() as i32) / b } else { 0.0 };
            beta.push(BetaEntry { subset: s, query: qs, beta: b });
            sim2.set(s, qs, d.scaled(factor));
        }
    }
    Ok(Sim2 { sim2, beta, alpha })
}

/// `Sim^(3)_{S,q_S} = Sim^(2)_{S,q_S} / k^{2|S|}`.
pub fn scale_sim3(game: &Game, sim2: &SimFamily) -> Result<SimFamily> {
    let k = game.k();
    if k < 2 {
        return Err(Error::InvalidParams("damping needs k >= 2".into()));
    }
    let mut sim3 = SimFamily::empty(game);
    for (s, qs, d) in sim2.iter() {
        sim3.set(s, qs, d.scaled((k as f64).powi(-2 * s.len() as i32)));
    }
    Ok(sim3)
}

#[derive(Clone, Debug, Serialize)]
pub struct Expansion {
    pub p_star: ExtendedStrategy,
    /// Mass of `p*_q`, common to every GOOD query.
    pub alpha_total: f64,
    /// Largest deviation of a GOOD query's mass from `alpha_total`.
    pub alpha_spread: f64,
    /// Smallest alternating sum before clamping.
    pub min_entry: f64,
}

/// `p*_q(a_S, *) = Σ_{T ⊇ S} (-1)^{|T|-|S|} Sim^(3)_{T,q_T}|_S(a_S)`; entries of
/// queries outside GOOD stay zero.
pub fn expand_inclusion_exclusion(game: &Game, sim3: &SimFamily, good: &[bool]) -> Result<Expansion> {
    let ext_dims = extended_dims(game);
    let size: usize = ext_dims.iter().product();
    let nonempty = Subset::nonempty(game.k());
    let mut entries = Vec::with_capacity(game.num_queries());
    let mut min_entry = f64::INFINITY;
    let mut masses = Vec::new();
    for q in 0..game.num_queries() {
        let mut probs = vec![0.0; size];
        if good[q] {
            for &s in &nonempty {
                let mut sums = vec![0.0; game.sub_answer_count(s)];
                for &t in nonempty.iter().filter(|t| s.is_subset_of(**t)) {
                    let d = sim3
                        .get(t, game.project_query(t, q))
                        .ok_or_else(|| invariant("expand_inclusion_exclusion", format!("Sim3 undefined at {t}")))?;
                    let m = d.marginalize(s)?;
                    let sign = if (t.len() - s.len()) % 2 == 0 { 1.0 } else { -1.0 };
                    for (acc, &x) in sums.iter_mut().zip(m.probs()) {
                        *acc += sign * x;
                    }
                }
                for (a_s, &v) in sums.iter().enumerate() {
                    min_entry = min_entry.min(v);
                    if v < -1e-6 {
                        return Err(invariant(
                            "expand_inclusion_exclusion",
                            format!("entry {v:.3e} at query {q}, subset {s}, answer {a_s}"),
                        ));
                    }
                    probs[starred(game, s, a_s)] = v.max(0.0);
                }
            }
            masses.push(probs.iter().sum::<f64>());
        }
        entries.push(SubDist::raw(game.full(), ext_dims.clone(), probs));
    }
    let alpha_total = masses.first().copied().unwrap_or(0.0);
    let alpha_spread = masses.iter().map(|m| (m - alpha_total).abs()).fold(0.0, f64::max);
    Ok(Expansion {
        p_star: Strategy::from_entries_unchecked(entries),
        alpha_total,
        alpha_spread,
        min_entry: if min_entry.is_finite() { min_entry } else { 0.0 },
    })
}

/// Turns `p*` into distributions: scale by `1 / α_total` when it is at least one,
/// otherwise put the deficit on the all-star answer. Queries outside GOOD get
/// the all-star point mass. Returns `(p**, γ)`.
pub fn normalize_pstar(
    game: &Game,
    p_star: &ExtendedStrategy,
    alpha_total: f64,
    good: &[bool],
) -> Result<(ExtendedStrategy, f64)> {
    let ext_dims = extended_dims(game);
    let all_star = encode(&ext_dims, game.answer_sizes());
    let gamma = if alpha_total >= 1.0 { 1.0 / alpha_total } else { 1.0 };
    let entries = p_star
        .entries()
        .iter()
        .enumerate()
        .map(|(q, d)| {
            if !good[q] {
                return SubDist::point(game.full(), ext_dims.clone(), all_star);
            }
            let mut out = d.scaled(gamma);
            if alpha_total < 1.0 {
                out = SubDist::raw(game.full(), ext_dims.clone(), {
                    let mut v = out.probs().to_vec();
                    v[all_star] += 1.0 - alpha_total;
                    v
                });
            }
            out
        })
        .collect();
    Ok((Strategy::from_entries_unchecked(entries), gamma))
}

/// Replaces each star at coordinate `i` by `default_i`.
pub fn fold_stars(game: &Game, p: &ExtendedStrategy, default: &Assignment) -> Result<Strategy> {
    if default.subset() != game.full() {
        return Err(Error::InvalidParams("default answer must cover every player".into()));
    }
    if default.symbols().iter().zip(game.answer_sizes()).any(|(a, n)| a >= n) {
        return Err(Error::InvalidParams("default answer outside the answer alphabet".into()));
    }
    if p.len() != game.num_queries() {
        return Err(Error::InvalidStrategy("strategy does not cover the game".into()));
    }
    let ext_dims = extended_dims(game);
    let map: Vec<usize> = (0..ext_dims.iter().product())
        .map(|x| {
            let digits: Vec<usize> = decode(&ext_dims, x)
                .iter()
                .zip(game.answer_sizes())
                .zip(default.symbols())
                .map(|((&d, &n), &def)| if d == n { def } else { d })
                .collect();
            game.encode_answer(&digits)
        })
        .collect();
    let entries = p
        .entries()
        .iter()
        .map(|d| {
            if d.dims() != ext_dims.as_slice() {
                return Err(Error::InvalidStrategy("entry is not over the extended alphabet".into()));
            }
            let mut probs = vec![0.0; game.num_answers()];
            for (x, &v) in d.probs().iter().enumerate() {
                probs[map[x]] += v;
            }
            Ok(SubDist::raw(game.full(), game.answer_sizes().to_vec(), probs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Strategy::from_entries_unchecked(entries))
}

/// Outcome of one checked inequality family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub stage: &'static str,
    pub pass: bool,
    /// Largest violation; nonpositive means slack.
    pub worst: f64,
}

/// The closed forms of `ε₁` found in the source, next to the measured one.
#[derive(Clone, Debug, Serialize)]
pub struct Eps1Forms {
    pub measured: f64,
    pub k_pow_k: f64,
    pub k_pow_log_k: f64,
    pub proven_chain: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Moreover {
    pub good_is_all: bool,
    pub ns_pass: bool,
    pub ns_worst: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineTrace {
    pub k: usize,
    pub delta: f64,
    pub input_value: f64,
    pub eps: f64,
    pub nu: Vec<f64>,
    pub trimmed: Trimmed,
    pub sim: Sim1,
    pub eps1: Eps1Forms,
    pub good: GoodSelection,
    pub sim2: Sim2,
    pub value_sim1: f64,
    pub value_sim2: f64,
    /// `1 - value_{π*}(Sim^(2)_{[k]})`.
    pub eps2: f64,
    pub eps2_bound: f64,
    pub sim3: SimFamily,
    pub expansion: Expansion,
    pub p_star_star: ExtendedStrategy,
    pub gamma: f64,
    pub final_value: f64,
    pub bound: f64,
    pub bound_holds: bool,
    pub folded_value: f64,
    pub moreover: Option<Moreover>,
    pub checks: Vec<InvariantCheck>,
}

impl PipelineTrace {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Checks(Vec<InvariantCheck>);

impl Checks {
    fn record(&mut self, name: &'static str, stage: &'static str, worst: f64, tol: f64) -> Result<()> {
        let pass = worst <= tol;
        self.0.push(InvariantCheck { name, stage, pass, worst });
        if pass {
            Ok(())
        } else {
            Err(invariant(stage, format!("{name} violated by {worst:.3e}")))
        }
    }
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(f64::NEG_INFINITY, f64::max).max(f64::MIN)
}

fn sim_value(game: &Game, sim: &SimFamily, weights: &[f64]) -> f64 {
    (0..game.num_queries())
        .filter(|&q| weights[q] > 0.0)
        .map(|q| weights[q] * sim.get(game.full(), q).map(|d| acceptance_at(game, d, q)).unwrap_or(0.0))
        .sum()
}

/// Runs every stage on a subNS strategy and checks the stage inequalities.
pub fn run_subns_to_hrns(game: &Game, p: &Strategy, delta: f64) -> Result<PipelineTrace> {
    let k = game.k();
    if k < 2 {
        return Err(Error::InvalidParams("the pipeline needs k >= 2".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParams(format!("delta {delta} outside (0, 1]")));
    }
    let report = check_strategy(game, p, Model::SubNs, CHECK_TOL)?;
    if !report.pass {
        return Err(Error::Precondition(format!(
            "input is not sub-non-signaling (worst violation {:.3e})",
            report.worst_violation
        )));
    }
    let nq = game.num_queries();
    let pi = game.pi();
    let supported = |q: &usize| pi[*q] > 0.0;
    let input_value = evaluate_value(game, p)?;
    let eps = (1.0 - input_value).max(0.0);
    let mut checks = Checks(Vec::new());

    let nu = compute_nu(game, p)?;
    let mean_nu: f64 = pi.iter().zip(&nu).map(|(a, b)| a * b).sum();
    checks.record("nu-avg", "compute_nu", mean_nu - (1u64 << k) as f64 * eps, PIPE_TOL)?;

    let trimmed = trim_outliers(game, p)?;
    let p1 = max_of((0..nq).flat_map(|q| {
        let (a, b) = (trimmed.strategy.get(q), p.get(q));
        a.probs().iter().zip(b.probs()).map(|(x, y)| x - y).collect::<Vec<_>>()
    }));
    checks.record("P1", "trim_outliers", p1, PIPE_TOL)?;
    let p2 = max_of((0..nq).filter(supported).map(|q| trimmed.delta[q] + p.get(q).bottom() - nu[q]));
    checks.record("P2", "trim_outliers", p2, PIPE_TOL)?;
    let mut avg_excess = f64::NEG_INFINITY;
    for s in Subset::nonempty(k) {
        let orig = marginal_table(game, p, s);
        let now = marginal_table(game, &trimmed.strategy, s);
        for qs in 0..game.sub_query_count(s) {
            let mass = game.fiber_mass(s, qs);
            if mass <= 0.0 {
                continue;
            }
            let fiber = game.fiber(s, qs);
            for b in 0..game.sub_answer_count(s) {
                let avg = fiber.iter().map(|&q| pi[q] * orig[q][b]).sum::<f64>() / mass;
                for &q in fiber {
                    avg_excess = avg_excess.max(now[q][b] - avg);
                }
            }
        }
    }
    checks.record("less-than-avg", "trim_outliers", avg_excess, PIPE_TOL)?;
    let tilde = max_of((0..nq).filter(supported).map(|q| {
        let drop = acceptance_at(game, p.get(q), q) - acceptance_at(game, trimmed.strategy.get(q), q);
        (drop - nu[q]).max(trimmed.strategy.get(q).bottom() - nu[q])
    }));
    checks.record("tilde-succ", "trim_outliers", tilde, PIPE_TOL)?;

    let sim = build_sim1(game, &trimmed.strategy)?;
    let mut p3 = f64::NEG_INFINITY;
    for t in Subset::nonempty(k) {
        for qt in 0..game.sub_query_count(t) {
            let d = sim.sim1.get(t, qt).unwrap();
            for s in t.subsets().into_iter().filter(|s| !s.is_empty() && *s != t) {
                let m = d.marginalize(s)?;
                let target = sim.sim1.get(s, game.restrict_query(t, qt, s)).unwrap();
                for (x, y) in m.probs().iter().zip(target.probs()) {
                    p3 = p3.max(x - y);
                }
            }
        }
    }
    checks.record("P3", "build_sim1", p3, PIPE_TOL)?;
    let p4 = max_of(sim.xi.iter().flat_map(|x| {
        let bound = factorial(x.subset.len() + 1);
        game.fiber(x.subset, x.query).iter().filter(|q| supported(q)).map(|&q| x.amount - bound * nu[q]).collect::<Vec<_>>()
    }));
    checks.record("P4", "build_sim1", p4, PIPE_TOL)?;
    let star2 = max_of(sim.sim1.iter().flat_map(|(s, qs, d)| {
        let bound = factorial(s.len() + 2);
        game.fiber(s, qs).iter().filter(|q| supported(q)).map(|&q| d.bottom() - bound * nu[q]).collect::<Vec<_>>()
    }));
    checks.record("sim1-bottom", "build_sim1", star2, PIPE_TOL)?;

    let good = select_good(game, &sim.sim1, delta)?;
    checks.record("P5", "select_good", (1.0 - delta) - good.good_mass, PIPE_TOL)?;
    checks.record("tv", "select_good", good.tv_distance - delta, PIPE_TOL)?;
    let kf = k as f64;
    let eps1 = Eps1Forms {
        measured: good.eps1,
        k_pow_k: kf.powf(kf) * eps,
        k_pow_log_k: kf.powf(kf.log2()) * eps,
        proven_chain: (factorial(k + 1) + 1.0) * (1u64 << k) as f64 * eps,
    };

    let sim2 = normalize_sim2(game, &sim.sim1, &good.good, delta, good.eps1)?;
    let floor = 1.0 - good.eps1 / delta;
    checks.record("beta", "normalize_sim2", max_of(sim2.beta.iter().map(|b| floor - b.beta)), PIPE_TOL)?;
    let p6 = max_of(sim2.sim2.iter().map(|(s, _, d)| (d.total() - sim2.alpha.powi(s.len() as i32)).abs()));
    checks.record("P6", "normalize_sim2", p6, PIPE_TOL)?;
    let mut below = f64::NEG_INFINITY;
    let mut monotone = f64::NEG_INFINITY;
    for (t, qt, d) in sim2.sim2.iter() {
        let before = sim.sim1.get(t, qt).unwrap();
        for (x, y) in d.probs().iter().zip(before.probs()) {
            below = below.max(x - y);
        }
        for s in t.subsets().into_iter().filter(|s| !s.is_empty() && *s != t) {
            let m = d.marginalize(s)?;
            let target = sim2.sim2.get(s, game.restrict_query(t, qt, s)).unwrap();
            for (x, y) in m.probs().iter().zip(target.probs()) {
                monotone = monotone.max(x - y);
            }
        }
    }
    checks.record("sim2-below-sim1", "normalize_sim2", below, PIPE_TOL)?;
    checks.record("sim2-monotone", "normalize_sim2", monotone, PIPE_TOL)?;
    let value_sim1 = sim_value(game, &sim.sim1, &good.pi_star);
    let value_sim2 = sim_value(game, &sim2.sim2, &good.pi_star);
    let eps2 = 1.0 - value_sim2;
    let eps2_bound = (kf + 1.0) * good.eps1 / delta;

    let sim3 = scale_sim3(game, &sim2.sim2)?;
    let expansion = expand_inclusion_exclusion(game, &sim3, &good.good)?;
    checks.record("P7", "expand_inclusion_exclusion", -expansion.min_entry, PIPE_TOL)?;
    let mut restrict_gap: f64 = 0.0;
    for q in (0..nq).filter(|&q| good.good[q]) {
        let full = sim3.get(game.full(), q).unwrap();
        for a in 0..game.num_answers() {
            let x = expansion.p_star.get(q).get(starred(game, game.full(), a));
            restrict_gap = restrict_gap.max((x - full.get(a)).abs());
        }
    }
    checks.record("P8", "expand_inclusion_exclusion", restrict_gap, PIPE_TOL)?;
    checks.record("alpha-total", "expand_inclusion_exclusion", expansion.alpha_spread, PIPE_TOL)?;
    checks.record("alpha-total-cap", "expand_inclusion_exclusion", expansion.alpha_total - (1u64 << k) as f64, PIPE_TOL)?;

    let (pss, gamma) = normalize_pstar(game, &expansion.p_star, expansion.alpha_total, &good.good)?;
    let g_star = extended_game(game, good.pi_star.clone())?;
    checks.record("P9", "normalize_pstar", max_of(pss.entries().iter().map(|d| (d.total() - 1.0).abs())), PIPE_TOL)?;
    let hr = check_strategy(&g_star, &pss, Model::HrNs, CHECK_TOL)?;
    checks.record("P9-hrns", "normalize_pstar", hr.worst_violation, CHECK_TOL)?;
    let final_value = evaluate_value(&g_star, &pss)?;
    let bound = kf.powf(-3.0 * kf) * (1.0 - kf.powf(2.0 * kf) * eps / delta);
    let bound_holds = bound <= 0.0 || final_value >= bound - PIPE_TOL;

    let folded = fold_stars(game, &pss, &Assignment::new(game.full(), vec![0; k])?)?;
    let g_pi_star = game.with_pi(good.pi_star.clone())?;
    let folded_value = evaluate_value(&g_pi_star, &folded)?;
    checks.record("P11-value", "fold_stars", final_value - folded_value, PIPE_TOL)?;
    let fold_hr = check_strategy(&g_pi_star, &folded, Model::HrNs, CHECK_TOL)?;
    checks.record("P11-hrns", "fold_stars", fold_hr.worst_violation, CHECK_TOL)?;

    let moreover = if delta <= eps.sqrt() && check_strategy(game, p, Model::SubNsDelta(delta), CHECK_TOL)?.pass {
        let ns = check_strategy(&g_star, &pss, Model::Ns, CHECK_TOL)?;
        Some(Moreover { good_is_all: good.good.iter().all(|&g| g), ns_pass: ns.pass, ns_worst: ns.worst_violation })
    } else {
        None
    };

    Ok(PipelineTrace {
        k,
        delta,
        input_value,
        eps,
        nu,
        trimmed,
        sim,
        eps1,
        good,
        sim2,
        value_sim1,
        value_sim2,
        eps2,
        eps2_bound,
        sim3,
        expansion,
        p_star_star: pss,
        gamma,
        final_value,
        bound,
        bound_holds,
        folded_value,
        moreover,
        checks: checks.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::tests::{chsh, labels, pr_box};
    use crate::random::{planted_instance, random_game, random_subns_strategy, rng_for, GameParams};

    #[test]
    fn nu_of_uniform_abort() {
        let g = random_game(&GameParams::uniform(2, 2, 2, 0.5), &mut rng_for(1, 0)).unwrap();
        let p = Strategy::new(&g, (0..4).map(|_| SubDist::new(g.full(), vec![2, 2], vec![0.225; 4]).unwrap()).collect())
            .unwrap();
        for v in compute_nu(&g, &p).unwrap() {
            assert!((v - 0.4).abs() < 1e-12);
        }
        let full = Strategy::deterministic(&g, |_, _| 0);
        assert!(compute_nu(&g, &full).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nu_matches_direct_sum() {
        let mut rng = rng_for(4, 0);
        let g = random_game(&GameParams::uniform(2, 3, 2, 0.5), &mut rng).unwrap();
        let p = random_subns_strategy(&g, &mut rng).unwrap();
        let nu = compute_nu(&g, &p).unwrap();
        let qd: Vec<Vec<usize>> = (0..9).map(|q| g.decode_query(q)).collect();
        for q in 0..9 {
            let mut direct = 0.0;
            for mask in 0..4u32 {
                let agree = |r: usize| (0..2).all(|i| mask & (1 << i) == 0 || qd[r][i] == qd[q][i]);
                let w: f64 = (0..9).filter(|&r| agree(r)).map(|r| g.pi()[r]).sum();
                let s: f64 = (0..9).filter(|&r| agree(r)).map(|r| g.pi()[r] * p.get(r).bottom()).sum();
                direct += s / w;
            }
            assert!((direct - nu[q]).abs() < 1e-12);
        }
    }

    #[test]
    fn trimming_ns_input_changes_nothing() {
        let g = chsh();
        let p = pr_box(&g);
        let t = trim_outliers(&g, &p).unwrap();
        for q in 0..4 {
            for (x, y) in t.strategy.get(q).probs().iter().zip(p.get(q).probs()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(t.delta.iter().all(|&d| d < 1e-12));
        let bot = Strategy::all_bottom(&g);
        let t = trim_outliers(&g, &bot).unwrap();
        assert_eq!(t.strategy, bot);
        assert!(t.reductions.is_empty());
    }

    #[test]
    fn outlier_is_lowered_to_average() {
        // two players, one query each for player 2, two for player 1; uniform π
        let g = Game::from_fn(vec![labels(2, "q"), labels(1, "q")], vec![labels(2, "a"), labels(1, "a")], vec![0.5, 0.5], |_, _| true)
            .unwrap();
        // player 2's marginal is trivial; player 1: q0 puts 0.6 on a0, q1 puts 0.2
        let p = Strategy::from_probs(&g, vec![vec![0.6, 0.2], vec![0.2, 0.6]]).unwrap();
        let t = trim_outliers(&g, &p).unwrap();
        // S = {2} has a single query: average of a0-marginal sums is 0.8 for both, no change;
        // S = {1,2} fibers are singletons. Only S = {2}'s answer a0 is shared.
        assert!(t.delta.iter().all(|&d| d.abs() < 1e-12));

        let g = Game::from_fn(vec![labels(1, "q"), labels(2, "q")], vec![labels(2, "a"), labels(1, "a")], vec![0.5, 0.5], |_, _| true)
            .unwrap();
        // player 1 sees the same query in both; its marginal 0.7 vs 0.3 on a0, average 0.5
        let p = Strategy::from_probs(&g, vec![vec![0.7, 0.1], vec![0.3, 0.5]]).unwrap();
        let t = trim_outliers(&g, &p).unwrap();
        let s1 = Subset::from_players(&[0]);
        assert!((t.strategy.get(0).marginalize(s1).unwrap().get(0) - 0.5).abs() < 1e-12);
        assert!((t.strategy.get(1).marginalize(s1).unwrap().get(1) - 0.3).abs() < 1e-12);
        assert!((t.delta[0] - 0.2).abs() < 1e-12);
        assert!((t.delta[1] - 0.2).abs() < 1e-12);
        let nu = compute_nu(&g, &p).unwrap();
        for q in 0..2 {
            assert!(t.delta[q] + p.get(q).bottom() <= nu[q] + 1e-12);
        }
    }

    #[test]
    fn sim1_of_ns_input_is_its_marginals() {
        let g = chsh();
        let p = pr_box(&g);
        let s = build_sim1(&g, &p).unwrap();
        assert!(s.xi.iter().all(|x| x.amount < 1e-12));
        assert_eq!(s.sim1, s.sim_prime);
        for (sub, qs, d) in s.sim1.iter() {
            let m = p.get(g.fiber(sub, qs)[0]).marginalize(sub).unwrap();
            for (x, y) in d.probs().iter().zip(m.probs()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn good_threshold_by_hand() {
        let g = Game::from_fn(vec![labels(8, "q"), labels(1, "q")], vec![labels(1, "a"), labels(1, "a")], vec![0.125; 8], |_, _| true)
            .unwrap();
        // seven queries abort with 0.01, one with 0.1; mean 0.02125, threshold 0.10625
        let mut sim = SimFamily::empty(&g);
        for q in 0..8 {
            let b = if q == 3 { 0.1 } else { 0.01 };
            sim.set(g.full(), q, SubDist::raw(g.full(), vec![1, 1], vec![1.0 - b]));
        }
        let sel = select_good(&g, &sim, 0.2).unwrap();
        assert!((sel.eps1 - 0.02125).abs() < 1e-12);
        assert!(sel.good.iter().all(|&x| x));
        let sel = select_good(&g, &sim, 0.5).unwrap();
        // threshold 0.0425 excludes the outlier
        assert!(!sel.good[3]);
        assert!((sel.good_mass - 0.875).abs() < 1e-12);
        assert!((sel.tv_distance - 0.125).abs() < 1e-12);
    }

    #[test]
    fn inclusion_exclusion_by_hand() {
        let g = random_game(&GameParams::uniform(2, 2, 2, 0.5), &mut rng_for(2, 0)).unwrap();
        let mut rng = rng_for(2, 1);
        let p = random_subns_strategy(&g, &mut rng).unwrap();
        let sim = build_sim1(&g, &trim_outliers(&g, &p).unwrap().strategy).unwrap();
        let good = vec![true; 4];
        let s2 = normalize_sim2(&g, &sim.sim1, &good, 1.0, 0.0).unwrap();
        let s3 = scale_sim3(&g, &s2.sim2).unwrap();
        let e = expand_inclusion_exclusion(&g, &s3, &good).unwrap();
        let one = Subset::from_players(&[0]);
        for q in 0..4 {
            let qd = g.decode_query(q);
            for a1 in 0..2 {
                let joint = s3.get(g.full(), q).unwrap();
                let direct = s3.get(one, qd[0]).unwrap().get(a1) - joint.get(a1 * 2) - joint.get(a1 * 2 + 1);
                // extended dims (3,3): (a1, *) has index a1 * 3 + 2
                assert!((e.p_star.get(q).get(a1 * 3 + 2) - direct).abs() < 1e-12);
            }
        }
        assert!(e.alpha_spread < 1e-12);
        // α = 1: 2 · 1/4 - 1/16
        assert!((e.alpha_total - 0.4375).abs() < 1e-12);
    }

    #[test]
    fn normalization_rules() {
        let g = chsh();
        let good = vec![true; 4];
        let p = Strategy::from_entries_unchecked((0..4).map(|_| SubDist::raw(g.full(), vec![3, 3], {
            let mut v = vec![0.0; 9];
            v[0] = 0.5;
            v
        })).collect());
        let (pp, gamma) = normalize_pstar(&g, &p, 0.5, &good).unwrap();
        assert_eq!(gamma, 1.0);
        assert!((pp.get(0).get(8) - 0.5).abs() < 1e-12);
        let (pp, gamma) = normalize_pstar(&g, &p, 1.0, &good).unwrap();
        assert_eq!(gamma, 1.0);
        assert_eq!(pp, p);
    }

    #[test]
    fn folding_moves_stars_to_default() {
        let g = chsh();
        let p = Strategy::from_entries_unchecked((0..4).map(|_| SubDist::raw(g.full(), vec![3, 3], {
            let mut v = vec![0.0; 9];
            v[2] = 0.25; // (0, *)
            v[8] = 0.75; // (*, *)
            v
        })).collect());
        let f = fold_stars(&g, &p, &Assignment::new(g.full(), vec![1, 1]).unwrap()).unwrap();
        assert!((f.get(0).get(1) - 0.25).abs() < 1e-12);
        assert!((f.get(0).get(3) - 0.75).abs() < 1e-12);
        assert!(fold_stars(&g, &p, &Assignment::new(g.full(), vec![2, 0]).unwrap()).is_err());
        let plain = pr_box(&g);
        let ext = Strategy::from_entries_unchecked(plain.entries().iter().map(|d| {
            let mut v = vec![0.0; 9];
            for a in 0..4 {
                v[(a / 2) * 3 + a % 2] = d.get(a);
            }
            SubDist::raw(g.full(), vec![3, 3], v)
        }).collect());
        assert_eq!(fold_stars(&g, &ext, &Assignment::new(g.full(), vec![0, 0]).unwrap()).unwrap(), plain);
    }

    #[test]
    fn perfect_ns_input() {
        let g = chsh();
        let t = run_subns_to_hrns(&g, &pr_box(&g), 0.5).unwrap();
        assert!(t.all_pass());
        assert!(t.nu.iter().all(|&v| v.abs() < 1e-12));
        assert!(t.sim.xi.iter().all(|x| x.amount < 1e-12));
        assert!((t.sim2.alpha - 1.0).abs() < 1e-12);
        assert!((t.final_value - t.gamma / 16.0).abs() < 1e-12);
        assert!(t.final_value >= 2f64.powi(-6));
        assert!(t.bound_holds);
    }

    #[test]
    fn all_bottom_input() {
        let g = chsh();
        let t = run_subns_to_hrns(&g, &Strategy::all_bottom(&g), 0.5).unwrap();
        assert_eq!(t.final_value, 0.0);
        assert!(t.bound <= 0.0);
    }

    #[test]
    fn random_pipelines_hold() {
        for seed in 0..6 {
            let mut rng = rng_for(seed, 7);
            let k = 2 + (seed as usize % 2);
            let params = GameParams::uniform(k, 2, 2, 0.5);
            let g = random_game(&params, &mut rng).unwrap();
            let p = random_subns_strategy(&g, &mut rng).unwrap();
            let t = run_subns_to_hrns(&g, &p, 0.5).unwrap();
            assert!(t.all_pass());
            assert!(t.value_sim2 >= t.sim2.alpha.powi(k as i32) * t.value_sim1 - 1e-9);
            let (g, p) = planted_instance(&params, 1e-4, &mut rng).unwrap();
            let t = run_subns_to_hrns(&g, &p, 0.3).unwrap();
            assert!(t.all_pass() && t.bound_holds);
        }
    }

    #[test]
    fn trace_serializes() {
        let g = chsh();
        let t = run_subns_to_hrns(&g, &pr_box(&g), 0.5).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert!(v["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    }
}
