//! Finite k-player one-round games, (sub-)strategies and simulator families.
//!
//! Queries and answers are stored as mixed-radix indices. A full query tuple
//! `(q_1, ..., q_k)` maps to `q_1 * |Q_2|...|Q_k| + ... + q_k`, i.e. player 1
//! is the most significant digit. Partial tuples over a player subset `S` use
//! the same convention restricted to the players of `S` in increasing order.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed in probability arithmetic (negative entries, total mass).
pub const MASS_TOL: f64 = 1e-9;
/// Default tolerance of [`check_strategy`].
pub const CHECK_TOL: f64 = 1e-7;

/// A set of players, bit `i` standing for player `i + 1`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Subset(u32);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn from_bits(bits: u32) -> Self {
        Subset(bits)
    }

    pub fn full(k: usize) -> Self {
        Subset(((1u64 << k) - 1) as u32)
    }

    /// Builds a subset from 0-based player indices.
    pub fn from_players(players: &[usize]) -> Self {
        Subset(players.iter().fold(0u32, |acc, &i| acc | (1 << i)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, player: usize) -> bool {
        self.0 & (1 << player) != 0
    }

    pub fn is_subset_of(self, other: Subset) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: Subset) -> Subset {
        Subset(self.0 | other.0)
    }

    pub fn minus(self, other: Subset) -> Subset {
        Subset(self.0 & !other.0)
    }

    /// 0-based player indices in increasing order.
    pub fn players(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32).filter(move |i| bits & (1 << i) != 0)
    }

    /// All nonempty subsets of `[k]`, ordered by size and then by bit pattern.
    pub fn nonempty(k: usize) -> Vec<Subset> {
        let mut all: Vec<Subset> = (1..(1u32 << k)).map(Subset).collect();
        all.sort_by_key(|s| (s.len(), s.0));
        all
    }

    /// All subsets of `[k]` including the empty one, same ordering as [`Subset::nonempty`].
    pub fn all(k: usize) -> Vec<Subset> {
        let mut all: Vec<Subset> = (0..(1u32 << k)).map(Subset).collect();
        all.sort_by_key(|s| (s.len(), s.0));
        all
    }

    /// Subsets of `self` (including `self` and the empty set).
    pub fn subsets(self) -> Vec<Subset> {
        let mut out = Vec::with_capacity(1 << self.len());
        let mut sub = self.0;
        loop {
            out.push(Subset(sub));
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & self.0;
        }
        out.sort_by_key(|s| (s.len(), s.0));
        out
    }

    /// Positions of `sub`'s players inside `self`'s ordered player list.
    pub fn positions_of(self, sub: Subset) -> Result<Vec<usize>> {
        if !sub.is_subset_of(self) {
            return Err(Error::InvalidSubset(format!("{sub} is not contained in {self}")));
        }
        Ok(self
            .players()
            .enumerate()
            .filter(|&(_, p)| sub.contains(p))
            .map(|(pos, _)| pos)
            .collect())
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.players().map(|p| (p + 1).to_string()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

impl fmt::Debug for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Mixed-radix encoding, first digit most significant.
pub(crate) fn encode(dims: &[usize], digits: &[usize]) -> usize {
    digits
        .iter()
        .zip(dims)
        .fold(0, |acc, (&d, &n)| acc * n + d)
}

pub(crate) fn decode(dims: &[usize], mut index: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (slot, &n) in out.iter_mut().zip(dims).rev() {
        *slot = index % n;
        index /= n;
    }
    out
}

/// Projects an index over `dims` onto the digit positions `keep`.
pub(crate) fn project_index(dims: &[usize], keep: &[usize], index: usize) -> usize {
    let digits = decode(dims, index);
    keep.iter().fold(0, |acc, &pos| acc * dims[pos] + digits[pos])
}

/// A tuple of per-player symbols over an explicit player set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Assignment {
    subset: Subset,
    symbols: Vec<usize>,
}

impl Assignment {
    pub fn new(subset: Subset, symbols: Vec<usize>) -> Result<Self> {
        if subset.len() != symbols.len() {
            return Err(Error::InvalidSubset(format!(
                "{} symbols given for player set {subset}",
                symbols.len()
            )));
        }
        Ok(Assignment { subset, symbols })
    }

    pub fn subset(&self) -> Subset {
        self.subset
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    /// The subtuple at the players of `s`, order preserved.
    pub fn restrict(&self, s: Subset) -> Result<Assignment> {
        let positions = self.subset.positions_of(s)?;
        Ok(Assignment {
            subset: s,
            symbols: positions.iter().map(|&p| self.symbols[p]).collect(),
        })
    }
}

/// Sub-probability distribution over the answers `A_S` of a player set.
/// The missing mass `1 - total` is the abort symbol ⊥.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubDist {
    subset: Subset,
    dims: Vec<usize>,
    probs: Vec<f64>,
}

impl SubDist {
    pub fn new(subset: Subset, dims: Vec<usize>, mut probs: Vec<f64>) -> Result<Self> {
        if dims.len() != subset.len() {
            return Err(Error::InvalidStrategy(format!(
                "{} alphabet sizes for player set {subset}",
                dims.len()
            )));
        }
        let size: usize = dims.iter().product();
        if probs.len() != size {
            return Err(Error::InvalidStrategy(format!(
                "distribution over {subset} has {} entries, expected {size}",
                probs.len()
            )));
        }
        for p in probs.iter_mut() {
            if !p.is_finite() || *p < -MASS_TOL {
                return Err(Error::InvalidStrategy(format!("probability {p} out of range")));
            }
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if total > 1.0 + MASS_TOL {
            return Err(Error::InvalidStrategy(format!(
                "distribution over {subset} has total mass {total} > 1"
            )));
        }
        Ok(SubDist { subset, dims, probs })
    }

    /// Builds without validating the mass bound; used for intermediate objects
    /// whose bounds are asserted separately.
    pub(crate) fn raw(subset: Subset, dims: Vec<usize>, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), dims.iter().product::<usize>());
        SubDist { subset, dims, probs }
    }

    pub fn zeros(subset: Subset, dims: Vec<usize>) -> Self {
        let size = dims.iter().product();
        SubDist { subset, dims, probs: vec![0.0; size] }
    }

    pub fn point(subset: Subset, dims: Vec<usize>, index: usize) -> Self {
        let mut d = Self::zeros(subset, dims);
        d.probs[index] = 1.0;
        d
    }

    pub fn subset(&self) -> Subset {
        self.subset
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Abort mass `1 - total`, clamped at zero.
    pub fn bottom(&self) -> f64 {
        (1.0 - self.total()).max(0.0)
    }

    pub fn scaled(&self, factor: f64) -> SubDist {
        SubDist {
            subset: self.subset,
            dims: self.dims.clone(),
            probs: self.probs.iter().map(|p| p * factor).collect(),
        }
    }

    /// Marginal on `s ⊆ self.subset()`: sums all entries agreeing on `s`.
    pub fn marginalize(&self, s: Subset) -> Result<SubDist> {
        let keep = self.subset.positions_of(s)?;
        let sub_dims: Vec<usize> = keep.iter().map(|&p| self.dims[p]).collect();
        let mut out = SubDist::zeros(s, sub_dims);
        for (idx, &p) in self.probs.iter().enumerate() {
            if p != 0.0 {
                out.probs[project_index(&self.dims, &keep, idx)] += p;
            }
        }
        Ok(out)
    }
}

/// A k-player one-round game `(Q, A, V, π)`.
#[derive(Clone, Debug)]
pub struct Game {
    query_labels: Vec<Vec<String>>,
    answer_labels: Vec<Vec<String>>,
    query_sizes: Vec<usize>,
    answer_sizes: Vec<usize>,
    pi: Vec<f64>,
    predicate: Vec<bool>,
    // per subset mask: full index -> partial index
    query_proj: Vec<Vec<usize>>,
    answer_proj: Vec<Vec<usize>>,
    // per subset mask: partial query index -> full queries restricting to it
    fibers: Vec<Vec<Vec<usize>>>,
    fiber_mass: Vec<Vec<f64>>,
}

impl Game {
    /// `predicate` is row-major over `(q, a)`, queries outermost.
    pub fn new(
        query_labels: Vec<Vec<String>>,
        answer_labels: Vec<Vec<String>>,
        pi: Vec<f64>,
        predicate: Vec<bool>,
    ) -> Result<Self> {
        let k = query_labels.len();
        if k == 0 || k > 16 {
            return Err(Error::InvalidGame(format!("player count {k} out of range")));
        }
        if answer_labels.len() != k {
            return Err(Error::InvalidGame(format!(
                "{k} query alphabets but {} answer alphabets",
                answer_labels.len()
            )));
        }
        if query_labels.iter().chain(&answer_labels).any(|alpha| alpha.is_empty()) {
            return Err(Error::InvalidGame("empty alphabet".into()));
        }
        let query_sizes: Vec<usize> = query_labels.iter().map(Vec::len).collect();
        let answer_sizes: Vec<usize> = answer_labels.iter().map(Vec::len).collect();
        let nq: usize = query_sizes.iter().product();
        let na: usize = answer_sizes.iter().product();
        if pi.len() != nq {
            return Err(Error::InvalidGame(format!("pi has {} entries, expected {nq}", pi.len())));
        }
        if pi.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidGame("pi has a negative or non-finite weight".into()));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidGame(format!("pi mass {total} differs from 1")));
        }
        if predicate.len() != nq * na {
            return Err(Error::InvalidGame(format!(
                "predicate table has {} entries, expected {}",
                predicate.len(),
                nq * na
            )));
        }

        let masks = 1usize << k;
        let mut query_proj = Vec::with_capacity(masks);
        let mut answer_proj = Vec::with_capacity(masks);
        let mut fibers = Vec::with_capacity(masks);
        let mut fiber_mass = Vec::with_capacity(masks);
        for mask in 0..masks {
            let s = Subset(mask as u32);
            let keep: Vec<usize> = s.players().collect();
            let qp: Vec<usize> = (0..nq).map(|q| project_index(&query_sizes, &keep, q)).collect();
            let ap: Vec<usize> = (0..na).map(|a| project_index(&answer_sizes, &keep, a)).collect();
            let nqs: usize = keep.iter().map(|&i| query_sizes[i]).product();
            let mut fib = vec![Vec::new(); nqs];
            let mut mass = vec![0.0; nqs];
            for (q, &qs) in qp.iter().enumerate() {
                fib[qs].push(q);
                mass[qs] += pi[q];
            }
            query_proj.push(qp);
            answer_proj.push(ap);
            fibers.push(fib);
            fiber_mass.push(mass);
        }

        Ok(Game {
            query_labels,
            answer_labels,
            query_sizes,
            answer_sizes,
            pi,
            predicate,
            query_proj,
            answer_proj,
            fibers,
            fiber_mass,
        })
    }

    /// Builds a game from a predicate closure over index tuples.
    pub fn from_fn(
        query_labels: Vec<Vec<String>>,
        answer_labels: Vec<Vec<String>>,
        pi: Vec<f64>,
        predicate: impl Fn(&[usize], &[usize]) -> bool,
    ) -> Result<Self> {
        let qs: Vec<usize> = query_labels.iter().map(Vec::len).collect();
        let as_: Vec<usize> = answer_labels.iter().map(Vec::len).collect();
        let nq: usize = qs.iter().product();
        let na: usize = as_.iter().product();
        let mut table = Vec::with_capacity(nq * na);
        for q in 0..nq {
            let qd = decode(&qs, q);
            for a in 0..na {
                table.push(predicate(&qd, &decode(&as_, a)));
            }
        }
        Game::new(query_labels, answer_labels, pi, table)
    }

    pub fn k(&self) -> usize {
        self.query_sizes.len()
    }

    pub fn full(&self) -> Subset {
        Subset::full(self.k())
    }

    pub fn query_labels(&self) -> &[Vec<String>] {
        &self.query_labels
    }

    pub fn answer_labels(&self) -> &[Vec<String>] {
        &self.answer_labels
    }

    pub fn query_sizes(&self) -> &[usize] {
        &self.query_sizes
    }

    pub fn answer_sizes(&self) -> &[usize] {
        &self.answer_sizes
    }

    pub fn num_queries(&self) -> usize {
        self.pi.len()
    }

    pub fn num_answers(&self) -> usize {
        self.answer_proj[0].len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn predicate_table(&self) -> &[bool] {
        &self.predicate
    }

    pub fn accepts(&self, q: usize, a: usize) -> bool {
        self.predicate[q * self.num_answers() + a]
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.pi.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(q, _)| q)
    }

    pub fn has_full_support(&self) -> bool {
        self.pi.iter().all(|&p| p > 0.0)
    }

    pub fn sub_query_count(&self, s: Subset) -> usize {
        self.fibers[s.bits() as usize].len()
    }

    pub fn sub_answer_count(&self, s: Subset) -> usize {
        s.players().map(|i| self.answer_sizes[i]).product()
    }

    pub fn answer_dims(&self, s: Subset) -> Vec<usize> {
        s.players().map(|i| self.answer_sizes[i]).collect()
    }

    pub fn query_dims(&self, s: Subset) -> Vec<usize> {
        s.players().map(|i| self.query_sizes[i]).collect()
    }

    /// `q_S` for a full query index `q`.
    pub fn project_query(&self, s: Subset, q: usize) -> usize {
        self.query_proj[s.bits() as usize][q]
    }

    /// `a_S` for a full answer index `a`.
    pub fn project_answer(&self, s: Subset, a: usize) -> usize {
        self.answer_proj[s.bits() as usize][a]
    }

    pub(crate) fn answer_projection(&self, s: Subset) -> &[usize] {
        &self.answer_proj[s.bits() as usize]
    }

    /// Full queries `q*` with `q*_S = q_S`.
    pub fn fiber(&self, s: Subset, q_s: usize) -> &[usize] {
        &self.fibers[s.bits() as usize][q_s]
    }

    /// `Σ π(q*)` over the fiber of `q_S`.
    pub fn fiber_mass(&self, s: Subset, q_s: usize) -> f64 {
        self.fiber_mass[s.bits() as usize][q_s]
    }

    pub fn decode_query(&self, q: usize) -> Vec<usize> {
        decode(&self.query_sizes, q)
    }

    pub fn encode_query(&self, digits: &[usize]) -> usize {
        encode(&self.query_sizes, digits)
    }

    pub fn decode_answer(&self, a: usize) -> Vec<usize> {
        decode(&self.answer_sizes, a)
    }

    pub fn encode_answer(&self, digits: &[usize]) -> usize {
        encode(&self.answer_sizes, digits)
    }

    /// `q_S` from a partial query `q_T` over `t ⊇ s`.
    pub fn restrict_query(&self, t: Subset, q_t: usize, s: Subset) -> usize {
        let keep = t.positions_of(s).expect("restriction to a non-subset");
        project_index(&self.query_dims(t), &keep, q_t)
    }

    /// Same alphabets and predicate, different query distribution.
    pub fn with_pi(&self, pi: Vec<f64>) -> Result<Game> {
        Game::new(
            self.query_labels.clone(),
            self.answer_labels.clone(),
            pi,
            self.predicate.clone(),
        )
    }
}

/// A family `{p_q}` of sub-distributions over full answers, one per query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    entries: Vec<SubDist>,
}

impl Strategy {
    pub fn new(game: &Game, entries: Vec<SubDist>) -> Result<Self> {
        if entries.len() != game.num_queries() {
            return Err(Error::InvalidStrategy(format!(
                "{} entries for {} queries",
                entries.len(),
                game.num_queries()
            )));
        }
        for (q, d) in entries.iter().enumerate() {
            if d.subset() != game.full() || d.dims() != game.answer_sizes() {
                return Err(Error::InvalidStrategy(format!(
                    "entry for query {q} is not over the full answer set"
                )));
            }
        }
        Ok(Strategy { entries })
    }

    pub(crate) fn from_entries_unchecked(entries: Vec<SubDist>) -> Self {
        Strategy { entries }
    }

    /// Builds from raw per-query probability vectors.
    pub fn from_probs(game: &Game, probs: Vec<Vec<f64>>) -> Result<Self> {
        let entries = probs
            .into_iter()
            .map(|p| SubDist::new(game.full(), game.answer_sizes().to_vec(), p))
            .collect::<Result<Vec<_>>>()?;
        Strategy::new(game, entries)
    }

    /// Every query aborts with probability one.
    pub fn all_bottom(game: &Game) -> Self {
        Strategy {
            entries: (0..game.num_queries())
                .map(|_| SubDist::zeros(game.full(), game.answer_sizes().to_vec()))
                .collect(),
        }
    }

    /// Product strategy: player `i` answers `f(i, q_i)` deterministically.
    pub fn deterministic(game: &Game, f: impl Fn(usize, usize) -> usize) -> Self {
        let entries = (0..game.num_queries())
            .map(|q| {
                let qd = game.decode_query(q);
                let ad: Vec<usize> = qd.iter().enumerate().map(|(i, &qi)| f(i, qi)).collect();
                SubDist::point(game.full(), game.answer_sizes().to_vec(), game.encode_answer(&ad))
            })
            .collect();
        Strategy { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, q: usize) -> &SubDist {
        &self.entries[q]
    }

    pub fn entries(&self) -> &[SubDist] {
        &self.entries
    }
}

/// Simulator family `{Sim_{S,q_S}}` over nonempty `S`; entries may be undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimFamily {
    k: usize,
    entries: Vec<Vec<Option<SubDist>>>,
}

impl SimFamily {
    /// A family with every entry undefined.
    pub fn empty(game: &Game) -> Self {
        let k = game.k();
        let entries = (0..(1usize << k))
            .map(|mask| vec![None; game.sub_query_count(Subset(mask as u32))])
            .collect();
        SimFamily { k, entries }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, s: Subset, q_s: usize) -> Option<&SubDist> {
        self.entries[s.bits() as usize][q_s].as_ref()
    }

    pub fn set(&mut self, s: Subset, q_s: usize, dist: SubDist) {
        debug_assert!(!s.is_empty());
        debug_assert_eq!(dist.subset(), s);
        self.entries[s.bits() as usize][q_s] = Some(dist);
    }

    pub fn len(&self, s: Subset) -> usize {
        self.entries[s.bits() as usize].len()
    }

    /// Iterates over defined entries as `(S, q_S, dist)`.
    pub fn iter(&self) -> impl Iterator<Item = (Subset, usize, &SubDist)> {
        Subset::nonempty(self.k).into_iter().flat_map(move |s| {
            self.entries[s.bits() as usize]
                .iter()
                .enumerate()
                .filter_map(move |(qs, d)| d.as_ref().map(|d| (s, qs, d)))
        })
    }
}

/// Strategy model for membership checks and value computations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Ns,
    HrNs,
    SubNs,
    SubNsDelta(f64),
}

impl Model {
    pub fn validate(self) -> Result<Self> {
        match self {
            Model::SubNsDelta(d) if !(0.0..=1.0).contains(&d) => {
                Err(Error::InvalidParams(format!("delta {d} outside [0, 1]")))
            }
            m => Ok(m),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Ns => write!(f, "ns"),
            Model::HrNs => write!(f, "hrns"),
            Model::SubNs => write!(f, "subns"),
            Model::SubNsDelta(d) => write!(f, "subns-delta({d})"),
        }
    }
}

fn ensure_covers(game: &Game, p: &Strategy) -> Result<()> {
    if p.len() != game.num_queries() {
        return Err(Error::InvalidStrategy(format!(
            "strategy has {} entries but the game has {} queries",
            p.len(),
            game.num_queries()
        )));
    }
    Ok(())
}

/// `Σ_q π(q) Σ_a p_q(a) V(q,a)`; ⊥ contributes nothing.
pub fn evaluate_value(game: &Game, p: &Strategy) -> Result<f64> {
    ensure_covers(game, p)?;
    let na = game.num_answers();
    let table = game.predicate_table();
    let mut value = 0.0;
    for q in game.support() {
        let row = &table[q * na..(q + 1) * na];
        let acc: f64 = p
            .get(q)
            .probs()
            .iter()
            .zip(row)
            .filter(|(_, &v)| v)
            .map(|(x, _)| x)
            .sum();
        value += game.pi()[q] * acc;
    }
    Ok(value)
}

/// Acceptance probability of `p_q` at a single query.
pub fn acceptance_at(game: &Game, d: &SubDist, q: usize) -> f64 {
    let na = game.num_answers();
    d.probs()
        .iter()
        .zip(&game.predicate_table()[q * na..(q + 1) * na])
        .filter(|(_, &v)| v)
        .map(|(x, _)| x)
        .sum()
}

/// Marginals `p_q(a_S)` for every query, indexed `[q][a_S]`.
pub(crate) fn marginal_table(game: &Game, p: &Strategy, s: Subset) -> Vec<Vec<f64>> {
    let proj = game.answer_projection(s);
    let nas = game.sub_answer_count(s);
    p.entries()
        .iter()
        .map(|d| {
            let mut m = vec![0.0; nas];
            for (a, &x) in d.probs().iter().enumerate() {
                m[proj[a]] += x;
            }
            m
        })
        .collect()
}

/// Pointwise-minimal dominating family: `Sim(S,q_S)(a_S) = max_{q*: q*_S=q_S} p_{q*}(a_S)`.
pub fn canonical_sim_family(game: &Game, p: &Strategy) -> Result<SimFamily> {
    ensure_covers(game, p)?;
    let mut family = SimFamily::empty(game);
    for s in Subset::nonempty(game.k()) {
        let marg = marginal_table(game, p, s);
        let nas = game.sub_answer_count(s);
        for qs in 0..game.sub_query_count(s) {
            let mut best = vec![0.0f64; nas];
            for &q in game.fiber(s, qs) {
                for (b, &m) in best.iter_mut().zip(&marg[q]) {
                    *b = b.max(m);
                }
            }
            family.set(s, qs, SubDist::raw(s, game.answer_dims(s), best));
        }
    }
    Ok(family)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Marginals of two queries agreeing on `S` differ.
    Marginal,
    /// A query's total mass differs from one.
    Mass,
    /// The canonical simulator of `(S, q_S)` has mass above one.
    Domination,
    /// Abort probability above the allowed `δ`.
    Abort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub kind: ViolationKind,
    pub subset: Subset,
    pub query: usize,
    pub other_query: Option<usize>,
    pub answer: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub model: Model,
    pub pass: bool,
    pub worst_violation: f64,
    pub witness: Option<Witness>,
}

struct Worst {
    value: f64,
    witness: Option<Witness>,
}

impl Worst {
    fn new() -> Self {
        Worst { value: 0.0, witness: None }
    }

    fn offer(&mut self, value: f64, witness: impl FnOnce() -> Witness) {
        if value > self.value {
            self.value = value;
            self.witness = Some(witness());
        }
    }
}

/// Checks membership of `p` in the given strategy model, up to `tol`.
pub fn check_strategy(game: &Game, p: &Strategy, model: Model, tol: f64) -> Result<CheckReport> {
    ensure_covers(game, p)?;
    let model = model.validate()?;
    if !(tol >= 0.0) {
        return Err(Error::InvalidParams(format!("tolerance {tol} is negative")));
    }
    let mut worst = Worst::new();
    match model {
        Model::Ns | Model::HrNs => {
            let in_scope: Vec<bool> = match model {
                Model::Ns => vec![true; game.num_queries()],
                _ => game.pi().iter().map(|&x| x > 0.0).collect(),
            };
            let full = game.full();
            for q in (0..game.num_queries()).filter(|&q| in_scope[q]) {
                let dev = (1.0 - p.get(q).total()).abs();
                worst.offer(dev, || Witness {
                    kind: ViolationKind::Mass,
                    subset: full,
                    query: q,
                    other_query: None,
                    answer: None,
                });
            }
            for s in Subset::nonempty(game.k()) {
                if s == full {
                    continue;
                }
                let marg = marginal_table(game, p, s);
                for qs in 0..game.sub_query_count(s) {
                    let members: Vec<usize> =
                        game.fiber(s, qs).iter().copied().filter(|&q| in_scope[q]).collect();
                    if members.len() < 2 {
                        continue;
                    }
                    for a_s in 0..game.sub_answer_count(s) {
                        let (mut lo, mut hi) = (members[0], members[0]);
                        for &q in &members[1..] {
                            if marg[q][a_s] < marg[lo][a_s] {
                                lo = q;
                            }
                            if marg[q][a_s] > marg[hi][a_s] {
                                hi = q;
                            }
                        }
                        worst.offer(marg[hi][a_s] - marg[lo][a_s], || Witness {
                            kind: ViolationKind::Marginal,
                            subset: s,
                            query: hi,
                            other_query: Some(lo),
                            answer: Some(a_s),
                        });
                    }
                }
            }
        }
        Model::SubNs | Model::SubNsDelta(_) => {
            let family = canonical_sim_family(game, p)?;
            for (s, qs, d) in family.iter() {
                worst.offer(d.total() - 1.0, || Witness {
                    kind: ViolationKind::Domination,
                    subset: s,
                    query: game.fiber(s, qs)[0],
                    other_query: None,
                    answer: None,
                });
            }
            if let Model::SubNsDelta(delta) = model {
                for (q, d) in p.entries().iter().enumerate() {
                    worst.offer(d.bottom() - delta, || Witness {
                        kind: ViolationKind::Abort,
                        subset: game.full(),
                        query: q,
                        other_query: None,
                        answer: None,
                    });
                }
            }
        }
    }
    Ok(CheckReport {
        model,
        pass: worst.value <= tol,
        worst_violation: worst.value,
        witness: worst.witness,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn labels(n: usize, prefix: &str) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    /// CHSH: uniform binary queries, accept iff a1 xor a2 = q1 and q2.
    pub(crate) fn chsh() -> Game {
        Game::from_fn(
            vec![labels(2, "q"), labels(2, "q")],
            vec![labels(2, "a"), labels(2, "a")],
            vec![0.25; 4],
            |q, a| (a[0] ^ a[1]) == (q[0] & q[1]),
        )
        .unwrap()
    }

    pub(crate) fn pr_box(game: &Game) -> Strategy {
        let probs = (0..4)
            .map(|q| {
                let qd = game.decode_query(q);
                (0..4)
                    .map(|a| {
                        let ad = game.decode_answer(a);
                        if (ad[0] ^ ad[1]) == (qd[0] & qd[1]) {
                            0.5
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Strategy::from_probs(game, probs).unwrap()
    }

    #[test]
    fn restrict_assignment_projects_coordinates() {
        let t = Assignment::new(Subset::full(3), vec![0, 1, 0]).unwrap();
        let s = Subset::from_players(&[0, 2]);
        assert_eq!(t.restrict(s).unwrap().symbols(), &[0, 0]);
        assert!(t.restrict(Subset::EMPTY).unwrap().symbols().is_empty());
        assert_eq!(t.restrict(Subset::full(3)).unwrap(), t);

        let partial = t.restrict(s).unwrap();
        assert!(matches!(
            partial.restrict(Subset::from_players(&[1])),
            Err(Error::InvalidSubset(_))
        ));
    }

    #[test]
    fn marginalize_examples() {
        let full = Subset::full(2);
        let uniform = SubDist::new(full, vec![2, 2], vec![0.25; 4]).unwrap();
        let m = uniform.marginalize(Subset::from_players(&[0])).unwrap();
        assert_eq!(m.probs(), &[0.5, 0.5]);

        let partial = SubDist::new(full, vec![2, 2], vec![0.3, 0.2, 0.1, 0.3]).unwrap();
        let m = partial.marginalize(Subset::from_players(&[1])).unwrap();
        assert!((m.total() - 0.9).abs() < 1e-12);
        assert!((m.bottom() - partial.bottom()).abs() < 1e-12);

        let corr = SubDist::new(full, vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let m = corr.marginalize(Subset::from_players(&[1])).unwrap();
        assert_eq!(m.probs(), &[0.5, 0.5]);

        assert!(matches!(
            m.marginalize(Subset::from_players(&[0])),
            Err(Error::InvalidSubset(_))
        ));
    }

    #[test]
    fn subdist_rejects_bad_mass() {
        let full = Subset::full(1);
        assert!(SubDist::new(full, vec![2], vec![0.7, 0.4]).is_err());
        assert!(SubDist::new(full, vec![2], vec![-0.1, 0.4]).is_err());
        let clamped = SubDist::new(full, vec![2], vec![-1e-12, 0.4]).unwrap();
        assert_eq!(clamped.get(0), 0.0);
    }

    #[test]
    fn evaluate_value_examples() {
        let g = chsh();
        let always = Game::from_fn(
            vec![labels(2, "q"), labels(2, "q")],
            vec![labels(2, "a"), labels(2, "a")],
            vec![0.25; 4],
            |_, _| true,
        )
        .unwrap();
        let local = Strategy::deterministic(&always, |_, _| 0);
        assert_eq!(evaluate_value(&always, &local).unwrap(), 1.0);

        let never = always.with_pi(vec![0.25; 4]).unwrap();
        let never = Game::new(
            never.query_labels().to_vec(),
            never.answer_labels().to_vec(),
            vec![0.25; 4],
            vec![false; 16],
        )
        .unwrap();
        assert_eq!(evaluate_value(&never, &local).unwrap(), 0.0);

        // one player, uniform over {q0,q1}, accept only (q0,a0); always answer a0
        let single = Game::from_fn(vec![labels(2, "q")], vec![labels(2, "a")], vec![0.5, 0.5], |q, a| {
            q[0] == 0 && a[0] == 0
        })
        .unwrap();
        let p = Strategy::deterministic(&single, |_, _| 0);
        assert!((evaluate_value(&single, &p).unwrap() - 0.5).abs() < 1e-15);

        assert_eq!(evaluate_value(&g, &pr_box(&g)).unwrap(), 1.0);

        let short = Strategy::from_entries_unchecked(vec![]);
        assert!(evaluate_value(&g, &short).is_err());
    }

    #[test]
    fn canonical_family_examples() {
        // two queries for player 1 x one query for player 2; player-1 marginals differ
        let g = Game::from_fn(
            vec![labels(1, "q"), labels(2, "q")],
            vec![labels(2, "a"), labels(1, "a")],
            vec![0.5, 0.5],
            |_, _| true,
        )
        .unwrap();
        let p = Strategy::from_probs(&g, vec![vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        let fam = canonical_sim_family(&g, &p).unwrap();
        let s1 = Subset::from_players(&[0]);
        assert_eq!(fam.get(s1, 0).unwrap().probs(), &[0.6, 0.5]);

        let chsh = chsh();
        let pr = pr_box(&chsh);
        let fam = canonical_sim_family(&chsh, &pr).unwrap();
        for (s, _, d) in fam.iter() {
            if s.len() == 1 {
                assert_eq!(d.probs(), &[0.5, 0.5]);
            }
        }
    }

    #[test]
    fn check_strategy_examples() {
        let g = chsh();
        let local = Strategy::deterministic(&g, |i, q| (i + q) % 2);
        for model in [Model::Ns, Model::HrNs, Model::SubNs, Model::SubNsDelta(0.0)] {
            assert!(check_strategy(&g, &local, model, CHECK_TOL).unwrap().pass, "{model}");
        }
        assert!(check_strategy(&g, &pr_box(&g), Model::Ns, CHECK_TOL).unwrap().pass);

        // player-1 marginal depends on player 2's query: shift 0.2 of mass
        let mut probs = vec![vec![0.25; 4]; 4];
        probs[1] = vec![0.35, 0.35, 0.15, 0.15];
        let signaling = Strategy::from_probs(&g, probs).unwrap();
        let report = check_strategy(&g, &signaling, Model::Ns, CHECK_TOL).unwrap();
        assert!(!report.pass);
        assert!((report.worst_violation - 0.2).abs() < 1e-12);
        let w = report.witness.unwrap();
        assert_eq!(w.kind, ViolationKind::Marginal);
        assert_eq!(w.subset, Subset::from_players(&[0]));

        let bottom = Strategy::all_bottom(&g);
        assert!(check_strategy(&g, &bottom, Model::SubNs, CHECK_TOL).unwrap().pass);
        let ns = check_strategy(&g, &bottom, Model::Ns, CHECK_TOL).unwrap();
        assert!(!ns.pass);
        assert_eq!(ns.worst_violation, 1.0);
        assert!(!check_strategy(&g, &bottom, Model::SubNsDelta(0.5), CHECK_TOL).unwrap().pass);
        assert!(check_strategy(&g, &bottom, Model::SubNsDelta(2.0), CHECK_TOL).is_err());
    }

    #[test]
    fn hrns_ignores_off_support_queries() {
        let g = chsh().with_pi(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        // queries 2,3 (q1 = 1) off support; make them signal
        let mut probs = vec![vec![0.25; 4]; 4];
        probs[2] = vec![0.5, 0.5, 0.0, 0.0];
        probs[3] = vec![0.0, 0.0, 0.5, 0.5];
        let p = Strategy::from_probs(&g, probs).unwrap();
        assert!(check_strategy(&g, &p, Model::HrNs, CHECK_TOL).unwrap().pass);
        assert!(!check_strategy(&g, &p, Model::Ns, CHECK_TOL).unwrap().pass);
    }

    #[test]
    fn subset_algebra() {
        assert_eq!(Subset::nonempty(3).len(), 7);
        assert_eq!(Subset::all(2).len(), 4);
        let s = Subset::from_players(&[0, 2]);
        assert_eq!(s.subsets().len(), 4);
        assert_eq!(s.to_string(), "{1,3}");
        assert_eq!(Subset::full(3).positions_of(s).unwrap(), vec![0, 2]);
    }

    #[test]
    fn game_rejects_bad_pi() {
        let err = Game::new(vec![labels(2, "q")], vec![labels(1, "a")], vec![0.5, 0.4], vec![true; 2]);
        assert!(matches!(err, Err(Error::InvalidGame(m)) if m.contains("pi mass")));
    }
}
