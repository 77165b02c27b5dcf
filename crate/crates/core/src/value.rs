//! Value LPs for the NS, hrNS, subNS and subNS-δ models, and the nonnegative dual of the subNS LP.

use crate::error::{Error, Result};
use crate::game::{Game, Model, SimFamily, Strategy, SubDist, Subset};
use crate::lp::{solve_lp, LinearProgram, RowKind, Sense, VarKind};

pub use crate::game::Model as ValueModel;

/// An LP together with the variable layout needed to read a strategy back.
#[derive(Clone, Debug)]
pub struct ValueProgram {
    pub lp: LinearProgram,
    pub model: Model,
    /// First variable of `q`'s answer block, if `q` has variables.
    strat_base: Vec<Option<usize>>,
    /// Divide a variable by this to get `p_q(a)`.
    weight: Vec<f64>,
    /// First variable of `Sim_{S,q_S}` per subset mask and `q_S`.
    sim_base: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug)]
pub struct ExactValue {
    pub value: f64,
    pub strategy: Strategy,
    pub sim: Option<SimFamily>,
}

fn ns_program(game: &Game, model: Model) -> ValueProgram {
    let na = game.num_answers();
    let nq = game.num_queries();
    let in_scope: Vec<bool> = match model {
        Model::Ns => vec![true; nq],
        _ => game.pi().iter().map(|&p| p > 0.0).collect(),
    };
    let mut lp = LinearProgram::new(Sense::Max);
    let mut strat_base = vec![None; nq];
    for q in 0..nq {
        if !in_scope[q] {
            continue;
        }
        let base = lp.num_vars();
        for a in 0..na {
            let c = if game.accepts(q, a) { game.pi()[q] } else { 0.0 };
            lp.add_var(VarKind::NonNeg, c);
        }
        strat_base[q] = Some(base);
        lp.add_row((base..base + na).map(|j| (j, 1.0)).collect(), RowKind::Eq, 1.0);
    }
    let full = game.full();
    for s in Subset::nonempty(game.k()) {
        if s == full {
            continue;
        }
        let proj = game.answer_projection(s);
        for qs in 0..game.sub_query_count(s) {
            let members: Vec<usize> = game.fiber(s, qs).iter().copied().filter(|&q| in_scope[q]).collect();
            for pair in members.windows(2) {
                let (b0, b1) = (strat_base[pair[0]].unwrap(), strat_base[pair[1]].unwrap());
                for a_s in 0..game.sub_answer_count(s) {
                    let mut coeffs = Vec::new();
                    for a in (0..na).filter(|&a| proj[a] == a_s) {
                        coeffs.push((b0 + a, 1.0));
                        coeffs.push((b1 + a, -1.0));
                    }
                    lp.add_row(coeffs, RowKind::Eq, 0.0);
                }
            }
        }
    }
    ValueProgram { lp, model, strat_base, weight: vec![1.0; nq], sim_base: None }
}

fn subns_program(game: &Game, model: Model) -> ValueProgram {
    let na = game.num_answers();
    let nq = game.num_queries();
    let delta = match model {
        Model::SubNsDelta(d) => Some(d),
        _ => None,
    };
    let mut lp = LinearProgram::new(Sense::Max);
    let mut strat_base = vec![None; nq];
    let mut weight = vec![0.0; nq];
    for q in 0..nq {
        let pi = game.pi()[q];
        // off-support queries carry p_q directly so the abort floor can reach them
        weight[q] = if pi > 0.0 || delta.is_none() { pi } else { 1.0 };
        let base = lp.num_vars();
        for a in 0..na {
            let c = if game.accepts(q, a) && pi > 0.0 { 1.0 } else { 0.0 };
            lp.add_var(VarKind::NonNeg, c);
        }
        strat_base[q] = Some(base);
    }
    let masks = 1usize << game.k();
    let mut sim_base = vec![Vec::new(); masks];
    for s in Subset::nonempty(game.k()) {
        let nas = game.sub_answer_count(s);
        let mut bases = Vec::with_capacity(game.sub_query_count(s));
        for _ in 0..game.sub_query_count(s) {
            let base = lp.num_vars();
            for _ in 0..nas {
                lp.add_var(VarKind::NonNeg, 0.0);
            }
            lp.add_row((base..base + nas).map(|j| (j, 1.0)).collect(), RowKind::Eq, 1.0);
            bases.push(base);
        }
        sim_base[s.bits() as usize] = bases;
    }
    for s in Subset::nonempty(game.k()) {
        let proj = game.answer_projection(s);
        for q in 0..nq {
            let qs = game.project_query(s, q);
            let xb = strat_base[q].unwrap();
            let sb = sim_base[s.bits() as usize][qs];
            for a_s in 0..game.sub_answer_count(s) {
                let mut coeffs: Vec<(usize, f64)> =
                    (0..na).filter(|&a| proj[a] == a_s).map(|a| (xb + a, 1.0)).collect();
                if weight[q] != 0.0 {
                    coeffs.push((sb + a_s, -weight[q]));
                }
                lp.add_row(coeffs, RowKind::Le, 0.0);
            }
        }
    }
    if let Some(d) = delta {
        for q in 0..nq {
            let xb = strat_base[q].unwrap();
            lp.add_row(
                (xb..xb + na).map(|j| (j, 1.0)).collect(),
                RowKind::Ge,
                (1.0 - d) * weight[q],
            );
        }
    }
    ValueProgram { lp, model, strat_base, weight, sim_base: Some(sim_base) }
}

/// Builds the value LP of `model` with its variable layout.
pub fn build_value_program(game: &Game, model: Model) -> Result<ValueProgram> {
    let model = model.validate()?;
    Ok(match model {
        Model::Ns | Model::HrNs => ns_program(game, model),
        Model::SubNs | Model::SubNsDelta(_) => subns_program(game, model),
    })
}

pub fn build_value_lp(game: &Game, model: Model) -> Result<LinearProgram> {
    Ok(build_value_program(game, model)?.lp)
}

/// Clamps noise and scales down any mass above one.
fn clean(mut probs: Vec<f64>) -> Vec<f64> {
    for p in probs.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let total: f64 = probs.iter().sum();
    if total > 1.0 {
        for p in probs.iter_mut() {
            *p /= total;
        }
    }
    probs
}

impl ValueProgram {
    /// Reads the strategy (and simulator family) out of an LP solution.
    pub fn recover(&self, game: &Game, x: &[f64]) -> Result<(Strategy, Option<SimFamily>)> {
        let na = game.num_answers();
        let full = game.full();
        let dims = game.answer_sizes().to_vec();
        let mut entries = Vec::with_capacity(game.num_queries());
        for q in 0..game.num_queries() {
            let d = match self.strat_base[q] {
                Some(base) if self.weight[q] > 0.0 => {
                    let w = self.weight[q];
                    SubDist::new(full, dims.clone(), clean(x[base..base + na].iter().map(|v| v / w).collect()))?
                }
                // unsupported query: subNS aborts, hrNS answers uniformly
                _ => match self.model {
                    Model::HrNs => SubDist::new(full, dims.clone(), vec![1.0 / na as f64; na])?,
                    _ => SubDist::zeros(full, dims.clone()),
                },
            };
            entries.push(d);
        }
        let strategy = Strategy::new(game, entries)?;
        let sim = self.sim_base.as_ref().map(|bases| {
            let mut fam = SimFamily::empty(game);
            for s in Subset::nonempty(game.k()) {
                let nas = game.sub_answer_count(s);
                for (qs, &base) in bases[s.bits() as usize].iter().enumerate() {
                    let probs = clean(x[base..base + nas].to_vec());
                    fam.set(s, qs, SubDist::raw(s, game.answer_dims(s), probs));
                }
            }
            fam
        });
        Ok((strategy, sim))
    }
}

/// Solves the value LP of `model` and extracts an optimal strategy.
pub fn exact_value(game: &Game, model: Model) -> Result<ExactValue> {
    let program = build_value_program(game, model)?;
    let out = solve_lp(&program.lp)?;
    let value = out.optimal_value()?;
    let (strategy, sim) = program.recover(game, &out.x)?;
    Ok(ExactValue { value: value.clamp(0.0, 1.0), strategy, sim })
}

/// An NS strategy maximizing `Σ_q Σ_a weights[q][a] p_q(a)` over the NS polytope.
pub fn ns_point_with_objective(game: &Game, weights: &[Vec<f64>]) -> Result<Strategy> {
    let mut program = ns_program(game, Model::Ns);
    let na = game.num_answers();
    for (q, w) in weights.iter().enumerate() {
        let base = program.strat_base[q].unwrap();
        program.lp.objective[base..base + na].copy_from_slice(w);
    }
    let out = solve_lp(&program.lp)?;
    out.optimal_value()?;
    Ok(program.recover(game, &out.x)?.0)
}

/// Variable layout `[ȳ_S(q, a_S) ..., z_S(q_S) ...]` of the nonnegative dual.
#[derive(Clone, Debug)]
pub struct DualLayout {
    k: usize,
    num_queries: usize,
    ybar_base: Vec<usize>,
    z_base: Vec<usize>,
    sub_answers: Vec<usize>,
    num_ybar: usize,
    num_vars: usize,
}

impl DualLayout {
    pub fn new(game: &Game) -> Self {
        let masks = 1usize << game.k();
        let mut ybar_base = vec![0; masks];
        let mut z_base = vec![0; masks];
        let mut sub_answers = vec![0; masks];
        let mut next = 0;
        for s in Subset::nonempty(game.k()) {
            let m = s.bits() as usize;
            sub_answers[m] = game.sub_answer_count(s);
            ybar_base[m] = next;
            next += game.num_queries() * sub_answers[m];
        }
        let num_ybar = next;
        for s in Subset::nonempty(game.k()) {
            z_base[s.bits() as usize] = next;
            next += game.sub_query_count(s);
        }
        DualLayout { k: game.k(), num_queries: game.num_queries(), ybar_base, z_base, sub_answers, num_ybar, num_vars: next }
    }

    pub fn ybar(&self, s: Subset, q: usize, a_s: usize) -> usize {
        let m = s.bits() as usize;
        self.ybar_base[m] + q * self.sub_answers[m] + a_s
    }

    pub fn z(&self, s: Subset, q_s: usize) -> usize {
        self.z_base[s.bits() as usize] + q_s
    }

    pub fn num_ybar(&self) -> usize {
        self.num_ybar
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }
}

/// Dual variables `(ȳ, z)` of the nonnegative dual, stored in [`DualLayout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVariables {
    pub values: Vec<f64>,
}

impl DualVariables {
    pub fn objective(&self, layout: &DualLayout) -> f64 {
        self.values[layout.num_ybar()..].iter().sum()
    }
}

/// `Σ_S ȳ_S(q,a_S)` coefficient rows, one per `(q, a)`.
pub(crate) fn sum_rows(game: &Game, layout: &DualLayout) -> Vec<(Vec<(usize, f64)>, f64)> {
    let top = ((1u64 << game.k()) - 1) as f64;
    let subsets = Subset::nonempty(game.k());
    let mut rows = Vec::with_capacity(game.num_queries() * game.num_answers());
    for q in 0..game.num_queries() {
        for a in 0..game.num_answers() {
            let coeffs = subsets
                .iter()
                .map(|&s| (layout.ybar(s, q, game.project_answer(s, a)), 1.0))
                .collect();
            let v = if game.accepts(q, a) { 1.0 } else { 0.0 };
            rows.push((coeffs, top - v));
        }
    }
    rows
}

/// `z_S(q_S) + Σ π(q*) ȳ_S(q*,a_S) ≥ Σ π(q*)` rows, one per `(S, q_S, a_S)`.
pub(crate) fn cover_rows(game: &Game, layout: &DualLayout) -> Vec<(Vec<(usize, f64)>, f64)> {
    let mut rows = Vec::new();
    for s in Subset::nonempty(game.k()) {
        for qs in 0..game.sub_query_count(s) {
            let fiber = game.fiber(s, qs);
            let mass = game.fiber_mass(s, qs);
            for a_s in 0..game.sub_answer_count(s) {
                let mut coeffs = vec![(layout.z(s, qs), 1.0)];
                coeffs.extend(
                    fiber
                        .iter()
                        .filter(|&&q| game.pi()[q] > 0.0)
                        .map(|&q| (layout.ybar(s, q, a_s), game.pi()[q])),
                );
                rows.push((coeffs, mass));
            }
        }
    }
    rows
}

/// The nonnegative-coefficient dual of the subNS LP.
pub fn build_nonneg_dual(game: &Game) -> LinearProgram {
    let layout = DualLayout::new(game);
    let mut lp = LinearProgram::new(Sense::Min);
    for _ in 0..layout.num_ybar() {
        lp.add_var(VarKind::NonNeg, 0.0);
    }
    for _ in layout.num_ybar()..layout.num_vars() {
        lp.add_var(VarKind::NonNeg, 1.0);
    }
    for (coeffs, rhs) in sum_rows(game, &layout) {
        lp.add_row(coeffs, RowKind::Le, rhs);
    }
    for (coeffs, rhs) in cover_rows(game, &layout) {
        lp.add_row(coeffs, RowKind::Ge, rhs);
    }
    for j in 0..layout.num_ybar() {
        lp.add_row(vec![(j, 1.0)], RowKind::Le, 1.0);
    }
    lp
}

/// Largest violation of the nonnegative dual's constraints at `x`.
pub fn nonneg_dual_violation(game: &Game, x: &DualVariables) -> Result<f64> {
    let lp = build_nonneg_dual(game);
    if x.values.len() != lp.num_vars() {
        return Err(Error::Precondition(format!(
            "{} dual values for {} variables",
            x.values.len(),
            lp.num_vars()
        )));
    }
    Ok(lp.max_violation(&x.values))
}
