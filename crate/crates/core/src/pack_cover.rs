//! Mixed packing/covering: the restricted dual as an MPC instance, a multiplicative-weights
//! solver, the (1+δ) repair, and the binary search approximating the subNS value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Game, Subset};
use crate::lp::{solve_lp, LinearProgram, LpStatus, RowKind, Sense, VarKind};
use crate::value::{cover_rows, sum_rows, DualLayout, DualVariables};

pub type SparseRow = Vec<(usize, f64)>;

/// `A x ≤ b`, `C x ≥ d`, `x ≥ 0` with nonnegative data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedPackCover {
    pub num_vars: usize,
    pub packing: Vec<(SparseRow, f64)>,
    pub covering: Vec<(SparseRow, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McStatus {
    Infeasible,
    ApproxFeasible,
}

/// Which part of [`solve_mpc`] decided the instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McMethod {
    Trivial,
    Weights,
    ExactFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McOutcome {
    pub status: McStatus,
    pub x: Vec<f64>,
    pub relaxation: f64,
    pub method: McMethod,
    pub steps: u64,
}

impl MixedPackCover {
    pub fn validate(&self) -> Result<()> {
        let ok = |rows: &[(SparseRow, f64)]| {
            rows.iter().all(|(r, b)| {
                b.is_finite()
                    && *b >= 0.0
                    && r.iter().all(|&(j, a)| j < self.num_vars && a.is_finite() && a >= 0.0)
            })
        };
        if ok(&self.packing) && ok(&self.covering) {
            Ok(())
        } else {
            Err(Error::InvalidParams("mixed packing/covering data must be finite and nonnegative".into()))
        }
    }

    /// `(max_i A_i x / b_i, min_i C_i x / d_i)`; covering rows with `d_i = 0` are skipped.
    pub fn ratios(&self, x: &[f64]) -> (f64, f64) {
        let act = |r: &SparseRow| r.iter().map(|&(j, a)| a * x[j]).sum::<f64>();
        let pack = self
            .packing
            .iter()
            .map(|(r, b)| {
                let v = act(r);
                if *b > 0.0 {
                    v / b
                } else if v > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        let cover = self
            .covering
            .iter()
            .filter(|(_, d)| *d > 0.0)
            .map(|(r, d)| act(r) / d)
            .fold(f64::INFINITY, f64::min);
        (pack, cover)
    }

    /// Whether `x ≥ 0` meets `A x ≤ (1+δ) b` and `C x ≥ d` up to `tol`.
    pub fn satisfies(&self, x: &[f64], delta: f64, tol: f64) -> bool {
        let act = |r: &SparseRow| r.iter().map(|&(j, a)| a * x[j]).sum::<f64>();
        x.len() == self.num_vars
            && x.iter().all(|&v| v >= 0.0)
            && self.packing.iter().all(|(r, b)| act(r) <= (1.0 + delta) * b + tol)
            && self.covering.iter().all(|(r, d)| act(r) >= d - tol)
    }

    fn as_lp(&self) -> LinearProgram {
        let mut lp = LinearProgram::new(Sense::Max);
        for _ in 0..self.num_vars {
            lp.add_var(VarKind::NonNeg, 0.0);
        }
        for (r, b) in &self.packing {
            lp.add_row(r.clone(), RowKind::Le, *b);
        }
        for (r, d) in &self.covering {
            lp.add_row(r.clone(), RowKind::Ge, *d);
        }
        lp
    }
}

/// The nonnegative dual with the extra packing row `Σ z ≤ v'`.
pub fn restricted_dual_to_mpc(game: &Game, v_prime: f64) -> Result<MixedPackCover> {
    if !(v_prime >= 0.0) || !v_prime.is_finite() {
        return Err(Error::InvalidParams(format!("bound {v_prime} must be finite and nonnegative")));
    }
    let layout = DualLayout::new(game);
    let mut packing: Vec<(SparseRow, f64)> = (0..layout.num_ybar()).map(|j| (vec![(j, 1.0)], 1.0)).collect();
    packing.extend(sum_rows(game, &layout));
    packing.push(((layout.num_ybar()..layout.num_vars()).map(|j| (j, 1.0)).collect(), v_prime));
    Ok(MixedPackCover { num_vars: layout.num_vars(), packing, covering: cover_rows(game, &layout) })
}

/// Multiplicative-weights parameters for [`solve_mpc_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwConfig {
    /// Step budget before handing the instance to the exact fallback.
    pub max_steps: u64,
    /// Steps between scaled-feasibility probes.
    pub check_every: u64,
}

impl Default for MwConfig {
    fn default() -> Self {
        MwConfig { max_steps: 20_000, check_every: 16 }
    }
}

struct Normalized {
    n: usize,
    // rows as (var, coef/rhs)
    pack: Vec<SparseRow>,
    cover: Vec<SparseRow>,
    pack_cols: Vec<Vec<(usize, f64)>>,
    cover_cols: Vec<Vec<(usize, f64)>>,
}

enum Prepared {
    Infeasible,
    Ready(Normalized),
}

fn prepare(m: &MixedPackCover) -> Prepared {
    let mut forced_zero = vec![false; m.num_vars];
    for (r, b) in &m.packing {
        if *b == 0.0 {
            for &(j, a) in r {
                if a > 0.0 {
                    forced_zero[j] = true;
                }
            }
        }
    }
    let keep = |r: &SparseRow, rhs: f64| -> SparseRow {
        r.iter().filter(|&&(j, a)| a > 0.0 && !forced_zero[j]).map(|&(j, a)| (j, a / rhs)).collect()
    };
    let pack: Vec<SparseRow> = m
        .packing
        .iter()
        .filter(|(_, b)| *b > 0.0)
        .map(|(r, b)| keep(r, *b))
        .filter(|r| !r.is_empty())
        .collect();
    let mut cover = Vec::new();
    for (r, d) in &m.covering {
        if *d == 0.0 {
            continue;
        }
        let row = keep(r, *d);
        if row.is_empty() {
            return Prepared::Infeasible;
        }
        cover.push(row);
    }
    let mut pack_cols = vec![Vec::new(); m.num_vars];
    for (i, r) in pack.iter().enumerate() {
        for &(j, a) in r {
            pack_cols[j].push((i, a));
        }
    }
    let mut cover_cols = vec![Vec::new(); m.num_vars];
    for (i, r) in cover.iter().enumerate() {
        for &(j, a) in r {
            cover_cols[j].push((i, a));
        }
    }
    Prepared::Ready(Normalized { n: m.num_vars, pack, cover, pack_cols, cover_cols })
}

enum MwEnd {
    Feasible(Vec<f64>),
    Infeasible,
    Undecided,
}

/// Rescales `x` so every covering row is met; returns it if packing stays within `1+δ`.
fn scaled_if_feasible(nm: &Normalized, x: &[f64], cover_act: &[f64], delta: f64) -> Option<Vec<f64>> {
    let min_cover = cover_act.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_cover > 0.0) {
        return None;
    }
    let scale = if min_cover.is_finite() { 1.0 / min_cover } else { 0.0 };
    let max_pack = nm
        .pack
        .iter()
        .map(|r| r.iter().map(|&(j, a)| a * x[j]).sum::<f64>() * scale)
        .fold(0.0, f64::max);
    // leave room for rounding in the final verification
    if max_pack <= 1.0 + delta * 0.999 {
        Some(x.iter().map(|v| v * scale).collect())
    } else {
        None
    }
}

fn weights_phase(nm: &Normalized, delta: f64, cfg: &MwConfig) -> (MwEnd, u64) {
    let eps = (delta / 2.0).min(0.1);
    let rows = (nm.pack.len() + nm.cover.len()).max(2) as f64;
    let target = rows.ln() / (eps * eps);
    let mut x = vec![0.0; nm.n];
    let mut pack_act = vec![0.0; nm.pack.len()];
    let mut cover_act = vec![0.0; nm.cover.len()];
    let mut active = vec![true; nm.cover.len()];
    let mut steps = 0u64;
    let mut y = vec![0.0; nm.pack.len()];
    let mut z = vec![0.0; nm.cover.len()];
    while steps < cfg.max_steps {
        if active.iter().all(|a| !a) {
            break;
        }
        let pmax = pack_act.iter().copied().fold(0.0, f64::max);
        for (w, &a) in y.iter_mut().zip(&pack_act) {
            *w = (eps * (a - pmax)).exp();
        }
        let cmin = cover_act
            .iter()
            .zip(&active)
            .filter(|(_, &on)| on)
            .map(|(&a, _)| a)
            .fold(f64::INFINITY, f64::min);
        for ((w, &a), &on) in z.iter_mut().zip(&cover_act).zip(&active) {
            *w = if on { (-eps * (a - cmin)).exp() } else { 0.0 };
        }
        let ysum: f64 = y.iter().sum();
        let zsum: f64 = z.iter().sum();

        // best covering-to-packing ratio
        let mut best: Option<(usize, f64)> = None;
        for j in 0..nm.n {
            let c: f64 = nm.cover_cols[j].iter().map(|&(i, a)| z[i] * a).sum::<f64>() / zsum;
            if c <= 0.0 {
                continue;
            }
            let p: f64 = if ysum > 0.0 {
                nm.pack_cols[j].iter().map(|&(i, a)| y[i] * a).sum::<f64>() / ysum
            } else {
                0.0
            };
            let lambda = p / c;
            if best.map_or(true, |(_, b)| lambda < b) {
                best = Some((j, lambda));
            }
        }
        let Some((j, lambda)) = best else {
            return (MwEnd::Undecided, steps);
        };
        if lambda > 1.0 + 1e-9 {
            // every x with A x ≤ b has weighted cover below one: certificate of infeasibility
            return (MwEnd::Infeasible, steps);
        }
        let width = nm.pack_cols[j]
            .iter()
            .map(|&(_, a)| a)
            .chain(nm.cover_cols[j].iter().filter(|&&(i, _)| active[i]).map(|&(_, a)| a))
            .fold(0.0, f64::max);
        let step = 1.0 / width;
        x[j] += step;
        for &(i, a) in &nm.pack_cols[j] {
            pack_act[i] += a * step;
        }
        for &(i, a) in &nm.cover_cols[j] {
            cover_act[i] += a * step;
            if cover_act[i] >= target {
                active[i] = false;
            }
        }
        steps += 1;
        if steps % cfg.check_every == 0 {
            if let Some(sol) = scaled_if_feasible(nm, &x, &cover_act, delta) {
                return (MwEnd::Feasible(sol), steps);
            }
        }
    }
    match scaled_if_feasible(nm, &x, &cover_act, delta) {
        Some(sol) => (MwEnd::Feasible(sol), steps),
        None => (MwEnd::Undecided, steps),
    }
}

/// Decides `(A, b, C, d)` up to the relaxation `1 + δ`: reports infeasible only with a
/// certificate that the exact problem has no solution; otherwise returns `x ≥ 0` with
/// `A x ≤ (1+δ) b` and `C x ≥ d`.
pub fn solve_mpc(m: &MixedPackCover, delta: f64) -> Result<McOutcome> {
    solve_mpc_with(m, delta, &MwConfig::default())
}

pub fn solve_mpc_with(m: &MixedPackCover, delta: f64, cfg: &MwConfig) -> Result<McOutcome> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParams(format!("relaxation {delta} outside (0, 1)")));
    }
    m.validate()?;
    let outcome = |status, x, method, steps| McOutcome { status, x, relaxation: delta, method, steps };
    let nm = match prepare(m) {
        Prepared::Infeasible => return Ok(outcome(McStatus::Infeasible, Vec::new(), McMethod::Trivial, 0)),
        Prepared::Ready(nm) => nm,
    };
    if nm.cover.is_empty() {
        return Ok(outcome(McStatus::ApproxFeasible, vec![0.0; m.num_vars], McMethod::Trivial, 0));
    }
    let (end, steps) = weights_phase(&nm, delta, cfg);
    match end {
        MwEnd::Feasible(x) if m.satisfies(&x, delta, 0.0) => {
            return Ok(outcome(McStatus::ApproxFeasible, x, McMethod::Weights, steps));
        }
        MwEnd::Infeasible => return Ok(outcome(McStatus::Infeasible, Vec::new(), McMethod::Weights, steps)),
        _ => {}
    }
    let lp = m.as_lp();
    let out = solve_lp(&lp)?;
    match out.status {
        LpStatus::Infeasible => Ok(outcome(McStatus::Infeasible, Vec::new(), McMethod::ExactFallback, steps)),
        LpStatus::Unbounded => Err(Error::Numerical("feasibility program reported unbounded".into())),
        LpStatus::Optimal => {
            let mut x: Vec<f64> = out.x.iter().map(|v| v.max(0.0)).collect();
            let (_, cover) = m.ratios(&x);
            if cover.is_finite() && cover > 0.0 && cover < 1.0 + 1e-12 {
                let s = (1.0 + 1e-10) / cover;
                x.iter_mut().for_each(|v| *v *= s);
            }
            if !m.satisfies(&x, delta, 0.0) {
                return Err(Error::Numerical("exact feasibility point misses the relaxed bounds".into()));
            }
            Ok(outcome(McStatus::ApproxFeasible, x, McMethod::ExactFallback, steps))
        }
    }
}

/// Turns a relaxed solution of the nonnegative dual into an exact one:
/// `ȳ' = ȳ / (1+δ)` and `z'_S(q_S) = z_S(q_S) + δ Σ_{q*: q*_S = q_S} π(q*)`.
pub fn repair_mpc_solution(game: &Game, x: &DualVariables, delta: f64) -> Result<DualVariables> {
    let layout = DualLayout::new(game);
    if x.values.len() != layout.num_vars() {
        return Err(Error::Precondition(format!(
            "{} dual values for {} variables",
            x.values.len(),
            layout.num_vars()
        )));
    }
    if !(delta >= 0.0) {
        return Err(Error::Precondition(format!("relaxation {delta} is negative")));
    }
    let tol = 1e-7;
    let relaxed_ok = x.values.iter().all(|&v| v >= -tol)
        && x.values[..layout.num_ybar()].iter().all(|&v| v <= 1.0 + delta + tol)
        && sum_rows(game, &layout)
            .iter()
            .all(|(r, b)| r.iter().map(|&(j, a)| a * x.values[j]).sum::<f64>() <= (1.0 + delta) * b + tol)
        && cover_rows(game, &layout)
            .iter()
            .all(|(r, d)| r.iter().map(|&(j, a)| a * x.values[j]).sum::<f64>() >= d - tol);
    if !relaxed_ok {
        return Err(Error::Precondition("point violates the relaxed constraints".into()));
    }
    let mut values = x.values.clone();
    for v in &mut values[..layout.num_ybar()] {
        *v /= 1.0 + delta;
    }
    for s in Subset::nonempty(game.k()) {
        for qs in 0..game.sub_query_count(s) {
            values[layout.z(s, qs)] += delta * game.fiber_mass(s, qs);
        }
    }
    Ok(DualVariables { values })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub v_prime: f64,
    pub feasible: bool,
    pub method: McMethod,
    /// Objective of the repaired exact dual point, when feasible.
    pub repaired_objective: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxValue {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub delta: f64,
    pub probes: Vec<Probe>,
}

/// Binary search over `v'` in `[0, 1]` for `⌈log₂(2/ε)⌉` rounds; returns the bracket midpoint,
/// which is within `ε` of the subNS value.
pub fn approx_subns_value(game: &Game, eps: f64) -> Result<ApproxValue> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParams(format!("accuracy {eps} outside (0, 1)")));
    }
    let delta = (eps / 2.0) / (1u64 << game.k()) as f64;
    let rounds = (2.0 / eps).log2().ceil() as usize;
    let layout = DualLayout::new(game);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut probes = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mid = 0.5 * (lo + hi);
        let mpc = restricted_dual_to_mpc(game, mid)?;
        let out = solve_mpc(&mpc, delta)?;
        match out.status {
            McStatus::ApproxFeasible => {
                let repaired = repair_mpc_solution(game, &DualVariables { values: out.x }, delta)?;
                probes.push(Probe {
                    v_prime: mid,
                    feasible: true,
                    method: out.method,
                    repaired_objective: Some(repaired.objective(&layout)),
                });
                hi = mid;
            }
            McStatus::Infeasible => {
                probes.push(Probe { v_prime: mid, feasible: false, method: out.method, repaired_objective: None });
                lo = mid;
            }
        }
    }
    Ok(ApproxValue { value: 0.5 * (lo + hi), lo, hi, delta, probes })
}
