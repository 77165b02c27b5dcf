//! Linear programs in explicit row form, a two-phase simplex solver and LP duals.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feasibility tolerance for reported optima.
pub const FEAS_TOL: f64 = 1e-8;

const PIVOT_TOL: f64 = 1e-9;
const PRICE_TOL: f64 = 1e-9;
const DEGENERATE_STREAK: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Max,
    Min,
}

/// Sign tag of a variable: nonnegative or unrestricted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    NonNeg,
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates this row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.kind {
            RowKind::Le => (lhs - self.rhs).max(0.0),
            RowKind::Ge => (self.rhs - lhs).max(0.0),
            RowKind::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub vars: Vec<VarKind>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        LinearProgram { sense, objective: Vec::new(), vars: Vec::new(), rows: Vec::new() }
    }

    pub fn add_var(&mut self, kind: VarKind, cost: f64) -> usize {
        self.vars.push(kind);
        self.objective.push(cost);
        self.vars.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) -> usize {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.vars.len()));
        self.rows.push(Row { coeffs, kind, rhs });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or sign constraint.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let sign = self
            .vars
            .iter()
            .zip(x)
            .filter(|(k, _)| **k == VarKind::NonNeg)
            .map(|(_, &v)| (-v).max(0.0))
            .fold(0.0, f64::max);
        self.rows.iter().map(|r| r.violation(x)).fold(sign, f64::max)
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.num_vars()
            && self.vars.iter().zip(x).all(|(k, &v)| *k == VarKind::Free || v >= -tol)
            && self.rows.iter().all(|r| r.violation(x) <= tol * (1.0 + r.rhs.abs()))
    }

    fn validate(&self) -> Result<()> {
        if self.objective.len() != self.vars.len() {
            return Err(Error::InvalidParams("objective length differs from variable count".into()));
        }
        let finite = self.objective.iter().all(|c| c.is_finite())
            && self.rows.iter().all(|r| {
                r.rhs.is_finite()
                    && r.coeffs.iter().all(|&(j, a)| a.is_finite() && j < self.vars.len())
            });
        if !finite {
            return Err(Error::InvalidParams("non-finite or out-of-range LP data".into()));
        }
        Ok(())
    }
}

impl fmt::Display for LinearProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn terms(coeffs: impl Iterator<Item = (usize, f64)>) -> String {
            let parts: Vec<String> = coeffs
                .filter(|&(_, a)| a != 0.0)
                .map(|(j, a)| format!("{a:+} x{j}"))
                .collect();
            if parts.is_empty() {
                "0".into()
            } else {
                parts.join(" ")
            }
        }
        let sense = match self.sense {
            Sense::Max => "max",
            Sense::Min => "min",
        };
        writeln!(f, "{sense}: {};", terms(self.objective.iter().copied().enumerate()))?;
        for (i, r) in self.rows.iter().enumerate() {
            let op = match r.kind {
                RowKind::Le => "<=",
                RowKind::Ge => ">=",
                RowKind::Eq => "=",
            };
            writeln!(f, "r{i}: {} {op} {};", terms(r.coeffs.iter().copied()), r.rhs)?;
        }
        let free: Vec<String> = self
            .vars
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == VarKind::Free)
            .map(|(j, _)| format!("x{j}"))
            .collect();
        if !free.is_empty() {
            writeln!(f, "free {};", free.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Objective value at `x`; `None` unless optimal.
    pub value: Option<f64>,
    pub x: Vec<f64>,
    /// Row multipliers with `Σ y_i b_i` equal to the optimum.
    pub dual: Option<Vec<f64>>,
}

impl LpOutcome {
    pub fn optimal_value(&self) -> Result<f64> {
        match self.status {
            LpStatus::Optimal => Ok(self.value.unwrap_or(f64::NAN)),
            LpStatus::Infeasible => Err(Error::LpStatus("infeasible")),
            LpStatus::Unbounded => Err(Error::LpStatus("unbounded")),
        }
    }
}

/// Standard form `max c x, A x = b, x >= 0, b >= 0` with bookkeeping back to the source LP.
struct StandardForm {
    m: usize,
    ncols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    /// Source variable -> (positive column, negative column if free).
    var_cols: Vec<(usize, Option<usize>)>,
    /// +1 or -1: whether source row was negated.
    row_sign: Vec<f64>,
    /// Initial basic column per row (slack or artificial).
    initial_basis: Vec<usize>,
    first_artificial: usize,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let mut var_cols = Vec::with_capacity(lp.vars.len());
        let mut next = 0;
        for k in &lp.vars {
            match k {
                VarKind::NonNeg => {
                    var_cols.push((next, None));
                    next += 1;
                }
                VarKind::Free => {
                    var_cols.push((next, Some(next + 1)));
                    next += 2;
                }
            }
        }
        let structural = next;
        let mut kinds = Vec::with_capacity(m);
        let mut row_sign = Vec::with_capacity(m);
        for r in &lp.rows {
            let flip = r.rhs < 0.0;
            row_sign.push(if flip { -1.0 } else { 1.0 });
            kinds.push(match (r.kind, flip) {
                (RowKind::Eq, _) => RowKind::Eq,
                (RowKind::Le, false) | (RowKind::Ge, true) => RowKind::Le,
                _ => RowKind::Ge,
            });
        }
        let n_slack = kinds.iter().filter(|k| **k != RowKind::Eq).count();
        let first_artificial = structural + n_slack;
        let n_art = kinds.iter().filter(|k| **k != RowKind::Le).count();
        let ncols = first_artificial + n_art;

        let mut a = vec![0.0; m * ncols];
        let mut b = vec![0.0; m];
        let mut initial_basis = vec![0; m];
        let mut slack = structural;
        let mut art = first_artificial;
        for (i, r) in lp.rows.iter().enumerate() {
            let s = row_sign[i];
            let row = &mut a[i * ncols..(i + 1) * ncols];
            for &(j, coef) in &r.coeffs {
                let (pos, neg) = var_cols[j];
                row[pos] += s * coef;
                if let Some(neg) = neg {
                    row[neg] -= s * coef;
                }
            }
            b[i] = s * r.rhs;
            match kinds[i] {
                RowKind::Le => {
                    row[slack] = 1.0;
                    initial_basis[i] = slack;
                    slack += 1;
                }
                RowKind::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    initial_basis[i] = art;
                    art += 1;
                }
                RowKind::Eq => {
                    row[art] = 1.0;
                    initial_basis[i] = art;
                    art += 1;
                }
            }
        }
        let sign = if lp.sense == Sense::Max { 1.0 } else { -1.0 };
        let mut c = vec![0.0; ncols];
        for (j, &cost) in lp.objective.iter().enumerate() {
            let (pos, neg) = var_cols[j];
            c[pos] = sign * cost;
            if let Some(neg) = neg {
                c[neg] = -sign * cost;
            }
        }
        StandardForm { m, ncols, a, b, c, var_cols, row_sign, initial_basis, first_artificial }
    }
}

struct Tableau {
    width: usize,
    ncols: usize,
    rows: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    active: Vec<bool>,
    iterations: u64,
    limit: u64,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn new(sf: &StandardForm) -> Self {
        let width = sf.ncols + 1;
        let mut rows = vec![0.0; sf.m * width];
        for i in 0..sf.m {
            rows[i * width..i * width + sf.ncols].copy_from_slice(&sf.a[i * sf.ncols..(i + 1) * sf.ncols]);
            rows[i * width + sf.ncols] = sf.b[i];
        }
        let limit = 20_000 + 50 * (sf.m as u64 + sf.ncols as u64);
        Tableau {
            width,
            ncols: sf.ncols,
            rows,
            obj: vec![0.0; width],
            basis: sf.initial_basis.clone(),
            active: vec![true; sf.m],
            iterations: 0,
            limit,
        }
    }

    fn m(&self) -> usize {
        self.basis.len()
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.rows[i * self.width + j]
    }

    /// Reduced costs of `costs` with respect to the current basis.
    fn price(&mut self, costs: &[f64]) {
        self.obj[..self.ncols].copy_from_slice(costs);
        self.obj[self.ncols] = 0.0;
        for i in 0..self.m() {
            if !self.active[i] {
                continue;
            }
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                let row = &self.rows[i * self.width..(i + 1) * self.width];
                for (o, &t) in self.obj.iter_mut().zip(row) {
                    *o -= cb * t;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.width;
        let p = self.rows[r * w + e];
        for v in &mut self.rows[r * w..(r + 1) * w] {
            *v /= p;
        }
        let nz: Vec<usize> = (0..w).filter(|&j| self.rows[r * w + j] != 0.0).collect();
        let pivot_row: Vec<f64> = nz.iter().map(|&j| self.rows[r * w + j]).collect();
        for i in 0..self.m() {
            if i == r || !self.active[i] {
                continue;
            }
            let f = self.rows[i * w + e];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.rows[i * w..(i + 1) * w];
            for (&j, &pv) in nz.iter().zip(&pivot_row) {
                row[j] -= f * pv;
            }
            row[e] = 0.0;
        }
        let f = self.obj[e];
        if f != 0.0 {
            for (&j, &pv) in nz.iter().zip(&pivot_row) {
                self.obj[j] -= f * pv;
            }
            self.obj[e] = 0.0;
        }
        self.basis[r] = e;
    }

    /// Maximizes against the current `obj` row; columns at or beyond `col_limit` never enter.
    fn run(&mut self, col_limit: usize) -> Result<PhaseEnd> {
        let mut streak = 0usize;
        loop {
            self.iterations += 1;
            if self.iterations > self.limit {
                return Err(Error::IterationLimit { solver: "simplex", limit: self.limit });
            }
            let bland = streak >= DEGENERATE_STREAK;
            let mut enter = None;
            let mut best = PRICE_TOL;
            for j in 0..col_limit {
                let d = self.obj[j];
                if d > best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(e) = enter else {
                return Ok(PhaseEnd::Optimal);
            };
            let rhs = self.ncols;
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m() {
                if !self.active[i] {
                    continue;
                }
                let t = self.at(i, e);
                if t <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.at(i, rhs).max(0.0) / t;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        let tie = (ratio - lr).abs() <= 1e-12 * (1.0 + lr.abs());
                        if ratio < lr && !tie {
                            Some((i, ratio))
                        } else if tie && self.basis[i] < self.basis[li] {
                            Some((i, ratio.min(lr)))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                return Ok(PhaseEnd::Unbounded);
            };
            if ratio <= 1e-12 {
                streak += 1;
            } else {
                streak = 0;
            }
            self.pivot(r, e);
        }
    }
}

/// Solves `A x = b` for square `A` (row-major) by Gaussian elimination with partial pivoting.
pub(crate) fn solve_dense(mut a: Vec<f64>, n: usize, mut b: Vec<f64>) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
            }
            b.swap(piv, col);
        }
        let p = a[col * n + col];
        for i in col + 1..n {
            let f = a[i * n + col] / p;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[i * n + j] -= f * a[col * n + j];
            }
            b[i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i * n + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    Some(x)
}

/// Two-phase simplex with Dantzig pricing and a Bland fallback on degenerate streaks.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome> {
    lp.validate()?;
    let sf = StandardForm::build(lp);
    let mut t = Tableau::new(&sf);

    let has_artificials = sf.first_artificial < sf.ncols;
    if has_artificials {
        let mut phase1 = vec![0.0; sf.ncols];
        for c in &mut phase1[sf.first_artificial..] {
            *c = -1.0;
        }
        t.price(&phase1);
        t.run(sf.ncols)?;
        let infeasibility = t.obj[sf.ncols];
        let scale = 1.0 + sf.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if infeasibility > FEAS_TOL * scale {
            return Ok(LpOutcome { status: LpStatus::Infeasible, value: None, x: Vec::new(), dual: None });
        }
        // drive remaining artificials out of the basis, dropping redundant rows
        for i in 0..t.m() {
            if t.basis[i] < sf.first_artificial {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..sf.first_artificial {
                let v = t.at(i, j).abs();
                if v > PIVOT_TOL && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => t.pivot(i, j),
                None => t.active[i] = false,
            }
        }
    }

    t.price(&sf.c);
    if let PhaseEnd::Unbounded = t.run(sf.first_artificial)? {
        return Ok(LpOutcome { status: LpStatus::Unbounded, value: None, x: Vec::new(), dual: None });
    }

    // recompute the basic solution from the original data
    let active_rows: Vec<usize> = (0..t.m()).filter(|&i| t.active[i]).collect();
    let n = active_rows.len();
    let basic: Vec<usize> = active_rows.iter().map(|&i| t.basis[i]).collect();
    let mut bmat = vec![0.0; n * n];
    for (r, &i) in active_rows.iter().enumerate() {
        for (c, &j) in basic.iter().enumerate() {
            bmat[r * n + c] = sf.a[i * sf.ncols + j];
        }
    }
    let rhs: Vec<f64> = active_rows.iter().map(|&i| sf.b[i]).collect();
    let xb = solve_dense(bmat.clone(), n, rhs).unwrap_or_else(|| {
        active_rows.iter().map(|&i| t.at(i, sf.ncols)).collect()
    });
    let mut xs = vec![0.0; sf.ncols];
    for (&j, &v) in basic.iter().zip(&xb) {
        xs[j] = v;
    }
    let mut bt = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            bt[c * n + r] = bmat[r * n + c];
        }
    }
    let cb: Vec<f64> = basic.iter().map(|&j| sf.c[j]).collect();
    let y_std = solve_dense(bt, n, cb);

    let mut x: Vec<f64> = sf
        .var_cols
        .iter()
        .map(|&(pos, neg)| xs[pos] - neg.map_or(0.0, |q| xs[q]))
        .collect();
    for (v, k) in x.iter_mut().zip(&lp.vars) {
        if *k == VarKind::NonNeg && *v < 0.0 && *v > -FEAS_TOL {
            *v = 0.0;
        }
    }
    if !lp.is_feasible(&x, FEAS_TOL) {
        return Err(Error::Numerical(format!(
            "claimed optimum violates constraints by {:e}",
            lp.max_violation(&x)
        )));
    }
    let dual = y_std.map(|ys| {
        let flip = if lp.sense == Sense::Max { 1.0 } else { -1.0 };
        let mut y = vec![0.0; sf.m];
        for (r, &i) in active_rows.iter().enumerate() {
            y[i] = flip * sf.row_sign[i] * ys[r];
        }
        y
    });
    let value = lp.objective_value(&x);
    Ok(LpOutcome { status: LpStatus::Optimal, value: Some(value), x, dual })
}

/// The LP dual: for `max c x` with `≤`/`=` rows and sign-tagged variables, emits
/// `min b y` with `y ≥ 0` on `≤` rows, `y` free on `=` rows, `A_S^T y ≥ c_S`, `A_T^T y = c_T`.
/// Rows of the wrong orientation (`≥` in a max program) are negated first.
/// Minimization programs dualize symmetrically into maximization programs.
pub fn dualize(lp: &LinearProgram) -> LinearProgram {
    let (dual_sense, ineq_kind, canonical) = match lp.sense {
        Sense::Max => (Sense::Min, RowKind::Ge, RowKind::Le),
        Sense::Min => (Sense::Max, RowKind::Le, RowKind::Ge),
    };
    let mut dual = LinearProgram::new(dual_sense);
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lp.num_vars()];
    for (i, r) in lp.rows.iter().enumerate() {
        let (sign, kind) = match r.kind {
            RowKind::Eq => (1.0, VarKind::Free),
            k if k == canonical => (1.0, VarKind::NonNeg),
            _ => (-1.0, VarKind::NonNeg),
        };
        let y = dual.add_var(kind, sign * r.rhs);
        debug_assert_eq!(y, i);
        for &(j, a) in &r.coeffs {
            columns[j].push((i, sign * a));
        }
    }
    for (j, col) in columns.into_iter().enumerate() {
        let kind = match lp.vars[j] {
            VarKind::NonNeg => ineq_kind,
            VarKind::Free => RowKind::Eq,
        };
        dual.add_row(col, kind, lp.objective[j]);
    }
    dual
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_lp, rng_for};

    fn max1(cost: f64) -> LinearProgram {
        let mut lp = LinearProgram::new(Sense::Max);
        lp.add_var(VarKind::NonNeg, cost);
        lp
    }

    #[test]
    fn single_variable_examples() {
        let mut lp = max1(1.0);
        lp.add_row(vec![(0, 1.0)], RowKind::Le, 1.0);
        let out = solve_lp(&lp).unwrap();
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.value.unwrap() - 1.0).abs() < 1e-12);

        let unbounded = max1(1.0);
        assert_eq!(solve_lp(&unbounded).unwrap().status, LpStatus::Unbounded);

        let mut infeasible = max1(1.0);
        infeasible.add_row(vec![(0, 1.0)], RowKind::Ge, 2.0);
        infeasible.add_row(vec![(0, 1.0)], RowKind::Le, 1.0);
        assert_eq!(solve_lp(&infeasible).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn degenerate_optimum_set() {
        let mut lp = LinearProgram::new(Sense::Max);
        lp.add_var(VarKind::NonNeg, 1.0);
        lp.add_var(VarKind::NonNeg, 1.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], RowKind::Le, 1.0);
        assert!((solve_lp(&lp).unwrap().value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min x + 2y, x - y = -3, y >= 1, x free: optimum 0 at (-2, 1)
        let mut lp = LinearProgram::new(Sense::Min);
        let x = lp.add_var(VarKind::Free, 1.0);
        let y = lp.add_var(VarKind::NonNeg, 2.0);
        lp.add_row(vec![(x, 1.0), (y, -1.0)], RowKind::Eq, -3.0);
        lp.add_row(vec![(y, 1.0)], RowKind::Ge, 1.0);
        let out = solve_lp(&lp).unwrap();
        assert!(out.value.unwrap().abs() < 1e-10);
        assert!((out.x[0] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(Sense::Max);
        lp.add_var(VarKind::NonNeg, 1.0);
        lp.add_var(VarKind::NonNeg, 0.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], RowKind::Eq, 1.0);
        lp.add_row(vec![(0, 2.0), (1, 2.0)], RowKind::Eq, 2.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], RowKind::Eq, 1.0);
        let out = solve_lp(&lp).unwrap();
        assert!((out.value.unwrap() - 1.0).abs() < 1e-12);
        let dual = out.dual.unwrap();
        let by: f64 = dual.iter().zip(&lp.rows).map(|(y, r)| y * r.rhs).sum();
        assert!((by - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dualize_one_by_one() {
        let mut lp = max1(1.0);
        lp.add_row(vec![(0, 1.0)], RowKind::Le, 1.0);
        let d = dualize(&lp);
        assert_eq!(d.sense, Sense::Min);
        assert_eq!(d.objective, vec![1.0]);
        assert_eq!(d.vars, vec![VarKind::NonNeg]);
        assert_eq!(d.rows, vec![Row { coeffs: vec![(0, 1.0)], kind: RowKind::Ge, rhs: 1.0 }]);
    }

    #[test]
    fn strong_duality_and_double_dual() {
        for seed in 0..20 {
            let lp = random_lp(&mut rng_for(seed, 7), 6, 5);
            let p = solve_lp(&lp).unwrap().optimal_value().unwrap();
            let d = solve_lp(&dualize(&lp)).unwrap().optimal_value().unwrap();
            let dd = solve_lp(&dualize(&dualize(&lp))).unwrap().optimal_value().unwrap();
            assert!((p - d).abs() < 1e-6, "seed {seed}: {p} vs {d}");
            assert!((p - dd).abs() < 1e-6, "seed {seed}: {p} vs {dd}");
        }
    }

    #[test]
    fn dual_certificate_matches_optimum() {
        for seed in 0..20 {
            let lp = random_lp(&mut rng_for(seed, 8), 5, 7);
            let out = solve_lp(&lp).unwrap();
            let y = out.dual.unwrap();
            let by: f64 = y.iter().zip(&lp.rows).map(|(y, r)| y * r.rhs).sum();
            assert!((by - out.value.unwrap()).abs() < 1e-7);
            let d = dualize(&lp);
            assert!(d.is_feasible(&y, 1e-7), "seed {seed}: {}", d.max_violation(&y));
        }
    }

    #[test]
    fn display_dump() {
        let mut lp = max1(2.0);
        lp.add_row(vec![(0, 1.0)], RowKind::Le, 3.0);
        let text = lp.to_string();
        assert!(text.starts_with("max: +2 x0;"));
        assert!(text.contains("r0: +1 x0 <= 3;"));
    }
}
