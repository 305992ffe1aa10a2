//! Dense two-phase primal simplex.
//!
//! Problems are stated over bounded variables with equality and inequality
//! rows. Internally everything is mapped to the standard form
//! `min c'x  s.t.  A x = b, 0 <= x <= u`, where finite upper bounds are
//! handled implicitly by the ratio test (bound flips) instead of extra rows.
//! After the optimal basis is found the primal values and the row duals are
//! recomputed from a fresh LU factorization of the basis matrix, which removes
//! the round-off accumulated in the tableau.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComparisonOp {
    Eq,
    Le,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub op: ComparisonOp,
    pub rhs: f64,
}

/// `min c'x` subject to linear rows and per-variable bounds.
///
/// Variables created by [`LinearProgram::with_vars`] start with bounds
/// `[0, +inf)`; use `f64::NEG_INFINITY` / `f64::INFINITY` for free directions.
#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct LpOptions {
    pub max_iterations: usize,
    /// Consecutive degenerate pivots tolerated before switching to Bland's
    /// rule. `None` means `10 * num_vars`.
    pub degenerate_limit: Option<usize>,
    pub pivot_tol: f64,
    pub primal_tol: f64,
    pub dual_tol: f64,
    /// Phase-one residual above which the problem is declared infeasible
    /// (scaled by `1 + max|b|`).
    pub feas_tol: f64,
    /// Certificate tolerance on the relative duality gap.
    pub opt_tol: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            degenerate_limit: None,
            pivot_tol: 1e-9,
            primal_tol: 1e-9,
            dual_tol: 1e-9,
            feas_tol: 1e-8,
            opt_tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub status: LpStatus,
    pub iterations: usize,
    /// Lagrange multiplier per constraint row (sign convention: reduced costs
    /// are `c - A'y`; `<=` rows carry `y <= 0`, `>=` rows `y >= 0`).
    pub duals: Vec<f64>,
}

/// Residuals of the KKT conditions evaluated on the original problem data.
#[derive(Clone, Copy, Debug)]
pub struct Certificate {
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    /// `|primal - dual| / (1 + |primal|)`.
    pub duality_gap: f64,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vars(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            constraints: Vec::new(),
        }
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn set_objective(&mut self, j: usize, cost: f64) {
        self.objective[j] = cost;
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, op: ComparisonOp, rhs: f64) {
        self.constraints.push(Constraint { coeffs, op, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Dense `(A_eq, b_eq)`.
    pub fn eq_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        self.dense_rows(|c| (c.op == ComparisonOp::Eq).then_some(1.0))
    }

    /// Dense `(A_in, b_in)` with every row written as `A_in x <= b_in`.
    pub fn ineq_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        self.dense_rows(|c| match c.op {
            ComparisonOp::Eq => None,
            ComparisonOp::Le => Some(1.0),
            ComparisonOp::Ge => Some(-1.0),
        })
    }

    fn dense_rows(&self, pick: impl Fn(&Constraint) -> Option<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let rows: Vec<(f64, &Constraint)> = self
            .constraints
            .iter()
            .filter_map(|c| pick(c).map(|s| (s, c)))
            .collect();
        let mut a = DMatrix::zeros(rows.len(), self.num_vars());
        let mut b = DVector::zeros(rows.len());
        for (i, (s, c)) in rows.iter().enumerate() {
            for &(j, v) in &c.coeffs {
                a[(i, j)] += s * v;
            }
            b[i] = s * c.rhs;
        }
        (a, b)
    }

    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        for (j, c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::InvalidArgument(format!("objective coefficient {j} is not finite")));
            }
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!("variable {j} has bounds [{lo}, {hi}]")));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(Error::InvalidArgument(format!("row {i} has a non-finite right-hand side")));
            }
            for &(j, v) in &c.coeffs {
                if j >= self.num_vars() || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("row {i} references variable {j} with coefficient {v}")));
                }
            }
        }
        Ok(())
    }

    /// Evaluates the KKT residuals of `sol` against this problem.
    pub fn certificate(&self, sol: &LpSolution) -> Certificate {
        let n = self.num_vars();
        let x = &sol.x;
        let mut primal: f64 = 0.0;
        for j in 0..n {
            primal = primal.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        let mut z = self.objective.clone();
        let mut dual_obj = 0.0;
        let mut dual_inf: f64 = 0.0;
        for (c, &y) in self.constraints.iter().zip(&sol.duals) {
            let ax: f64 = c.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
            let viol = match c.op {
                ComparisonOp::Eq => (ax - c.rhs).abs(),
                ComparisonOp::Le => ax - c.rhs,
                ComparisonOp::Ge => c.rhs - ax,
            };
            primal = primal.max(viol / (1.0 + c.rhs.abs()));
            dual_inf = dual_inf.max(match c.op {
                ComparisonOp::Eq => 0.0,
                ComparisonOp::Le => y,
                ComparisonOp::Ge => -y,
            });
            for &(j, v) in &c.coeffs {
                z[j] -= v * y;
            }
            dual_obj += c.rhs * y;
        }
        for j in 0..n {
            if z[j] > 0.0 {
                if self.lower[j].is_finite() {
                    dual_obj += self.lower[j] * z[j];
                } else {
                    dual_inf = dual_inf.max(z[j]);
                }
            } else if z[j] < 0.0 {
                if self.upper[j].is_finite() {
                    dual_obj += self.upper[j] * z[j];
                } else {
                    dual_inf = dual_inf.max(-z[j]);
                }
            }
        }
        let primal_obj: f64 = self.objective.iter().zip(x).map(|(c, x)| c * x).sum();
        Certificate {
            primal_infeasibility: primal.max(0.0),
            dual_infeasibility: dual_inf,
            duality_gap: (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs()),
        }
    }

    /// Human-readable dump in an LP-file-like layout.
    pub fn to_lp_text(&self) -> String {
        fn term(out: &mut String, first: &mut bool, v: f64, j: usize) {
            if v == 0.0 {
                return;
            }
            if *first {
                let _ = write!(out, " {v} x{j}");
            } else if v < 0.0 {
                let _ = write!(out, " - {} x{j}", -v);
            } else {
                let _ = write!(out, " + {v} x{j}");
            }
            *first = false;
        }
        let mut out = String::from("Minimize\n obj:");
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            term(&mut out, &mut first, c, j);
        }
        if first {
            out.push_str(" 0");
        }
        out.push_str("\nSubject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = write!(out, " c{i}:");
            let mut first = true;
            for &(j, v) in &c.coeffs {
                term(&mut out, &mut first, v, j);
            }
            if first {
                out.push_str(" 0");
            }
            let op = match c.op {
                ComparisonOp::Eq => "=",
                ComparisonOp::Le => "<=",
                ComparisonOp::Ge => ">=",
            };
            let _ = writeln!(out, " {op} {}", c.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.num_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => { let _ = writeln!(out, " {lo} <= x{j} <= {hi}"); }
                (true, false) => { let _ = writeln!(out, " x{j} >= {lo}"); }
                (false, true) => { let _ = writeln!(out, " -inf <= x{j} <= {hi}"); }
                (false, false) => { let _ = writeln!(out, " x{j} free"); }
            }
        }
        out.push_str("End\n");
        out
    }
}

/// How an original variable is expressed through standard-form columns.
#[derive(Clone, Copy, Debug)]
enum VarMap {
    /// `x = lo + x'`
    Shifted { col: usize, lo: f64 },
    /// `x = hi - x'`
    Reflected { col: usize, hi: f64 },
    /// `x = x+ - x-`
    Split { pos: usize, neg: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ColState {
    Basic,
    AtLower,
    AtUpper,
}

struct StandardForm {
    m: usize,
    /// structural + slack + artificial column count
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    cost: Vec<f64>,
    upper: Vec<f64>,
    is_artificial: Vec<bool>,
    initial_basis: Vec<usize>,
    row_sign: Vec<f64>,
    var_map: Vec<VarMap>,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let mut var_map = Vec::with_capacity(lp.num_vars());
        let mut col_cost = Vec::new();
        let mut col_upper = Vec::new();
        for j in 0..lp.num_vars() {
            let (lo, hi, c) = (lp.lower[j], lp.upper[j], lp.objective[j]);
            if lo.is_finite() {
                var_map.push(VarMap::Shifted { col: col_cost.len(), lo });
                col_cost.push(c);
                col_upper.push(if hi.is_finite() { hi - lo } else { f64::INFINITY });
            } else if hi.is_finite() {
                var_map.push(VarMap::Reflected { col: col_cost.len(), hi });
                col_cost.push(-c);
                col_upper.push(f64::INFINITY);
            } else {
                let pos = col_cost.len();
                var_map.push(VarMap::Split { pos, neg: pos + 1 });
                col_cost.extend([c, -c]);
                col_upper.extend([f64::INFINITY, f64::INFINITY]);
            }
        }
        let n_struct = col_cost.len();
        let m = lp.num_constraints();
        let n_slack = lp.constraints.iter().filter(|c| c.op != ComparisonOp::Eq).count();

        // Rows in standard-form coordinates, before deciding on artificials.
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        let mut row_sign = Vec::with_capacity(m);
        let mut slack_of_row = vec![None; m];
        let mut next_slack = n_struct;
        for (i, c) in lp.constraints.iter().enumerate() {
            let mut row = Vec::with_capacity(c.coeffs.len() + 1);
            let mut rhs = c.rhs;
            for &(j, v) in &c.coeffs {
                match var_map[j] {
                    VarMap::Shifted { col, lo } => {
                        row.push((col, v));
                        rhs -= v * lo;
                    }
                    VarMap::Reflected { col, hi } => {
                        row.push((col, -v));
                        rhs -= v * hi;
                    }
                    VarMap::Split { pos, neg } => {
                        row.push((pos, v));
                        row.push((neg, -v));
                    }
                }
            }
            match c.op {
                ComparisonOp::Eq => {}
                ComparisonOp::Le => {
                    row.push((next_slack, 1.0));
                    slack_of_row[i] = Some(next_slack);
                    next_slack += 1;
                }
                ComparisonOp::Ge => {
                    row.push((next_slack, -1.0));
                    slack_of_row[i] = Some(next_slack);
                    next_slack += 1;
                }
            }
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            for e in &mut row {
                e.1 *= sign;
            }
            rows.push(row);
            b.push(rhs * sign);
            row_sign.push(sign);
        }

        let mut initial_basis = vec![usize::MAX; m];
        let mut n_art = 0;
        for i in 0..m {
            let slack_ok = slack_of_row[i]
                .and_then(|s| rows[i].iter().find(|e| e.0 == s).map(|e| e.1 > 0.0))
                .unwrap_or(false);
            if slack_ok {
                initial_basis[i] = slack_of_row[i].unwrap();
            } else {
                initial_basis[i] = n_struct + n_slack + n_art;
                n_art += 1;
            }
        }

        let n = n_struct + n_slack + n_art;
        let mut a = vec![0.0; m * n];
        for (i, row) in rows.iter().enumerate() {
            for &(k, v) in row {
                a[i * n + k] += v;
            }
            let bc = initial_basis[i];
            if bc >= n_struct + n_slack {
                a[i * n + bc] = 1.0;
            }
        }
        let mut cost = col_cost;
        cost.resize(n, 0.0);
        let mut upper = col_upper;
        upper.resize(n, f64::INFINITY);
        let mut is_artificial = vec![false; n];
        for flag in is_artificial.iter_mut().skip(n_struct + n_slack) {
            *flag = true;
        }
        StandardForm {
            m,
            n,
            a,
            b,
            cost,
            upper,
            is_artificial,
            initial_basis,
            row_sign,
            var_map,
        }
    }
}

struct Tableau<'a> {
    m: usize,
    n: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<ColState>,
    upper: Vec<f64>,
    excluded: Vec<bool>,
    d: Vec<f64>,
    opts: &'a LpOptions,
    iterations: usize,
    degenerate_limit: usize,
    scratch: Vec<usize>,
    sf: &'a StandardForm,
}

/// Pivots between refactorizations of the tableau from the original columns.
const REFACTOR_EVERY: usize = 100;

enum PhaseEnd {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl<'a> Tableau<'a> {
    fn new(sf: &'a StandardForm, opts: &'a LpOptions, num_vars: usize) -> Self {
        let mut state = vec![ColState::AtLower; sf.n];
        for &c in &sf.initial_basis {
            state[c] = ColState::Basic;
        }
        Tableau {
            m: sf.m,
            n: sf.n,
            t: sf.a.clone(),
            beta: sf.b.clone(),
            basis: sf.initial_basis.clone(),
            state,
            upper: sf.upper.clone(),
            excluded: vec![false; sf.n],
            d: vec![0.0; sf.n],
            opts,
            iterations: 0,
            degenerate_limit: opts.degenerate_limit.unwrap_or(10 * num_vars.max(1)),
            scratch: Vec::with_capacity(sf.n),
            sf,
        }
    }

    /// Rebuilds `B^-1 A`, the basic values and the reduced costs from the
    /// original data, discarding the rounding error of the updates. Returns
    /// false and leaves the tableau untouched if the basis is singular.
    fn refactor(&mut self, cost: &[f64]) -> bool {
        let (m, n) = (self.m, self.n);
        if m == 0 {
            self.price(cost);
            return true;
        }
        let a = DMatrix::from_row_slice(m, n, &self.sf.a);
        let basis = DMatrix::from_fn(m, m, |i, k| a[(i, self.basis[k])]);
        let mut rhs = DVector::from_column_slice(&self.sf.b);
        for j in 0..n {
            if self.state[j] == ColState::AtUpper && self.upper[j] != 0.0 {
                rhs.axpy(-self.upper[j], &a.column(j), 1.0);
            }
        }
        let lu = basis.lu();
        let (Some(t), Some(beta)) = (lu.solve(&a), lu.solve(&rhs)) else {
            return false;
        };
        if !t.iter().chain(beta.iter()).all(|v| v.is_finite()) {
            return false;
        }
        for i in 0..m {
            for j in 0..n {
                self.t[i * n + j] = t[(i, j)];
            }
            for k in 0..m {
                self.t[i * n + self.basis[k]] = if i == k { 1.0 } else { 0.0 };
            }
        }
        self.beta = beta.iter().copied().collect();
        self.price(cost);
        true
    }

    fn price(&mut self, cost: &[f64]) {
        self.d.copy_from_slice(cost);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.n..(i + 1) * self.n];
                for (dj, &tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for i in 0..self.m {
            self.d[self.basis[i]] = 0.0;
        }
    }

    fn eligible(&self, j: usize) -> Option<f64> {
        if self.excluded[j] || self.upper[j] <= 0.0 {
            return None;
        }
        let tol = self.opts.dual_tol;
        match self.state[j] {
            ColState::Basic => None,
            ColState::AtLower if self.d[j] < -tol => Some(-self.d[j]),
            ColState::AtUpper if self.d[j] > tol => Some(self.d[j]),
            _ => None,
        }
    }

    fn select_entering(&self, bland: bool) -> Option<usize> {
        if bland {
            return (0..self.n).find(|&j| self.eligible(j).is_some());
        }
        let mut best = None;
        let mut best_score = 0.0;
        for j in 0..self.n {
            if let Some(score) = self.eligible(j) {
                if score > best_score {
                    best_score = score;
                    best = Some(j);
                }
            }
        }
        best
    }

    fn run(&mut self, cost: &[f64]) -> PhaseEnd {
        let mut bland = false;
        let mut degenerate = 0usize;
        let mut since_refactor = 0usize;
        let ptol = self.opts.pivot_tol;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return PhaseEnd::IterationLimit;
            }
            if since_refactor >= REFACTOR_EVERY && self.refactor(cost) {
                since_refactor = 0;
            }
            let Some(q) = self.select_entering(bland) else {
                // confirm optimality on fresh reduced costs
                if since_refactor > 0 && self.refactor(cost) {
                    since_refactor = 0;
                    continue;
                }
                return PhaseEnd::Optimal;
            };
            let dir = if self.state[q] == ColState::AtLower { 1.0 } else { -1.0 };

            // Ratio test. `None` as the leaving row denotes a bound flip of q.
            let mut theta = self.upper[q];
            let mut leave: Option<(usize, ColState)> = None;
            let mut leave_alpha = 0.0;
            for i in 0..self.m {
                let alpha = self.t[i * self.n + q] * dir;
                let (limit, to) = if alpha > ptol {
                    (self.beta[i].max(0.0) / alpha, ColState::AtLower)
                } else if alpha < -ptol {
                    let ub = self.upper[self.basis[i]];
                    if !ub.is_finite() {
                        continue;
                    }
                    ((ub - self.beta[i]).max(0.0) / -alpha, ColState::AtUpper)
                } else {
                    continue;
                };
                let better = match leave {
                    _ if limit < theta - 1e-12 => true,
                    Some((r, _)) if limit <= theta + 1e-12 => {
                        if bland {
                            self.basis[i] < self.basis[r]
                        } else {
                            alpha.abs() > leave_alpha
                        }
                    }
                    None if limit <= theta + 1e-12 && theta.is_finite() => {
                        // prefer a pivot to a flip on ties
                        true
                    }
                    _ => false,
                };
                if better {
                    theta = limit;
                    leave = Some((i, to));
                    leave_alpha = alpha.abs();
                }
            }
            if !theta.is_finite() {
                if since_refactor > 0 && self.refactor(cost) {
                    since_refactor = 0;
                    continue;
                }
                return PhaseEnd::Unbounded;
            }
            self.iterations += 1;
            since_refactor += 1;
            if theta <= 1e-12 {
                degenerate += 1;
                if degenerate > self.degenerate_limit {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }

            if theta != 0.0 {
                for i in 0..self.m {
                    let tiq = self.t[i * self.n + q];
                    if tiq != 0.0 {
                        self.beta[i] -= theta * dir * tiq;
                    }
                }
            }
            match leave {
                None => {
                    self.state[q] = if self.state[q] == ColState::AtLower {
                        ColState::AtUpper
                    } else {
                        ColState::AtLower
                    };
                }
                Some((r, to)) => {
                    let start = if self.state[q] == ColState::AtLower { 0.0 } else { self.upper[q] };
                    let lv = self.basis[r];
                    self.state[lv] = to;
                    self.pivot(r, q);
                    self.beta[r] = start + dir * theta;
                    self.basis[r] = q;
                    self.state[q] = ColState::Basic;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.n;
        let p = self.t[r * n + q];
        let inv = 1.0 / p;
        self.scratch.clear();
        for k in 0..n {
            let v = self.t[r * n + k];
            if v != 0.0 {
                self.t[r * n + k] = v * inv;
                self.scratch.push(k);
            }
        }
        self.t[r * n + q] = 1.0;
        let (before, rest) = self.t.split_at_mut(r * n);
        let (pivot_row, after) = rest.split_at_mut(n);
        for row in before.chunks_exact_mut(n).chain(after.chunks_exact_mut(n)) {
            let f = row[q];
            if f != 0.0 {
                for &k in &self.scratch {
                    row[k] -= f * pivot_row[k];
                }
                row[q] = 0.0;
            }
        }
        let f = self.d[q];
        if f != 0.0 {
            for &k in &self.scratch {
                self.d[k] -= f * pivot_row[k];
            }
            self.d[q] = 0.0;
        }
    }

    fn value_of(&self, j: usize, basic_value: &[f64], row_of: &[usize]) -> f64 {
        match self.state[j] {
            ColState::Basic => basic_value[row_of[j]],
            ColState::AtLower => 0.0,
            ColState::AtUpper => self.upper[j],
        }
    }
}

/// Solves `lp` with the dense two-phase primal simplex.
pub fn solve_lp(lp: &LinearProgram, opts: &LpOptions) -> crate::Result<LpSolution> {
    lp.validate()?;
    let sf = StandardForm::build(lp);
    let mut tab = Tableau::new(&sf, opts, lp.num_vars());
    let fail = |status, iterations| LpSolution {
        x: vec![0.0; lp.num_vars()],
        objective_value: f64::NAN,
        status,
        iterations,
        duals: vec![0.0; lp.num_constraints()],
    };

    let has_artificial = sf.is_artificial.iter().any(|&a| a);
    if has_artificial {
        let phase1: Vec<f64> = sf.is_artificial.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        tab.price(&phase1);
        match tab.run(&phase1) {
            PhaseEnd::Optimal => {}
            PhaseEnd::IterationLimit => return Ok(fail(LpStatus::IterationLimit, tab.iterations)),
            // the phase-one objective is bounded below by zero
            PhaseEnd::Unbounded => return Ok(fail(LpStatus::Infeasible, tab.iterations)),
        }
        let residual: f64 = (0..tab.m)
            .filter(|&i| sf.is_artificial[tab.basis[i]])
            .map(|i| tab.beta[i].max(0.0))
            .sum();
        let b_scale = 1.0 + sf.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if residual > opts.feas_tol * b_scale {
            return Ok(fail(LpStatus::Infeasible, tab.iterations));
        }
        for j in 0..sf.n {
            if sf.is_artificial[j] {
                tab.upper[j] = 0.0;
                tab.excluded[j] = true;
            }
        }
        for i in 0..tab.m {
            if sf.is_artificial[tab.basis[i]] {
                tab.beta[i] = 0.0;
            }
        }
    }
    tab.price(&sf.cost);
    match tab.run(&sf.cost) {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded => return Ok(fail(LpStatus::Unbounded, tab.iterations)),
        PhaseEnd::IterationLimit => return Ok(fail(LpStatus::IterationLimit, tab.iterations)),
    }

    let (basic_value, y_std) = polish(&sf, &tab);
    let mut row_of = vec![usize::MAX; sf.n];
    for (i, &c) in tab.basis.iter().enumerate() {
        row_of[c] = i;
    }
    let std_x: Vec<f64> = (0..sf.n).map(|j| tab.value_of(j, &basic_value, &row_of)).collect();
    let x: Vec<f64> = sf
        .var_map
        .iter()
        .map(|vm| match *vm {
            VarMap::Shifted { col, lo } => lo + std_x[col],
            VarMap::Reflected { col, hi } => hi - std_x[col],
            VarMap::Split { pos, neg } => std_x[pos] - std_x[neg],
        })
        .collect();
    let objective_value = lp.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
    let duals = y_std.iter().zip(&sf.row_sign).map(|(y, s)| y * s).collect();
    Ok(LpSolution {
        x,
        objective_value,
        status: LpStatus::Optimal,
        iterations: tab.iterations,
        duals,
    })
}

/// Recomputes basic values and row duals from an LU factorization of the
/// final basis; falls back to the tableau values if the basis is singular.
fn polish(sf: &StandardForm, tab: &Tableau) -> (Vec<f64>, Vec<f64>) {
    let m = sf.m;
    if m == 0 {
        return (Vec::new(), Vec::new());
    }
    let n = sf.n;
    let basis_matrix = DMatrix::from_fn(m, m, |i, k| sf.a[i * n + tab.basis[k]]);
    let mut rhs = DVector::from_column_slice(&sf.b);
    for j in 0..n {
        if tab.state[j] == ColState::AtUpper && tab.upper[j] != 0.0 {
            for i in 0..m {
                rhs[i] -= sf.a[i * n + j] * tab.upper[j];
            }
        }
    }
    let c_b = DVector::from_fn(m, |k, _| sf.cost[tab.basis[k]]);
    let lu = basis_matrix.clone().lu();
    let x_b = lu.solve(&rhs);
    let y = basis_matrix.transpose().lu().solve(&c_b);
    match (x_b, y) {
        (Some(x_b), Some(y)) if x_b.iter().chain(y.iter()).all(|v| v.is_finite()) => {
            (x_b.iter().copied().collect(), y.iter().copied().collect())
        }
        _ => {
            log::warn!("basis factorization failed during polish; using tableau values");
            let mut y = vec![0.0; m];
            // B^{-1} is unavailable; recover duals from the initial identity columns.
            for (i, yi) in y.iter_mut().enumerate() {
                let col = sf.initial_basis[i];
                *yi = sf.cost[col] - tab.d[col];
            }
            (tab.beta.clone(), y)
        }
    }
}
