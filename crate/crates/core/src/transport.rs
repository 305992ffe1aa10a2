//! Discrete optimal transport between weighted atom sets.
//!
//! The exact problem is solved with a transportation simplex on the
//! bipartite spanning-tree basis; [`solve_exact_ot_lp`] routes the same
//! problem through the general LP solver. Entropic transport uses Sinkhorn
//! scaling, in the log domain when the kernel would underflow.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, ComparisonOp, LinearProgram, LpOptions, LpStatus};

const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroundNorm {
    #[default]
    One,
    Two,
    Inf,
}

impl GroundNorm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            GroundNorm::One => diffs.sum(),
            GroundNorm::Two => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            GroundNorm::Inf => diffs.fold(0.0, f64::max),
        }
    }

    /// Norm dual to this one, used for the robust Lipschitz bounds.
    pub fn dual(self) -> GroundNorm {
        match self {
            GroundNorm::One => GroundNorm::Inf,
            GroundNorm::Two => GroundNorm::Two,
            GroundNorm::Inf => GroundNorm::One,
        }
    }
}

impl std::str::FromStr for GroundNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "one" | "l1" => Ok(GroundNorm::One),
            "2" | "two" | "l2" => Ok(GroundNorm::Two),
            "inf" | "max" | "linf" => Ok(GroundNorm::Inf),
            other => Err(Error::Parse(format!("unknown ground norm '{other}'"))),
        }
    }
}

/// Weighted atoms, one atom per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    atoms: DMatrix<f64>,
    weights: DVector<f64>,
}

impl DiscreteDistribution {
    pub fn new(atoms: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        if atoms.ncols() != weights.len() {
            return Err(Error::dims("distribution weights", atoms.ncols(), weights.len()));
        }
        check_simplex(&weights, "distribution weights")?;
        Ok(Self { atoms, weights })
    }

    /// Empirical distribution: uniform weight on every column.
    pub fn uniform(atoms: DMatrix<f64>) -> Result<Self> {
        let n = atoms.ncols();
        if n == 0 {
            return Err(Error::InvalidArgument("distribution needs at least one atom".into()));
        }
        Ok(Self {
            atoms,
            weights: DVector::from_element(n, 1.0 / n as f64),
        })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }
}

fn check_simplex(w: &DVector<f64>, context: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidArgument(format!("{context}: empty weight vector")));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{context}: weights must be finite and nonnegative")));
    }
    let s = w.sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("{context}: weights sum to {s}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub d: DMatrix<f64>,
    pub ground_norm: GroundNorm,
    pub p: f64,
}

/// Pairwise `||x_i - y_j||^p` between the columns of `x` and `y`.
pub fn cost_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>, ground_norm: GroundNorm, p: f64) -> Result<CostMatrix> {
    if x.nrows() != y.nrows() {
        return Err(Error::dims("cost matrix atom dimension", x.nrows(), y.nrows()));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("Wasserstein order must be >= 1, got {p}")));
    }
    let d = DMatrix::from_fn(x.ncols(), y.ncols(), |i, j| {
        let dist = ground_norm.distance(x.column(i).as_slice(), y.column(j).as_slice());
        if p == 1.0 {
            dist
        } else {
            dist.powf(p)
        }
    });
    Ok(CostMatrix { d, ground_norm, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Optimal,
    IterationLimit,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: DMatrix<f64>,
    /// Unregularized cost `<T, D>`.
    pub cost: f64,
    pub status: PlanStatus,
    pub iterations: usize,
}

impl TransportPlan {
    /// Largest absolute deviation of the row and column sums from the marginals.
    pub fn marginal_violation(&self, alpha: &DVector<f64>, beta: &DVector<f64>) -> f64 {
        let rows = self.plan.column_sum();
        let cols = self.plan.row_sum();
        let r = (rows - alpha).amax();
        let c = (cols.transpose() - beta).amax();
        r.max(c)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.plan.nrows() {
            let row: Vec<String> = self.plan.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn check_problem(alpha: &DVector<f64>, beta: &DVector<f64>, d: &DMatrix<f64>) -> Result<()> {
    check_simplex(alpha, "alpha")?;
    check_simplex(beta, "beta")?;
    if d.nrows() != alpha.len() || d.ncols() != beta.len() {
        return Err(Error::dims(
            "transport cost",
            format!("{}x{}", alpha.len(), beta.len()),
            format!("{}x{}", d.nrows(), d.ncols()),
        ));
    }
    if d.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidArgument("cost matrix must be finite and nonnegative".into()));
    }
    Ok(())
}

fn inner(t: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    t.component_mul(d).sum()
}

/// Exact optimal transport by the transportation simplex.
pub fn solve_exact_ot(alpha: &DVector<f64>, beta: &DVector<f64>, d: &DMatrix<f64>) -> Result<TransportPlan> {
    check_problem(alpha, beta, d)?;
    let mut tp = TransportSimplex::new(alpha, beta, d);
    let status = tp.run(1_000_000);
    let cost = inner(&tp.flow, d);
    Ok(TransportPlan {
        plan: tp.flow,
        cost,
        status,
        iterations: tp.iterations,
    })
}

/// Exact optimal transport through the general LP solver. Slower than
/// [`solve_exact_ot`]; kept as an independent route.
pub fn solve_exact_ot_lp(alpha: &DVector<f64>, beta: &DVector<f64>, d: &DMatrix<f64>) -> Result<TransportPlan> {
    check_problem(alpha, beta, d)?;
    let (n, m) = d.shape();
    let mut lp = LinearProgram::with_vars(n * m);
    for i in 0..n {
        for j in 0..m {
            lp.set_objective(i * m + j, d[(i, j)]);
        }
    }
    for i in 0..n {
        lp.add_constraint((0..m).map(|j| (i * m + j, 1.0)).collect(), ComparisonOp::Eq, alpha[i]);
    }
    // one column constraint is implied by the others
    for j in 0..m.saturating_sub(1) {
        lp.add_constraint((0..n).map(|i| (i * m + j, 1.0)).collect(), ComparisonOp::Eq, beta[j]);
    }
    let sol = solve_lp(&lp, &LpOptions::default())?;
    let status = match sol.status {
        LpStatus::Optimal => PlanStatus::Optimal,
        LpStatus::IterationLimit => PlanStatus::IterationLimit,
        LpStatus::Infeasible => PlanStatus::Infeasible,
        LpStatus::Unbounded => return Err(Error::Solver(LpStatus::Unbounded)),
    };
    let plan = DMatrix::from_fn(n, m, |i, j| sol.x[i * m + j].max(0.0));
    let cost = inner(&plan, d);
    Ok(TransportPlan {
        plan,
        cost,
        status,
        iterations: sol.iterations,
    })
}

/// Exact `W_1` between two distributions.
pub fn wasserstein(p: &DiscreteDistribution, q: &DiscreteDistribution, ground_norm: GroundNorm) -> Result<f64> {
    let c = cost_matrix(&p.atoms, &q.atoms, ground_norm, 1.0)?;
    let plan = solve_exact_ot(&p.weights, &q.weights, &c.d)?;
    if plan.status != PlanStatus::Optimal {
        return Err(Error::InvalidArgument(format!("exact transport ended with {:?}", plan.status)));
    }
    Ok(plan.cost)
}

/// Spanning-tree basis over `n` row nodes and `m` column nodes.
struct TransportSimplex<'a> {
    d: &'a DMatrix<f64>,
    n: usize,
    m: usize,
    flow: DMatrix<f64>,
    basis: Vec<(usize, usize)>,
    is_basic: Vec<bool>,
    u: Vec<f64>,
    v: Vec<f64>,
    iterations: usize,
}

impl<'a> TransportSimplex<'a> {
    fn new(alpha: &DVector<f64>, beta: &DVector<f64>, d: &'a DMatrix<f64>) -> Self {
        let (n, m) = d.shape();
        let mut s = Self {
            d,
            n,
            m,
            flow: DMatrix::zeros(n, m),
            basis: Vec::with_capacity(n + m - 1),
            is_basic: vec![false; n * m],
            u: vec![0.0; n],
            v: vec![0.0; m],
            iterations: 0,
        };
        s.least_cost_start(alpha, beta);
        s
    }

    fn least_cost_start(&mut self, alpha: &DVector<f64>, beta: &DVector<f64>) {
        let (n, m) = (self.n, self.m);
        let mut cells: Vec<usize> = (0..n * m).collect();
        cells.sort_by(|&a, &b| self.d[(a / m, a % m)].total_cmp(&self.d[(b / m, b % m)]).then(a.cmp(&b)));
        let mut supply: Vec<f64> = alpha.iter().cloned().collect();
        let mut demand: Vec<f64> = beta.iter().cloned().collect();
        let mut row_open = vec![true; n];
        let mut col_open = vec![true; m];
        let (mut rows_left, mut cols_left) = (n, m);
        for cell in cells {
            let (i, j) = (cell / m, cell % m);
            if !row_open[i] || !col_open[j] {
                continue;
            }
            if rows_left == 1 && cols_left == 1 {
                // last cell absorbs any rounding difference
                self.flow[(i, j)] = supply[i].max(demand[j]).max(0.0);
                self.add_basic(i, j);
                break;
            }
            let x = supply[i].min(demand[j]).max(0.0);
            self.flow[(i, j)] = x;
            self.add_basic(i, j);
            let close_row = if supply[i] < demand[j] {
                true
            } else if supply[i] > demand[j] {
                false
            } else {
                rows_left > 1
            };
            let close_row = close_row && rows_left > 1 || cols_left == 1;
            if close_row {
                demand[j] -= x;
                supply[i] = 0.0;
                row_open[i] = false;
                rows_left -= 1;
            } else {
                supply[i] -= x;
                demand[j] = 0.0;
                col_open[j] = false;
                cols_left -= 1;
            }
        }
    }

    fn add_basic(&mut self, i: usize, j: usize) {
        self.basis.push((i, j));
        self.is_basic[i * self.m + j] = true;
    }

    /// Tree adjacency: node ids `0..n` are rows, `n..n+m` are columns.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (k, &(i, j)) in self.basis.iter().enumerate() {
            adj[i].push((self.n + j, k));
            adj[self.n + j].push((i, k));
        }
        adj
    }

    fn potentials(&mut self, adj: &[Vec<(usize, usize)>]) {
        let total = self.n + self.m;
        let mut seen = vec![false; total];
        let mut stack = vec![0usize];
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &(next, k) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let (i, j) = self.basis[k];
                if next >= self.n {
                    self.v[j] = self.d[(i, j)] - self.u[i];
                } else {
                    self.u[i] = self.d[(i, j)] - self.v[j];
                }
                stack.push(next);
            }
        }
    }

    /// Basis positions along the tree path from row node `i` to column node `n + j`.
    fn tree_path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let total = self.n + self.m;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        let mut queue = std::collections::VecDeque::from([i]);
        seen[i] = true;
        let target = self.n + j;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while let Some((prev, k)) = parent[node] {
            path.push(k);
            node = prev;
        }
        path
    }

    fn run(&mut self, max_iter: usize) -> PlanStatus {
        let scale = self.d.amax().max(1.0);
        let tol = SIMPLEX_TOL * scale;
        let degenerate_limit = 10 * (self.n + self.m);
        let mut degenerate_run = 0usize;
        loop {
            let adj = self.adjacency();
            self.potentials(&adj);
            let bland = degenerate_run >= degenerate_limit;
            let mut entering = None;
            let mut best = -tol;
            'scan: for i in 0..self.n {
                for j in 0..self.m {
                    if self.is_basic[i * self.m + j] {
                        continue;
                    }
                    let r = self.d[(i, j)] - self.u[i] - self.v[j];
                    if r < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = r;
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                return PlanStatus::Optimal;
            };
            if self.iterations >= max_iter {
                return PlanStatus::IterationLimit;
            }
            self.iterations += 1;
            // path runs from the column node back to the row node; the first
            // edge touches column ej and loses flow
            let path = self.tree_path(&adj, ei, ej);
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    let (i, j) = self.basis[k];
                    let f = self.flow[(i, j)];
                    let better = f < theta
                        || (f == theta && bland && (i * self.m + j) < {
                            let (li, lj) = self.basis[leave];
                            li * self.m + lj
                        });
                    if better {
                        theta = f;
                        leave = k;
                    }
                }
            }
            theta = theta.max(0.0);
            if theta == 0.0 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            for (pos, &k) in path.iter().enumerate() {
                let (i, j) = self.basis[k];
                if pos % 2 == 0 {
                    self.flow[(i, j)] -= theta;
                } else {
                    self.flow[(i, j)] += theta;
                }
            }
            let (li, lj) = self.basis[leave];
            self.flow[(li, lj)] = 0.0;
            self.is_basic[li * self.m + lj] = false;
            self.flow[(ei, ej)] = theta;
            self.is_basic[ei * self.m + ej] = true;
            self.basis[leave] = (ei, ej);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SinkhornMode {
    /// Log domain whenever `max(D) / gamma > 30`.
    #[default]
    Auto,
    Standard,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub gamma: f64,
    /// Stop once the largest marginal violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub mode: SinkhornMode,
}

impl SinkhornOptions {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            tol: 1e-10,
            max_iter: 100_000,
            mode: SinkhornMode::Auto,
        }
    }
}

const LOG_DOMAIN_RATIO: f64 = 30.0;

/// Entropic optimal transport. The reported cost is the unregularized `<T, D>`.
pub fn sinkhorn(alpha: &DVector<f64>, beta: &DVector<f64>, d: &DMatrix<f64>, opts: &SinkhornOptions) -> Result<TransportPlan> {
    check_problem(alpha, beta, d)?;
    if !(opts.gamma > 0.0) || !opts.gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", opts.gamma)));
    }
    // restrict to the support; zero-weight atoms carry no mass
    let rows: Vec<usize> = (0..alpha.len()).filter(|&i| alpha[i] > 0.0).collect();
    let cols: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] > 0.0).collect();
    let a = DVector::from_iterator(rows.len(), rows.iter().map(|&i| alpha[i]));
    let b = DVector::from_iterator(cols.len(), cols.iter().map(|&j| beta[j]));
    let sub = DMatrix::from_fn(rows.len(), cols.len(), |i, j| d[(rows[i], cols[j])]);

    let log_domain = match opts.mode {
        SinkhornMode::Log => true,
        SinkhornMode::Standard => false,
        SinkhornMode::Auto => sub.max() / opts.gamma > LOG_DOMAIN_RATIO,
    };
    let (t, iterations, converged) = if log_domain {
        sinkhorn_log(&a, &b, &sub, opts)
    } else {
        sinkhorn_standard(&a, &b, &sub, opts)?
    };
    let mut plan = DMatrix::zeros(alpha.len(), beta.len());
    for (si, &i) in rows.iter().enumerate() {
        for (sj, &j) in cols.iter().enumerate() {
            plan[(i, j)] = t[(si, sj)];
        }
    }
    let cost = inner(&plan, d);
    Ok(TransportPlan {
        plan,
        cost,
        status: if converged { PlanStatus::Optimal } else { PlanStatus::IterationLimit },
        iterations,
    })
}

fn sinkhorn_standard(a: &DVector<f64>, b: &DVector<f64>, d: &DMatrix<f64>, opts: &SinkhornOptions) -> Result<(DMatrix<f64>, usize, bool)> {
    let k = d.map(|v| (-v / opts.gamma).exp());
    // a row or column of zeros makes the scaling undefined
    if k.row_iter().any(|r| r.max() < f64::MIN_POSITIVE) || k.column_iter().any(|c| c.max() < f64::MIN_POSITIVE) {
        return Err(Error::KernelUnderflow);
    }
    let mut u = DVector::from_element(a.len(), 1.0);
    let mut v = DVector::from_element(b.len(), 1.0);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let kv = &k * &v;
        u = a.component_div(&kv);
        let ktu = k.tr_mul(&u);
        v = b.component_div(&ktu);
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::KernelUnderflow);
        }
        // columns are exact after the v update; check rows
        let rows = u.component_mul(&(&k * &v));
        if (rows - a).amax() < opts.tol {
            converged = true;
            break;
        }
    }
    let t = DMatrix::from_fn(a.len(), b.len(), |i, j| u[i] * k[(i, j)] * v[j]);
    Ok((t, iterations, converged))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn sinkhorn_log(a: &DVector<f64>, b: &DVector<f64>, d: &DMatrix<f64>, opts: &SinkhornOptions) -> (DMatrix<f64>, usize, bool) {
    let gamma = opts.gamma;
    let (n, m) = d.shape();
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        for i in 0..n {
            let lse = log_sum_exp((0..m).map(|j| (g[j] - d[(i, j)]) / gamma));
            f[i] = gamma * (log_a[i] - lse);
        }
        for j in 0..m {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - d[(i, j)]) / gamma));
            g[j] = gamma * (log_b[j] - lse);
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let row: f64 = (0..m).map(|j| ((f[i] + g[j] - d[(i, j)]) / gamma).exp()).sum();
            worst = worst.max((row - a[i]).abs());
        }
        if worst < opts.tol {
            converged = true;
            break;
        }
    }
    let t = DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - d[(i, j)]) / gamma).exp());
    (t, iterations, converged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> DVector<f64> {
        DVector::from_element(n, 1.0 / n as f64)
    }

    #[test]
    fn cost_matrix_examples() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let y = DMatrix::from_row_slice(1, 1, &[3.0]);
        assert_eq!(cost_matrix(&x, &y, GroundNorm::One, 1.0).unwrap().d[(0, 0)], 3.0);
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(cost_matrix(&x, &y, GroundNorm::One, 1.0).unwrap().d[(0, 0)], 2.0);
        assert_eq!(cost_matrix(&x, &y, GroundNorm::Inf, 1.0).unwrap().d[(0, 0)], 1.0);
        assert!((cost_matrix(&x, &y, GroundNorm::Two, 2.0).unwrap().d[(0, 0)] - 2.0).abs() < 1e-15);
        let z = DMatrix::zeros(3, 1);
        assert!(cost_matrix(&x, &z, GroundNorm::One, 1.0).is_err());
    }

    #[test]
    fn identity_pairing_on_the_line() {
        let x = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let y = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
        let c = cost_matrix(&x, &y, GroundNorm::One, 1.0).unwrap();
        let t = solve_exact_ot(&uniform(2), &uniform(2), &c.d).unwrap();
        assert_eq!(t.status, PlanStatus::Optimal);
        assert!((t.cost - 2.0).abs() < 1e-15);
        let lp = solve_exact_ot_lp(&uniform(2), &uniform(2), &c.d).unwrap();
        assert!((lp.cost - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_atoms() {
        let d = DMatrix::from_element(1, 1, 4.5);
        let one = DVector::from_element(1, 1.0);
        let t = solve_exact_ot(&one, &one, &d).unwrap();
        assert_eq!(t.plan[(0, 0)], 1.0);
        assert_eq!(t.cost, 4.5);
    }

    #[test]
    fn rejects_bad_weights() {
        let d = DMatrix::zeros(2, 2);
        let bad = DVector::from_vec(vec![0.7, 0.7]);
        assert!(solve_exact_ot(&bad, &uniform(2), &d).is_err());
        assert!(DiscreteDistribution::new(DMatrix::zeros(1, 2), DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn zero_weight_atoms_are_handled() {
        let alpha = DVector::from_vec(vec![0.5, 0.0, 0.5]);
        let beta = DVector::from_vec(vec![1.0, 0.0]);
        let d = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        let t = solve_exact_ot(&alpha, &beta, &d).unwrap();
        assert!((t.cost - 2.0).abs() < 1e-14);
        let s = sinkhorn(&alpha, &beta, &d, &SinkhornOptions::new(0.1)).unwrap();
        assert!((s.cost - 2.0).abs() < 1e-9);
    }

    #[test]
    fn forced_standard_mode_reports_underflow() {
        let d = DMatrix::from_row_slice(2, 2, &[1000.0, 2000.0, 2000.0, 1000.0]);
        let mut opts = SinkhornOptions::new(1.0);
        opts.mode = SinkhornMode::Standard;
        assert!(matches!(sinkhorn(&uniform(2), &uniform(2), &d, &opts), Err(Error::KernelUnderflow)));
        opts.mode = SinkhornMode::Auto;
        let t = sinkhorn(&uniform(2), &uniform(2), &d, &opts).unwrap();
        assert!((t.cost - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn ground_norm_parsing() {
        assert_eq!("1".parse::<GroundNorm>().unwrap(), GroundNorm::One);
        assert_eq!("two".parse::<GroundNorm>().unwrap(), GroundNorm::Two);
        assert_eq!("inf".parse::<GroundNorm>().unwrap().dual(), GroundNorm::One);
        assert!("3".parse::<GroundNorm>().is_err());
    }
}
