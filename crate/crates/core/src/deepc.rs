//! Data-enabled predictive control: the deterministic problem, its softened
//! version and the Wasserstein-robust reformulation, all as linear programs.
//!
//! The ground metric is the 1-norm, so every dual norm is the max-norm and
//! each problem is a single LP.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hankel::{HankelBlocks, InitialWindow};
use crate::lp::{solve_lp, ComparisonOp, LinearProgram, LpOptions, LpStatus};

/// `J(u, y) = |u|_1 + c |W (y - r)|_1` with `W` selecting the tracked output
/// channels, plus the consistency weight `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub c: f64,
    pub rho: f64,
    /// Stacked reference over the prediction horizon, `l * K` entries.
    pub reference: DVector<f64>,
    /// Output channels that enter the tracking term.
    pub tracked: Vec<bool>,
}

impl CostSpec {
    /// Tracks every output channel.
    pub fn new(c: f64, rho: f64, reference: DVector<f64>, l: usize) -> Result<Self> {
        Self::with_tracked(c, rho, reference, vec![true; l])
    }

    pub fn with_tracked(c: f64, rho: f64, reference: DVector<f64>, tracked: Vec<bool>) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!("tracking weight must be positive, got {c}")));
        }
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidArgument(format!("consistency weight must be nonnegative, got {rho}")));
        }
        if tracked.is_empty() || reference.len() % tracked.len() != 0 {
            return Err(Error::dims("reference length", format!("multiple of {}", tracked.len()), reference.len()));
        }
        Ok(Self {
            c,
            rho,
            reference,
            tracked,
        })
    }

    fn is_tracked(&self, row: usize) -> bool {
        self.tracked[row % self.tracked.len()]
    }

    /// `J(u, y)` for stacked predicted inputs and outputs.
    pub fn stage_cost(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let track: f64 = (0..y.len())
            .filter(|&r| self.is_tracked(r))
            .map(|r| (y[r] - self.reference[r]).abs())
            .sum();
        u.lp_norm(1) + self.c * track
    }
}

/// Bounds of the conjugate domains of the two cost terms: `|xi|_inf <= c`
/// for the tracking term and `|xi'|_inf <= rho` for the consistency penalty.
pub fn conjugate_bound(cost: &CostSpec) -> Result<(f64, f64)> {
    if !(cost.c > 0.0) || !cost.c.is_finite() || !(cost.rho >= 0.0) || !cost.rho.is_finite() {
        return Err(Error::InvalidArgument(
            "conjugate bounds are only known for finite 1-norm tracking costs; supply them explicitly".into(),
        ));
    }
    Ok((cost.c, cost.rho))
}

/// Radius `eps_beta + eta`, the enlargement that pays for compression.
pub fn ambiguity_radius(eps_beta: f64, eta: f64) -> Result<f64> {
    if !(eps_beta >= 0.0) || !(eta >= 0.0) || !eps_beta.is_finite() || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "radius components must be finite and nonnegative, got {eps_beta} and {eta}"
        )));
    }
    Ok(eps_beta + eta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbiguitySpec {
    pub eps_beta: f64,
    pub eta: f64,
}

impl AmbiguitySpec {
    pub fn new(eps_beta: f64, eta: f64) -> Result<Self> {
        ambiguity_radius(eps_beta, eta)?;
        Ok(Self { eps_beta, eta })
    }

    pub fn effective_radius(&self) -> f64 {
        self.eps_beta + self.eta
    }
}

/// Per-component input bounds, applied at every predicted step.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::dims("input box", lower.len(), upper.len()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("input box is empty".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(m: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; m], vec![upper; m])
    }

    pub fn unbounded(m: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; m],
            upper: vec![f64::INFINITY; m],
        }
    }

    pub fn m(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        let m = self.m();
        u.iter().enumerate().all(|(k, &v)| v >= self.lower[k % m] - tol && v <= self.upper[k % m] + tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub g_star: DVector<f64>,
    /// Planned inputs `Uf g`, `m * K` entries.
    pub u_star: DVector<f64>,
    /// Predicted outputs `Yf g`.
    pub y_pred: DVector<f64>,
    pub objective: f64,
    pub solve_time: Duration,
    pub status: LpStatus,
    pub iterations: usize,
}

impl ControlSolution {
    /// First planned input block, the only one applied to the plant.
    pub fn first_input(&self, m: usize) -> DVector<f64> {
        self.u_star.rows(0, m).into_owned()
    }
}

/// Column layout of the assembled LP.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    g_pos: usize,
    g_neg: usize,
    g_len: usize,
    t: Option<usize>,
}

/// How the consistency of the past outputs is treated.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Consistency {
    Hard,
    Penalized,
}

/// An assembled robust DeePC problem.
#[derive(Debug, Clone)]
pub struct RobustProblem {
    blocks: HankelBlocks,
    window: InitialWindow,
    cost: CostSpec,
    ambiguity: AmbiguitySpec,
    input_box: InputBox,
    lp: LinearProgram,
    layout: Layout,
}

impl RobustProblem {
    pub fn lp(&self) -> &LinearProgram {
        &self.lp
    }

    pub fn blocks(&self) -> &HankelBlocks {
        &self.blocks
    }

    pub fn window(&self) -> &InitialWindow {
        &self.window
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn ambiguity(&self) -> &AmbiguitySpec {
        &self.ambiguity
    }

    pub fn input_box(&self) -> &InputBox {
        &self.input_box
    }

    /// Decision dimension of `g`.
    pub fn dimension(&self) -> usize {
        self.layout.g_len
    }

    /// Human-readable LP dump.
    pub fn to_lp_text(&self) -> String {
        self.lp.to_lp_text()
    }

    /// Closed-form objective at `g`: softened cost plus the radius term.
    pub fn evaluate(&self, g: &DVector<f64>) -> f64 {
        let soft = softened_value(&self.blocks, &self.window, &self.cost, g);
        let eps = self.ambiguity.effective_radius();
        if eps == 0.0 {
            return soft;
        }
        let gmax = g.amax();
        soft + eps * (self.cost.c * gmax).max(self.cost.rho * gmax.max(1.0))
    }
}

fn check_dims(blocks: &HankelBlocks, window: &InitialWindow, cost: &CostSpec, input_box: &InputBox) -> Result<()> {
    if window.u_ini.len() != blocks.ub.nrows() {
        return Err(Error::dims("past inputs", blocks.ub.nrows(), window.u_ini.len()));
    }
    if window.y_ini.len() != blocks.yb.nrows() {
        return Err(Error::dims("past outputs", blocks.yb.nrows(), window.y_ini.len()));
    }
    if cost.reference.len() != blocks.yf.nrows() {
        return Err(Error::dims("reference", blocks.yf.nrows(), cost.reference.len()));
    }
    if cost.tracked.len() != blocks.l {
        return Err(Error::dims("tracked channels", blocks.l, cost.tracked.len()));
    }
    if input_box.m() != blocks.m {
        return Err(Error::dims("input box", blocks.m, input_box.m()));
    }
    if blocks.ncols() == 0 {
        return Err(Error::InvalidArgument("data blocks have no columns".into()));
    }
    Ok(())
}

/// Adds `sum_j m[row, j] g_j` coefficients for `g = g+ - g-`.
fn g_terms(mat: &nalgebra::DMatrix<f64>, row: usize, layout: &Layout) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(2 * layout.g_len);
    for j in 0..layout.g_len {
        let v = mat[(row, j)];
        if v != 0.0 {
            out.push((layout.g_pos + j, v));
            out.push((layout.g_neg + j, -v));
        }
    }
    out
}

fn assemble(
    blocks: &HankelBlocks,
    window: &InitialWindow,
    cost: &CostSpec,
    radius: f64,
    input_box: &InputBox,
    consistency: Consistency,
) -> (LinearProgram, Layout) {
    let r = blocks.ncols();
    let mut lp = LinearProgram::new();
    let g_pos = lp.num_vars();
    for _ in 0..r {
        lp.add_var(0.0, 0.0, f64::INFINITY);
    }
    let g_neg = lp.num_vars();
    for _ in 0..r {
        lp.add_var(0.0, 0.0, f64::INFINITY);
    }
    let t = (radius > 0.0).then(|| lp.add_var(radius, cost.rho, f64::INFINITY));
    let layout = Layout {
        g_pos,
        g_neg,
        g_len: r,
        t,
    };

    // planned inputs: Uf g = u with |u|_1 in the cost and u inside the box
    let m = blocks.m;
    for row in 0..blocks.uf.nrows() {
        let (lo, hi) = (input_box.lower[row % m], input_box.upper[row % m]);
        let mut coeffs = g_terms(&blocks.uf, row, &layout);
        if lo <= 0.0 && hi >= 0.0 {
            let up = lp.add_var(1.0, 0.0, hi);
            let down = lp.add_var(1.0, 0.0, -lo);
            coeffs.push((up, -1.0));
            coeffs.push((down, 1.0));
        } else {
            // the sign of u is fixed by the box, so |u| is linear
            let sign = if lo > 0.0 { 1.0 } else { -1.0 };
            let u = lp.add_var(sign, lo, hi);
            coeffs.push((u, -1.0));
        }
        lp.add_constraint(coeffs, ComparisonOp::Eq, 0.0);
    }

    // tracking: Yf g - r = e+ - e- on the tracked channels
    for row in (0..blocks.yf.nrows()).filter(|&row| cost.is_tracked(row)) {
        let mut coeffs = g_terms(&blocks.yf, row, &layout);
        let ep = lp.add_var(cost.c, 0.0, f64::INFINITY);
        let en = lp.add_var(cost.c, 0.0, f64::INFINITY);
        coeffs.push((ep, -1.0));
        coeffs.push((en, 1.0));
        lp.add_constraint(coeffs, ComparisonOp::Eq, cost.reference[row]);
    }

    // past outputs: hard equality or penalized slack
    for row in 0..blocks.yb.nrows() {
        let mut coeffs = g_terms(&blocks.yb, row, &layout);
        if consistency == Consistency::Penalized {
            let sp = lp.add_var(cost.rho, 0.0, f64::INFINITY);
            let sn = lp.add_var(cost.rho, 0.0, f64::INFINITY);
            coeffs.push((sp, -1.0));
            coeffs.push((sn, 1.0));
        }
        lp.add_constraint(coeffs, ComparisonOp::Eq, window.y_ini[row]);
    }

    // past inputs are known exactly
    for row in 0..blocks.ub.nrows() {
        lp.add_constraint(g_terms(&blocks.ub, row, &layout), ComparisonOp::Eq, window.u_ini[row]);
    }

    // t >= max(c |g|_inf, rho max(|g|_inf, 1)); the bound t >= rho is a variable bound
    if let Some(t) = t {
        let scale = cost.c.max(cost.rho);
        for j in 0..r {
            lp.add_constraint(
                vec![(t, 1.0), (g_pos + j, -scale), (g_neg + j, -scale)],
                ComparisonOp::Ge,
                0.0,
            );
        }
    }
    (lp, layout)
}

fn run(lp: &LinearProgram, layout: &Layout, blocks: &HankelBlocks) -> Result<ControlSolution> {
    let start = Instant::now();
    let sol = solve_lp(lp, &LpOptions::default())?;
    let solve_time = start.elapsed();
    let g = if sol.status == LpStatus::Optimal {
        DVector::from_fn(layout.g_len, |j, _| sol.x[layout.g_pos + j] - sol.x[layout.g_neg + j])
    } else {
        DVector::zeros(layout.g_len)
    };
    Ok(ControlSolution {
        u_star: &blocks.uf * &g,
        y_pred: &blocks.yf * &g,
        g_star: g,
        objective: sol.objective_value,
        solve_time,
        status: sol.status,
        iterations: sol.iterations,
    })
}

/// Deterministic DeePC: past inputs and outputs matched exactly.
pub fn deterministic_deepc(
    blocks: &HankelBlocks,
    window: &InitialWindow,
    cost: &CostSpec,
    input_box: &InputBox,
) -> Result<ControlSolution> {
    check_dims(blocks, window, cost, input_box)?;
    let (lp, layout) = assemble(blocks, window, cost, 0.0, input_box, Consistency::Hard);
    run(&lp, &layout, blocks)
}

/// `g -> J(Uf g, Yf g) + rho |Yb g - y_ini|_1` over the admissible set
/// `{g : Uf g in box, Ub g = u_ini}`.
#[derive(Debug, Clone)]
pub struct SoftenedProblem {
    blocks: HankelBlocks,
    window: InitialWindow,
    cost: CostSpec,
    input_box: InputBox,
}

pub fn soften(blocks: &HankelBlocks, window: &InitialWindow, cost: &CostSpec, input_box: &InputBox) -> Result<SoftenedProblem> {
    check_dims(blocks, window, cost, input_box)?;
    if cost.rho == 0.0 {
        log::warn!("rho = 0: consistency with the past outputs is ignored");
    }
    Ok(SoftenedProblem {
        blocks: blocks.clone(),
        window: window.clone(),
        cost: cost.clone(),
        input_box: input_box.clone(),
    })
}

fn softened_value(blocks: &HankelBlocks, window: &InitialWindow, cost: &CostSpec, g: &DVector<f64>) -> f64 {
    let u = &blocks.uf * g;
    let y = &blocks.yf * g;
    let mismatch = (&blocks.yb * g - &window.y_ini).lp_norm(1);
    cost.stage_cost(&u, &y) + cost.rho * mismatch
}

impl SoftenedProblem {
    pub fn evaluate(&self, g: &DVector<f64>) -> f64 {
        softened_value(&self.blocks, &self.window, &self.cost, g)
    }

    pub fn is_admissible(&self, g: &DVector<f64>, tol: f64) -> bool {
        g.len() == self.blocks.ncols()
            && self.input_box.contains(&(&self.blocks.uf * g), tol)
            && (&self.blocks.ub * g - &self.window.u_ini).amax() <= tol
    }

    pub fn solve(&self) -> Result<ControlSolution> {
        let (lp, layout) = assemble(&self.blocks, &self.window, &self.cost, 0.0, &self.input_box, Consistency::Penalized);
        run(&lp, &layout, &self.blocks)
    }
}

pub fn build_robust(
    blocks: &HankelBlocks,
    window: &InitialWindow,
    cost: &CostSpec,
    ambiguity: &AmbiguitySpec,
    input_box: &InputBox,
) -> Result<RobustProblem> {
    check_dims(blocks, window, cost, input_box)?;
    conjugate_bound(cost)?;
    let (lp, layout) = assemble(
        blocks,
        window,
        cost,
        ambiguity.effective_radius(),
        input_box,
        Consistency::Penalized,
    );
    Ok(RobustProblem {
        blocks: blocks.clone(),
        window: window.clone(),
        cost: cost.clone(),
        ambiguity: *ambiguity,
        input_box: input_box.clone(),
        lp,
        layout,
    })
}

pub fn solve_robust(problem: &RobustProblem) -> Result<ControlSolution> {
    run(&problem.lp, &problem.layout, &problem.blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn tiny_blocks() -> HankelBlocks {
        // scalar system y = u, Ki = 1, K = 2, identity-like data
        let data = DMatrix::from_row_slice(
            6,
            3,
            &[
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0, //
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0,
            ],
        );
        HankelBlocks::split(&data, 1, 1, 1, 2).unwrap()
    }

    #[test]
    fn zero_problem_has_zero_solution() {
        let blocks = tiny_blocks();
        let window = InitialWindow::new(DVector::zeros(1), DVector::zeros(1), 1, 1, 1).unwrap();
        let cost = CostSpec::new(1.0, 10.0, DVector::zeros(2), 1).unwrap();
        let sol = deterministic_deepc(&blocks, &window, &cost, &InputBox::uniform(1, -1.0, 1.0).unwrap()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.u_star, DVector::zeros(2));
    }

    #[test]
    fn radius_arithmetic() {
        assert_eq!(ambiguity_radius(1e-3, 0.0).unwrap(), 1e-3);
        assert_eq!(ambiguity_radius(1e-3, 0.2).unwrap(), 1e-3 + 0.2);
        assert!(ambiguity_radius(-1.0, 0.0).is_err());
        assert!(AmbiguitySpec::new(0.0, -0.1).is_err());
        assert_eq!(AmbiguitySpec::new(1e-3, 0.5).unwrap().effective_radius(), 1e-3 + 0.5);
    }

    #[test]
    fn conjugate_bounds() {
        let c = CostSpec::new(200.0, 1e5, DVector::zeros(3), 3).unwrap();
        assert_eq!(conjugate_bound(&c).unwrap(), (200.0, 1e5));
        let c = CostSpec::new(1.0, 0.0, DVector::zeros(1), 1).unwrap();
        assert_eq!(conjugate_bound(&c).unwrap().0, 1.0);
        assert!(CostSpec::new(0.0, 1.0, DVector::zeros(1), 1).is_err());
    }

    #[test]
    fn robust_epigraph_is_at_least_rho() {
        let blocks = tiny_blocks();
        let window = InitialWindow::new(DVector::from_vec(vec![0.5]), DVector::from_vec(vec![0.5]), 1, 1, 1).unwrap();
        let cost = CostSpec::new(2.0, 3.0, DVector::from_vec(vec![0.3, -0.2]), 1).unwrap();
        let amb = AmbiguitySpec::new(0.1, 0.0).unwrap();
        let bx = InputBox::uniform(1, -1.0, 1.0).unwrap();
        let p = build_robust(&blocks, &window, &cost, &amb, &bx).unwrap();
        let sol = solve_robust(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.objective >= 0.1 * 3.0 - 1e-12);
        assert!((p.evaluate(&sol.g_star) - sol.objective).abs() < 1e-9);
        assert!(p.to_lp_text().contains("Minimize"));
    }

    #[test]
    fn dimension_errors() {
        let blocks = tiny_blocks();
        let window = InitialWindow::new(DVector::zeros(1), DVector::zeros(1), 1, 1, 1).unwrap();
        let bad_ref = CostSpec::new(1.0, 1.0, DVector::zeros(3), 1).unwrap();
        let bx = InputBox::uniform(1, -1.0, 1.0).unwrap();
        assert!(deterministic_deepc(&blocks, &window, &bad_ref, &bx).is_err());
        let cost = CostSpec::new(1.0, 1.0, DVector::zeros(2), 1).unwrap();
        assert!(deterministic_deepc(&blocks, &window, &cost, &InputBox::uniform(2, -1.0, 1.0).unwrap()).is_err());
        assert!(InputBox::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn one_sided_boxes() {
        let blocks = tiny_blocks();
        let window = InitialWindow::new(DVector::zeros(1), DVector::zeros(1), 1, 1, 1).unwrap();
        let cost = CostSpec::new(1.0, 1.0, DVector::zeros(2), 1).unwrap();
        let sol = deterministic_deepc(&blocks, &window, &cost, &InputBox::uniform(1, 0.25, 1.0).unwrap()).unwrap();
        // u = y >= 0.25 on both steps: cost |u| + |y| = 2 * 2 * 0.25
        assert!((sol.objective - 1.0).abs() < 1e-12);
        let sol = deterministic_deepc(&blocks, &window, &cost, &InputBox::uniform(1, -1.0, -0.5).unwrap()).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-12);
    }
}
