//! Compression of a data matrix into a few synthetic atoms by minimizing
//! the 1-Wasserstein distance between the empirical distribution of its
//! columns and a uniform distribution on the atoms.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lp::{solve_lp, ComparisonOp, LinearProgram, LpOptions, LpStatus};
use crate::transport::{cost_matrix, sinkhorn, solve_exact_ot, GroundNorm, PlanStatus, SinkhornOptions, TransportPlan};

const WEISZFELD_TOL: f64 = 1e-9;
const WEISZFELD_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub enum InitMethod {
    RandomColumns,
    /// Distance-proportional seeding over distinct columns.
    KMeansPlusPlus,
    Provided(DMatrix<f64>),
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random-columns" | "random" => Ok(InitMethod::RandomColumns),
            "kmeans++" | "kmeans-plus-plus" | "kmeanspp" => Ok(InitMethod::KMeansPlusPlus),
            other => Err(Error::Parse(format!("unknown init method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionConfig {
    pub atoms: usize,
    pub ground_norm: GroundNorm,
    pub init: InitMethod,
    pub max_outer_iters: usize,
    /// Stop once the relative cost decrease falls below this.
    pub outer_tol: f64,
    /// Entropic weight of the inner transport; 0 selects exact transport.
    pub gamma: f64,
    pub seed: u64,
}

impl CompressionConfig {
    pub fn new(atoms: usize) -> Self {
        Self {
            atoms,
            ground_norm: GroundNorm::One,
            init: InitMethod::KMeansPlusPlus,
            max_outer_iters: 200,
            outer_tol: 1e-6,
            gamma: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if cols == 0 {
            return Err(Error::InvalidArgument("data matrix has no columns".into()));
        }
        if self.atoms == 0 || self.atoms > cols {
            return Err(Error::InvalidArgument(format!(
                "atom count must lie in [1, {cols}], got {}",
                self.atoms
            )));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidArgument("max_outer_iters must be at least 1".into()));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::InvalidArgument("outer_tol must be positive".into()));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument("gamma must be finite and nonnegative".into()));
        }
        if self.ground_norm == GroundNorm::Inf {
            return Err(Error::InvalidArgument("compression supports the 1-norm and 2-norm only".into()));
        }
        if let InitMethod::Provided(m) = &self.init {
            if m.shape() != (rows, self.atoms) {
                return Err(Error::dims(
                    "provided atoms",
                    format!("{rows}x{}", self.atoms),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// One synthetic atom per column.
    pub atoms: DMatrix<f64>,
    pub eta: f64,
    /// Exact optimal plan between the data columns and the final atoms.
    pub plan: TransportPlan,
    /// Number of atom updates performed.
    pub iterations: usize,
    pub cost_history: Vec<f64>,
    pub ground_norm: GroundNorm,
    pub seed: u64,
}

/// Sidecar information stored next to a persisted atom matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMetadata {
    pub atoms: usize,
    pub rows: usize,
    pub eta: f64,
    pub seed: u64,
    pub ground_norm: GroundNorm,
    pub iterations: usize,
}

fn norm_name(n: GroundNorm) -> &'static str {
    match n {
        GroundNorm::One => "one",
        GroundNorm::Two => "two",
        GroundNorm::Inf => "inf",
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    pub fn metadata(&self) -> SyntheticMetadata {
        SyntheticMetadata {
            atoms: self.atoms.ncols(),
            rows: self.atoms.nrows(),
            eta: self.eta,
            seed: self.seed,
            ground_norm: self.ground_norm,
            iterations: self.iterations,
        }
    }

    /// Writes the atom matrix as CSV (one matrix row per line) and the
    /// metadata to `<path>.meta`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_matrix_csv(&self.atoms, path)?;
        let meta = self.metadata();
        let text = format!(
            "atoms = {}\nrows = {}\neta = {:e}\nseed = {}\nnorm = {}\niterations = {}\n",
            meta.atoms,
            meta.rows,
            meta.eta,
            meta.seed,
            norm_name(meta.ground_norm),
            meta.iterations
        );
        std::fs::write(sidecar(path), text)?;
        Ok(())
    }
}

/// Reads atoms and metadata written by [`SyntheticDataset::save`].
pub fn load_synthetic(path: impl AsRef<Path>) -> Result<(DMatrix<f64>, SyntheticMetadata)> {
    let path = path.as_ref();
    let atoms = read_matrix_csv(path)?;
    let text = std::fs::read_to_string(sidecar(path))?;
    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad metadata line '{line}'")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| Error::Parse(format!("metadata is missing '{k}'")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Parse(format!("bad value for '{k}'"))) };
    let meta = SyntheticMetadata {
        atoms: num("atoms")?,
        rows: num("rows")?,
        eta: get("eta")?.parse().map_err(|_| Error::Parse("bad value for 'eta'".into()))?,
        seed: get("seed")?.parse().map_err(|_| Error::Parse("bad value for 'seed'".into()))?,
        ground_norm: get("norm")?.parse()?,
        iterations: num("iterations")?,
    };
    if atoms.shape() != (meta.rows, meta.atoms) {
        return Err(Error::dims(
            "synthetic atoms",
            format!("{}x{}", meta.rows, meta.atoms),
            format!("{}x{}", atoms.nrows(), atoms.ncols()),
        ));
    }
    Ok((atoms, meta))
}

pub fn write_matrix_csv(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", k + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!("line {}: ragged row", k + 1)));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

/// Minimizer of `sum_i w_i |x_i - t|`. When the cumulative weight hits
/// exactly one half the midpoint of the flat stretch is returned.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    assert_eq!(values.len(), weights.len());
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .cloned()
        .zip(weights.iter().cloned())
        .filter(|&(_, w)| w > 0.0)
        .collect();
    assert!(!pairs.is_empty(), "weighted median needs positive weight");
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let half = 0.5 * total;
    let eps = 1e-12 * total;
    let mut cum = 0.0;
    for (k, &(x, w)) in pairs.iter().enumerate() {
        cum += w;
        if cum >= half - eps {
            if (cum - half).abs() <= eps && k + 1 < pairs.len() {
                return 0.5 * (x + pairs[k + 1].0);
            }
            return x;
        }
    }
    pairs.last().unwrap().0
}

fn weighted_distance_sum(points: &DMatrix<f64>, weights: &[f64], s: &DVector<f64>, norm: GroundNorm) -> f64 {
    points
        .column_iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(c, &w)| w * norm.distance(c.as_slice(), s.as_slice()))
        .sum()
}

/// Weighted geometric median by Weiszfeld's iteration started at `start`.
/// Points sitting on the current iterate are skipped for that step, and a
/// step is only taken if it does not increase the objective.
pub fn weiszfeld(points: &DMatrix<f64>, weights: &[f64], start: &DVector<f64>, tol: f64, max_iter: usize) -> DVector<f64> {
    let mut s = start.clone();
    let mut f = weighted_distance_sum(points, weights, &s, GroundNorm::Two);
    for _ in 0..max_iter {
        let mut num = DVector::zeros(s.len());
        let mut den = 0.0;
        for (c, &w) in points.column_iter().zip(weights) {
            if w <= 0.0 {
                continue;
            }
            let dist = (c - &s).norm();
            if dist <= 1e-12 {
                continue;
            }
            num += c * (w / dist);
            den += w / dist;
        }
        if den == 0.0 {
            break;
        }
        let next = num / den;
        let f_next = weighted_distance_sum(points, weights, &next, GroundNorm::Two);
        if f_next > f {
            break;
        }
        let step = (&next - &s).norm();
        s = next;
        f = f_next;
        if step <= tol * (1.0 + s.norm()) {
            break;
        }
    }
    s
}

/// LP feasibility of `lambda >= 0, sum(lambda) = 1, |columns lambda - point|_inf <= tol`.
pub fn in_convex_hull(point: &DVector<f64>, columns: &DMatrix<f64>, tol: f64) -> bool {
    if point.len() != columns.nrows() || columns.ncols() == 0 {
        return false;
    }
    let r = columns.ncols();
    let mut lp = LinearProgram::with_vars(r);
    lp.add_constraint((0..r).map(|j| (j, 1.0)).collect(), ComparisonOp::Eq, 1.0);
    for k in 0..columns.nrows() {
        let row: Vec<(usize, f64)> = (0..r).filter(|&j| columns[(k, j)] != 0.0).map(|j| (j, columns[(k, j)])).collect();
        lp.add_constraint(row.clone(), ComparisonOp::Le, point[k] + tol);
        lp.add_constraint(row, ComparisonOp::Ge, point[k] - tol);
    }
    match solve_lp(&lp, &LpOptions::default()) {
        Ok(sol) if sol.status == LpStatus::Optimal => true,
        Ok(sol) if sol.status == LpStatus::Infeasible => false,
        Ok(sol) => {
            log::warn!("hull test ended with status {:?}", sol.status);
            false
        }
        Err(e) => {
            log::warn!("hull test failed: {e}");
            false
        }
    }
}

fn initial_atoms(h: &DMatrix<f64>, cfg: &CompressionConfig, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let r = h.ncols();
    let s = cfg.atoms;
    let picks: Vec<usize> = match &cfg.init {
        InitMethod::Provided(m) => return m.clone(),
        InitMethod::RandomColumns => sample(rng, r, s).into_vec(),
        InitMethod::KMeansPlusPlus => {
            let mut picks = vec![rng.random_range(0..r)];
            let mut nearest: Vec<f64> = (0..r)
                .map(|i| cfg.ground_norm.distance(h.column(i).as_slice(), h.column(picks[0]).as_slice()))
                .collect();
            while picks.len() < s {
                let total: f64 = nearest.iter().sum();
                let next = if total > 0.0 {
                    let mut target = rng.random_range(0.0..total);
                    let mut choice = None;
                    for (i, &d) in nearest.iter().enumerate() {
                        if d > 0.0 {
                            choice = Some(i);
                            if target < d {
                                break;
                            }
                            target -= d;
                        }
                    }
                    choice.unwrap()
                } else {
                    // only duplicates left: take any unused column
                    let unused: Vec<usize> = (0..r).filter(|i| !picks.contains(i)).collect();
                    unused[rng.random_range(0..unused.len())]
                };
                picks.push(next);
                for (i, d) in nearest.iter_mut().enumerate() {
                    let dist = cfg.ground_norm.distance(h.column(i).as_slice(), h.column(next).as_slice());
                    *d = d.min(dist);
                }
                nearest[next] = 0.0;
            }
            picks
        }
    };
    DMatrix::from_fn(h.nrows(), s, |k, j| h[(k, picks[j])])
}

fn inner_transport(alpha: &DVector<f64>, beta: &DVector<f64>, d: &DMatrix<f64>, gamma: f64) -> Result<TransportPlan> {
    let plan = if gamma > 0.0 {
        sinkhorn(alpha, beta, d, &SinkhornOptions::new(gamma))?
    } else {
        solve_exact_ot(alpha, beta, d)?
    };
    if plan.status == PlanStatus::Infeasible {
        return Err(Error::InvalidArgument("inner transport reported infeasibility".into()));
    }
    if plan.status == PlanStatus::IterationLimit {
        log::warn!("inner transport stopped at its iteration limit");
    }
    Ok(plan)
}

/// Block-coordinate descent over atoms and transport plan. Only a local
/// minimum is promised.
pub fn compress(h: &DMatrix<f64>, cfg: &CompressionConfig) -> Result<SyntheticDataset> {
    cfg.validate(h.nrows(), h.ncols())?;
    let (r, s) = (h.ncols(), cfg.atoms);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let alpha = DVector::from_element(r, 1.0 / r as f64);
    let beta = DVector::from_element(s, 1.0 / s as f64);
    let mut atoms = initial_atoms(h, cfg, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let d = cost_matrix(h, &atoms, cfg.ground_norm, 1.0)?.d;
        let plan = inner_transport(&alpha, &beta, &d, cfg.gamma)?;
        let cost = plan.cost;
        let converged = match history.last() {
            Some(&prev) => prev - cost <= cfg.outer_tol * prev,
            None => false,
        };
        history.push(cost);
        if cost <= 0.0 || converged || iterations >= cfg.max_outer_iters {
            break;
        }
        update_atoms(h, &mut atoms, &plan.plan, cfg.ground_norm);
        iterations += 1;
    }
    // eta is always reported for the exact plan
    let d = cost_matrix(h, &atoms, cfg.ground_norm, 1.0)?.d;
    let plan = solve_exact_ot(&alpha, &beta, &d)?;
    if plan.status != PlanStatus::Optimal {
        return Err(Error::InvalidArgument(format!("final transport ended with {:?}", plan.status)));
    }
    log::debug!("compressed {r} columns to {s} atoms in {iterations} updates, eta = {:e}", plan.cost);
    Ok(SyntheticDataset {
        atoms,
        eta: plan.cost,
        plan,
        iterations,
        cost_history: history,
        ground_norm: cfg.ground_norm,
        seed: cfg.seed,
    })
}

fn update_atoms(h: &DMatrix<f64>, atoms: &mut DMatrix<f64>, plan: &DMatrix<f64>, norm: GroundNorm) {
    let rows: Vec<Vec<f64>> = h.row_iter().map(|r| r.iter().cloned().collect()).collect();
    for j in 0..atoms.ncols() {
        let weights: Vec<f64> = plan.column(j).iter().cloned().collect();
        let mass: f64 = weights.iter().sum();
        if mass <= 1e-15 {
            let far = farthest_residual_column(h, atoms, plan, norm);
            log::warn!("atom {j} received no mass; re-seeding at column {far}");
            atoms.set_column(j, &h.column(far));
            continue;
        }
        match norm {
            GroundNorm::Two => {
                let start = atoms.column(j).into_owned();
                let next = weiszfeld(h, &weights, &start, WEISZFELD_TOL, WEISZFELD_MAX_ITER);
                atoms.set_column(j, &next);
            }
            _ => {
                for (k, values) in rows.iter().enumerate() {
                    atoms[(k, j)] = weighted_median(values, &weights);
                }
            }
        }
    }
}

fn farthest_residual_column(h: &DMatrix<f64>, atoms: &DMatrix<f64>, plan: &DMatrix<f64>, norm: GroundNorm) -> usize {
    let residual = |i: usize| -> f64 {
        let mass: f64 = plan.row(i).sum();
        (0..atoms.ncols())
            .map(|j| plan[(i, j)] * norm.distance(h.column(i).as_slice(), atoms.column(j).as_slice()))
            .sum::<f64>()
            / mass.max(f64::MIN_POSITIVE)
    };
    (0..h.ncols()).max_by(|&a, &b| residual(a).total_cmp(&residual(b))).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaPoint {
    pub atoms: usize,
    pub eta: f64,
    pub wall_time: Duration,
}

/// Independent compressions for each atom count, run in parallel. Entry `k`
/// uses seed `template.seed + k`; results keep the input order.
pub fn eta_curve(h: &DMatrix<f64>, atom_counts: &[usize], template: &CompressionConfig) -> Result<Vec<Result<EtaPoint>>> {
    if atom_counts.is_empty() {
        return Err(Error::InvalidArgument("empty list of atom counts".into()));
    }
    Ok(atom_counts
        .par_iter()
        .enumerate()
        .map(|(k, &s)| {
            let mut cfg = template.clone();
            cfg.atoms = s;
            cfg.seed = template.seed.wrapping_add(k as u64);
            let start = Instant::now();
            let ds = compress(h, &cfg)?;
            Ok(EtaPoint {
                atoms: s,
                eta: ds.eta,
                wall_time: start.elapsed(),
            })
        })
        .collect())
}
