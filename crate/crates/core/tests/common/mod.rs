#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use syndeepc::hankel::{io_data_matrix, stack_trajectory};
use syndeepc::system::{NoiseModel, SystemRealization};

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    })
}

/// Random controllable system with spectral radius 0.9.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize, l: usize) -> SystemRealization {
    loop {
        let mut a = gaussian_matrix(rng, n, n);
        let radius = a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if radius > 1e-6 {
            a *= 0.9 / radius;
        }
        let b = gaussian_matrix(rng, n, m);
        let c = gaussian_matrix(rng, l, n);
        let d = gaussian_matrix(rng, l, m);
        let sys = SystemRealization::deterministic(a, b, c, d, 1.0).unwrap();
        if sys.is_controllable() {
            return sys;
        }
    }
}

pub fn uniform_inputs(rng: &mut ChaCha8Rng, m: usize, len: usize, lo: f64, hi: f64) -> Vec<DVector<f64>> {
    (0..len)
        .map(|_| DVector::from_fn(m, |_, _| rng.random_range(lo..hi)))
        .collect()
}

/// Noise-free data matrix of depth `depth` from `len` uniform random inputs.
pub fn data_matrix(rng: &mut ChaCha8Rng, sys: &SystemRealization, depth: usize, len: usize) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let u = uniform_inputs(rng, sys.m(), len, -1.0, 1.0);
    let x0 = DVector::from_fn(sys.n(), |_, _| rng.random_range(-1.0..1.0));
    let traj = sys.simulate(&x0, &u, &NoiseModel::none()).unwrap();
    (io_data_matrix(&traj.inputs, &traj.outputs, depth).unwrap(), u)
}

/// Unit-norm stacked trajectory of a fresh run of `sys`.
pub fn fresh_trajectory(rng: &mut ChaCha8Rng, sys: &SystemRealization, depth: usize) -> DVector<f64> {
    let u = uniform_inputs(rng, sys.m(), depth, -1.0, 1.0);
    let x0 = gaussian_matrix(rng, sys.n(), 1).column(0).into_owned();
    let traj = sys.simulate(&x0, &u, &NoiseModel::none()).unwrap();
    let w = stack_trajectory(&traj.inputs, &traj.outputs);
    let norm = w.norm();
    w / norm
}

/// Minimum cost over all vertices of the transportation polytope.
///
/// Every vertex is the flow on a feasible spanning-tree basis of the complete
/// bipartite graph, and the feasible bases are connected by pivots. Starting
/// from the northwest-corner basis, every pivot (all entering cells, all tied
/// leaving cells) is followed until no new basis appears.
pub fn brute_force_ot(alpha: &DVector<f64>, beta: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let (n, m) = d.shape();
    assert!(n * m <= 64 && n + m <= MAX_NODES);
    let start = northwest_corner(alpha, beta);
    let mut seen = std::collections::HashSet::from([start]);
    let mut queue = vec![start];
    let mut best = f64::INFINITY;
    while let Some(basis) = queue.pop() {
        let tree = RootedTree::new(alpha, beta, basis, n, m).expect("bases in the search are feasible trees");
        let cost: f64 = (0..n * m).filter(|c| basis >> c & 1 == 1).map(|c| tree.flow[c] * d[(c / m, c % m)]).sum();
        best = best.min(cost);
        let mut path = [0usize; MAX_NODES];
        for entering in (0..n * m).filter(|c| basis >> c & 1 == 0) {
            let len = tree.path(n + entering % m, entering / m, &mut path);
            // cells at even positions lose flow
            let theta = path[..len].iter().step_by(2).map(|&c| tree.flow[c]).fold(f64::INFINITY, f64::min);
            for &leaving in path[..len].iter().step_by(2) {
                if tree.flow[leaving] <= theta + 1e-15 {
                    let next = basis & !(1u64 << leaving) | (1u64 << entering);
                    if seen.insert(next) {
                        queue.push(next);
                    }
                }
            }
        }
    }
    best
}

const MAX_NODES: usize = 12;

fn northwest_corner(alpha: &DVector<f64>, beta: &DVector<f64>) -> u64 {
    let (n, m) = (alpha.len(), beta.len());
    let (mut a, mut b) = (alpha[0], beta[0]);
    let (mut i, mut j) = (0, 0);
    let mut basis = 0u64;
    loop {
        basis |= 1 << (i * m + j);
        if i == n - 1 && j == m - 1 {
            return basis;
        }
        if (a <= b && i < n - 1) || j == m - 1 {
            b -= a;
            i += 1;
            a = alpha[i];
        } else {
            a -= b;
            j += 1;
            b = beta[j];
        }
    }
}

/// Spanning tree rooted at row node 0, with flows from subtree balances.
struct RootedTree {
    parent: [usize; MAX_NODES],
    parent_cell: [usize; MAX_NODES],
    depth: [usize; MAX_NODES],
    flow: [f64; 64],
}

impl RootedTree {
    /// `None` unless the cells form a spanning tree with nonnegative flows.
    fn new(alpha: &DVector<f64>, beta: &DVector<f64>, basis: u64, n: usize, m: usize) -> Option<Self> {
        let nodes = n + m;
        if basis.count_ones() as usize != nodes - 1 {
            return None;
        }
        let mut adj = [[(0usize, 0usize); MAX_NODES]; MAX_NODES];
        let mut cnt = [0usize; MAX_NODES];
        for c in (0..n * m).filter(|c| basis >> c & 1 == 1) {
            let (r, s) = (c / m, n + c % m);
            adj[r][cnt[r]] = (s, c);
            cnt[r] += 1;
            adj[s][cnt[s]] = (r, c);
            cnt[s] += 1;
        }
        let mut t = RootedTree {
            parent: [usize::MAX; MAX_NODES],
            parent_cell: [0; MAX_NODES],
            depth: [0; MAX_NODES],
            flow: [0.0; 64],
        };
        let mut order = [0usize; MAX_NODES];
        let mut seen = [false; MAX_NODES];
        seen[0] = true;
        let (mut head, mut tail) = (0, 1);
        while head < tail {
            let v = order[head];
            head += 1;
            for &(w, c) in &adj[v][..cnt[v]] {
                if !seen[w] {
                    seen[w] = true;
                    t.parent[w] = v;
                    t.parent_cell[w] = c;
                    t.depth[w] = t.depth[v] + 1;
                    order[tail] = w;
                    tail += 1;
                }
            }
        }
        if tail != nodes {
            return None;
        }
        let mut sum = [0.0; MAX_NODES];
        for i in 0..n {
            sum[i] = alpha[i];
        }
        for j in 0..m {
            sum[n + j] = -beta[j];
        }
        for &v in order[1..nodes].iter().rev() {
            let flow = if v < n { sum[v] } else { -sum[v] };
            if flow < -1e-12 {
                return None;
            }
            t.flow[t.parent_cell[v]] = flow.max(0.0);
            sum[t.parent[v]] += sum[v];
        }
        Some(t)
    }

    /// Writes the cells on the path from node `from` to node `to` into `out`.
    fn path(&self, from: usize, to: usize, out: &mut [usize; MAX_NODES]) -> usize {
        let (mut a, mut b) = (from, to);
        let mut tail = [0usize; MAX_NODES];
        let (mut len, mut tail_len) = (0, 0);
        while a != b {
            if self.depth[a] >= self.depth[b] {
                out[len] = self.parent_cell[a];
                len += 1;
                a = self.parent[a];
            } else {
                tail[tail_len] = self.parent_cell[b];
                tail_len += 1;
                b = self.parent[b];
            }
        }
        for k in (0..tail_len).rev() {
            out[len] = tail[k];
            len += 1;
        }
        len
    }
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let w = DVector::from_fn(n, |_, _| rng.random_range(0.05..1.0));
    let s = w.sum();
    w / s
}

/// Random transport instance with atoms in the plane under the 1-norm.
pub fn random_ot_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let x = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(2, m, |_, _| rng.random_range(-1.0..1.0));
    let d = syndeepc::transport::cost_matrix(&x, &y, syndeepc::transport::GroundNorm::One, 1.0).unwrap().d;
    (random_simplex(rng, n), random_simplex(rng, m), d)
}

/// 20x40 Hankel matrix of a noisy random SISO system (depth 10, 49 samples).
pub fn noisy_siso_hankel(seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = random_system(&mut rng, 3, 1, 1);
    let u = uniform_inputs(&mut rng, 1, 49, -1.0, 1.0);
    let x0 = DVector::zeros(3);
    let sys = SystemRealization::new(
        sys.a.clone(),
        sys.b.clone(),
        DMatrix::zeros(3, 1),
        sys.c.clone(),
        sys.d.clone(),
        DMatrix::identity(1, 1),
        1.0,
    )
    .unwrap();
    let traj = sys.simulate(&x0, &u, &NoiseModel::gaussian(0.05, seed)).unwrap();
    io_data_matrix(&traj.inputs, &traj.outputs, 10).unwrap()
}

use syndeepc::deepc::{CostSpec, InputBox};
use syndeepc::hankel::{HankelBlocks, InitialWindow};
use syndeepc::lp::{solve_lp, ComparisonOp, LinearProgram, LpOptions, LpStatus};

/// Noise-free SISO data blocks plus a consistent initial window and the
/// state reached at the end of that window.
pub struct SisoInstance {
    pub sys: SystemRealization,
    pub blocks: HankelBlocks,
    pub window: InitialWindow,
    pub state: DVector<f64>,
}

pub fn siso_instance(seed: u64, n: usize, ki: usize, k: usize, len: usize, noise: f64) -> SisoInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let det = random_system(&mut rng, n, 1, 1);
    let sys = SystemRealization::new(
        det.a.clone(),
        det.b.clone(),
        DMatrix::zeros(n, 1),
        det.c.clone(),
        det.d.clone(),
        DMatrix::identity(1, 1),
        1.0,
    )
    .unwrap();
    let u = uniform_inputs(&mut rng, 1, len, -1.0, 1.0);
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let noise_model = if noise > 0.0 { NoiseModel::gaussian(noise, seed) } else { NoiseModel::none() };
    let traj = sys.simulate(&x0, &u, &noise_model).unwrap();
    let h = io_data_matrix(&traj.inputs, &traj.outputs, ki + k).unwrap();
    let blocks = HankelBlocks::split(&h, 1, 1, ki, k).unwrap();
    // a fresh noise-free window from another initial state
    let u_w = uniform_inputs(&mut rng, 1, ki, -0.5, 0.5);
    let x_w = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let tw = sys.simulate(&x_w, &u_w, &NoiseModel::none()).unwrap();
    let window = InitialWindow::from_tail(&tw.inputs, &tw.outputs, ki).unwrap();
    let state = tw.states.as_ref().unwrap().last().unwrap().clone();
    SisoInstance { sys, blocks, window, state }
}

/// Finite-horizon optimum from the model: `y = O x + Gamma u`, minimized
/// over `u` in the box as an LP in `(u, e+, e-)`.
pub fn model_oracle(sys: &SystemRealization, x: &DVector<f64>, cost: &CostSpec, bx: &InputBox, k: usize) -> f64 {
    let n = sys.n();
    let mut obs = DMatrix::zeros(k, n);
    let mut gamma = DMatrix::zeros(k, k);
    let mut apow = DMatrix::identity(n, n);
    // markov[0] = D, markov[t] = C A^{t-1} B
    let mut markov = vec![sys.d[(0, 0)]; k];
    for t in 0..k {
        obs.row_mut(t).copy_from(&(&sys.c * &apow).row(0));
        if t + 1 < k {
            markov[t + 1] = (&sys.c * &apow * &sys.b)[(0, 0)];
        }
        apow = &apow * &sys.a;
    }
    for t in 0..k {
        for s in 0..=t {
            gamma[(t, s)] = markov[t - s];
        }
    }
    let free = &obs * x;
    let mut lp = LinearProgram::new();
    let u: Vec<usize> = (0..k).map(|_| lp.add_var(0.0, bx.lower[0], bx.upper[0])).collect();
    // |u| through epigraph rows
    for &ut in &u {
        let a = lp.add_var(1.0, 0.0, f64::INFINITY);
        lp.add_constraint(vec![(a, 1.0), (ut, -1.0)], ComparisonOp::Ge, 0.0);
        lp.add_constraint(vec![(a, 1.0), (ut, 1.0)], ComparisonOp::Ge, 0.0);
    }
    for t in 0..k {
        let e = lp.add_var(cost.c, 0.0, f64::INFINITY);
        let mut row: Vec<(usize, f64)> = (0..=t).map(|s| (u[s], gamma[(t, s)])).collect();
        let target = cost.reference[t] - free[t];
        // e >= |Gamma u - target|
        let mut hi = row.clone();
        hi.push((e, -1.0));
        lp.add_constraint(hi, ComparisonOp::Le, target);
        for c in row.iter_mut() {
            c.1 = -c.1;
        }
        row.push((e, -1.0));
        lp.add_constraint(row, ComparisonOp::Le, -target);
    }
    let sol = solve_lp(&lp, &LpOptions::default()).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    sol.objective_value
}
