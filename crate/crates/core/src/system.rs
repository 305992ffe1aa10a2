//! Discrete-time stochastic LTI plants
//!
//! ```text
//! x(k+1) = A x(k) + B u(k) + E v(k)
//! y(k)   = C x(k) + D u(k) + F v(k)
//! ```
//!
//! used both to generate training data and as the plant inside the
//! receding-horizon loop.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{expm, numerical_rank};
use crate::{Error, Result};

pub const GRAVITY: f64 = 9.81;

/// Per-rotor input box of the quadcopter model (normalized thrust deviation
/// from hover).
pub const QUADCOPTER_INPUT_BOX: (f64, f64) = (-0.7007, 0.2993);

#[derive(Clone, Debug, PartialEq)]
pub struct SystemRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub f: DMatrix<f64>,
    /// Sampling time in seconds.
    pub ts: f64,
}

impl SystemRealization {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        e: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        f: DMatrix<f64>,
        ts: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        let (m, l, q) = (b.ncols(), c.nrows(), e.ncols());
        let checks = [
            ("A", a.shape(), (n, n)),
            ("B", b.shape(), (n, m)),
            ("E", e.shape(), (n, q)),
            ("C", c.shape(), (l, n)),
            ("D", d.shape(), (l, m)),
            ("F", f.shape(), (l, q)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::dims("system matrices", format!("{name} {want:?}"), format!("{got:?}")));
            }
        }
        if n == 0 || m == 0 || l == 0 || q == 0 {
            return Err(Error::InvalidArgument("n, m, l and q must be positive".into()));
        }
        if !(ts > 0.0) {
            return Err(Error::InvalidArgument(format!("sampling time must be positive, got {ts}")));
        }
        Ok(Self { a, b, e, c, d, f, ts })
    }

    /// Noise-free realization: `E = 0`, `F = 0` with a single noise channel.
    pub fn deterministic(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, ts: f64) -> Result<Self> {
        let (n, l) = (a.nrows(), c.nrows());
        Self::new(a, b, DMatrix::zeros(n, 1), c, d, DMatrix::zeros(l, 1), ts)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn l(&self) -> usize {
        self.c.nrows()
    }
    pub fn q(&self) -> usize {
        self.e.ncols()
    }

    /// `[B, AB, ..., A^{n-1} B]`
    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut out = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            out.columns_mut(k * m, m).copy_from(&block);
            block = &self.a * block;
        }
        out
    }

    pub fn is_controllable(&self) -> bool {
        numerical_rank(&self.controllability_matrix()).0 == self.n()
    }

    /// One step of the dynamics. Returns `(x_next, y)`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if x.len() != self.n() {
            return Err(Error::dims("step: state", self.n(), x.len()));
        }
        if u.len() != self.m() {
            return Err(Error::dims("step: input", self.m(), u.len()));
        }
        if v.len() != self.q() {
            return Err(Error::dims("step: noise", self.q(), v.len()));
        }
        let x_next = &self.a * x + &self.b * u + &self.e * v;
        let y = &self.c * x + &self.d * u + &self.f * v;
        Ok((x_next, y))
    }

    pub fn simulate(&self, x0: &DVector<f64>, inputs: &[DVector<f64>], noise: &NoiseModel) -> Result<Trajectory> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("simulate needs at least one input".into()));
        }
        let mut stream = noise.stream(self.q())?;
        let mut x = x0.clone();
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut states = Vec::with_capacity(inputs.len() + 1);
        for u in inputs {
            let v = stream.sample();
            let (next, y) = self.step(&x, u, &v)?;
            states.push(x);
            outputs.push(y);
            x = next;
        }
        states.push(x);
        Ok(Trajectory {
            inputs: inputs.to_vec(),
            outputs,
            states: Some(states),
            k0: 0,
        })
    }

    /// Loads the plain-text model format: header `n m l q Ts`, then the
    /// row-major matrices A, B, E, C, D, F separated by blank lines.
    pub fn read_model<R: Read>(reader: R) -> Result<Self> {
        let mut lines = Vec::new();
        for line in BufReader::new(reader).lines() {
            lines.push(line?);
        }
        let mut it = lines.iter().map(|l| l.trim()).filter(|l| !l.starts_with('#'));
        let header = it.by_ref().find(|l| !l.is_empty()).ok_or_else(|| Error::Parse("empty model file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!("model header must be `n m l q Ts`, got `{header}`")));
        }
        let dim = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("bad dimension `{s}`: {e}")));
        let (n, m, l, q) = (dim(fields[0])?, dim(fields[1])?, dim(fields[2])?, dim(fields[3])?);
        let ts: f64 = fields[4].parse().map_err(|e| Error::Parse(format!("bad Ts `{}`: {e}", fields[4])))?;

        let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut current: Vec<Vec<f64>> = Vec::new();
        for line in it {
            if line.is_empty() {
                if !current.is_empty() {
                    blocks.push(std::mem::take(&mut current));
                }
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("bad number `{t}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            current.push(row);
        }
        if !current.is_empty() {
            blocks.push(current);
        }
        let shapes = [(n, n), (n, m), (n, q), (l, n), (l, m), (l, q)];
        if blocks.len() != shapes.len() {
            return Err(Error::Parse(format!("expected 6 matrices, found {}", blocks.len())));
        }
        let mut mats = Vec::with_capacity(6);
        for (block, (r, c)) in blocks.into_iter().zip(shapes) {
            if block.len() != r || block.iter().any(|row| row.len() != c) {
                return Err(Error::Parse(format!("matrix block does not have shape {r}x{c}")));
            }
            mats.push(DMatrix::from_row_iterator(r, c, block.into_iter().flatten()));
        }
        let mut mats = mats.into_iter();
        let mut next = || mats.next().unwrap();
        Self::new(next(), next(), next(), next(), next(), next(), ts)
    }

    pub fn write_model<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = format!("{} {} {} {} {}\n", self.n(), self.m(), self.l(), self.q(), self.ts);
        for mat in [&self.a, &self.b, &self.e, &self.c, &self.d, &self.f] {
            out.push('\n');
            for i in 0..mat.nrows() {
                let row: Vec<String> = (0..mat.ncols()).map(|j| format!("{}", mat[(i, j)])).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    GaussianIid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// One entry per noise channel, or a single entry broadcast to all.
    pub stddev: Vec<f64>,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { kind: NoiseKind::None, stddev: vec![0.0], seed: 0 }
    }

    pub fn gaussian(stddev: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::GaussianIid, stddev: vec![stddev], seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn stream(&self, q: usize) -> Result<NoiseStream> {
        if self.stddev.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument("noise stddev must be nonnegative".into()));
        }
        let stddev = match self.stddev.len() {
            1 => vec![self.stddev[0]; q],
            len if len == q => self.stddev.clone(),
            len => return Err(Error::dims("noise stddev", q, len)),
        };
        Ok(NoiseStream {
            kind: self.kind,
            stddev,
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        })
    }
}

/// Owned random stream for one simulation pass.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    kind: NoiseKind,
    stddev: Vec<f64>,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn sample(&mut self) -> DVector<f64> {
        match self.kind {
            NoiseKind::None => DVector::zeros(self.stddev.len()),
            NoiseKind::GaussianIid => {
                let rng = &mut self.rng;
                DVector::from_iterator(
                    self.stddev.len(),
                    self.stddev.iter().map(|s| {
                        let z: f64 = StandardNormal.sample(rng);
                        s * z
                    }),
                )
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    /// Simulation only; `states[k]` is `x(k0 + k)` with one extra final entry.
    pub states: Option<Vec<DVector<f64>>>,
    pub k0: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Writes `u_1..u_m,y_1..y_l` with one row per time step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.inputs.first().map_or(0, |u| u.len());
        let l = self.outputs.first().map_or(0, |y| y.len());
        let header: Vec<String> = (1..=m).map(|i| format!("u_{i}")).chain((1..=l).map(|i| format!("y_{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (u, y) in self.inputs.iter().zip(&self.outputs) {
            let row: Vec<String> = u.iter().chain(y.iter()).map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty trajectory file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let m = cols.iter().filter(|c| c.starts_with("u_")).count();
        let l = cols.iter().filter(|c| c.starts_with("y_")).count();
        if m + l != cols.len() || cols[..m].iter().any(|c| !c.starts_with("u_")) {
            return Err(Error::Parse(format!("unexpected trajectory header `{header}`")));
        }
        let (mut inputs, mut outputs) = (Vec::new(), Vec::new());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("bad number `{t}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != m + l {
                return Err(Error::Parse(format!("row has {} fields, expected {}", vals.len(), m + l)));
            }
            inputs.push(DVector::from_column_slice(&vals[..m]));
            outputs.push(DVector::from_column_slice(&vals[m..]));
        }
        Ok(Self { inputs, outputs, states: None, k0: 0 })
    }
}

/// Zero-order-hold discretization of `(A_c, B_c)`.
pub fn zoh_discretize(a_c: &DMatrix<f64>, b_c: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (a_c.nrows(), b_c.ncols());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a_c * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(b_c * ts));
    let e = expm(&aug);
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

/// Hover linearization of a plus-configuration quadrotor.
///
/// State `(x, y, z, vx, vy, vz, roll, pitch, yaw, p, q, r)`, four rotor inputs
/// given as normalized thrust deviations from hover (hover command 0.7007 of
/// full thrust), full state measurement. Noise enters every measurement
/// channel through `F = I`; the standard deviation lives in [`NoiseModel`].
pub fn quadcopter_model(ts: f64) -> Result<SystemRealization> {
    if !(ts > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling time must be positive, got {ts}")));
    }
    const MASS: f64 = 1.0;
    const ARM: f64 = 0.2;
    const IXX: f64 = 0.01;
    const IYY: f64 = 0.01;
    const IZZ: f64 = 0.02;
    const YAW_COEFF: f64 = 0.02;
    let hover_fraction = -QUADCOPTER_INPUT_BOX.0;
    let max_thrust = MASS * GRAVITY / (4.0 * hover_fraction);

    let mut a = DMatrix::zeros(12, 12);
    for i in 0..3 {
        a[(i, i + 3)] = 1.0;
        a[(i + 6, i + 9)] = 1.0;
    }
    a[(3, 7)] = GRAVITY; // pitch tilts thrust along +x
    a[(4, 6)] = -GRAVITY; // roll tilts thrust along -y

    let mut b = DMatrix::zeros(12, 4);
    for j in 0..4 {
        b[(5, j)] = max_thrust / MASS;
    }
    let roll = ARM * max_thrust / IXX;
    let pitch = ARM * max_thrust / IYY;
    let yaw = YAW_COEFF * max_thrust / IZZ;
    b[(9, 1)] = roll;
    b[(9, 3)] = -roll;
    b[(10, 2)] = pitch;
    b[(10, 0)] = -pitch;
    for (j, s) in [1.0, -1.0, 1.0, -1.0].into_iter().enumerate() {
        b[(11, j)] = s * yaw;
    }

    let (ad, bd) = zoh_discretize(&a, &b, ts);
    SystemRealization::new(
        ad,
        bd,
        DMatrix::zeros(12, 12),
        DMatrix::identity(12, 12),
        DMatrix::zeros(12, 4),
        DMatrix::identity(12, 12),
        ts,
    )
}

/// 1-D double integrator with position measurement, `F = 1` on the output.
pub fn double_integrator(ts: f64) -> Result<SystemRealization> {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let (ad, bd) = zoh_discretize(&a, &b, ts);
    SystemRealization::new(
        ad,
        bd,
        DMatrix::zeros(2, 1),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1),
        ts,
    )
}
