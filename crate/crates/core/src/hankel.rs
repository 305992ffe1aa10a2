//! Block-Hankel data matrices, persistency of excitation and the
//! backward/forward split used by DeePC.
//!
//! Stacked input/output data matrices follow one column convention everywhere
//! in the crate: the `m * L` input rows (time-major) come first, followed by
//! the `l * L` output rows, where `L = Ki + K`. Synthetic atoms produced by
//! compression live in the same row space, so [`HankelBlocks::split`] accepts
//! either.

use nalgebra::{DMatrix, DVector};

use crate::linalg::numerical_rank;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct HankelMatrix {
    /// `(w * depth) x (len - depth + 1)`
    pub data: DMatrix<f64>,
    /// Per-sample signal dimension.
    pub w: usize,
    pub depth: usize,
    /// Source signal length.
    pub len: usize,
}

impl HankelMatrix {
    /// Block `(i, j)`, equal to `signal[i + j]`.
    pub fn block(&self, i: usize, j: usize) -> DVector<f64> {
        self.data.view((i * self.w, j), (self.w, 1)).column(0).into_owned()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }
}

pub fn build_hankel(signal: &[DVector<f64>], depth: usize) -> Result<HankelMatrix> {
    let len = signal.len();
    if depth == 0 {
        return Err(Error::InvalidArgument("Hankel depth must be positive".into()));
    }
    if len < depth {
        return Err(Error::HorizonExceedsData { depth, len });
    }
    let w = signal[0].len();
    if let Some(bad) = signal.iter().find(|s| s.len() != w) {
        return Err(Error::dims("build_hankel: sample", w, bad.len()));
    }
    let cols = len - depth + 1;
    let data = DMatrix::from_fn(w * depth, cols, |r, j| signal[j + r / w][r % w]);
    Ok(HankelMatrix { data, w, depth, len })
}

/// Stacked input/output data matrix `[U; Y]` of depth `depth`.
pub fn io_data_matrix(inputs: &[DVector<f64>], outputs: &[DVector<f64>], depth: usize) -> Result<DMatrix<f64>> {
    if inputs.len() != outputs.len() {
        return Err(Error::dims("io_data_matrix: trajectory length", inputs.len(), outputs.len()));
    }
    let hu = build_hankel(inputs, depth)?;
    let hy = build_hankel(outputs, depth)?;
    let mut data = DMatrix::zeros(hu.data.nrows() + hy.data.nrows(), hu.ncols());
    data.rows_mut(0, hu.data.nrows()).copy_from(&hu.data);
    data.rows_mut(hu.data.nrows(), hy.data.nrows()).copy_from(&hy.data);
    Ok(data)
}

/// Stacks a trajectory window into the data-matrix column convention.
pub fn stack_trajectory(inputs: &[DVector<f64>], outputs: &[DVector<f64>]) -> DVector<f64> {
    let flat: Vec<f64> = inputs.iter().chain(outputs).flat_map(|v| v.iter().copied()).collect();
    DVector::from_vec(flat)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeReport {
    pub persistently_exciting: bool,
    pub rank: usize,
    pub required_rank: usize,
    pub reason: Option<String>,
}

/// Checks whether `signal` is persistently exciting of the given order, i.e.
/// whether its depth-`order` Hankel matrix has full row rank `w * order`.
pub fn is_persistently_exciting(signal: &[DVector<f64>], order: usize) -> PeReport {
    let w = signal.first().map_or(0, |s| s.len());
    let required_rank = w * order;
    let len = signal.len();
    let min_len = ((w + 1) * order).saturating_sub(1);
    if order == 0 || len < order || w == 0 {
        return PeReport {
            persistently_exciting: false,
            rank: 0,
            required_rank,
            reason: Some(format!("N < (w+1)K-1 cannot hold: N = {len}, need {min_len}")),
        };
    }
    let rank = match build_hankel(signal, order) {
        Ok(h) => numerical_rank(&h.data).0,
        Err(_) => 0,
    };
    let reason = if len < min_len {
        Some(format!("N < (w+1)K-1 cannot hold: N = {len}, need {min_len}"))
    } else if rank < required_rank {
        Some(format!("rank {rank} < {required_rank}"))
    } else {
        None
    };
    PeReport {
        persistently_exciting: reason.is_none(),
        rank,
        required_rank,
        reason,
    }
}

/// Shortest data length for an input of dimension `m` to be persistently
/// exciting of order `n + ki + k`.
pub fn min_data_length(m: usize, n: usize, ki: usize, k: usize) -> usize {
    (m + 1) * (n + ki + k) - 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct HankelBlocks {
    pub ub: DMatrix<f64>,
    pub yb: DMatrix<f64>,
    pub uf: DMatrix<f64>,
    pub yf: DMatrix<f64>,
    pub m: usize,
    pub l: usize,
    pub ki: usize,
    pub k: usize,
}

impl HankelBlocks {
    /// Splits a data matrix with `(m + l) * (ki + k)` rows into the backward
    /// (first `ki` block rows) and forward (last `k` block rows) parts.
    pub fn split(data: &DMatrix<f64>, m: usize, l: usize, ki: usize, k: usize) -> Result<Self> {
        let depth = ki + k;
        if data.nrows() != (m + l) * depth {
            return Err(Error::dims("split_blocks: rows", (m + l) * depth, data.nrows()));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("prediction horizon K must be positive".into()));
        }
        let u = data.rows(0, m * depth);
        let y = data.rows(m * depth, l * depth);
        Ok(Self {
            ub: u.rows(0, m * ki).into_owned(),
            uf: u.rows(m * ki, m * k).into_owned(),
            yb: y.rows(0, l * ki).into_owned(),
            yf: y.rows(l * ki, l * k).into_owned(),
            m,
            l,
            ki,
            k,
        })
    }

    pub fn ncols(&self) -> usize {
        self.uf.ncols()
    }

    /// Reassembles the data matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let r = self.ncols();
        let (m, l, ki, k) = (self.m, self.l, self.ki, self.k);
        let mut out = DMatrix::zeros((m + l) * (ki + k), r);
        out.rows_mut(0, m * ki).copy_from(&self.ub);
        out.rows_mut(m * ki, m * k).copy_from(&self.uf);
        out.rows_mut(m * (ki + k), l * ki).copy_from(&self.yb);
        out.rows_mut(m * (ki + k) + l * ki, l * k).copy_from(&self.yf);
        out
    }
}

/// The last `Ki` measured inputs and outputs, stacked time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialWindow {
    pub u_ini: DVector<f64>,
    pub y_ini: DVector<f64>,
}

impl InitialWindow {
    pub fn new(u_ini: DVector<f64>, y_ini: DVector<f64>, m: usize, l: usize, ki: usize) -> Result<Self> {
        if u_ini.len() != m * ki {
            return Err(Error::dims("initial window: u_ini", m * ki, u_ini.len()));
        }
        if y_ini.len() != l * ki {
            return Err(Error::dims("initial window: y_ini", l * ki, y_ini.len()));
        }
        Ok(Self { u_ini, y_ini })
    }

    /// Window built from the last `ki` samples of the given sequences.
    pub fn from_tail(inputs: &[DVector<f64>], outputs: &[DVector<f64>], ki: usize) -> Result<Self> {
        if inputs.len() < ki || outputs.len() < ki {
            return Err(Error::InvalidArgument(format!("need {ki} samples for the initial window")));
        }
        let u = &inputs[inputs.len() - ki..];
        let y = &outputs[outputs.len() - ki..];
        Ok(Self {
            u_ini: DVector::from_iterator(u.iter().map(|v| v.len()).sum(), u.iter().flat_map(|v| v.iter().copied())),
            y_ini: DVector::from_iterator(y.iter().map(|v| v.len()).sum(), y.iter().flat_map(|v| v.iter().copied())),
        })
    }

    /// Drops the oldest sample and appends `(u, y)`.
    pub fn shift(&mut self, u: &DVector<f64>, y: &DVector<f64>) {
        fn roll(buf: &mut DVector<f64>, new: &DVector<f64>) {
            let w = new.len();
            let len = buf.len();
            if len == 0 {
                return;
            }
            for i in 0..len - w {
                buf[i] = buf[i + w];
            }
            buf.rows_mut(len - w, w).copy_from(new);
        }
        roll(&mut self.u_ini, u);
        roll(&mut self.y_ini, y);
    }
}

/// Two-norm of the least-squares residual of `trajectory` against the column
/// space of `data`.
pub fn span_residual(data: &DMatrix<f64>, trajectory: &DVector<f64>) -> Result<f64> {
    if data.nrows() != trajectory.len() {
        return Err(Error::dims("span_residual", data.nrows(), trajectory.len()));
    }
    if data.ncols() == 0 {
        return Ok(trajectory.norm());
    }
    let svd = data.clone().svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = data.nrows().max(data.ncols()) as f64 * f64::EPSILON * smax;
    let mut residual = trajectory.clone();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let ui = u.column(i);
            let coef = ui.dot(&residual);
            residual.axpy(-coef, &ui, 1.0);
        }
    }
    Ok(residual.norm())
}
