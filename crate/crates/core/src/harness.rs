//! Experiment plumbing: configuration, training-data collection, the offline
//! compression step and the receding-horizon loop against a simulated plant.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::compress::{compress, CompressionConfig, InitMethod};
use crate::deepc::{build_robust, solve_robust, AmbiguitySpec, CostSpec, InputBox};
use crate::error::{Error, Result};
use crate::hankel::{io_data_matrix, is_persistently_exciting, min_data_length, HankelBlocks, InitialWindow};
use crate::lp::LpStatus;
use crate::system::{double_integrator, quadcopter_model, NoiseModel, SystemRealization, Trajectory, QUADCOPTER_INPUT_BOX};
use crate::transport::GroundNorm;

#[derive(Debug, Clone, PartialEq)]
pub enum SystemSource {
    Quadcopter,
    DoubleIntegrator,
    ModelFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSpec {
    /// Lissajous figure-8 in the first two tracked channels, constant
    /// altitude in the third.
    Figure8 { period: f64, amplitude: f64, altitude: f64 },
    /// One constant value per tracked channel.
    Constant(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemSource,
    pub ts: f64,
    pub ki: usize,
    pub k: usize,
    /// Training data length N.
    pub data_length: usize,
    /// Standard deviation of the measurement noise on every channel.
    pub noise_std: f64,
    pub c: f64,
    pub rho: f64,
    /// Output channels entering the tracking cost; `None` tracks the
    /// positions of the quadcopter or every channel of other systems.
    pub tracked: Option<Vec<usize>>,
    pub reference: ReferenceSpec,
    /// Input box, identical for every input component.
    pub input_box: Option<(f64, f64)>,
    pub eps_beta: f64,
    /// Offline compression; `None` runs on the full data.
    pub compression: Option<CompressionConfig>,
    pub steps: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemSource::Quadcopter,
            ts: 0.05,
            ki: 1,
            k: 30,
            data_length: 214,
            noise_std: 2f64.powf(-3.5),
            c: 200.0,
            rho: 1e5,
            tracked: None,
            reference: ReferenceSpec::Figure8 {
                period: 20.0,
                amplitude: 1.0,
                altitude: 1.0,
            },
            input_box: None,
            eps_beta: 1e-3,
            compression: None,
            steps: 200,
            seed: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses `section.key = value` lines on top of the defaults. Blank lines
    /// and `#` comments are skipped.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected 'key = value'", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }

    fn compression_mut(&mut self) -> &mut CompressionConfig {
        let seed = self.seed;
        self.compression.get_or_insert_with(|| {
            let mut c = CompressionConfig::new(1);
            c.seed = seed;
            c
        })
    }

    /// Sets one key; used both by the file parser and by command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "system.kind" => {
                self.system = match value {
                    "quadcopter" => SystemSource::Quadcopter,
                    "double-integrator" => SystemSource::DoubleIntegrator,
                    "file" => match &self.system {
                        SystemSource::ModelFile(p) => SystemSource::ModelFile(p.clone()),
                        _ => SystemSource::ModelFile(PathBuf::new()),
                    },
                    other => return Err(Error::Parse(format!("unknown system kind '{other}'"))),
                }
            }
            "system.model_file" => self.system = SystemSource::ModelFile(PathBuf::from(value)),
            "system.ts" => self.ts = parse_num(key, value)?,
            "horizon.ki" => self.ki = parse_num(key, value)?,
            "horizon.k" => self.k = parse_num(key, value)?,
            "data.length" => self.data_length = parse_num(key, value)?,
            "data.noise_std" => self.noise_std = parse_num(key, value)?,
            "cost.c" => self.c = parse_num(key, value)?,
            "cost.rho" => self.rho = parse_num(key, value)?,
            "cost.tracked" => {
                self.tracked = if value == "all" { None } else { Some(parse_list(key, value)?) };
            }
            "reference.kind" => {
                self.reference = match value {
                    "figure8" => ReferenceSpec::Figure8 {
                        period: 20.0,
                        amplitude: 1.0,
                        altitude: 1.0,
                    },
                    "constant" => ReferenceSpec::Constant(vec![0.0]),
                    other => return Err(Error::Parse(format!("unknown reference kind '{other}'"))),
                }
            }
            "reference.period" | "reference.amplitude" | "reference.altitude" => {
                let v: f64 = parse_num(key, value)?;
                match &mut self.reference {
                    ReferenceSpec::Figure8 {
                        period,
                        amplitude,
                        altitude,
                    } => match key {
                        "reference.period" => *period = v,
                        "reference.amplitude" => *amplitude = v,
                        _ => *altitude = v,
                    },
                    _ => return Err(Error::Parse(format!("'{key}' needs reference.kind = figure8"))),
                }
            }
            "reference.value" => self.reference = ReferenceSpec::Constant(parse_list(key, value)?),
            "input.box" => {
                let v: Vec<f64> = parse_list(key, value)?;
                if v.len() != 2 {
                    return Err(Error::Parse("input.box expects 'lower,upper'".into()));
                }
                self.input_box = Some((v[0], v[1]));
            }
            "robust.eps_beta" => self.eps_beta = parse_num(key, value)?,
            "compress.atoms" => {
                let s: usize = parse_num(key, value)?;
                if s == 0 {
                    self.compression = None;
                } else {
                    self.compression_mut().atoms = s;
                }
            }
            "compress.norm" => self.compression_mut().ground_norm = value.parse()?,
            "compress.init" => self.compression_mut().init = value.parse()?,
            "compress.max_iters" => self.compression_mut().max_outer_iters = parse_num(key, value)?,
            "compress.tol" => self.compression_mut().outer_tol = parse_num(key, value)?,
            "compress.gamma" => self.compression_mut().gamma = parse_num(key, value)?,
            "compress.seed" => self.compression_mut().seed = parse_num(key, value)?,
            "run.steps" => self.steps = parse_num(key, value)?,
            "run.seed" => self.seed = parse_num(key, value)?,
            "run.output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Parse(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Canonical `key = value` text; parsing it back gives the same config.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        match &self.system {
            SystemSource::Quadcopter => kv("system.kind", "quadcopter".into()),
            SystemSource::DoubleIntegrator => kv("system.kind", "double-integrator".into()),
            SystemSource::ModelFile(p) => kv("system.model_file", p.display().to_string()),
        }
        kv("system.ts", self.ts.to_string());
        kv("horizon.ki", self.ki.to_string());
        kv("horizon.k", self.k.to_string());
        kv("data.length", self.data_length.to_string());
        kv("data.noise_std", self.noise_std.to_string());
        kv("cost.c", self.c.to_string());
        kv("cost.rho", self.rho.to_string());
        kv("cost.tracked", self.tracked.as_ref().map_or("all".into(), |t| join(t)));
        match &self.reference {
            ReferenceSpec::Figure8 {
                period,
                amplitude,
                altitude,
            } => {
                kv("reference.kind", "figure8".into());
                kv("reference.period", period.to_string());
                kv("reference.amplitude", amplitude.to_string());
                kv("reference.altitude", altitude.to_string());
            }
            ReferenceSpec::Constant(v) => kv("reference.value", join(v)),
        }
        if let Some((lo, hi)) = self.input_box {
            kv("input.box", format!("{lo},{hi}"));
        }
        kv("robust.eps_beta", self.eps_beta.to_string());
        match &self.compression {
            None => kv("compress.atoms", "0".into()),
            Some(c) => {
                kv("compress.atoms", c.atoms.to_string());
                kv(
                    "compress.norm",
                    match c.ground_norm {
                        GroundNorm::One => "one",
                        GroundNorm::Two => "two",
                        GroundNorm::Inf => "inf",
                    }
                    .into(),
                );
                kv(
                    "compress.init",
                    match c.init {
                        InitMethod::RandomColumns => "random-columns",
                        _ => "kmeans++",
                    }
                    .into(),
                );
                kv("compress.max_iters", c.max_outer_iters.to_string());
                kv("compress.tol", c.outer_tol.to_string());
                kv("compress.gamma", c.gamma.to_string());
                kv("compress.seed", c.seed.to_string());
            }
        }
        kv("run.steps", self.steps.to_string());
        kv("run.seed", self.seed.to_string());
        kv("run.output_dir", self.output_dir.display().to_string());
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_kv().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn plant(&self) -> Result<SystemRealization> {
        match &self.system {
            SystemSource::Quadcopter => quadcopter_model(self.ts),
            SystemSource::DoubleIntegrator => double_integrator(self.ts),
            SystemSource::ModelFile(p) => SystemRealization::read_model(std::fs::File::open(p)?),
        }
    }

    pub fn input_bounds(&self) -> (f64, f64) {
        match (self.input_box, &self.system) {
            (Some(b), _) => b,
            (None, SystemSource::Quadcopter) => QUADCOPTER_INPUT_BOX,
            (None, _) => (-1.0, 1.0),
        }
    }

    pub fn tracked_channels(&self, l: usize) -> Vec<usize> {
        match (&self.tracked, &self.system) {
            (Some(t), _) => t.clone(),
            (None, SystemSource::Quadcopter) => vec![0, 1, 2],
            (None, _) => (0..l).collect(),
        }
    }

    pub fn validate(&self, sys: &SystemRealization) -> Result<()> {
        let need = min_data_length(sys.m(), sys.n(), self.ki, self.k);
        if self.data_length < need {
            return Err(Error::InvalidArgument(format!(
                "data length {} is below the minimum {need}",
                self.data_length
            )));
        }
        if self.k == 0 || self.steps == 0 {
            return Err(Error::InvalidArgument("horizon and run length must be at least 1".into()));
        }
        if !(self.ts > 0.0) || !(self.noise_std >= 0.0) || !(self.eps_beta >= 0.0) {
            return Err(Error::InvalidArgument("ts must be positive, noise_std and eps_beta nonnegative".into()));
        }
        let (lo, hi) = self.input_bounds();
        if !(lo <= hi) {
            return Err(Error::InvalidArgument("input box is empty".into()));
        }
        let tracked = self.tracked_channels(sys.l());
        if tracked.is_empty() || tracked.iter().any(|&t| t >= sys.l()) {
            return Err(Error::InvalidArgument(format!("tracked channels {tracked:?} out of range")));
        }
        match &self.reference {
            ReferenceSpec::Constant(v) if v.len() != 1 && v.len() != tracked.len() => {
                return Err(Error::InvalidArgument("reference.value needs one entry per tracked channel".into()));
            }
            ReferenceSpec::Figure8 { period, amplitude, .. } if !(*period > 0.0 && *amplitude > 0.0) => {
                return Err(Error::InvalidArgument("figure-8 period and amplitude must be positive".into()));
            }
            _ => {}
        }
        if let Some(c) = &self.compression {
            c.validate((sys.m() + sys.l()) * (self.ki + self.k), self.data_length + 1 - self.ki - self.k)?;
        }
        Ok(())
    }
}

/// Independent stream seeds derived from the run seed.
fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag)
}

/// Figure-8 positions `(x, y, z)` sampled at `ts`.
pub fn figure8_reference(ts: f64, period: f64, amplitude: f64, altitude: f64, length: usize) -> Vec<DVector<f64>> {
    use std::f64::consts::PI;
    (0..length)
        .map(|k| {
            let t = k as f64 * ts;
            DVector::from_vec(vec![
                amplitude * (2.0 * PI * t / period).sin(),
                amplitude * (4.0 * PI * t / period).sin() / 2.0,
                altitude,
            ])
        })
        .collect()
}

/// Reference over the full output vector; untracked channels are zero.
fn reference_series(cfg: &ExperimentConfig, l: usize, length: usize) -> Vec<DVector<f64>> {
    let tracked = cfg.tracked_channels(l);
    let values: Vec<DVector<f64>> = match &cfg.reference {
        ReferenceSpec::Figure8 {
            period,
            amplitude,
            altitude,
        } => figure8_reference(cfg.ts, *period, *amplitude, *altitude, length),
        ReferenceSpec::Constant(v) => {
            let v = if v.len() == 1 { vec![v[0]; tracked.len()] } else { v.clone() };
            vec![DVector::from_vec(v); length]
        }
    };
    values
        .iter()
        .map(|val| {
            let mut r = DVector::zeros(l);
            for (slot, &ch) in tracked.iter().enumerate() {
                r[ch] = if slot < val.len() { val[slot] } else { 0.0 };
            }
            r
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainingData {
    pub trajectory: Trajectory,
    /// Data matrix of depth `Ki + K`.
    pub data: DMatrix<f64>,
    pub blocks: HankelBlocks,
}

/// Simulates `N` steps from hover with i.i.d. uniform inputs over the box.
pub fn collect_training_data(cfg: &ExperimentConfig) -> Result<TrainingData> {
    let sys = cfg.plant()?;
    cfg.validate(&sys)?;
    let (lo, hi) = cfg.input_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 1));
    let inputs: Vec<DVector<f64>> = (0..cfg.data_length)
        .map(|_| DVector::from_fn(sys.m(), |_, _| if lo < hi { rng.random_range(lo..hi) } else { lo }))
        .collect();
    let order = sys.n() + cfg.ki + cfg.k;
    let pe = is_persistently_exciting(&inputs, order);
    if !pe.persistently_exciting {
        return Err(Error::NotPersistentlyExciting {
            order,
            rank: pe.rank,
            required: pe.required_rank,
        });
    }
    let trajectory = sys.simulate(&DVector::zeros(sys.n()), &inputs, &noise(cfg, 2))?;
    let data = io_data_matrix(&trajectory.inputs, &trajectory.outputs, cfg.ki + cfg.k)?;
    let blocks = HankelBlocks::split(&data, sys.m(), sys.l(), cfg.ki, cfg.k)?;
    Ok(TrainingData { trajectory, data, blocks })
}

fn noise(cfg: &ExperimentConfig, tag: u64) -> NoiseModel {
    if cfg.noise_std > 0.0 {
        NoiseModel::gaussian(cfg.noise_std, sub_seed(cfg.seed, tag))
    } else {
        NoiseModel::none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Full,
    Synthetic,
}

/// Data used online, after the optional offline compression.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub kind: DatasetKind,
    pub blocks: HankelBlocks,
    pub eta: f64,
    pub eps_bar: f64,
    /// Atoms of the compression, when one ran.
    pub synthetic: Option<crate::compress::SyntheticDataset>,
}

/// Offline step: compresses the training data when configured.
pub fn prepare_dataset(cfg: &ExperimentConfig, training: &TrainingData) -> Result<PreparedDataset> {
    let b = &training.blocks;
    match &cfg.compression {
        None => Ok(PreparedDataset {
            kind: DatasetKind::Full,
            blocks: b.clone(),
            eta: 0.0,
            eps_bar: crate::deepc::ambiguity_radius(cfg.eps_beta, 0.0)?,
            synthetic: None,
        }),
        Some(ccfg) => {
            let ds = compress(&training.data, ccfg)?;
            let blocks = HankelBlocks::split(&ds.atoms, b.m, b.l, b.ki, b.k)?;
            Ok(PreparedDataset {
                kind: DatasetKind::Synthetic,
                blocks,
                eta: ds.eta,
                eps_bar: crate::deepc::ambiguity_radius(cfg.eps_beta, ds.eta)?,
                synthetic: Some(ds),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    /// Applied first input block.
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub reference: DVector<f64>,
    /// `y - r` on the tracked channels.
    pub error: DVector<f64>,
    pub objective: f64,
    pub solve_time: f64,
    /// Window the step was solved with.
    pub window: InitialWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub kind: DatasetKind,
    /// Number of data columns used online (R or S).
    pub columns: usize,
    pub eta: f64,
    pub eps_beta: f64,
    pub eps_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    pub provenance: Provenance,
    pub tracked: Vec<usize>,
    pub c: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub mean_abs_error: Vec<f64>,
    pub max_abs_error: Vec<f64>,
    /// `sum_k c |y(k) - r(k)|_1` over the tracked channels.
    pub total_cost: f64,
    pub mean_solve_time: f64,
}

impl RunLog {
    pub fn metrics(&self) -> RunMetrics {
        let axes = self.tracked.len();
        let n = self.records.len().max(1) as f64;
        let mut mean = vec![0.0; axes];
        let mut max = vec![0.0f64; axes];
        let mut total = 0.0;
        let mut time = 0.0;
        for r in &self.records {
            for a in 0..axes {
                let e = r.error[a].abs();
                mean[a] += e / n;
                max[a] = max[a].max(e);
                total += self.c * e;
            }
            time += r.solve_time / n;
        }
        RunMetrics {
            mean_abs_error: mean,
            max_abs_error: max,
            total_cost: total,
            mean_solve_time: time,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let first = self.records.first();
        let m = first.map_or(0, |r| r.u.len());
        let l = first.map_or(0, |r| r.y.len());
        let mut out = String::from("k");
        for i in 0..m {
            write!(out, ",u_{}", i + 1).unwrap();
        }
        for i in 0..l {
            write!(out, ",y_{}", i + 1).unwrap();
        }
        for &t in &self.tracked {
            write!(out, ",r_{}", t + 1).unwrap();
        }
        for &t in &self.tracked {
            write!(out, ",e_{}", t + 1).unwrap();
        }
        out.push_str(",objective,solve_time\n");
        for r in &self.records {
            write!(out, "{}", r.k).unwrap();
            for v in r.u.iter().chain(r.y.iter()) {
                write!(out, ",{v:e}").unwrap();
            }
            for &t in &self.tracked {
                write!(out, ",{:e}", r.reference[t]).unwrap();
            }
            for v in r.error.iter() {
                write!(out, ",{v:e}").unwrap();
            }
            writeln!(out, ",{:e},{:e}", r.objective, r.solve_time).unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn meta_text(&self) -> String {
        let p = &self.provenance;
        let m = self.metrics();
        let mut s = String::new();
        writeln!(s, "config_hash = {}", p.config_hash).unwrap();
        writeln!(
            s,
            "dataset = {}",
            match p.kind {
                DatasetKind::Full => "full",
                DatasetKind::Synthetic => "synthetic",
            }
        )
        .unwrap();
        writeln!(s, "columns = {}", p.columns).unwrap();
        writeln!(s, "eta = {:e}", p.eta).unwrap();
        writeln!(s, "eps_beta = {:e}", p.eps_beta).unwrap();
        writeln!(s, "eps_bar = {:e}", p.eps_bar).unwrap();
        writeln!(s, "horizon = {}", self.horizon).unwrap();
        writeln!(s, "c = {:e}", self.c).unwrap();
        writeln!(s, "tracked = {}", join(&self.tracked)).unwrap();
        writeln!(s, "steps = {}", self.records.len()).unwrap();
        writeln!(s, "total_cost = {:e}", m.total_cost).unwrap();
        writeln!(s, "mean_solve_time = {:e}", m.mean_solve_time).unwrap();
        writeln!(s, "mean_abs_error = {}", join(&m.mean_abs_error)).unwrap();
        writeln!(s, "max_abs_error = {}", join(&m.max_abs_error)).unwrap();
        s
    }

    /// Reads back a directory written by [`RunLog::save`]. Windows are not
    /// persisted and come back empty.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta = read_meta(dir.join("meta.txt"))?;
        let get = |key: &str| {
            meta.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Parse(format!("meta.txt lacks '{key}'")))
        };
        let provenance = Provenance {
            config_hash: get("config_hash")?.to_string(),
            kind: match get("dataset")? {
                "full" => DatasetKind::Full,
                "synthetic" => DatasetKind::Synthetic,
                other => return Err(Error::Parse(format!("unknown dataset kind '{other}'"))),
            },
            columns: parse_num("columns", get("columns")?)?,
            eta: parse_num("eta", get("eta")?)?,
            eps_beta: parse_num("eps_beta", get("eps_beta")?)?,
            eps_bar: parse_num("eps_bar", get("eps_bar")?)?,
        };
        let tracked: Vec<usize> = parse_list("tracked", get("tracked")?)?;

        let text = std::fs::read_to_string(dir.join("runlog.csv"))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
        let (m, l) = (count("u_"), count("y_"));
        if header.first() != Some(&"k") || count("e_") != tracked.len() {
            return Err(Error::Parse("runlog.csv header does not match meta.txt".into()));
        }
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let v: Vec<f64> = parse_list("runlog.csv", line)?;
            let t = tracked.len();
            if v.len() != 1 + m + l + 2 * t + 2 {
                return Err(Error::Parse(format!("runlog.csv row has {} fields", v.len())));
            }
            let mut reference = DVector::zeros(l);
            for (i, &ch) in tracked.iter().enumerate() {
                reference[ch] = v[1 + m + l + i];
            }
            records.push(StepRecord {
                k: v[0] as usize,
                u: DVector::from_column_slice(&v[1..1 + m]),
                y: DVector::from_column_slice(&v[1 + m..1 + m + l]),
                reference,
                error: DVector::from_column_slice(&v[1 + m + l + t..1 + m + l + 2 * t]),
                objective: v[1 + m + l + 2 * t],
                solve_time: v[2 + m + l + 2 * t],
                window: InitialWindow {
                    u_ini: DVector::zeros(0),
                    y_ini: DVector::zeros(0),
                },
            });
        }
        Ok(RunLog {
            records,
            provenance,
            tracked,
            c: parse_num("c", get("c")?)?,
            horizon: parse_num("horizon", get("horizon")?)?,
        })
    }

    /// Writes `runlog.csv` and `meta.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_csv(dir.join("runlog.csv"))?;
        std::fs::write(dir.join("meta.txt"), self.meta_text())?;
        Ok(())
    }
}

/// Collects data, runs the offline step once, then the online loop.
pub fn run_receding_horizon(cfg: &ExperimentConfig) -> Result<RunLog> {
    let training = collect_training_data(cfg)?;
    let dataset = prepare_dataset(cfg, &training)?;
    run_online(cfg, &dataset)
}

/// The online loop of the controller on a prepared dataset. Starts at hover
/// after `Ki` zero-input steps that fill the initial window.
pub fn run_online(cfg: &ExperimentConfig, dataset: &PreparedDataset) -> Result<RunLog> {
    let sys = cfg.plant()?;
    cfg.validate(&sys)?;
    let (m, l) = (sys.m(), sys.l());
    let tracked = cfg.tracked_channels(l);
    let mask: Vec<bool> = (0..l).map(|ch| tracked.contains(&ch)).collect();
    let (lo, hi) = cfg.input_bounds();
    let input_box = InputBox::uniform(m, lo, hi)?;
    let ambiguity = AmbiguitySpec::new(cfg.eps_beta, dataset.eta)?;
    let reference = reference_series(cfg, l, cfg.steps + cfg.k);

    let mut plant_noise = noise(cfg, 3).stream(sys.q())?;
    let mut x = DVector::zeros(sys.n());
    let mut u_hist = Vec::with_capacity(cfg.ki);
    let mut y_hist = Vec::with_capacity(cfg.ki);
    for _ in 0..cfg.ki {
        let u = DVector::zeros(m);
        let (next, y) = sys.step(&x, &u, &plant_noise.sample())?;
        x = next;
        u_hist.push(u);
        y_hist.push(y);
    }
    let mut window = if cfg.ki > 0 {
        InitialWindow::from_tail(&u_hist, &y_hist, cfg.ki)?
    } else {
        InitialWindow::new(DVector::zeros(0), DVector::zeros(0), m, l, 0)?
    };

    let mut records = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let r = DVector::from_iterator(l * cfg.k, reference[k..k + cfg.k].iter().flat_map(|v| v.iter().cloned()));
        let cost = CostSpec::with_tracked(cfg.c, cfg.rho, r, mask.clone())?;
        let problem = build_robust(&dataset.blocks, &window, &cost, &ambiguity, &input_box)?;
        let sol = solve_robust(&problem)?;
        if sol.status != LpStatus::Optimal {
            let dump = cfg.output_dir.join(format!("failed_step_{k}.lp"));
            if std::fs::create_dir_all(&cfg.output_dir).and_then(|_| std::fs::write(&dump, problem.to_lp_text())).is_ok() {
                log::error!("step {k} failed; problem written to {}", dump.display());
            }
            return Err(Error::StepFailed { step: k, status: sol.status });
        }
        let u = sol.first_input(m);
        let (next, y) = sys.step(&x, &u, &plant_noise.sample())?;
        x = next;
        let error = DVector::from_iterator(tracked.len(), tracked.iter().map(|&ch| y[ch] - reference[k][ch]));
        log::debug!("step {k}: objective {:.4e}, |e|_inf {:.3e}", sol.objective, error.amax());
        records.push(StepRecord {
            k,
            u: u.clone(),
            y: y.clone(),
            reference: reference[k].clone(),
            error,
            objective: sol.objective,
            solve_time: sol.solve_time.as_secs_f64(),
            window: window.clone(),
        });
        window.shift(&u, &y);
    }
    Ok(RunLog {
        records,
        provenance: Provenance {
            config_hash: cfg.hash(),
            kind: dataset.kind,
            columns: dataset.blocks.ncols(),
            eta: dataset.eta,
            eps_beta: cfg.eps_beta,
            eps_bar: dataset.eps_bar,
        },
        tracked,
        c: cfg.c,
        horizon: cfg.k,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub kind: DatasetKind,
    pub columns: usize,
    pub horizon: usize,
    pub eta: f64,
    pub eps_bar: f64,
    pub metrics: RunMetrics,
    /// Total cost minus that of the first log.
    pub cost_difference: f64,
    /// Mean solve time minus that of the first log.
    pub time_difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Per-step tracking errors and solve times, one entry per log.
    pub error_series: Vec<Vec<DVector<f64>>>,
    pub time_series: Vec<Vec<f64>>,
}

/// Side-by-side metrics of runs that tracked the same reference.
pub fn compare_runs(logs: &[(String, RunLog)]) -> Result<Comparison> {
    let Some((_, base)) = logs.first() else {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    };
    for (label, log) in logs {
        let same = log.tracked == base.tracked
            && log
                .records
                .iter()
                .zip(&base.records)
                .all(|(a, b)| a.reference == b.reference);
        if !same {
            return Err(Error::InvalidArgument(format!("run '{label}' tracks a different reference")));
        }
    }
    let base_metrics = base.metrics();
    let rows = logs
        .iter()
        .map(|(label, log)| {
            let metrics = log.metrics();
            ComparisonRow {
                label: label.clone(),
                kind: log.provenance.kind,
                columns: log.provenance.columns,
                horizon: log.horizon,
                eta: log.provenance.eta,
                eps_bar: log.provenance.eps_bar,
                cost_difference: metrics.total_cost - base_metrics.total_cost,
                time_difference: metrics.mean_solve_time - base_metrics.mean_solve_time,
                metrics,
            }
        })
        .collect();
    Ok(Comparison {
        rows,
        error_series: logs.iter().map(|(_, l)| l.records.iter().map(|r| r.error.clone()).collect()).collect(),
        time_series: logs.iter().map(|(_, l)| l.records.iter().map(|r| r.solve_time).collect()).collect(),
    })
}

impl Comparison {
    pub fn table_csv(&self) -> String {
        let mut s = String::from("label,dataset,columns,horizon,eta,eps_bar,total_cost,mean_solve_time,cost_difference,time_difference");
        let axes = self.rows.first().map_or(0, |r| r.metrics.mean_abs_error.len());
        for a in 0..axes {
            write!(s, ",mean_abs_error_{}", a + 1).unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            write!(
                s,
                "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.label,
                match r.kind {
                    DatasetKind::Full => "full",
                    DatasetKind::Synthetic => "synthetic",
                },
                r.columns,
                r.horizon,
                r.eta,
                r.eps_bar,
                r.metrics.total_cost,
                r.metrics.mean_solve_time,
                r.cost_difference,
                r.time_difference
            )
            .unwrap();
            for e in &r.metrics.mean_abs_error {
                write!(s, ",{e:e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Per-step series: errors of every axis and the solve time of every run.
    pub fn series_csv(&self) -> String {
        let mut s = String::from("k");
        for (i, series) in self.error_series.iter().enumerate() {
            let axes = series.first().map_or(0, |e| e.len());
            for a in 0..axes {
                write!(s, ",e{}_{}", i + 1, a + 1).unwrap();
            }
            write!(s, ",solve_time_{}", i + 1).unwrap();
        }
        s.push('\n');
        let steps = self.error_series.iter().map(Vec::len).max().unwrap_or(0);
        for k in 0..steps {
            write!(s, "{k}").unwrap();
            for (series, times) in self.error_series.iter().zip(&self.time_series) {
                let axes = series.first().map_or(0, |e| e.len());
                for a in 0..axes {
                    match series.get(k) {
                        Some(e) => write!(s, ",{:e}", e[a]).unwrap(),
                        None => s.push(','),
                    }
                }
                match times.get(k) {
                    Some(t) => write!(s, ",{t:e}").unwrap(),
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Key-value pairs of a metadata file such as `meta.txt`.
pub fn read_meta(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure8_is_periodic_with_fixed_altitude() {
        let r = figure8_reference(0.05, 2.0, 1.5, 0.7, 200);
        for k in 0..160 {
            assert!((&r[k + 40] - &r[k]).amax() < 1e-12);
            assert_eq!(r[k][2], 0.7);
        }
        assert_eq!(r[0][0], 0.0);
    }

    #[test]
    fn kv_roundtrip_and_overrides() {
        let text = "system.kind = double-integrator\nsystem.ts = 0.1\n# comment\nhorizon.ki = 2\nhorizon.k = 10\n\
                    data.length = 80\nreference.value = 1.0\ncompress.atoms = 20\ncompress.norm = two\n";
        let mut cfg = ExperimentConfig::from_kv(text).unwrap();
        assert_eq!(cfg.system, SystemSource::DoubleIntegrator);
        assert_eq!(cfg.compression.as_ref().unwrap().atoms, 20);
        assert_eq!(cfg.compression.as_ref().unwrap().ground_norm, GroundNorm::Two);
        let back = ExperimentConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
        let h = cfg.hash();
        cfg.set("horizon.k", "11").unwrap();
        assert_ne!(cfg.hash(), h);
        assert!(cfg.set("horizon.nope", "1").is_err());
        assert!(cfg.set("horizon.k", "x").is_err());
        assert!(ExperimentConfig::from_kv("no equals sign").is_err());
    }

    #[test]
    fn quadcopter_defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!((cfg.k, cfg.ki, cfg.data_length, cfg.ts, cfg.c, cfg.rho, cfg.eps_beta), (30, 1, 214, 0.05, 200.0, 1e5, 1e-3));
        assert!((cfg.noise_std.powi(2) - 2f64.powi(-7)).abs() < 1e-15);
    }

    #[test]
    fn reference_series_fills_tracked_channels() {
        let mut cfg = ExperimentConfig::default();
        cfg.reference = ReferenceSpec::Constant(vec![1.0, 2.0, 3.0]);
        let r = reference_series(&cfg, 12, 3);
        assert_eq!(r[2][2], 3.0);
        assert_eq!(r[2][3], 0.0);
    }
}
