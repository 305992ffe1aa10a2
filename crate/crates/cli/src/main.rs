use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use syndeepc::compress::{compress, eta_curve, write_matrix_csv, CompressionConfig};
use syndeepc::harness::{collect_training_data, compare_runs, prepare_dataset, run_online, ExperimentConfig, RunLog};
use syndeepc::Error;

/// Receding-horizon predictive control from compressed trajectory data.
#[derive(Parser, Debug)]
#[command(
    name = "syndeepc",
    version,
    after_help = "Any configuration key can be overridden with --section.key=value, e.g. --horizon.k=20."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect training data and write the trajectory and its data matrix.
    Simulate {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Run the offline compression and write the synthetic dataset.
    Compress {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Offline compression (if configured) followed by the closed loop.
    Run {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Compression distance as a function of the number of atoms.
    Sweep {
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Atom counts, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        atoms: Vec<usize>,
    },
    /// Side-by-side metrics of saved runs.
    Compare {
        /// Run directories holding runlog.csv and meta.txt.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Solver(_) | Error::StepFailed { .. } | Error::KernelUnderflow => Failure::Solver(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

/// Splits `--section.key=value` overrides from the arguments clap handles.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let kv = arg.strip_prefix("--").and_then(|a| a.split_once('='));
        match kv {
            Some((k, v)) if k.contains('.') => overrides.push((k.to_string(), v.to_string())),
            _ => rest.push(arg),
        }
    }
    (rest, overrides)
}

fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn execute(cli: Cli, overrides: &[(String, String)]) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config } => {
            let cfg = load_config(config.as_deref(), overrides)?;
            let training = collect_training_data(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            training
                .trajectory
                .write_csv(std::fs::File::create(cfg.output_dir.join("training.csv"))?)?;
            write_matrix_csv(&training.data, cfg.output_dir.join("hankel.csv"))?;
            println!(
                "collected {} samples; data matrix {}x{}",
                training.trajectory.len(),
                training.data.nrows(),
                training.data.ncols()
            );
        }
        Command::Compress { config } => {
            let cfg = load_config(config.as_deref(), overrides)?;
            let Some(ccfg) = &cfg.compression else {
                return Err(Failure::Config("set compress.atoms to a positive count".into()));
            };
            let training = collect_training_data(&cfg)?;
            let ds = compress(&training.data, ccfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("synthetic.csv");
            ds.save(&path)?;
            println!("{} atoms, eta = {:e}, written to {}", ds.atoms.ncols(), ds.eta, path.display());
        }
        Command::Run { config } => {
            let cfg = load_config(config.as_deref(), overrides)?;
            let training = collect_training_data(&cfg)?;
            let dataset = prepare_dataset(&cfg, &training)?;
            let log = run_online(&cfg, &dataset)?;
            log.save(&cfg.output_dir)?;
            let m = log.metrics();
            println!(
                "{} steps, total cost {:.4e}, mean solve time {:.3e} s, eps_bar {:e}; results in {}",
                log.records.len(),
                m.total_cost,
                m.mean_solve_time,
                log.provenance.eps_bar,
                cfg.output_dir.display()
            );
        }
        Command::Sweep { config, atoms } => {
            let cfg = load_config(config.as_deref(), overrides)?;
            let training = collect_training_data(&cfg)?;
            let template = cfg.compression.clone().unwrap_or_else(|| {
                let mut c = CompressionConfig::new(1);
                c.seed = cfg.seed;
                c
            });
            let mut out = String::from("S,eta,wall_time\n");
            let mut failed = 0;
            for (s, point) in atoms.iter().zip(eta_curve(&training.data, &atoms, &template)?) {
                match point {
                    Ok(p) => writeln!(out, "{},{:e},{:e}", p.atoms, p.eta, p.wall_time.as_secs_f64()).unwrap(),
                    Err(e) => {
                        log::error!("S = {s}: {e}");
                        failed += 1;
                    }
                }
            }
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("eta_curve.csv");
            std::fs::write(&path, &out)?;
            print!("{out}");
            if failed > 0 {
                return Err(Failure::Config(format!("{failed} atom counts failed")));
            }
        }
        Command::Compare { runs, out } => {
            let logs = runs
                .iter()
                .map(|dir| {
                    let label = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
                    Ok((label, RunLog::load(dir)?))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            let cmp = compare_runs(&logs)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("comparison.csv"), cmp.table_csv())?;
            std::fs::write(out.join("comparison_series.csv"), cmp.series_csv())?;
            print!("{}", cmp.table_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(3)
        }
    }
}
