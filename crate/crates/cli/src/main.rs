use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ia_feedback::bitalloc::waterfill;
use ia_feedback::channel::{DistanceMode, ScenarioFile};
use ia_feedback::harness::{
    overhead_rows_csv, run_bound_verification, run_dof_experiment, run_overhead_report, run_throughput_experiment,
    BoundSpec, ExperimentSpec, Geometry, Scheme,
};
use ia_feedback::topology::{overhead, TopologyKind};
use serde::Serialize;

/// Interference-alignment CSI feedback simulator.
#[derive(Parser, Debug)]
#[command(name = "iafb", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Scenario TOML (K, M, d, alpha, P_dB, distance_mode, ratio_low, ratio_high, seed).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the scenario file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output file; `.json` writes JSON, anything else CSV. Stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// SNR points in dB: `0,10,20` or `start:stop:step`.
    #[arg(long, global = true)]
    snr_grid: Option<String>,
    /// Topologies, comma separated (full_feedback, centralized_receiver, star, csi_exchange).
    #[arg(long, global = true, value_delimiter = ',')]
    topology: Vec<TopologyKind>,
    /// Schemes, comma separated (equal, dynamic_waterfill, dof_centralized, dof_distributed, perfect_csi).
    #[arg(long, global = true, value_delimiter = ',')]
    scheme: Vec<Scheme>,
    /// Total feedback bits B_T.
    #[arg(long, global = true)]
    bt: Option<u32>,
    /// DoF constant C.
    #[arg(long, global = true)]
    c_const: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Coefficient counts per topology over a range of K.
    Overhead {
        #[arg(long, default_value_t = 4)]
        k_min: usize,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// Print the per-link ledger of one topology at `k_min` instead.
        #[arg(long)]
        ledger: bool,
    },
    /// Mean sum throughput per (SNR, topology, scheme).
    Throughput,
    /// Throughput with DoF-preserving bit budgets plus fitted slopes.
    Dof,
    /// Monte Carlo check of the residual, loss and eigenvector bounds.
    Bounds {
        #[arg(long, value_delimiter = ',', default_values_t = [4u32, 8, 12])]
        bits: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = [8u32, 16, 24])]
        matrix_bits: Vec<u32>,
        /// SNR points of the matrix-bit trend.
        #[arg(long, value_delimiter = ',', default_values_t = [10.0f64, 20.0, 30.0])]
        trend_grid: Vec<f64>,
    },
    /// One-shot water-filling on given weights.
    Alloc {
        #[arg(long, value_delimiter = ',', required = true)]
        weights: Vec<f64>,
        /// Antennas per node.
        #[arg(short = 'm', long, default_value_t = 3)]
        m: usize,
    },
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, h): (f64, f64, f64) = (start.trim().parse()?, stop.trim().parse()?, step.trim().parse()?);
            if h.is_nan() || h <= 0.0 || b < a {
                bail!("bad SNR range {s}");
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            (0..=n).map(|i| a + i as f64 * h).collect()
        }
        [_] => s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()?,
        _ => bail!("SNR grid must be a list or start:stop:step"),
    };
    Ok(grid)
}

fn scenario(g: &Global) -> Result<Option<ScenarioFile>> {
    g.config
        .as_deref()
        .map(|p| {
            let s = ScenarioFile::load(p).with_context(|| format!("reading {}", p.display()))?;
            s.to_config()?;
            Ok(s)
        })
        .transpose()
}

fn geometry(s: &ScenarioFile) -> Geometry {
    match s.distance_mode {
        DistanceMode::FixedRatio => Geometry::Fixed { ratio: s.ratio_low },
        DistanceMode::UniformRatio => Geometry::Uniform {
            low: s.ratio_low,
            high: s.ratio_high,
        },
    }
}

fn experiment(g: &Global, default_schemes: &[Scheme]) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec {
        schemes: default_schemes.to_vec(),
        ..ExperimentSpec::default()
    };
    if let Some(s) = scenario(g)? {
        spec.k = s.k;
        spec.d = s.d;
        spec.alpha = s.alpha;
        spec.geometry = geometry(&s);
        spec.seed = s.seed;
        spec.snr_db = vec![s.p_db];
    }
    if let Some(grid) = &g.snr_grid {
        spec.snr_db = parse_grid(grid)?;
    }
    if let Some(x) = g.seed {
        spec.seed = x;
    }
    if let Some(x) = g.trials {
        spec.trials = x;
    }
    if !g.topology.is_empty() {
        spec.topologies = g.topology.clone();
    }
    if !g.scheme.is_empty() {
        spec.schemes = g.scheme.clone();
    }
    if let Some(x) = g.bt {
        spec.total_bits = x;
    }
    if let Some(x) = g.c_const {
        spec.c_const = x;
    }
    spec.validate()?;
    Ok(spec)
}

fn emit(out: Option<&Path>, csv: impl FnOnce() -> Result<String>, json: impl FnOnce() -> Result<String>) -> Result<()> {
    match out {
        None => print!("{}", csv()?),
        Some(p) => {
            let text = if p.extension().is_some_and(|e| e == "json") {
                json()?
            } else {
                csv()?
            };
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(())
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[derive(Serialize)]
struct AllocRow {
    user: usize,
    weight: f64,
    continuous: f64,
    bits: u32,
}

fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    let out = g.out.as_deref();
    match cli.command {
        Command::Overhead {
            k_min,
            k_max,
            d,
            ledger,
        } => {
            if ledger {
                let k = scenario(g)?.map_or(k_min, |s| s.k);
                let kind = g.topology.first().copied().unwrap_or(TopologyKind::CsiExchange);
                let r = overhead(kind, k, (k - 1) * d, d)?;
                emit(out, || Ok(r.to_csv()?), || Ok(r.summary_json()))?;
            } else {
                let rows = run_overhead_report(k_min..=k_max, d)?;
                emit(
                    out,
                    || Ok(overhead_rows_csv(&rows)?),
                    || Ok(serde_json::to_string_pretty(&rows)?),
                )?;
            }
        }
        Command::Throughput => {
            let spec = experiment(g, &[Scheme::Equal, Scheme::DynamicWaterfill])?;
            let table = run_throughput_experiment(&spec)?;
            emit(out, || Ok(table.to_csv()?), || Ok(table.to_json()))?;
        }
        Command::Dof => {
            let mut spec = experiment(g, &[Scheme::DofCentralized, Scheme::DofDistributed, Scheme::Equal])?;
            if g.snr_grid.is_none() {
                spec.snr_db = parse_grid("10:40:5")?;
            }
            let r = run_dof_experiment(&spec)?;
            for f in &r.fits {
                eprintln!(
                    "{}/{}: slope {:.3} over {:?} dB",
                    f.topology, f.scheme, f.slope, f.snr_db
                );
            }
            emit(out, || Ok(r.table.to_csv()?), || Ok(serde_json::to_string_pretty(&r)?))?;
        }
        Command::Bounds {
            bits,
            matrix_bits,
            trend_grid,
        } => {
            let mut spec = BoundSpec {
                bits,
                matrix_bits,
                trend_snr_db: trend_grid,
                ..BoundSpec::default()
            };
            if let Some(s) = scenario(g)? {
                if s.d != 1 {
                    bail!("bound verification models d = 1");
                }
                spec.k = s.k;
                spec.alpha = s.alpha;
                spec.geometry = geometry(&s);
                spec.snr_db = s.p_db;
                spec.seed = s.seed;
            }
            if let Some(grid) = &g.snr_grid {
                spec.snr_db = *parse_grid(grid)?.first().context("empty SNR grid")?;
            }
            if let Some(x) = g.seed {
                spec.seed = x;
            }
            if let Some(x) = g.trials {
                spec.trials = x;
            }
            if !g.topology.is_empty() {
                spec.topologies = g.topology.clone();
            }
            let report = run_bound_verification(&spec)?;
            for c in report.checks.iter().filter(|c| !c.pass) {
                eprintln!("FAIL {}: {:.4e} vs {:.4e}", c.name, c.empirical, c.bound);
            }
            emit(out, || Ok(report.to_csv()?), || Ok(report.to_json()))?;
            return Ok(report.all_pass());
        }
        Command::Alloc { weights, m } => {
            let bt = g.bt.unwrap_or(16);
            let s = waterfill(&weights, bt, m)?;
            let rows: Vec<AllocRow> = (0..weights.len())
                .map(|i| AllocRow {
                    user: i + 1,
                    weight: weights[i],
                    continuous: s.continuous[i],
                    bits: s.integer.bits[i],
                })
                .collect();
            emit(out, || to_csv(&rows), || Ok(serde_json::to_string_pretty(&s)?))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
