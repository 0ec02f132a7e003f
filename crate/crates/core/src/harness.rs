//! Monte Carlo experiment drivers: throughput comparisons, DoF scaling,
//! bound verification and overhead tables.
//!
//! Every trial derives its geometry, channel and codebook seeds from
//! `(base seed, trial index)`, so all SNR points, topologies and schemes
//! of one trial see the same random draws, and results do not depend on
//! how trials are scheduled across threads.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bitalloc::{distributed_bits, total_bits_for_dof, waterfill, weights, BitAllocation};
use crate::channel::{db_to_linear, generate_channels, sample_distance_ratios, ChannelRealization, NetworkConfig};
use crate::error::{Error, Result};
use crate::ia::{
    eigvec_sensitivity, ia_precoders_chain, ia_precoders_exchange, perturbed_v1, sum_throughput_perfect, zf_filters,
    EigenSelection, FilterSet, PrecoderSet,
};
use crate::par::{try_map_indexed, Execution};
use crate::quantize::{quantize_channel_matrix, QuantizerMode};
use crate::rng::{derive_seed, stream};
use crate::stats::{mean, ols_slope, paired_difference, std_error};
use crate::topology::{
    closed_form_overhead, overhead, residual_bounds, residual_interference, simulate_centralized,
    simulate_csi_exchange, sum_throughput_limited, throughput_loss_bound, MatrixExchange, QuantizedLink, TopologyKind,
};

/// Default explicit-search threshold used by experiments; larger budgets
/// use the exact distortion sampler.
pub const HARNESS_EXPLICIT_MAX_BITS: u32 = 10;

/// How feedback bits are assigned to the `K` precoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Equal,
    DynamicWaterfill,
    DofCentralized,
    DofDistributed,
    PerfectCsi,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Equal => "equal",
            Scheme::DynamicWaterfill => "dynamic_waterfill",
            Scheme::DofCentralized => "dof_centralized",
            Scheme::DofDistributed => "dof_distributed",
            Scheme::PerfectCsi => "perfect_csi",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "equal" => Ok(Scheme::Equal),
            "dynamic_waterfill" | "dynamic" | "waterfill" => Ok(Scheme::DynamicWaterfill),
            "dof_centralized" => Ok(Scheme::DofCentralized),
            "dof_distributed" => Ok(Scheme::DofDistributed),
            "perfect_csi" | "perfect" => Ok(Scheme::PerfectCsi),
            other => Err(Error::Parse(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Distance-ratio model of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Geometry {
    /// Every cross link at the same ratio.
    Fixed { ratio: f64 },
    /// Cross-link ratios redrawn per trial, uniform on `[low, high]`.
    Uniform { low: f64, high: f64 },
}

impl Geometry {
    fn distances(&self, k: usize, seed: u64) -> Result<DMatrix<f64>> {
        match *self {
            Geometry::Fixed { ratio } => sample_distance_ratios(k, ratio, ratio, seed),
            Geometry::Uniform { low, high } => sample_distance_ratios(k, low, high, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub k: usize,
    pub d: usize,
    pub alpha: f64,
    pub geometry: Geometry,
    pub topologies: Vec<TopologyKind>,
    pub schemes: Vec<Scheme>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// `B_T` for the equal and water-filling schemes.
    pub total_bits: u32,
    /// `C` for the DoF-preserving schemes.
    pub c_const: f64,
    pub quantizer: QuantizerMode,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            k: 4,
            d: 1,
            alpha: 3.5,
            geometry: Geometry::Uniform { low: 1.0, high: 3.0 },
            topologies: vec![TopologyKind::Star, TopologyKind::CsiExchange],
            schemes: vec![Scheme::Equal, Scheme::DynamicWaterfill],
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            trials: 2000,
            seed: 1,
            total_bits: 16,
            c_const: 2.0,
            quantizer: QuantizerMode::Auto {
                explicit_max_bits: HARNESS_EXPLICIT_MAX_BITS,
            },
            execution: Execution::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn m(&self) -> usize {
        (self.k - 1) * self.d
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.snr_db.is_empty() || self.topologies.is_empty() || self.schemes.is_empty() {
            return Err(Error::InvalidConfig(
                "SNR grid, topologies and schemes must be nonempty".into(),
            ));
        }
        if self.k < 4 {
            return Err(Error::InvalidConfig("K must be at least 4".into()));
        }
        if self.c_const.is_nan() || self.c_const <= 0.0 {
            return Err(Error::InvalidConfig("C must be positive".into()));
        }
        let limited = self.schemes.iter().any(|&s| s != Scheme::PerfectCsi);
        if limited && self.d != 1 {
            return Err(Error::Unsupported("limited-feedback schemes need d = 1".into()));
        }
        if limited && self.topologies.contains(&TopologyKind::FullFeedback) {
            return Err(Error::Unsupported("full feedback supports only perfect_csi".into()));
        }
        Ok(())
    }

    /// `(snr, topology, scheme)` in output order.
    pub fn combos(&self) -> Vec<(f64, TopologyKind, Scheme)> {
        let mut out = Vec::new();
        for &snr in &self.snr_db {
            for &t in &self.topologies {
                for &s in &self.schemes {
                    out.push((snr, t, s));
                }
            }
        }
        out
    }

    fn base_config(&self, trial: usize) -> Result<NetworkConfig> {
        let dist = self
            .geometry
            .distances(self.k, derive_seed(self.seed, &[trial as u64, stream::GEOMETRY]))?;
        NetworkConfig::new(self.k, self.m(), self.d, self.alpha, 1.0, dist)
    }
}

/// One trial's outcome for one `(snr, topology, scheme)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub throughput: f64,
    pub residual: Vec<f64>,
    pub bits: Vec<u32>,
}

/// Per-trial samples, indexed `[combo][trial]` with combos in
/// [`ExperimentSpec::combos`] order.
#[derive(Debug, Clone)]
pub struct Samples {
    pub combos: Vec<(f64, TopologyKind, Scheme)>,
    pub values: Vec<Vec<Sample>>,
}

impl Samples {
    pub fn index_of(&self, snr: f64, topology: TopologyKind, scheme: Scheme) -> Option<usize> {
        self.combos
            .iter()
            .position(|&(s, t, c)| s == snr && t == topology && c == scheme)
    }

    pub fn throughputs(&self, idx: usize) -> Vec<f64> {
        self.values[idx].iter().map(|s| s.throughput).collect()
    }

    /// Paired mean difference `a − b` and its standard error.
    pub fn paired_gap(&self, a: usize, b: usize) -> (f64, f64) {
        paired_difference(&self.throughputs(a), &self.throughputs(b))
    }
}

struct TrialContext {
    config: NetworkConfig,
    channels: ChannelRealization,
    chain: (PrecoderSet, FilterSet),
    exchange: Option<(PrecoderSet, FilterSet)>,
    seed: u64,
}

fn trial_context(spec: &ExperimentSpec, trial: usize) -> Result<TrialContext> {
    let config = spec.base_config(trial)?;
    let channels = generate_channels(&config, derive_seed(spec.seed, &[trial as u64, stream::CHANNEL]))?;
    let sel = EigenSelection::default();
    let chain_v = ia_precoders_chain(&config, &channels, &sel)?;
    let chain_f = zf_filters(&config, &channels, &chain_v)?;
    let exchange = if spec.topologies.contains(&TopologyKind::CsiExchange) {
        let v = ia_precoders_exchange(&config, &channels, &sel)?;
        let f = zf_filters(&config, &channels, &v)?;
        Some((v, f))
    } else {
        None
    };
    Ok(TrialContext {
        config,
        channels,
        chain: (chain_v, chain_f),
        exchange,
        seed: derive_seed(spec.seed, &[trial as u64, stream::CODEBOOK]),
    })
}

/// Bits assigned by `scheme` for the given configuration.
pub fn scheme_bits(
    spec: &ExperimentSpec,
    config: &NetworkConfig,
    kind: TopologyKind,
    scheme: Scheme,
) -> Result<BitAllocation> {
    let k = config.k();
    let m = config.m();
    match scheme {
        Scheme::Equal => Ok(BitAllocation::equal(k, spec.total_bits)),
        Scheme::DynamicWaterfill => {
            let w = weights(config, kind)?;
            Ok(waterfill(&w.a, spec.total_bits, m)?.integer)
        }
        Scheme::DofCentralized => {
            let w = weights(config, kind)?;
            let total = total_bits_for_dof(&w.a, spec.c_const, config.power(), m, k);
            Ok(waterfill(&w.a, total, m)?.integer)
        }
        Scheme::DofDistributed => {
            let w = weights(config, kind)?;
            Ok(distributed_bits(&w.a, spec.c_const, k, m))
        }
        Scheme::PerfectCsi => Ok(BitAllocation::uniform(k, 0)),
    }
}

fn simulate(
    ctx: &TrialContext,
    config: &NetworkConfig,
    kind: TopologyKind,
    bits: &BitAllocation,
    mode: QuantizerMode,
) -> Result<QuantizedLink> {
    match kind {
        TopologyKind::CsiExchange => simulate_csi_exchange(config, &ctx.channels, bits, mode, ctx.seed, None),
        TopologyKind::CentralizedReceiver | TopologyKind::Star => {
            let mut link = simulate_centralized(config, &ctx.channels, &ctx.chain.0, bits, mode, ctx.seed)?;
            link.kind = kind;
            Ok(link)
        }
        TopologyKind::FullFeedback => Err(Error::Unsupported("full feedback has no quantized model".into())),
    }
}

fn perfect_pair(ctx: &TrialContext, kind: TopologyKind) -> &(PrecoderSet, FilterSet) {
    match (kind, &ctx.exchange) {
        (TopologyKind::CsiExchange, Some(pair)) => pair,
        _ => &ctx.chain,
    }
}

fn run_trial(spec: &ExperimentSpec, trial: usize) -> Result<Vec<Sample>> {
    let ctx = trial_context(spec, trial)?;
    let mut out = Vec::new();
    for (snr, kind, scheme) in spec.combos() {
        let config = ctx.config.with_power(db_to_linear(snr))?;
        let sample = if scheme == Scheme::PerfectCsi {
            let (v, f) = perfect_pair(&ctx, kind);
            Sample {
                throughput: sum_throughput_perfect(&config, &ctx.channels, v, f),
                residual: vec![0.0; spec.k],
                bits: Vec::new(),
            }
        } else {
            let bits = scheme_bits(spec, &config, kind, scheme)?;
            let link = simulate(&ctx, &config, kind, &bits, spec.quantizer)?;
            Sample {
                throughput: sum_throughput_limited(&config, &ctx.channels, &link),
                residual: residual_interference(&config, &ctx.channels, &link),
                bits: bits.bits,
            }
        };
        out.push(sample);
    }
    Ok(out)
}

/// Runs every trial and keeps the raw per-trial samples.
pub fn run_throughput_samples(spec: &ExperimentSpec) -> Result<Samples> {
    spec.validate()?;
    let per_trial = try_map_indexed(spec.execution, spec.trials, |t| run_trial(spec, t))?;
    let combos = spec.combos();
    let mut values: Vec<Vec<Sample>> = (0..combos.len()).map(|_| Vec::with_capacity(spec.trials)).collect();
    for trial in per_trial {
        for (slot, s) in values.iter_mut().zip(trial) {
            slot.push(s);
        }
    }
    Ok(Samples { combos, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub snr_db: f64,
    pub topology: TopologyKind,
    pub scheme: Scheme,
    pub trials: usize,
    pub mean_throughput: f64,
    pub std_error: f64,
    /// Mean of `Î^{[k]}` per receiver.
    pub mean_residual: Vec<f64>,
    /// Mean bits per precoder over trials (empty for perfect CSI).
    pub mean_bits: Vec<f64>,
    pub mean_total_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn from_samples(samples: &Samples) -> Self {
        let rows = samples
            .combos
            .iter()
            .zip(&samples.values)
            .map(|(&(snr, topology, scheme), vals)| {
                let tp: Vec<f64> = vals.iter().map(|s| s.throughput).collect();
                let k = vals.first().map_or(0, |s| s.residual.len());
                let mean_residual = (0..k)
                    .map(|i| mean(&vals.iter().map(|s| s.residual[i]).collect::<Vec<_>>()))
                    .collect();
                let nb = vals.first().map_or(0, |s| s.bits.len());
                let mean_bits: Vec<f64> = (0..nb)
                    .map(|i| mean(&vals.iter().map(|s| s.bits[i] as f64).collect::<Vec<_>>()))
                    .collect();
                let mean_total_bits = mean(
                    &vals
                        .iter()
                        .map(|s| s.bits.iter().sum::<u32>() as f64)
                        .collect::<Vec<_>>(),
                );
                ResultRow {
                    snr_db: snr,
                    topology,
                    scheme,
                    trials: vals.len(),
                    mean_throughput: mean(&tp),
                    std_error: std_error(&tp),
                    mean_residual,
                    mean_bits,
                    mean_total_bits,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn find(&self, snr: f64, topology: TopologyKind, scheme: Scheme) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.snr_db == snr && r.topology == topology && r.scheme == scheme)
    }

    /// Columns: `snr_db, topology, scheme, trials, mean_throughput,
    /// std_error, mean_total_bits, allocation, residual_1..residual_K`.
    pub fn to_csv(&self) -> Result<String> {
        let k = self.rows.iter().map(|r| r.mean_residual.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "snr_db",
            "topology",
            "scheme",
            "trials",
            "mean_throughput",
            "std_error",
            "mean_total_bits",
            "allocation",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((1..=k).map(|i| format!("residual_{i}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.snr_db.to_string(),
                r.topology.to_string(),
                r.scheme.to_string(),
                r.trials.to_string(),
                r.mean_throughput.to_string(),
                r.std_error.to_string(),
                r.mean_total_bits.to_string(),
                r.mean_bits
                    .iter()
                    .map(|b| format!("{b:.3}"))
                    .collect::<Vec<_>>()
                    .join(" "),
            ];
            rec.extend((0..k).map(|i| r.mean_residual.get(i).map_or(String::new(), |v| v.to_string())));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

/// Aggregated throughput table.
pub fn run_throughput_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    Ok(ResultTable::from_samples(&run_throughput_samples(spec)?))
}

/// `log₂ P` for an SNR in dB.
pub fn log2_power(snr_db: f64) -> f64 {
    snr_db * std::f64::consts::LOG2_10 / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub topology: TopologyKind,
    pub scheme: Scheme,
    /// SNR points used in the fit.
    pub snr_db: Vec<f64>,
    /// Throughput gained per doubling of `P`.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofResult {
    pub table: ResultTable,
    pub fits: Vec<SlopeFit>,
}

/// Least-squares slope of mean throughput against `log₂ P` over rows with
/// `snr_db ≥ min_snr`.
pub fn fit_slope(table: &ResultTable, topology: TopologyKind, scheme: Scheme, min_snr: f64) -> SlopeFit {
    let mut pts: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| r.topology == topology && r.scheme == scheme && r.snr_db >= min_snr)
        .map(|r| (r.snr_db, r.mean_throughput))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let x: Vec<f64> = pts.iter().map(|p| log2_power(p.0)).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    SlopeFit {
        topology,
        scheme,
        snr_db: pts.iter().map(|p| p.0).collect(),
        slope: if x.len() >= 2 { ols_slope(&x, &y) } else { f64::NAN },
    }
}

/// Throughput table plus slopes fitted over the upper half of the SNR
/// grid.
pub fn run_dof_experiment(spec: &ExperimentSpec) -> Result<DofResult> {
    let table = run_throughput_experiment(spec)?;
    let mut grid = spec.snr_db.clone();
    grid.sort_by(f64::total_cmp);
    let min_snr = grid[grid.len() / 2];
    let mut fits = Vec::new();
    for &t in &spec.topologies {
        for &s in &spec.schemes {
            fits.push(fit_slope(&table, t, s, min_snr));
        }
    }
    Ok(DofResult { table, fits })
}

/// Settings of the bound-verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub k: usize,
    pub alpha: f64,
    pub geometry: Geometry,
    pub snr_db: f64,
    pub trials: usize,
    pub seed: u64,
    /// Per-user feedback bits tested against the residual bounds.
    pub bits: Vec<u32>,
    pub topologies: Vec<TopologyKind>,
    /// Matrix-exchange bits tested against the eigenvector bound.
    pub matrix_bits: Vec<u32>,
    /// SNR points of the matrix-bit scaling trend.
    pub trend_snr_db: Vec<f64>,
    pub quantizer: QuantizerMode,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for BoundSpec {
    fn default() -> Self {
        Self {
            k: 4,
            alpha: 3.5,
            geometry: Geometry::Uniform { low: 1.0, high: 3.0 },
            snr_db: 20.0,
            trials: 10_000,
            seed: 1,
            bits: vec![4, 8, 12],
            topologies: vec![TopologyKind::Star, TopologyKind::CsiExchange],
            matrix_bits: vec![8, 16, 24],
            trend_snr_db: vec![10.0, 20.0, 30.0],
            quantizer: QuantizerMode::Auto {
                explicit_max_bits: HARNESS_EXPLICIT_MAX_BITS,
            },
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub empirical: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

impl BoundCheck {
    /// Passes when `mean(lhs − rhs) ≤ 3·SE(lhs − rhs)` on paired samples.
    fn paired(name: String, lhs: &[f64], rhs: &[f64]) -> Self {
        let (gap, se) = paired_difference(lhs, rhs);
        Self {
            name,
            empirical: mean(lhs),
            std_error: std_error(lhs),
            bound: mean(rhs),
            pass: gap <= 3.0 * se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Columns: `name, empirical, std_error, bound, pass`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.checks {
            w.serialize(c)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Per-trial quantities feeding the bound checks.
struct BoundTrial {
    /// `[topology][bits][receiver]` residuals and bounds.
    residual: Vec<Vec<Vec<f64>>>,
    bound: Vec<Vec<Vec<f64>>>,
    /// `[topology][bits]` throughput loss and Jensen bound inputs.
    loss: Vec<Vec<f64>>,
    /// `[topology]` perfect-quantizer residual sum.
    control: Vec<f64>,
    /// `[matrix bits]` eigenvector deviation and bound.
    eig_dev: Vec<f64>,
    eig_bound: Vec<f64>,
    /// `[trend point]` residual caused by matrix quantization alone.
    trend: Vec<f64>,
}

/// Matrix-exchange bits keeping the eigenvector error at `O(1/P)`:
/// `nint((M²−1)·log₂P)`.
pub fn matrix_bits_for_power(m: usize, snr_db: f64) -> u32 {
    (((m * m - 1) as f64) * log2_power(snr_db)).round().max(0.0) as u32
}

fn bound_trial(spec: &BoundSpec, trial: usize) -> Result<BoundTrial> {
    let k = spec.k;
    let m = k - 1;
    let ts = ExperimentSpec {
        k,
        d: 1,
        alpha: spec.alpha,
        geometry: spec.geometry,
        topologies: spec.topologies.clone(),
        schemes: vec![Scheme::Equal],
        snr_db: vec![spec.snr_db],
        trials: spec.trials,
        seed: spec.seed,
        total_bits: 0,
        c_const: 2.0,
        quantizer: spec.quantizer,
        execution: spec.execution,
    };
    let ctx = trial_context(&ts, trial)?;
    let config = ctx.config.with_power(db_to_linear(spec.snr_db))?;
    let mut out = BoundTrial {
        residual: Vec::new(),
        bound: Vec::new(),
        loss: Vec::new(),
        control: Vec::new(),
        eig_dev: Vec::new(),
        eig_bound: Vec::new(),
        trend: Vec::new(),
    };
    for &kind in &spec.topologies {
        let (v, f) = perfect_pair(&ctx, kind);
        let perfect = sum_throughput_perfect(&config, &ctx.channels, v, f);
        let mut res_t = Vec::new();
        let mut bnd_t = Vec::new();
        let mut loss_t = Vec::new();
        for &b in &spec.bits {
            let bits = BitAllocation::uniform(k, b);
            let link = simulate(&ctx, &config, kind, &bits, spec.quantizer)?;
            let res = residual_interference(&config, &ctx.channels, &link);
            loss_t.push(perfect - sum_throughput_limited(&config, &ctx.channels, &link));
            bnd_t.push(residual_bounds(&config, kind, &bits)?);
            res_t.push(res);
        }
        out.residual.push(res_t);
        out.bound.push(bnd_t);
        out.loss.push(loss_t);
        let link = simulate(
            &ctx,
            &config,
            kind,
            &BitAllocation::uniform(k, 0),
            QuantizerMode::Perfect,
        )?;
        out.control
            .push(residual_interference(&config, &ctx.channels, &link).iter().sum());
    }

    let he_pen = crate::ia::exchange_matrix_penultimate(&ctx.channels)?;
    let sel = EigenSelection::default();
    let sens = eigvec_sensitivity(&ctx.channels, &sel)?;
    for &bm in &spec.matrix_bits {
        let q = quantize_channel_matrix(
            &he_pen,
            bm,
            derive_seed(ctx.seed, &[stream::MATRIX_CODEBOOK, bm as u64]),
            spec.quantizer,
        )?;
        let p = perturbed_v1(&ctx.channels, &sel, &q.delta, q.sigma)?;
        out.eig_dev.push(p.deviation_sq());
        out.eig_bound.push((-(bm as f64) / (m * m - 1) as f64).exp2() * sens);
    }
    for &snr in &spec.trend_snr_db {
        let cfg = ctx.config.with_power(db_to_linear(snr))?;
        let bm = matrix_bits_for_power(m, snr);
        let matrix = MatrixExchange {
            bits: bm,
            mode: spec.quantizer,
        };
        let link = simulate_csi_exchange(
            &cfg,
            &ctx.channels,
            &BitAllocation::uniform(k, 0),
            QuantizerMode::Perfect,
            ctx.seed,
            Some(matrix),
        )?;
        out.trend
            .push(residual_interference(&cfg, &ctx.channels, &link).iter().sum());
    }
    Ok(out)
}

/// Checks residual-interference, throughput-loss and eigenvector bounds
/// against Monte Carlo means.
pub fn run_bound_verification(spec: &BoundSpec) -> Result<BoundReport> {
    if spec.trials < 2 {
        return Err(Error::InvalidConfig(
            "bound verification needs at least 2 trials".into(),
        ));
    }
    if spec.topologies.contains(&TopologyKind::FullFeedback) {
        return Err(Error::Unsupported("full feedback has no residual bound".into()));
    }
    let trials = try_map_indexed(spec.execution, spec.trials, |t| bound_trial(spec, t))?;
    let k = spec.k;
    let power = db_to_linear(spec.snr_db);
    let col = |f: &dyn Fn(&BoundTrial) -> f64| trials.iter().map(f).collect::<Vec<f64>>();
    let mut checks = Vec::new();
    for (ti, kind) in spec.topologies.iter().enumerate() {
        for (bi, b) in spec.bits.iter().enumerate() {
            for rx in 0..k {
                let lhs = col(&|t| t.residual[ti][bi][rx]);
                let rhs = col(&|t| t.bound[ti][bi][rx]);
                checks.push(BoundCheck::paired(
                    format!("residual/{kind}/B={b}/rx{}", rx + 1),
                    &lhs,
                    &rhs,
                ));
            }
            let loss = col(&|t| t.loss[ti][bi]);
            let per_rx: Vec<f64> = (0..k).map(|rx| mean(&col(&|t| t.residual[ti][bi][rx]))).collect();
            let jensen = throughput_loss_bound(k, &per_rx);
            let rhs = vec![jensen; loss.len()];
            checks.push(BoundCheck::paired(format!("loss/{kind}/B={b}"), &loss, &rhs));
        }
        let ctrl = col(&|t| t.control[ti]);
        let limit = 1e-12 * power;
        checks.push(BoundCheck {
            name: format!("control/{kind}"),
            empirical: mean(&ctrl),
            std_error: std_error(&ctrl),
            bound: limit,
            pass: ctrl.iter().all(|&x| x <= limit),
        });
    }
    for (i, bm) in spec.matrix_bits.iter().enumerate() {
        let lhs = col(&|t| t.eig_dev[i]);
        let rhs = col(&|t| t.eig_bound[i]);
        checks.push(BoundCheck::paired(format!("eigvec/B_M={bm}"), &lhs, &rhs));
    }
    for w in 1..spec.trend_snr_db.len() {
        let prev = col(&|t| t.trend[w - 1]);
        let cur = col(&|t| t.trend[w]);
        checks.push(BoundCheck::paired(
            format!(
                "matrix_trend/{}dB<={}dB",
                spec.trend_snr_db[w],
                spec.trend_snr_db[w - 1]
            ),
            &cur,
            &prev,
        ));
    }
    Ok(BoundReport { checks })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadRow {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub d: usize,
    pub full_feedback: usize,
    pub centralized_receiver: usize,
    pub star: usize,
    pub csi_exchange: usize,
    /// Every ledger total equals its closed form.
    pub ledger_matches: bool,
}

/// Overhead of all four topologies for each `K`, with `M = (K−1)d`.
pub fn run_overhead_report(ks: impl IntoIterator<Item = usize>, d: usize) -> Result<Vec<OverheadRow>> {
    ks.into_iter()
        .map(|k| {
            if k < 4 {
                return Err(Error::InvalidConfig(format!("K = {k} < 4")));
            }
            let m = (k - 1) * d;
            let mut totals = [0usize; 4];
            let mut ok = true;
            for (slot, kind) in totals.iter_mut().zip(TopologyKind::ALL) {
                let ledger = overhead(kind, k, m, d)?.total();
                ok &= ledger == closed_form_overhead(kind, k, m, d);
                *slot = ledger;
            }
            Ok(OverheadRow {
                k,
                m,
                d,
                full_feedback: totals[0],
                centralized_receiver: totals[1],
                star: totals[2],
                csi_exchange: totals[3],
                ledger_matches: ok,
            })
        })
        .collect()
}

pub fn overhead_rows_csv(rows: &[OverheadRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(schemes: Vec<Scheme>) -> ExperimentSpec {
        ExperimentSpec {
            schemes,
            snr_db: vec![10.0, 20.0],
            trials: 40,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn perfect_scheme_matches_direct_pipeline() {
        let spec = small(vec![Scheme::PerfectCsi]);
        let table = run_throughput_experiment(&spec).unwrap();
        let mut direct = Vec::new();
        for t in 0..spec.trials {
            let ctx = trial_context(&spec, t).unwrap();
            let cfg = ctx.config.with_power(db_to_linear(20.0)).unwrap();
            direct.push(sum_throughput_perfect(&cfg, &ctx.channels, &ctx.chain.0, &ctx.chain.1));
        }
        let row = table.find(20.0, TopologyKind::Star, Scheme::PerfectCsi).unwrap();
        assert!((row.mean_throughput - mean(&direct)).abs() < 1e-12);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let mut spec = small(vec![Scheme::Equal, Scheme::DynamicWaterfill]);
        spec.execution = Execution::Sequential;
        let a = run_throughput_experiment(&spec).unwrap().to_csv().unwrap();
        spec.execution = Execution::Parallel;
        let b = run_throughput_experiment(&spec).unwrap().to_csv().unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with(
            "snr_db,topology,scheme,trials,mean_throughput,std_error,mean_total_bits,allocation,residual_1"
        ));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = small(vec![Scheme::Equal]);
        spec.trials = 0;
        assert!(run_throughput_experiment(&spec).is_err());
        let mut spec = small(vec![Scheme::Equal]);
        spec.topologies = vec![TopologyKind::FullFeedback];
        assert!(run_throughput_experiment(&spec).is_err());
        spec.schemes = vec![Scheme::PerfectCsi];
        assert!(run_throughput_experiment(&spec).is_ok());
    }

    #[test]
    fn overhead_rows() {
        let rows = run_overhead_report(4..=6, 1).unwrap();
        assert_eq!(
            (
                rows[0].full_feedback,
                rows[0].centralized_receiver,
                rows[0].star,
                rows[0].csi_exchange
            ),
            (108, 39, 48, 27)
        );
        assert!(rows.iter().all(|r| r.ledger_matches));
        assert!(run_overhead_report([3], 1).is_err());
    }

    #[test]
    fn matrix_bits_rounding() {
        assert_eq!(matrix_bits_for_power(3, 30.0), 80);
        assert_eq!(matrix_bits_for_power(3, 10.0), 27);
    }
}
