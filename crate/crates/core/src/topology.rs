//! CSI feedback topologies: link-level overhead ledgers and end-to-end
//! limited-feedback simulation with quantized precoders.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bitalloc::BitAllocation;
use crate::channel::{ChannelRealization, NetworkConfig};
use crate::error::{Error, Result};
use crate::ia::{
    exchange_matrix_last, exchange_matrix_penultimate, filter_in_complement, transfer, AlignmentPattern,
    EigenSelection, FilterSet, PrecoderSet,
};
use crate::linalg::{eig, CMat, CVec};
use crate::quantize::{gamma_bar, quantize_channel_matrix, QuantizerMode};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    FullFeedback,
    CentralizedReceiver,
    Star,
    CsiExchange,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 4] = [
        TopologyKind::FullFeedback,
        TopologyKind::CentralizedReceiver,
        TopologyKind::Star,
        TopologyKind::CsiExchange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::FullFeedback => "full_feedback",
            TopologyKind::CentralizedReceiver => "centralized_receiver",
            TopologyKind::Star => "star",
            TopologyKind::CsiExchange => "csi_exchange",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full_feedback" | "full" => Ok(TopologyKind::FullFeedback),
            "centralized_receiver" | "centralized" => Ok(TopologyKind::CentralizedReceiver),
            "star" => Ok(TopologyKind::Star),
            "csi_exchange" | "exchange" => Ok(TopologyKind::CsiExchange),
            other => Err(Error::Parse(format!("unknown topology '{other}'"))),
        }
    }
}

/// Endpoint of a feedback or feedforward link. Indices are zero-based;
/// labels are one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Tx(usize),
    Rx(usize),
    CsiBs,
    /// Every transmitter at once.
    AllTx,
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Tx(k) => write!(f, "tx{}", k + 1),
            Node::Rx(k) => write!(f, "rx{}", k + 1),
            Node::CsiBs => f.write_str("csi_bs"),
            Node::AllTx => f.write_str("all_tx"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    ChannelMatrix,
    Precoder,
}

impl PayloadKind {
    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::ChannelMatrix => "channel_matrix",
            PayloadKind::Precoder => "precoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkEntry {
    pub sender: Node,
    pub receiver: Node,
    pub payload: PayloadKind,
    /// Complex coefficients carried.
    pub coefficients: usize,
    /// Position in the protocol's dependency order, starting at 1. Links
    /// sharing a step can be sent simultaneously.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverheadReport {
    pub kind: TopologyKind,
    pub k: usize,
    pub m: usize,
    pub d: usize,
    pub entries: Vec<LinkEntry>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    sender: String,
    receiver: String,
    payload_kind: &'a str,
    coefficients: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadSummary {
    pub topology: TopologyKind,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub d: usize,
    pub total: usize,
    /// Longest chain of dependent transmissions.
    pub depth: usize,
}

impl OverheadReport {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.coefficients).sum()
    }

    pub fn depth(&self) -> usize {
        self.entries.iter().map(|e| e.step).max().unwrap_or(0)
    }

    pub fn summary(&self) -> OverheadSummary {
        OverheadSummary {
            topology: self.kind,
            k: self.k,
            m: self.m,
            d: self.d,
            total: self.total(),
            depth: self.depth(),
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }

    /// Columns: `sender, receiver, payload_kind, coefficients`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(CsvRow {
                sender: e.sender.to_string(),
                receiver: e.receiver.to_string(),
                payload_kind: e.payload.name(),
                coefficients: e.coefficients,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Closed-form coefficient count of each topology.
pub fn closed_form_overhead(kind: TopologyKind, k: usize, m: usize, d: usize) -> usize {
    match kind {
        TopologyKind::FullFeedback => k * (k - 1) * m * m,
        TopologyKind::CentralizedReceiver => (k - 1) * m * m + k * m * d,
        TopologyKind::Star => k * m * m + k * m * d,
        TopologyKind::CsiExchange => m * m + 2 * (k - 1) * m * d,
    }
}

/// Enumerates every link of the topology's protocol.
pub fn overhead(kind: TopologyKind, k: usize, m: usize, d: usize) -> Result<OverheadReport> {
    if k < 2 || m == 0 || d == 0 {
        return Err(Error::InvalidConfig(format!("K = {k}, M = {m}, d = {d}")));
    }
    if kind == TopologyKind::CsiExchange && k < 4 {
        return Err(Error::InvalidConfig("CSI exchange needs K >= 4".into()));
    }
    let mat = m * m;
    let vec = m * d;
    let link = |sender, receiver, payload, coefficients, step| LinkEntry {
        sender,
        receiver,
        payload,
        coefficients,
        step,
    };
    let mut entries = Vec::new();
    match kind {
        TopologyKind::FullFeedback => {
            for rx in 0..k {
                for _tx in (0..k).filter(|&j| j != rx) {
                    entries.push(link(Node::Rx(rx), Node::AllTx, PayloadKind::ChannelMatrix, mat, 1));
                }
            }
        }
        TopologyKind::CentralizedReceiver => {
            for rx in 1..k {
                entries.push(link(Node::Rx(rx), Node::Rx(0), PayloadKind::ChannelMatrix, mat, 1));
            }
            for tx in 0..k {
                entries.push(link(Node::Rx(0), Node::Tx(tx), PayloadKind::Precoder, vec, 2));
            }
        }
        TopologyKind::Star => {
            for rx in 0..k {
                entries.push(link(Node::Rx(rx), Node::CsiBs, PayloadKind::ChannelMatrix, mat, 1));
            }
            for tx in 0..k {
                entries.push(link(Node::CsiBs, Node::Tx(tx), PayloadKind::Precoder, vec, 2));
            }
        }
        TopologyKind::CsiExchange => {
            entries.push(link(
                Node::Rx(k - 2),
                Node::Rx(k - 1),
                PayloadKind::ChannelMatrix,
                mat,
                1,
            ));
            entries.push(link(Node::Rx(k - 1), Node::Tx(0), PayloadKind::Precoder, vec, 2));
            entries.push(link(Node::Rx(k - 1), Node::Tx(1), PayloadKind::Precoder, vec, 2));
            for t in 1..k - 1 {
                let step = 2 * t + 1;
                entries.push(link(Node::Tx(t), Node::Rx(t - 1), PayloadKind::Precoder, vec, step));
                entries.push(link(
                    Node::Rx(t - 1),
                    Node::Tx(t + 1),
                    PayloadKind::Precoder,
                    vec,
                    step + 1,
                ));
            }
        }
    }
    Ok(OverheadReport { kind, k, m, d, entries })
}

/// Quantized precoders, the filters designed against them, and the
/// per-user distortions.
#[derive(Debug, Clone)]
pub struct QuantizedLink {
    pub kind: TopologyKind,
    pub precoders_hat: PrecoderSet,
    pub filters_hat: FilterSet,
    pub sigmas: Vec<f64>,
    /// Direction each receiver treats as its aligned interference.
    pub reference_vectors: Vec<CVec>,
    /// Distortion of the exchanged channel matrix, when it was quantized.
    pub sigma_m: Option<f64>,
}

fn check_limited(config: &NetworkConfig, realization: &ChannelRealization, bits: &BitAllocation) -> Result<()> {
    realization.check_against(config)?;
    if config.d() != 1 {
        return Err(Error::Unsupported("limited feedback is modeled for d = 1 only".into()));
    }
    if bits.len() != config.k() {
        return Err(Error::DimensionMismatch {
            expected: config.k(),
            got: bits.len(),
        });
    }
    Ok(())
}

fn codebook_seed(seed: u64, user: usize) -> u64 {
    derive_seed(seed, &[stream::CODEBOOK, user as u64])
}

fn col(v: &CVec) -> CMat {
    CMat::from_column_slice(v.len(), 1, v.as_slice())
}

fn unit_col(m: &CMat) -> Result<CVec> {
    let v = m.column(0).into_owned();
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Singular("precoder collapsed".into()));
    }
    Ok(v / Complex64::from(n))
}

/// Filter for receiver `k`: orthogonal to `v_r` and to the images of the
/// quantized precoders in `nulled`, maximizing gain on `H^{[kk]}v̂^{[k]}`.
fn design_filter(
    realization: &ChannelRealization,
    v_hat: &[CVec],
    k: usize,
    v_r: &CVec,
    nulled: impl Iterator<Item = usize>,
) -> Result<CMat> {
    let mut cols = vec![v_r.clone()];
    cols.extend(nulled.map(|m| realization.h(k, m) * &v_hat[m]));
    let blockers = CMat::from_columns(&cols);
    let desired = col(&(realization.h(k, k) * &v_hat[k]));
    filter_in_complement(&blockers, &desired, k)
}

/// Centralized-receiver and star feedback: every precoder of the cyclic
/// chain is quantized independently with its own bit budget.
pub fn simulate_centralized(
    config: &NetworkConfig,
    realization: &ChannelRealization,
    precoders: &PrecoderSet,
    bits: &BitAllocation,
    mode: QuantizerMode,
    seed: u64,
) -> Result<QuantizedLink> {
    check_limited(config, realization, bits)?;
    let k = config.k();
    let v: Vec<CVec> = precoders.v.iter().map(unit_col).collect::<Result<_>>()?;
    let mut v_hat = Vec::with_capacity(k);
    let mut sigmas = Vec::with_capacity(k);
    for (j, vj) in v.iter().enumerate() {
        let q = mode.quantize(vj, bits.bits[j], codebook_seed(seed, j))?;
        sigmas.push(q.sigma);
        v_hat.push(q.quantized);
    }
    let mut refs = Vec::with_capacity(k);
    let mut filters = Vec::with_capacity(k);
    for rx in 0..k {
        let (a, b) = ((rx + 1) % k, (rx + 2) % k);
        let v_r = realization.h(rx, a) * &v[a];
        let f = design_filter(
            realization,
            &v_hat,
            rx,
            &v_r,
            (0..k).filter(|&m| m != rx && m != a && m != b),
        )?;
        refs.push(v_r);
        filters.push(f);
    }
    Ok(QuantizedLink {
        kind: TopologyKind::Star,
        precoders_hat: PrecoderSet {
            pattern: AlignmentPattern::Chain,
            v: v_hat.iter().map(col).collect(),
        },
        filters_hat: FilterSet { r: filters },
        sigmas,
        reference_vectors: refs,
        sigma_m: None,
    })
}

/// Quantization of the channel matrix exchanged between the last two
/// receivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixExchange {
    pub bits: u32,
    pub mode: QuantizerMode,
}

/// CSI-exchange feedback. Receiver `K` computes `v^{[1]}`, `v^{[2]}` from
/// the (optionally quantized) exchanged matrix; every later precoder is
/// designed from its quantized predecessor.
pub fn simulate_csi_exchange(
    config: &NetworkConfig,
    realization: &ChannelRealization,
    bits: &BitAllocation,
    mode: QuantizerMode,
    seed: u64,
    matrix: Option<MatrixExchange>,
) -> Result<QuantizedLink> {
    check_limited(config, realization, bits)?;
    let k = config.k();
    if k < 4 {
        return Err(Error::InvalidConfig("CSI exchange needs K >= 4".into()));
    }
    let he_pen = exchange_matrix_penultimate(realization)?;
    let he_last = exchange_matrix_last(realization)?;
    let (he_used, sigma_m) = match matrix {
        Some(x) => {
            let mseed = derive_seed(seed, &[stream::MATRIX_CODEBOOK]);
            let q = quantize_channel_matrix(&he_pen, x.bits, mseed, x.mode)?;
            (q.h_hat, Some(q.sigma))
        }
        None => (he_pen, None),
    };
    let e = eig(&(&he_used * &he_last))?;
    let idx = EigenSelection::default().select(&e.values, 1)?[0];
    let v0 = e.vectors.column(idx).into_owned();
    let v1 = unit_col(&(&he_last * col(&v0)))?;

    let mut v_hat: Vec<CVec> = Vec::with_capacity(k);
    let mut sigmas = Vec::with_capacity(k);
    for (j, vj) in [&v0, &v1].into_iter().enumerate() {
        let q = mode.quantize(vj, bits.bits[j], codebook_seed(seed, j))?;
        sigmas.push(q.sigma);
        v_hat.push(q.quantized);
    }
    for t in 2..k {
        let g = transfer(realization, t - 2, t - 1, t)?;
        let vt = unit_col(&(g * col(&v_hat[t - 1])))?;
        let q = mode.quantize(&vt, bits.bits[t], codebook_seed(seed, t))?;
        sigmas.push(q.sigma);
        v_hat.push(q.quantized);
    }

    let mut refs = Vec::with_capacity(k);
    let mut filters = Vec::with_capacity(k);
    for rx in 0..k {
        let (v_r, skip) = if rx + 2 < k {
            (realization.h(rx, rx + 1) * &v_hat[rx + 1], [rx + 1, rx + 2])
        } else {
            (realization.h(rx, 0) * &v0, [0, 1])
        };
        let f = design_filter(
            realization,
            &v_hat,
            rx,
            &v_r,
            (0..k).filter(|&m| m != rx && !skip.contains(&m)),
        )?;
        refs.push(v_r);
        filters.push(f);
    }
    Ok(QuantizedLink {
        kind: TopologyKind::CsiExchange,
        precoders_hat: PrecoderSet {
            pattern: AlignmentPattern::Exchange,
            v: v_hat.iter().map(col).collect(),
        },
        filters_hat: FilterSet { r: filters },
        sigmas,
        reference_vectors: refs,
        sigma_m,
    })
}

/// `[k][j] = P d_kj^{−α} |r̂^{[k]†} H^{[kj]} v̂^{[j]}|²` for `j ≠ k`, zero on
/// the diagonal.
pub fn interference_terms(
    config: &NetworkConfig,
    realization: &ChannelRealization,
    link: &QuantizedLink,
) -> DMatrix<f64> {
    let k = config.k();
    let p = config.power() / config.d() as f64;
    DMatrix::from_fn(k, k, |rx, tx| {
        if rx == tx {
            return 0.0;
        }
        let g = link.filters_hat.r[rx].adjoint() * realization.h(rx, tx) * &link.precoders_hat.v[tx];
        p * config.path_gain(rx, tx) * g.norm_squared()
    })
}

/// `Î^{[k]}`: interference power left at each receiver after filtering.
pub fn residual_interference(
    config: &NetworkConfig,
    realization: &ChannelRealization,
    link: &QuantizedLink,
) -> Vec<f64> {
    let t = interference_terms(config, realization, link);
    t.row_iter().map(|r| r.sum()).collect()
}

/// `Σ_k log₂(1 + P d_kk^{−α}|r̂†H^{[kk]}v̂|² / (Î^{[k]} + 1))`.
pub fn sum_throughput_limited(config: &NetworkConfig, realization: &ChannelRealization, link: &QuantizedLink) -> f64 {
    let residual = residual_interference(config, realization, link);
    let p = config.power() / config.d() as f64;
    (0..config.k())
        .map(|k| {
            let g = link.filters_hat.r[k].adjoint() * realization.h(k, k) * &link.precoders_hat.v[k];
            let sig = p * config.path_gain(k, k) * g.norm_squared();
            (1.0 + sig / (residual[k] + 1.0)).log2()
        })
        .sum()
}

/// `K·log₂(1 + ΣE[Î^{[k]}]/K)`.
pub fn throughput_loss_bound(k: usize, expected_residuals: &[f64]) -> f64 {
    let s: f64 = expected_residuals.iter().sum();
    k as f64 * (1.0 + s / k as f64).log2()
}

/// Closed-form upper bound on `E[Î^{[k]}]` for each receiver.
pub fn residual_bounds(config: &NetworkConfig, kind: TopologyKind, bits: &BitAllocation) -> Result<Vec<f64>> {
    let k = config.k();
    let m = config.m();
    let scale = gamma_bar(m) * config.power() * (m * m) as f64;
    let term =
        |rx: usize, tx: usize| scale * config.path_gain(rx, tx) * (-(bits.bits[tx] as f64) / (m - 1) as f64).exp2();
    match kind {
        TopologyKind::CentralizedReceiver | TopologyKind::Star => Ok((0..k)
            .map(|rx| term(rx, (rx + 1) % k) + term(rx, (rx + 2) % k))
            .collect()),
        TopologyKind::CsiExchange => Ok((0..k)
            .map(|rx| {
                if rx + 2 < k {
                    term(rx, rx + 2)
                } else {
                    term(rx, 0) + term(rx, 1)
                }
            })
            .collect()),
        TopologyKind::FullFeedback => Err(Error::Unsupported("full feedback has no residual bound".into())),
    }
}

/// Transmitters expected to leak into each receiver.
pub fn misaligned_sources(kind: TopologyKind, k: usize, rx: usize) -> Vec<usize> {
    match kind {
        TopologyKind::CsiExchange if rx + 2 < k => vec![rx + 2],
        TopologyKind::CsiExchange => vec![0, 1],
        _ => vec![(rx + 1) % k, (rx + 2) % k],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use crate::ia::{ia_precoders_chain, sum_throughput_perfect};

    #[test]
    fn overhead_k4() {
        let totals: Vec<usize> = TopologyKind::ALL
            .iter()
            .map(|&kind| overhead(kind, 4, 3, 1).unwrap().total())
            .collect();
        assert_eq!(totals, vec![108, 39, 48, 27]);
        assert_eq!(overhead(TopologyKind::CsiExchange, 4, 3, 1).unwrap().depth(), 6);
        assert!(overhead(TopologyKind::CsiExchange, 3, 2, 1).is_err());
    }

    #[test]
    fn csv_and_json() {
        let r = overhead(TopologyKind::CentralizedReceiver, 4, 3, 1).unwrap();
        let csv = r.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("sender,receiver,payload_kind,coefficients"));
        assert_eq!(lines.next(), Some("rx2,rx1,channel_matrix,9"));
        assert_eq!(csv.lines().count(), 1 + 3 + 4);
        let j: serde_json::Value = serde_json::from_str(&r.summary_json()).unwrap();
        assert_eq!(j["total"], 39);
        assert_eq!(j["topology"], "centralized_receiver");
        assert_eq!(j["K"], 4);
    }

    #[test]
    fn perfect_quantizer_removes_interference() {
        let cfg = NetworkConfig::with_fixed_ratio(4, 1, 3.5, 100.0, 2.0).unwrap();
        let h = generate_channels(&cfg, 3).unwrap();
        let p = ia_precoders_chain(&cfg, &h, &EigenSelection::default()).unwrap();
        let bits = BitAllocation::uniform(4, 8);
        let link = simulate_centralized(&cfg, &h, &p, &bits, QuantizerMode::Perfect, 1).unwrap();
        assert!(residual_interference(&cfg, &h, &link)
            .iter()
            .all(|&x| x < 1e-15 * cfg.power()));
        let f = crate::ia::zf_filters(&cfg, &h, &p).unwrap();
        let perfect = sum_throughput_perfect(&cfg, &h, &p, &f);
        assert!((sum_throughput_limited(&cfg, &h, &link) - perfect).abs() < 1e-9);

        let link = simulate_csi_exchange(&cfg, &h, &bits, QuantizerMode::Perfect, 1, None).unwrap();
        assert!(residual_interference(&cfg, &h, &link)
            .iter()
            .all(|&x| x < 1e-15 * cfg.power()));
    }

    #[test]
    fn sparsity_patterns() {
        let cfg = NetworkConfig::with_fixed_ratio(5, 1, 3.5, 1000.0, 1.5).unwrap();
        let h = generate_channels(&cfg, 4).unwrap();
        let p = ia_precoders_chain(&cfg, &h, &EigenSelection::default()).unwrap();
        let bits = BitAllocation::uniform(5, 6);
        let mode = QuantizerMode::Explicit { cap: 24 };
        let links = [
            simulate_centralized(&cfg, &h, &p, &bits, mode, 2).unwrap(),
            simulate_csi_exchange(&cfg, &h, &bits, mode, 2, None).unwrap(),
        ];
        for link in &links {
            let t = interference_terms(&cfg, &h, link);
            for rx in 0..5 {
                let total: f64 = t.row(rx).sum();
                let src = misaligned_sources(link.kind, 5, rx);
                let stray: f64 = (0..5).filter(|j| !src.contains(j)).map(|j| t[(rx, j)]).sum();
                assert!(stray <= 1e-12 * total, "{:?} rx {rx}", link.kind);
                assert!(src.iter().all(|&j| t[(rx, j)] > 0.0));
            }
        }
    }

    #[test]
    fn loss_bound_arithmetic() {
        assert_eq!(throughput_loss_bound(4, &[0.0; 4]), 0.0);
        assert!((throughput_loss_bound(4, &[1.0; 4]) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn topology_names_parse() {
        for kind in TopologyKind::ALL {
            assert_eq!(kind.name().parse::<TopologyKind>().unwrap(), kind);
        }
        assert!("ring".parse::<TopologyKind>().is_err());
    }
}
