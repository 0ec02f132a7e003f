//! Closed-form interference alignment: precoders, zero-forcing receive
//! filters, alignment checks and perfect-CSI throughput.
//!
//! Receiver `r` aligns the interference of its next two transmitters
//! `(r+1) mod K` and `(r+2) mod K`. The exchange variant instead aligns
//! transmitters 0 and 1 at the last two receivers, so that `V^{[1]}` only
//! depends on two receivers' channels.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, NetworkConfig};
use crate::error::{Error, Result};
use crate::linalg::{
    self, eig, normalize_columns, orthonormalize, project_out, solve, span_basis, span_residual, CMat, CVec, RANK_TOL,
};

/// Which `d` eigenvectors seed the precoder chain.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSelection {
    #[default]
    LargestMagnitude,
    SmallestMagnitude,
    /// One-based ranks in the list of eigenvalues sorted by descending
    /// magnitude (`1` is the largest).
    IndexList(Vec<usize>),
}

impl EigenSelection {
    /// Picks `d` eigenvalue positions out of `values`.
    pub fn select(&self, values: &[Complex64], d: usize) -> Result<Vec<usize>> {
        let m = values.len();
        let mut order: Vec<usize> = (0..m).collect();
        // stable sort: ties keep Schur order
        order.sort_by(|&a, &b| values[b].norm().total_cmp(&values[a].norm()));
        match self {
            EigenSelection::LargestMagnitude => {
                check_count(d, m)?;
                Ok(order[..d].to_vec())
            }
            EigenSelection::SmallestMagnitude => {
                check_count(d, m)?;
                Ok(order.iter().rev().take(d).copied().collect())
            }
            EigenSelection::IndexList(idx) => {
                if idx.len() != d {
                    return Err(Error::Precondition(format!(
                        "index list has {} entries, need d = {d}",
                        idx.len()
                    )));
                }
                let mut seen = vec![false; m];
                for &i in idx {
                    if i == 0 || i > m || seen[i - 1] {
                        return Err(Error::Precondition(format!(
                            "index list {idx:?} must hold distinct entries in 1..={m}"
                        )));
                    }
                    seen[i - 1] = true;
                }
                Ok(idx.iter().map(|&i| order[i - 1]).collect())
            }
        }
    }
}

fn check_count(d: usize, m: usize) -> Result<()> {
    if d == 0 || d > m {
        Err(Error::Precondition(format!("cannot select {d} of {m} eigenvectors")))
    } else {
        Ok(())
    }
}

/// Which span conditions a precoder set is meant to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentPattern {
    /// Every receiver aligns its next two transmitters (cyclic).
    Chain,
    /// As `Chain` for receivers `0..K-2`; the last two receivers align
    /// transmitters 0 and 1.
    Exchange,
}

impl AlignmentPattern {
    /// The transmitter pair whose interference shares a subspace at
    /// receiver `r`.
    pub fn aligned_pair(self, r: usize, k: usize) -> (usize, usize) {
        match self {
            AlignmentPattern::Exchange if r + 2 >= k => (0, 1),
            _ => ((r + 1) % k, (r + 2) % k),
        }
    }
}

/// Transmit precoders, one `M×d` matrix per transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub pattern: AlignmentPattern,
    pub v: Vec<CMat>,
}

/// Receive filters, one `M×d` matrix per receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSet {
    pub r: Vec<CMat>,
}

/// `(H^{[r b]})^{-1} H^{[r a]}`: maps transmitter `a`'s precoder to the
/// one for `b` that aligns with it at receiver `r`.
pub fn transfer(realization: &ChannelRealization, r: usize, a: usize, b: usize) -> Result<CMat> {
    solve(realization.h(r, b), realization.h(r, a)).map_err(|_| Error::Singular(format!("H[{r}][{b}]")))
}

/// Runs `V^{[t]} = G_{t-2} V^{[t-1]}` from `v0` to the end of the chain,
/// with `V^{[1]}` obtained through the last receiver.
fn propagate(realization: &ChannelRealization, v0: CMat) -> Result<Vec<CMat>> {
    let k = realization.k();
    let mut out = Vec::with_capacity(k);
    let v1 = normalize_columns(&(transfer(realization, k - 1, 0, 1)? * &v0));
    out.push(v0);
    out.push(v1);
    for t in 2..k {
        let g = transfer(realization, t - 2, t - 1, t)?;
        let next = normalize_columns(&(g * &out[t - 1]));
        out.push(next);
    }
    Ok(out)
}

fn seed_eigvecs(product: &CMat, selection: &EigenSelection, d: usize) -> Result<CMat> {
    let e = eig(product)?;
    let idx = selection.select(&e.values, d)?;
    let m = product.nrows();
    Ok(CMat::from_fn(m, d, |row, c| e.vectors[(row, idx[c])]))
}

fn check_inputs(config: &NetworkConfig, realization: &ChannelRealization) -> Result<()> {
    realization.check_against(config)?;
    if config.m() != (config.k() - 1) * config.d() {
        return Err(Error::InvalidConfig("M != (K-1)d".into()));
    }
    Ok(())
}

/// The K-factor cyclic product whose eigenvectors seed `V^{[1]}`.
pub fn chain_product(realization: &ChannelRealization) -> Result<CMat> {
    let k = realization.k();
    // first map applied: transmitter 0 -> 1 at receiver K-1
    let mut a = transfer(realization, k - 1, 0, 1)?;
    for r in 0..k - 1 {
        let g = transfer(realization, r, (r + 1) % k, (r + 2) % k)?;
        a = g * a;
    }
    Ok(a)
}

/// `H_e` at the second-to-last receiver: `(H^{[(K-1)1]})^{-1} H^{[(K-1)2]}`.
pub fn exchange_matrix_penultimate(realization: &ChannelRealization) -> Result<CMat> {
    let k = realization.k();
    transfer(realization, k - 2, 1, 0)
}

/// `H_e` at the last receiver: `(H^{[K2]})^{-1} H^{[K1]}`.
pub fn exchange_matrix_last(realization: &ChannelRealization) -> Result<CMat> {
    let k = realization.k();
    transfer(realization, k - 1, 0, 1)
}

/// Precoders from the full cyclic chain.
pub fn ia_precoders_chain(
    config: &NetworkConfig,
    realization: &ChannelRealization,
    selection: &EigenSelection,
) -> Result<PrecoderSet> {
    check_inputs(config, realization)?;
    let v0 = seed_eigvecs(&chain_product(realization)?, selection, config.d())?;
    Ok(PrecoderSet {
        pattern: AlignmentPattern::Chain,
        v: propagate(realization, normalize_columns(&v0))?,
    })
}

/// Precoders for the CSI-exchange topology, seeded by the two-factor
/// product `H_e^{[K-1]} H_e^{[K]}`.
pub fn ia_precoders_exchange(
    config: &NetworkConfig,
    realization: &ChannelRealization,
    selection: &EigenSelection,
) -> Result<PrecoderSet> {
    check_inputs(config, realization)?;
    let he_pen = exchange_matrix_penultimate(realization)?;
    let he_last = exchange_matrix_last(realization)?;
    precoders_exchange_from(realization, &(he_pen * he_last), selection, config.d())
}

pub(crate) fn precoders_exchange_from(
    realization: &ChannelRealization,
    product: &CMat,
    selection: &EigenSelection,
    d: usize,
) -> Result<PrecoderSet> {
    if realization.k() < 4 {
        return Err(Error::InvalidConfig("CSI exchange needs K >= 4".into()));
    }
    let v0 = seed_eigvecs(product, selection, d)?;
    Ok(PrecoderSet {
        pattern: AlignmentPattern::Exchange,
        v: propagate(realization, normalize_columns(&v0))?,
    })
}

/// Column-stacked `H^{[kj]} V^{[j]}` over all `j != k`.
fn interference_columns(realization: &ChannelRealization, precoders: &PrecoderSet, k: usize) -> CMat {
    let m = realization.m();
    let cols: Vec<CVec> = (0..realization.k())
        .filter(|&j| j != k)
        .flat_map(|j| {
            let img = realization.h(k, j) * &precoders.v[j];
            (0..img.ncols()).map(move |c| img.column(c).into_owned())
        })
        .collect();
    if cols.is_empty() {
        CMat::zeros(m, 0)
    } else {
        CMat::from_columns(&cols)
    }
}

/// Orthonormal filter columns in the complement of `span(blockers)` that
/// maximize the desired gain: each desired column is projected onto the
/// complement, then the set is orthonormalized.
pub(crate) fn filter_in_complement(blockers: &CMat, desired: &CMat, receiver: usize) -> Result<CMat> {
    let basis = span_basis(blockers, RANK_TOL);
    let m = desired.nrows();
    let d = desired.ncols();
    if basis.ncols() + d > m {
        return Err(Error::AlignmentFailed {
            receiver,
            rank: basis.ncols(),
            max: m - d,
        });
    }
    let projected = CMat::from_columns(
        &(0..d)
            .map(|c| project_out(&basis, &desired.column(c).into_owned()))
            .collect::<Vec<_>>(),
    );
    let mut r = orthonormalize(&projected).ok_or(Error::EmptyNullspace(receiver))?;
    // one more pass keeps the blockers' leakage at rounding level
    for c in 0..d {
        let col = project_out(&basis, &r.column(c).into_owned());
        let col = linalg::unit(&col).ok_or(Error::EmptyNullspace(receiver))?;
        r.set_column(c, &col);
    }
    Ok(r)
}

/// Zero-forcing receive filter at receiver `k`.
pub fn zf_receive_filter(
    config: &NetworkConfig,
    realization: &ChannelRealization,
    precoders: &PrecoderSet,
    k: usize,
) -> Result<CMat> {
    config.check_index("receiver", k)?;
    realization.check_against(config)?;
    let blockers = interference_columns(realization, precoders, k);
    let desired = realization.h(k, k) * &precoders.v[k];
    filter_in_complement(&blockers, &desired, k)
}

/// Zero-forcing filters for every receiver.
pub fn zf_filters(
    config: &NetworkConfig,
    realization: &ChannelRealization,
    precoders: &PrecoderSet,
) -> Result<FilterSet> {
    let r = (0..config.k())
        .map(|k| zf_receive_filter(config, realization, precoders, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterSet { r })
}

/// Worst span residual over the pairs the precoder pattern requires to be
/// co-spanned. Zero means perfect alignment.
pub fn alignment_error(config: &NetworkConfig, realization: &ChannelRealization, precoders: &PrecoderSet) -> f64 {
    let k = config.k();
    (0..k)
        .map(|r| {
            let (a, b) = precoders.pattern.aligned_pair(r, k);
            let img_a = realization.h(r, a) * &precoders.v[a];
            let img_b = realization.h(r, b) * &precoders.v[b];
            span_residual(&img_a, &img_b)
        })
        .fold(0.0, f64::max)
}

/// `Σ_{k} Σ_{j≠k} Σ_{i,l} P/d · d_kj^{-α} |r_i^{[k]†} H^{[kj]} v_l^{[j]}|²`.
pub fn total_leakage(
    config: &NetworkConfig,
    realization: &ChannelRealization,
    precoders: &PrecoderSet,
    filters: &FilterSet,
) -> f64 {
    let k = config.k();
    let p = config.power() / config.d() as f64;
    let mut total = 0.0;
    for rx in 0..k {
        for tx in (0..k).filter(|&j| j != rx) {
            let g = filters.r[rx].adjoint() * realization.h(rx, tx) * &precoders.v[tx];
            total += p * config.path_gain(rx, tx) * g.norm_squared();
        }
    }
    total
}

/// Sum throughput under perfect CSI (interference assumed zero-forced).
/// Per-stream power is `P/d`.
pub fn sum_throughput_perfect(
    config: &NetworkConfig,
    realization: &ChannelRealization,
    precoders: &PrecoderSet,
    filters: &FilterSet,
) -> f64 {
    let p = config.power() / config.d() as f64;
    (0..config.k())
        .map(|k| {
            let g = config.path_gain(k, k);
            let h = realization.h(k, k);
            (0..config.d())
                .map(|i| {
                    let r = filters.r[k].column(i);
                    let v = precoders.v[k].column(i);
                    let gain = r.dotc(&(h * v)).norm_sqr();
                    (1.0 + p * g * gain).log2()
                })
                .sum::<f64>()
        })
        .sum()
}

/// First-order and exact eigenvector of the exchange product after the
/// penultimate receiver's matrix is perturbed.
#[derive(Debug, Clone)]
pub struct PerturbedEigvec {
    /// Unperturbed eigenvector (unit norm).
    pub unperturbed: CVec,
    pub eigenvalue: Complex64,
    /// First-order expansion, normalized so its component along the
    /// unperturbed eigenvector (in the eigenbasis) is 1.
    pub first_order: CVec,
    /// Eigenvector of the perturbed product with the same normalization.
    pub exact: CVec,
}

impl PerturbedEigvec {
    /// `‖x − v‖²` between the unit-normalized exact eigenvector `x`, phase
    /// aligned to `v`, and the unperturbed `v`.
    pub fn deviation_sq(&self) -> f64 {
        let x = &self.exact / Complex64::from(self.exact.norm());
        let c = self.unperturbed.dotc(&x);
        let x = if c.norm() > 0.0 { x * (c.conj() / c.norm()) } else { x };
        (x - &self.unperturbed).norm_squared()
    }
    /// `‖first_order − exact‖`.
    pub fn approximation_error(&self) -> f64 {
        (&self.first_order - &self.exact).norm()
    }
}

/// Relative eigenvalue gap below which the perturbation expansion is refused.
pub const EIGEN_GAP_TOL: f64 = 1e-9;

/// Perturbs the Frobenius-normalized `H_e^{[K-1]}` as
/// `√(1−σ) H_e + √σ ΔH` (with `‖ΔH‖_F = 1`) and tracks the selected
/// eigenvector of `H_e^{[K-1]} H_e^{[K]}`.
///
/// The first-order term uses the dual (left) eigenbasis, which coincides
/// with the conjugate right eigenvectors when the product is normal.
pub fn perturbed_v1(
    realization: &ChannelRealization,
    selection: &EigenSelection,
    delta_h: &CMat,
    sigma_m: f64,
) -> Result<PerturbedEigvec> {
    if !(0.0..=1.0).contains(&sigma_m) {
        return Err(Error::Precondition(format!("sigma_M = {sigma_m} outside [0, 1]")));
    }
    if (delta_h.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "perturbation must have unit Frobenius norm, got {}",
            delta_h.norm()
        )));
    }
    let he_pen = exchange_matrix_penultimate(realization)?;
    let he_pen = &he_pen / Complex64::from(he_pen.norm());
    let he_last = exchange_matrix_last(realization)?;
    if delta_h.shape() != he_pen.shape() {
        return Err(Error::DimensionMismatch {
            expected: he_pen.nrows(),
            got: delta_h.nrows(),
        });
    }
    let a = &he_pen * &he_last;
    let e = eig(&a)?;
    let m_idx = selection.select(&e.values, 1)?[0];
    let lambda = e.values[m_idx];
    let scale = e.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let gap = e
        .values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != m_idx)
        .map(|(_, z)| (lambda - z).norm())
        .fold(f64::INFINITY, f64::min);
    if gap < EIGEN_GAP_TOL * scale {
        return Err(Error::EigenGap {
            gap,
            tol: EIGEN_GAP_TOL * scale,
        });
    }
    let w = e.dual_basis()?;
    let v_m = e.vectors.column(m_idx).into_owned();
    let pert = delta_h * &he_last;
    let ev = &pert * &v_m;
    let amp = Complex64::from(sigma_m.sqrt());
    let mut first_order = v_m.clone();
    for kk in (0..e.values.len()).filter(|&i| i != m_idx) {
        let coeff = w.row(kk).transpose().dot(&ev) / (lambda - e.values[kk]);
        first_order += e.vectors.column(kk) * (amp * coeff);
    }

    let perturbed = &a * Complex64::from((1.0 - sigma_m).sqrt()) + &pert * amp;
    let pe = eig(&perturbed)?;
    let target = lambda * (1.0 - sigma_m).sqrt();
    let j = (0..pe.values.len())
        .min_by(|&x, &y| {
            (pe.values[x] - target)
                .norm()
                .total_cmp(&(pe.values[y] - target).norm())
        })
        .expect("nonempty spectrum");
    let x = pe.vectors.column(j).into_owned();
    let proj = w.row(m_idx).transpose().dot(&x);
    if proj.norm() < 1e-300 {
        return Err(Error::Eigen(
            "perturbed eigenvector orthogonal to the dual vector".into(),
        ));
    }
    let exact = x / proj;
    Ok(PerturbedEigvec {
        unperturbed: v_m,
        eigenvalue: lambda,
        first_order,
        exact,
    })
}

/// `Σ_{k≠m} ‖H_e^{[K]}‖² / |λ_m − λ_k|²` for the selected eigenvalue of
/// the normalized exchange product.
pub fn eigvec_sensitivity(realization: &ChannelRealization, selection: &EigenSelection) -> Result<f64> {
    let he_pen = exchange_matrix_penultimate(realization)?;
    let he_pen = &he_pen / Complex64::from(he_pen.norm());
    let he_last = exchange_matrix_last(realization)?;
    let e = eig(&(&he_pen * &he_last))?;
    let m_idx = selection.select(&e.values, 1)?[0];
    let nrm = linalg::spectral_norm(&he_last).powi(2);
    Ok(e.values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != m_idx)
        .map(|(_, z)| nrm / (e.values[m_idx] - z).norm_sqr())
        .sum())
}

#[derive(Serialize, Deserialize)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    /// column-major
    re: Vec<f64>,
    im: Vec<f64>,
}

impl From<&CMat> for MatrixRecord {
    fn from(m: &CMat) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            re: m.iter().map(|z| z.re).collect(),
            im: m.iter().map(|z| z.im).collect(),
        }
    }
}

impl TryFrom<MatrixRecord> for CMat {
    type Error = Error;
    fn try_from(r: MatrixRecord) -> Result<Self> {
        if r.re.len() != r.rows * r.cols || r.im.len() != r.re.len() {
            return Err(Error::Parse("matrix record length mismatch".into()));
        }
        Ok(CMat::from_iterator(
            r.rows,
            r.cols,
            r.re.iter().zip(&r.im).map(|(&a, &b)| Complex64::new(a, b)),
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct PrecoderRecord {
    pattern: AlignmentPattern,
    precoders: Vec<MatrixRecord>,
}

impl PrecoderSet {
    pub fn to_json(&self) -> String {
        let rec = PrecoderRecord {
            pattern: self.pattern,
            precoders: self.v.iter().map(MatrixRecord::from).collect(),
        };
        serde_json::to_string_pretty(&rec).expect("precoders serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: PrecoderRecord = serde_json::from_str(text)?;
        Ok(Self {
            pattern: rec.pattern,
            v: rec.precoders.into_iter().map(CMat::try_from).collect::<Result<_>>()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channels;
    use crate::linalg::c64;
    use crate::rng::{complex_normal_matrix, isotropic_unit, rng_from};

    fn cfg(k: usize, p: f64) -> NetworkConfig {
        NetworkConfig::with_fixed_ratio(k, 1, 3.5, p, 1.0).unwrap()
    }

    fn assert_unit_columns(set: &[CMat]) {
        for mat in set {
            for col in mat.column_iter() {
                assert!((col.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chain_aligns_k4() {
        let c = cfg(4, 100.0);
        for seed in 0..50 {
            let h = generate_channels(&c, seed).unwrap();
            let p = ia_precoders_chain(&c, &h, &EigenSelection::default()).unwrap();
            assert!(alignment_error(&c, &h, &p) < 1e-9);
            assert_unit_columns(&p.v);
        }
    }

    #[test]
    fn exchange_aligns_k4_and_shapes_k5() {
        let c = cfg(4, 100.0);
        for seed in 0..50 {
            let h = generate_channels(&c, seed).unwrap();
            let p = ia_precoders_exchange(&c, &h, &EigenSelection::default()).unwrap();
            assert!(alignment_error(&c, &h, &p) < 1e-9);
        }
        let c5 = cfg(5, 100.0);
        let h = generate_channels(&c5, 1).unwrap();
        let p = ia_precoders_exchange(&c5, &h, &EigenSelection::default()).unwrap();
        assert_eq!(p.v.len(), 5);
        assert!(p.v.iter().all(|v| v.shape() == (4, 1)));
        assert_unit_columns(&p.v);
    }

    #[test]
    fn chain_shape_k6() {
        let c = cfg(6, 100.0);
        let h = generate_channels(&c, 3).unwrap();
        let p = ia_precoders_chain(&c, &h, &EigenSelection::default()).unwrap();
        assert_eq!(p.v.len(), 6);
        assert!(p.v.iter().all(|v| v.shape() == (5, 1)));
        assert_unit_columns(&p.v);
    }

    #[test]
    fn identity_channels_align_trivially() {
        let c = cfg(4, 1.0);
        let grid = vec![vec![CMat::identity(3, 3); 4]; 4];
        let h = ChannelRealization::from_matrices(grid).unwrap();
        assert!((chain_product(&h).unwrap() - CMat::identity(3, 3)).norm() < 1e-15);
        let p = ia_precoders_chain(&c, &h, &EigenSelection::default()).unwrap();
        assert_eq!(alignment_error(&c, &h, &p), 0.0);
    }

    #[test]
    fn exchange_equal_channels_reuse_v1() {
        let c = cfg(4, 1.0);
        let mut rng = rng_from(11);
        let mut grid: Vec<Vec<CMat>> = (0..4)
            .map(|_| (0..4).map(|_| complex_normal_matrix(&mut rng, 3, 3)).collect())
            .collect();
        grid[2][1] = grid[2][0].clone();
        grid[3][1] = grid[3][0].clone();
        let h = ChannelRealization::from_matrices(grid).unwrap();
        let he = exchange_matrix_penultimate(&h).unwrap() * exchange_matrix_last(&h).unwrap();
        assert!((he - CMat::identity(3, 3)).norm() < 1e-12);
        let p = ia_precoders_exchange(&c, &h, &EigenSelection::default()).unwrap();
        assert!(span_residual(&p.v[0], &p.v[1]) < 1e-12);
    }

    #[test]
    fn d2_chain_aligns() {
        let c = NetworkConfig::with_fixed_ratio(4, 2, 3.5, 100.0, 1.0).unwrap();
        let h = generate_channels(&c, 5).unwrap();
        let p = ia_precoders_chain(&c, &h, &EigenSelection::default()).unwrap();
        assert!(p.v.iter().all(|v| v.shape() == (6, 2)));
        assert!(alignment_error(&c, &h, &p) < 1e-9);
        let f = zf_filters(&c, &h, &p).unwrap();
        assert!(total_leakage(&c, &h, &p, &f) < 1e-15 * c.power() * 4.0);
    }

    #[test]
    fn zf_filters_null_interference() {
        let c = cfg(4, 1000.0);
        for seed in 0..20 {
            let h = generate_channels(&c, seed).unwrap();
            let p = ia_precoders_chain(&c, &h, &EigenSelection::default()).unwrap();
            for k in 0..4 {
                let r = zf_receive_filter(&c, &h, &p, k).unwrap();
                for j in (0..4).filter(|&j| j != k) {
                    let leak = r.adjoint() * h.h(k, j) * &p.v[j];
                    assert!(
                        leak[(0, 0)].norm() < 1e-9,
                        "seed {seed} k {k} j {j} leak {}",
                        leak[(0, 0)].norm()
                    );
                }
            }
        }
    }

    #[test]
    fn zf_without_interference_is_matched_filter() {
        let c = cfg(4, 1.0);
        let h = generate_channels(&c, 2).unwrap();
        let mut p = ia_precoders_chain(&c, &h, &EigenSelection::default()).unwrap();
        for j in 1..4 {
            p.v[j] = CMat::zeros(3, 1);
        }
        let r = zf_receive_filter(&c, &h, &p, 0).unwrap();
        let mf = h.h(0, 0) * &p.v[0];
        let mf = &mf / Complex64::from(mf.norm());
        assert!(span_residual(&mf, &r) < 1e-14);
        assert!((r.adjoint() * &mf)[(0, 0)].norm() > 1.0 - 1e-14);
    }

    #[test]
    fn random_precoders_fail_zf_and_misalign() {
        let c = cfg(4, 1.0);
        let h = generate_channels(&c, 4).unwrap();
        let mut rng = rng_from(99);
        let p = PrecoderSet {
            pattern: AlignmentPattern::Chain,
            v: (0..4)
                .map(|_| CMat::from_column_slice(3, 1, isotropic_unit(&mut rng, 3).as_slice()))
                .collect(),
        };
        assert!(matches!(
            zf_receive_filter(&c, &h, &p, 0),
            Err(Error::AlignmentFailed { rank: 3, max: 2, .. })
        ));
        assert!(alignment_error(&c, &h, &p) > 0.1);
    }

    #[test]
    fn throughput_trivial_cases() {
        let c = cfg(4, 1.0);
        let grid = vec![vec![CMat::identity(3, 3); 4]; 4];
        let h = ChannelRealization::from_matrices(grid).unwrap();
        let e1 = CMat::from_column_slice(3, 1, &[c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)]);
        let p = PrecoderSet {
            pattern: AlignmentPattern::Chain,
            v: vec![e1.clone(); 4],
        };
        let f = FilterSet { r: vec![e1; 4] };
        assert!((sum_throughput_perfect(&c, &h, &p, &f) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn scale_invariance() {
        let c = cfg(5, 10.0);
        let h = generate_channels(&c, 8).unwrap();
        let hs = h.scaled(c64(0.3, -2.1));
        for ctor in [ia_precoders_chain, ia_precoders_exchange] {
            let p = ctor(&c, &h, &EigenSelection::default()).unwrap();
            let ps = ctor(&c, &hs, &EigenSelection::default()).unwrap();
            for (a, b) in p.v.iter().zip(&ps.v) {
                assert!(span_residual(a, b) < 1e-9);
            }
            assert!(alignment_error(&c, &hs, &ps) < 1e-9);
        }
    }

    #[test]
    fn selection_variants() {
        let vals = [c64(1.0, 0.0), c64(0.0, 3.0), c64(-2.0, 0.0)];
        assert_eq!(EigenSelection::LargestMagnitude.select(&vals, 2).unwrap(), vec![1, 2]);
        assert_eq!(EigenSelection::SmallestMagnitude.select(&vals, 1).unwrap(), vec![0]);
        assert_eq!(EigenSelection::IndexList(vec![3]).select(&vals, 1).unwrap(), vec![0]);
        assert_eq!(EigenSelection::IndexList(vec![1]).select(&vals, 1).unwrap(), vec![1]);
        assert!(EigenSelection::IndexList(vec![2, 2]).select(&vals, 2).is_err());
        assert!(EigenSelection::IndexList(vec![0]).select(&vals, 1).is_err());
        assert!(EigenSelection::IndexList(vec![4]).select(&vals, 1).is_err());
        let c = cfg(4, 1.0);
        let h = generate_channels(&c, 6).unwrap();
        for sel in [EigenSelection::SmallestMagnitude, EigenSelection::IndexList(vec![2])] {
            let p = ia_precoders_chain(&c, &h, &sel).unwrap();
            assert!(alignment_error(&c, &h, &p) < 1e-9);
        }
    }

    #[test]
    fn perturbation_zero_sigma() {
        let c = cfg(4, 1.0);
        let h = generate_channels(&c, 10).unwrap();
        let mut rng = rng_from(1);
        let dh = complex_normal_matrix(&mut rng, 3, 3);
        let dh = &dh / Complex64::from(dh.norm());
        let out = perturbed_v1(&h, &EigenSelection::default(), &dh, 0.0).unwrap();
        assert!((&out.first_order - &out.unperturbed).norm() < 1e-14);
        assert!((&out.exact - &out.unperturbed).norm() < 1e-10);
        assert!(matches!(
            perturbed_v1(&h, &EigenSelection::default(), &CMat::zeros(3, 3), 0.1),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let c = cfg(4, 1.0);
        let h = generate_channels(&c, 12).unwrap();
        let p = ia_precoders_exchange(&c, &h, &EigenSelection::default()).unwrap();
        let back = PrecoderSet::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }
}
