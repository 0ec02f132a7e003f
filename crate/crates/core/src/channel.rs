//! Network scenarios, node geometry and seeded channel realizations.
//!
//! Indices are zero-based throughout: `h(k, j)` is the fading matrix from
//! transmitter `j` to receiver `k`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, CMat};
use crate::rng::{complex_normal_matrix, rng_from};

/// Default 2-norm condition-number cap for drawn channel matrices.
pub const DEFAULT_CONDITION_CAP: f64 = 1e6;
/// Default number of draws per matrix before generation gives up.
pub const DEFAULT_RETRY_LIMIT: usize = 1000;

/// One K-user MIMO interference-channel scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    k: usize,
    m: usize,
    d: usize,
    alpha: f64,
    power: f64,
    distances: DMatrix<f64>,
}

impl NetworkConfig {
    /// Validates and builds a scenario. `distances[(k, j)]` is the
    /// receiver-`k` / transmitter-`j` distance, with unit diagonal.
    pub fn new(k: usize, m: usize, d: usize, alpha: f64, power: f64, distances: DMatrix<f64>) -> Result<Self> {
        if k < 4 {
            return Err(Error::InvalidConfig(format!("K = {k}, need K >= 4")));
        }
        if d < 1 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if m != (k - 1) * d {
            return Err(Error::InvalidConfig(format!(
                "M = {m} but closed-form alignment needs M = (K-1)d = {}",
                (k - 1) * d
            )));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidConfig(format!("alpha = {alpha}")));
        }
        if !(power.is_finite() && power > 0.0) {
            return Err(Error::InvalidConfig(format!("P = {power} must be positive")));
        }
        if distances.shape() != (k, k) {
            return Err(Error::InvalidConfig(format!(
                "distance matrix is {:?}, expected ({k}, {k})",
                distances.shape()
            )));
        }
        for r in 0..k {
            for c in 0..k {
                let v = distances[(r, c)];
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidConfig(format!("distance[{r}][{c}] = {v}")));
                }
            }
            if distances[(r, r)] != 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "distance[{r}][{r}] = {} (diagonal is normalized to 1)",
                    distances[(r, r)]
                )));
            }
        }
        Ok(Self {
            k,
            m,
            d,
            alpha,
            power,
            distances,
        })
    }

    /// Scenario with every cross distance equal to `ratio` and `M = (K-1)d`.
    pub fn with_fixed_ratio(k: usize, d: usize, alpha: f64, power: f64, ratio: f64) -> Result<Self> {
        let dist = fixed_ratio_distances(k, ratio);
        Self::new(k, (k.max(1) - 1) * d, d, alpha, power, dist)
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn power(&self) -> f64 {
        self.power
    }
    pub fn distances(&self) -> &DMatrix<f64> {
        &self.distances
    }
    pub fn distance(&self, k: usize, j: usize) -> f64 {
        self.distances[(k, j)]
    }

    /// `d_{kj}^{-α}`.
    pub fn path_gain(&self, k: usize, j: usize) -> f64 {
        self.distances[(k, j)].powf(-self.alpha)
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * self.power.log10()
    }

    /// Same scenario at a different transmit power.
    pub fn with_power(&self, power: f64) -> Result<Self> {
        Self::new(self.k, self.m, self.d, self.alpha, power, self.distances.clone())
    }

    /// Same scenario with a different geometry.
    pub fn with_distances(&self, distances: DMatrix<f64>) -> Result<Self> {
        Self::new(self.k, self.m, self.d, self.alpha, self.power, distances)
    }

    pub(crate) fn check_index(&self, what: &'static str, index: usize) -> Result<()> {
        if index >= self.k {
            Err(Error::IndexOutOfRange {
                what,
                index,
                bound: self.k,
            })
        } else {
            Ok(())
        }
    }
}

/// Converts an SNR in dB to linear transmit power (unit noise, `d_kk = 1`).
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn fixed_ratio_distances(k: usize, ratio: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |r, c| if r == c { 1.0 } else { ratio })
}

/// Draws off-diagonal distance ratios i.i.d. uniform on `[low, high]`.
pub fn sample_distance_ratios(k: usize, low: f64, high: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(low.is_finite() && high.is_finite()) || low < 1.0 || low > high {
        return Err(Error::InvalidConfig(format!(
            "distance ratio range [{low}, {high}] must satisfy 1 <= low <= high"
        )));
    }
    if low == high {
        return Ok(fixed_ratio_distances(k, low));
    }
    let mut rng = rng_from(seed);
    let mut out = DMatrix::from_element(k, k, 1.0);
    // row-major draw order so the matrix reads naturally in the seed stream
    for r in 0..k {
        for c in 0..k {
            if r != c {
                out[(r, c)] = rng.random_range(low..=high);
            }
        }
    }
    Ok(out)
}

/// One draw of the K×K grid of M×M fading matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    k: usize,
    m: usize,
    h: Vec<CMat>,
    /// Number of matrices discarded for exceeding the condition cap.
    pub redraws: usize,
}

impl ChannelRealization {
    /// Builds a realization from explicit matrices; `grid[k][j]` is receiver
    /// `k` from transmitter `j`.
    pub fn from_matrices(grid: Vec<Vec<CMat>>) -> Result<Self> {
        let k = grid.len();
        if k == 0 {
            return Err(Error::InvalidConfig("empty channel grid".into()));
        }
        let m = grid[0].first().map(|h| h.nrows()).unwrap_or(0);
        let mut h = Vec::with_capacity(k * k);
        for row in grid {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: row.len(),
                });
            }
            for mat in row {
                if mat.shape() != (m, m) {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        got: mat.nrows(),
                    });
                }
                h.push(mat);
            }
        }
        Ok(Self { k, m, h, redraws: 0 })
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn m(&self) -> usize {
        self.m
    }

    /// `H^{[kj]}`: receiver `k`, transmitter `j`.
    #[inline]
    pub fn h(&self, k: usize, j: usize) -> &CMat {
        &self.h[k * self.k + j]
    }

    /// Every matrix multiplied by the same complex scalar.
    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            k: self.k,
            m: self.m,
            h: self.h.iter().map(|x| x * c).collect(),
            redraws: self.redraws,
        }
    }

    pub(crate) fn check_against(&self, config: &NetworkConfig) -> Result<()> {
        if self.k != config.k() {
            return Err(Error::DimensionMismatch {
                expected: config.k(),
                got: self.k,
            });
        }
        if self.m != config.m() {
            return Err(Error::DimensionMismatch {
                expected: config.m(),
                got: self.m,
            });
        }
        Ok(())
    }
}

/// Redraw policy for ill-conditioned matrices.
#[derive(Debug, Clone, Copy)]
pub struct ChannelOptions {
    pub condition_cap: f64,
    pub retry_limit: usize,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        Self {
            condition_cap: DEFAULT_CONDITION_CAP,
            retry_limit: DEFAULT_RETRY_LIMIT,
        }
    }
}

/// Draws i.i.d. CN(0,1) channels with the default redraw policy.
pub fn generate_channels(config: &NetworkConfig, seed: u64) -> Result<ChannelRealization> {
    generate_channels_with(config, seed, ChannelOptions::default())
}

pub fn generate_channels_with(config: &NetworkConfig, seed: u64, opts: ChannelOptions) -> Result<ChannelRealization> {
    let (k, m) = (config.k(), config.m());
    let mut rng = rng_from(seed);
    let mut h = Vec::with_capacity(k * k);
    let mut redraws = 0;
    for rx in 0..k {
        for tx in 0..k {
            let mut attempts = 0;
            loop {
                attempts += 1;
                let mat = complex_normal_matrix(&mut rng, m, m);
                if condition_number(&mat) <= opts.condition_cap {
                    h.push(mat);
                    break;
                }
                redraws += 1;
                if attempts >= opts.retry_limit {
                    return Err(Error::GenerationFailure { rx, tx, attempts });
                }
            }
        }
    }
    Ok(ChannelRealization { k, m, h, redraws })
}

/// `d_{kj}^{-α/2} H^{[kj]}`.
pub fn effective_channel(config: &NetworkConfig, realization: &ChannelRealization, k: usize, j: usize) -> Result<CMat> {
    config.check_index("receiver", k)?;
    config.check_index("transmitter", j)?;
    realization.check_against(config)?;
    let scale = config.distance(k, j).powf(-config.alpha() / 2.0);
    Ok(realization.h(k, j) * Complex64::from(scale))
}

/// How cross distances are produced for a scenario file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    FixedRatio,
    UniformRatio,
}

/// On-disk scenario description (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub d: usize,
    pub alpha: f64,
    #[serde(rename = "P_dB")]
    pub p_db: f64,
    pub distance_mode: DistanceMode,
    pub ratio_low: f64,
    pub ratio_high: f64,
    pub seed: u64,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            k: 4,
            m: 3,
            d: 1,
            alpha: 3.5,
            p_db: 20.0,
            distance_mode: DistanceMode::UniformRatio,
            ratio_low: 1.0,
            ratio_high: 3.0,
            seed: 1,
        }
    }
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Geometry for the given seed (ignored in fixed-ratio mode).
    pub fn distances(&self, seed: u64) -> Result<DMatrix<f64>> {
        match self.distance_mode {
            DistanceMode::FixedRatio => {
                if self.ratio_low != self.ratio_high {
                    return Err(Error::InvalidConfig("fixed_ratio needs ratio_low == ratio_high".into()));
                }
                sample_distance_ratios(self.k, self.ratio_low, self.ratio_high, seed)
            }
            DistanceMode::UniformRatio => sample_distance_ratios(self.k, self.ratio_low, self.ratio_high, seed),
        }
    }

    /// Resolves to a validated config, drawing geometry from `self.seed`.
    pub fn to_config(&self) -> Result<NetworkConfig> {
        NetworkConfig::new(
            self.k,
            self.m,
            self.d,
            self.alpha,
            db_to_linear(self.p_db),
            self.distances(self.seed)?,
        )
    }
}
