//! Random vector quantization (RVQ) of unit beamformers and normalized
//! channel matrices.
//!
//! Codebooks hold `2^B` i.i.d. isotropic unit vectors; a source is mapped
//! to the entry at minimum chordal distance. Above a configurable bit
//! count the search is replaced by an exact sampler of the resulting
//! distortion.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};
use crate::rng::{complex_normal, orthogonal_unit, rng_from};

/// Largest codebook the explicit quantizer will enumerate by default.
pub const DEFAULT_EXPLICIT_CAP: u32 = 24;

/// `Γ̄(M) = Γ(1/(M−1)) / (M−1)`.
pub fn gamma_bar(dim: usize) -> f64 {
    assert!(dim >= 2, "gamma_bar needs dim >= 2");
    let m1 = (dim - 1) as f64;
    gamma(1.0 / m1) / m1
}

/// Upper bound on the mean RVQ distortion: `Γ̄(dim)·2^{−B/(dim−1)}`.
pub fn distortion_bound(dim: usize, bits: f64) -> f64 {
    gamma_bar(dim) * (-bits / (dim - 1) as f64).exp2()
}

/// An explicit RVQ codebook, stored as `2^B` contiguous unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    bits: u32,
    seed: u64,
    data: Vec<Complex64>,
}

fn fill_entry<R: Rng + ?Sized>(rng: &mut R, out: &mut [Complex64]) {
    loop {
        let mut n2 = 0.0;
        for z in out.iter_mut() {
            *z = complex_normal(rng);
            n2 += z.norm_sqr();
        }
        if n2 > 1e-300 {
            let inv = 1.0 / n2.sqrt();
            for z in out.iter_mut() {
                *z *= inv;
            }
            return;
        }
    }
}

#[inline]
fn score(v: &[Complex64], w: &[Complex64]) -> f64 {
    v.iter()
        .zip(w)
        .fold(Complex64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b)
        .norm_sqr()
}

fn check_bits(bits: u32, cap: u32) -> Result<()> {
    if bits > cap || bits >= usize::BITS {
        Err(Error::CodebookTooLarge { bits, cap })
    } else {
        Ok(())
    }
}

/// Builds a `2^bits`-entry codebook in `C^dim`, refusing `bits` above
/// [`DEFAULT_EXPLICIT_CAP`].
pub fn build_codebook(dim: usize, bits: u32, seed: u64) -> Result<Codebook> {
    build_codebook_capped(dim, bits, seed, DEFAULT_EXPLICIT_CAP)
}

pub fn build_codebook_capped(dim: usize, bits: u32, seed: u64, cap: u32) -> Result<Codebook> {
    if dim == 0 {
        return Err(Error::Precondition("codebook dimension must be positive".into()));
    }
    check_bits(bits, cap)?;
    let n = 1usize << bits;
    let mut rng = rng_from(seed);
    let mut data = vec![Complex64::new(0.0, 0.0); n * dim];
    for chunk in data.chunks_exact_mut(dim) {
        fill_entry(&mut rng, chunk);
    }
    Ok(Codebook { dim, bits, seed, data })
}

impl Codebook {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn bits(&self) -> u32 {
        self.bits
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn entry(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
    pub fn entry_vec(&self, i: usize) -> CVec {
        CVec::from_column_slice(self.entry(i))
    }

    /// Codebook from explicit entries (normalized on the way in).
    pub fn from_entries(entries: &[CVec]) -> Result<Self> {
        let dim = entries
            .first()
            .map(|e| e.len())
            .ok_or(Error::Precondition("empty codebook".into()))?;
        if !entries.len().is_power_of_two() {
            return Err(Error::Precondition("codebook size must be a power of two".into()));
        }
        let mut data = Vec::with_capacity(entries.len() * dim);
        for e in entries {
            if e.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: e.len(),
                });
            }
            let n = e.norm();
            if n == 0.0 {
                return Err(Error::ZeroMatrix);
            }
            data.extend(e.iter().map(|z| z / n));
        }
        Ok(Self {
            dim,
            bits: entries.len().trailing_zeros(),
            seed: 0,
            data,
        })
    }

    /// File name used by [`load_or_build`].
    pub fn cache_name(dim: usize, bits: u32, seed: u64) -> String {
        format!("rvq_d{dim}_b{bits}_s{seed}.bin")
    }

    /// Little-endian binary image: magic, dim, bits, seed, then
    /// interleaved re/im pairs.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&self.bits.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for z in &self.data {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a codebook cache file".into()));
        }
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b8)?;
        let dim = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4)?;
        let bits = u32::from_le_bytes(b4);
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        check_bits(bits, 40)?;
        let n = (1usize << bits) * dim;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != n * 16 {
            return Err(Error::Parse(format!(
                "codebook payload has {} bytes, want {}",
                raw.len(),
                n * 16
            )));
        }
        let data = raw
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        Ok(Self { dim, bits, seed, data })
    }
}

const MAGIC: &[u8; 4] = b"RVQ1";

/// Loads `(dim, bits, seed)` from `dir`, building and storing it on a miss.
pub fn load_or_build(dir: &Path, dim: usize, bits: u32, seed: u64) -> Result<Codebook> {
    let path: PathBuf = dir.join(Codebook::cache_name(dim, bits, seed));
    if let Ok(f) = fs::File::open(&path) {
        let cb = Codebook::read_from(std::io::BufReader::new(f))?;
        if cb.dim == dim && cb.bits == bits && cb.seed == seed {
            return Ok(cb);
        }
    }
    let cb = build_codebook(dim, bits, seed)?;
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    {
        let mut w = std::io::BufWriter::new(fs::File::create(&tmp)?);
        cb.write_to(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(cb)
}

/// Outcome of quantizing a unit vector `v`:
/// `quantized = √(1−σ)·v + √σ·error_direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    /// Selected entry, rotated so that `v†quantized` is real and nonnegative.
    pub quantized: CVec,
    /// `sin²` of the angle between `v` and the selected entry.
    pub sigma: f64,
    /// Unit vector orthogonal to `v`.
    pub error_direction: CVec,
    /// Codebook index, absent for the sampled and bypass paths.
    pub index: Option<usize>,
}

fn check_unit(v: &CVec) -> Result<()> {
    if (v.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!("source vector has norm {}", v.norm())));
    }
    Ok(())
}

/// Deterministic unit vector orthogonal to `v`, used when `σ = 0`.
fn fallback_direction(v: &CVec) -> CVec {
    let i = (0..v.len())
        .min_by(|&a, &b| v[a].norm().total_cmp(&v[b].norm()))
        .unwrap_or(0);
    let mut e = CVec::zeros(v.len());
    if v.len() < 2 {
        return e;
    }
    e[i] = Complex64::new(1.0, 0.0);
    let w = &e - v * v.dotc(&e);
    let n = w.norm();
    w / Complex64::from(n)
}

/// Decomposes a chosen unit entry `w` against the source `v`.
fn decompose(v: &CVec, w: &[Complex64], index: Option<usize>) -> QuantizationResult {
    let w = CVec::from_column_slice(w);
    let c = v.dotc(&w);
    let rotated = if c.norm() > 0.0 { &w * (c.conj() / c.norm()) } else { w };
    let along = v.dotc(&rotated).re;
    let perp = &rotated - v * Complex64::from(along);
    let sigma = perp.norm_squared().min(1.0);
    let dir = if sigma > 0.0 {
        &perp / Complex64::from(sigma.sqrt())
    } else {
        fallback_direction(v)
    };
    QuantizationResult {
        quantized: rotated,
        sigma,
        error_direction: dir,
        index,
    }
}

/// Minimum chordal distance search over an explicit codebook. Ties go to
/// the lowest index.
pub fn quantize_vector(v: &CVec, codebook: &Codebook) -> Result<QuantizationResult> {
    if v.len() != codebook.dim {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim,
            got: v.len(),
        });
    }
    check_unit(v)?;
    let vs = v.as_slice();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..codebook.len() {
        let s = score(vs, codebook.entry(i));
        if s > best_score {
            best_score = s;
            best = i;
        }
    }
    Ok(decompose(v, codebook.entry(best), Some(best)))
}

/// Same result as building the `(dim, bits, seed)` codebook and calling
/// [`quantize_vector`], without holding the codebook in memory.
pub fn quantize_streaming(v: &CVec, bits: u32, seed: u64, cap: u32) -> Result<QuantizationResult> {
    check_unit(v)?;
    check_bits(bits, cap)?;
    let dim = v.len();
    let vs = v.as_slice();
    let mut rng = rng_from(seed);
    let mut buf = vec![Complex64::new(0.0, 0.0); dim];
    let mut best = vec![Complex64::new(0.0, 0.0); dim];
    let mut best_idx = 0;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..(1usize << bits) {
        fill_entry(&mut rng, &mut buf);
        let s = score(vs, &buf);
        if s > best_score {
            best_score = s;
            best_idx = i;
            best.copy_from_slice(&buf);
        }
    }
    Ok(decompose(v, &best, Some(best_idx)))
}

/// Inverse CDF of the RVQ distortion: `σ = (1 − (1−u)^{1/N})^{1/(dim−1)}`
/// with `N = 2^bits`.
pub fn rvq_sigma_from_uniform(u: f64, dim: usize, bits: f64) -> f64 {
    let n = bits.exp2();
    let x = -((-u).ln_1p() / n).exp_m1();
    x.clamp(0.0, 1.0).powf(1.0 / (dim - 1) as f64)
}

/// Draws the distortion of a `2^bits`-entry RVQ codebook in `C^dim`.
pub fn sample_rvq_distortion<R: Rng + ?Sized>(rng: &mut R, dim: usize, bits: f64) -> f64 {
    assert!(dim >= 2, "RVQ distortion needs dim >= 2");
    let u: f64 = rng.random();
    rvq_sigma_from_uniform(u, dim, bits)
}

/// Quantization by sampling `σ` and an error direction uniform on the
/// orthogonal complement of `v`.
pub fn quantize_statistical<R: Rng + ?Sized>(rng: &mut R, v: &CVec, bits: f64) -> Result<QuantizationResult> {
    check_unit(v)?;
    if v.len() < 2 {
        return Err(Error::Precondition("statistical RVQ needs dim >= 2".into()));
    }
    let sigma = sample_rvq_distortion(rng, v.len(), bits);
    let dir = orthogonal_unit(rng, v);
    let q = v * Complex64::from((1.0 - sigma).sqrt()) + &dir * Complex64::from(sigma.sqrt());
    Ok(QuantizationResult {
        quantized: q,
        sigma,
        error_direction: dir,
        index: None,
    })
}

/// How a bit budget is turned into a quantized vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QuantizerMode {
    /// Infinite-resolution surrogate: returns the input, `σ = 0`.
    Perfect,
    /// Always search an explicit codebook (fails above `cap`).
    Explicit { cap: u32 },
    /// Always sample the distortion law.
    Statistical,
    /// Explicit search up to `explicit_max_bits`, sampling above.
    Auto { explicit_max_bits: u32 },
}

impl Default for QuantizerMode {
    fn default() -> Self {
        QuantizerMode::Auto {
            explicit_max_bits: DEFAULT_EXPLICIT_CAP,
        }
    }
}

impl QuantizerMode {
    /// Quantizes `v` with `bits` bits; `seed` drives both the codebook and
    /// the sampler.
    pub fn quantize(&self, v: &CVec, bits: u32, seed: u64) -> Result<QuantizationResult> {
        match *self {
            QuantizerMode::Perfect => {
                check_unit(v)?;
                Ok(QuantizationResult {
                    quantized: v.clone(),
                    sigma: 0.0,
                    error_direction: fallback_direction(v),
                    index: None,
                })
            }
            QuantizerMode::Explicit { cap } => quantize_streaming(v, bits, seed, cap),
            QuantizerMode::Statistical => quantize_statistical(&mut rng_from(seed), v, bits as f64),
            QuantizerMode::Auto { explicit_max_bits } => {
                if bits <= explicit_max_bits.min(DEFAULT_EXPLICIT_CAP) {
                    quantize_streaming(v, bits, seed, DEFAULT_EXPLICIT_CAP)
                } else {
                    quantize_statistical(&mut rng_from(seed), v, bits as f64)
                }
            }
        }
    }
}

/// Quantized channel matrix and its direction distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixQuantization {
    /// `‖H‖_F · reshape(quantized vec(H)/‖H‖_F)`.
    pub h_hat: CMat,
    pub sigma: f64,
    /// Unit-Frobenius error matrix orthogonal to `H/‖H‖_F`.
    pub delta: CMat,
}

/// Quantizes the direction of `vec(H)` in dimension `M²` and rescales by
/// the exact Frobenius norm.
pub fn quantize_channel_matrix(h: &CMat, bits: u32, seed: u64, mode: QuantizerMode) -> Result<MatrixQuantization> {
    let norm = h.norm();
    if norm == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let (r, c) = h.shape();
    let v = CVec::from_column_slice((h / Complex64::from(norm)).as_slice());
    let q = mode.quantize(&v, bits, seed)?;
    let nz = Complex64::from(norm);
    Ok(MatrixQuantization {
        h_hat: CMat::from_column_slice(r, c, q.quantized.as_slice()) * nz,
        sigma: q.sigma,
        delta: CMat::from_column_slice(r, c, q.error_direction.as_slice()),
    })
}
