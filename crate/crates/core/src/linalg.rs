//! Small dense complex linear algebra on top of `nalgebra`.
//!
//! Matrices here are tiny (M ≤ 10), so everything is dynamic-sized and
//! allocation is not a concern.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Rank threshold used when splitting a column set into span and complement.
pub const RANK_TOL: f64 = 1e-6;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `a^{-1} b`, computed by LU solve rather than an explicit inverse.
pub fn solve(a: &CMat, b: &CMat) -> Result<CMat> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{}x{} system", a.nrows(), a.ncols())))
}

/// 2-norm condition number. Returns `f64::INFINITY` for singular input.
pub fn condition_number(a: &CMat) -> f64 {
    let sv = singular_values(a);
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Largest singular value.
pub fn spectral_norm(a: &CMat) -> f64 {
    singular_values(a).iter().cloned().fold(0.0_f64, f64::max)
}

/// One-sided (Hestenes) Jacobi orthogonalization of the columns of `a`.
/// Returns the rotated columns, which are mutually orthogonal and whose
/// norms are the singular values; their span equals `span(a)`.
fn jacobi_columns(a: &CMat) -> CMat {
    let mut w = a.clone();
    let n = w.ncols();
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = w.column(i).norm_squared();
                let beta = w.column(j).norm_squared();
                let gamma = w.column(i).dotc(&w.column(j));
                let g = gamma.norm();
                if g <= f64::EPSILON * (alpha * beta).sqrt() || g == 0.0 {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let ci = w.column(i).into_owned();
                let cj = w.column(j) * phase.conj();
                w.set_column(i, &(&ci * Complex64::from(c) - &cj * Complex64::from(s)));
                w.set_column(j, &(&ci * Complex64::from(s) + &cj * Complex64::from(c)));
            }
        }
        if !rotated {
            break;
        }
    }
    w
}

/// Singular values of `a` in descending order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    let w = if a.nrows() < a.ncols() {
        jacobi_columns(&a.adjoint())
    } else {
        jacobi_columns(a)
    };
    let mut sv: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Rotates `v` so that its first component with non-negligible magnitude is
/// real and positive.
pub fn phase_fix(v: &mut CVec) {
    let norm = v.norm();
    if norm == 0.0 {
        return;
    }
    if let Some(lead) = v.iter().find(|z| z.norm() > 1e-12 * norm).copied() {
        let rot = lead.conj() / lead.norm();
        v.iter_mut().for_each(|z| *z *= rot);
    }
}

/// Unit-norm copy of `v`; `None` for the zero vector.
pub fn unit(v: &CVec) -> Option<CVec> {
    let n = v.norm();
    (n > 0.0).then(|| v / Complex64::from(n))
}

/// Eigen-decomposition of a general complex square matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<Complex64>,
    /// Unit-norm, phase-fixed right eigenvectors as columns, in the same
    /// order as `values`.
    pub vectors: CMat,
}

impl Eigen {
    /// Rows of `V^{-1}`: left eigenvectors scaled so that `w_k† v_j = δ_kj`.
    pub fn dual_basis(&self) -> Result<CMat> {
        self.vectors
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Eigen("eigenvector matrix is singular".into()))
    }
}

/// Complex Schur form followed by triangular back-substitution for each
/// eigenvector.
pub fn eig(a: &CMat) -> Result<Eigen> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(Error::Eigen(format!("matrix is {}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Eigen("non-finite entry".into()));
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();

    let scale = t.norm().max(f64::MIN_POSITIVE);
    let smin = f64::EPSILON * scale;
    let values: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (i, &lambda) in values.iter().enumerate() {
        let mut x = CVec::zeros(n);
        x[i] = ONE;
        for j in (0..i).rev() {
            let mut acc = ZERO;
            for l in (j + 1)..=i {
                acc += t[(j, l)] * x[l];
            }
            let mut den = t[(j, j)] - lambda;
            if den.norm() < smin {
                den = Complex64::from(smin);
            }
            x[j] = -acc / den;
        }
        let mut v = &q * x;
        v = unit(&v).ok_or_else(|| Error::Eigen("zero eigenvector".into()))?;
        phase_fix(&mut v);
        vectors.set_column(i, &v);
    }
    Ok(Eigen { values, vectors })
}

/// Columns of `a` scaled to unit norm; zero columns are left as zero.
pub fn normalize_columns(a: &CMat) -> CMat {
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= Complex64::from(n);
        }
    }
    out
}

/// Orthonormal basis (as columns) of the numerical span of the columns of
/// `a`, with rank decided relative to the largest singular value of the
/// column-normalized matrix.
pub fn span_basis(a: &CMat, rel_tol: f64) -> CMat {
    let m = a.nrows();
    if a.ncols() == 0 {
        return CMat::zeros(m, 0);
    }
    let a = normalize_columns(a);
    let w = jacobi_columns(&a);
    let sv: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return CMat::zeros(m, 0);
    }
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > rel_tol * smax).collect();
    CMat::from_fn(m, keep.len(), |r, c| w[(r, keep[c])] / sv[keep[c]])
}

/// Orthogonal projection of `x` onto the complement of `span(basis)`,
/// where `basis` has orthonormal columns. Applied twice for accuracy.
pub fn project_out(basis: &CMat, x: &CVec) -> CVec {
    let mut y = x.clone();
    for _ in 0..2 {
        let coeffs = basis.ad_mul(&y);
        y -= basis * coeffs;
    }
    y
}

/// `‖(I − P_A) B‖_F / ‖B‖_F`, with `P_A` the orthogonal projector on
/// `span(A)`. Zero when `B` is zero.
pub fn span_residual(a: &CMat, b: &CMat) -> f64 {
    let bn = b.norm();
    if bn == 0.0 {
        return 0.0;
    }
    let basis = span_basis(a, 1e-12);
    let mut res = 0.0;
    for col in b.column_iter() {
        let r = project_out(&basis, &col.into_owned());
        res += r.norm_squared();
    }
    res.sqrt() / bn
}

/// Modified Gram-Schmidt on the columns of `a`. Fails if a column is
/// numerically dependent on the earlier ones.
pub fn orthonormalize(a: &CMat) -> Option<CMat> {
    let mut q = CMat::zeros(a.nrows(), a.ncols());
    for j in 0..a.ncols() {
        let mut v = a.column(j).into_owned();
        let n0 = v.norm();
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dotc(&v);
                v -= qi * proj;
            }
        }
        let n = v.norm();
        if n <= 1e-12 * n0.max(f64::MIN_POSITIVE) || n == 0.0 {
            return None;
        }
        q.set_column(j, &(v / Complex64::from(n)));
    }
    Some(q)
}

/// `|a† b|²`.
#[inline]
pub fn abs2_inner(a: &CVec, b: &CVec) -> f64 {
    a.dotc(b).norm_sqr()
}
