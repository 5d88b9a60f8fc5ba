//! Dense complex square matrices: the finite von Neumann algebra `M_m(C)` with
//! its standard (unnormalized) trace.
//!
//! Everything spectral goes through [`herm_eig`], a cyclic complex Jacobi
//! solver. Singular values, `|x|^p`, Schatten norms and PSD checks are all
//! derived from the eigendecomposition of `x* x`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const HERMITIAN_TOL: f64 = 1e-10;
const JACOBI_REL_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Row-major `n x n` complex matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    n: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({}x{})", self.n, self.n)?;
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|j| {
                    let z = self[(i, j)];
                    format!("{:+.4}{:+.4}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        CMatrix {
            n,
            data: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn scalar(z: C64) -> Self {
        CMatrix { n: 1, data: vec![z] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        CMatrix { n, data }
    }

    /// Builds a matrix from row-major entries, rejecting non-finite values.
    pub fn from_row_major(n: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!(
                "{} entries cannot form a {n}x{n} matrix",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Param("matrix entries must be finite".into()));
        }
        Ok(CMatrix { n, data })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend(r.iter().map(|&x| C64::new(x, 0.0)));
        }
        Self::from_row_major(n, data)
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, z: C64) -> Self {
        CMatrix {
            n: self.n,
            data: self.data.iter().map(|&x| x * z).collect(),
        }
    }

    pub fn scale_real(&self, r: f64) -> Self {
        CMatrix {
            n: self.n,
            data: self.data.iter().map(|&x| x * r).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise deviation from `other`.
    pub fn max_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.n, other.n, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `x* x`.
    pub fn gram(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for k in 0..n {
            for i in 0..n {
                let a = self[(k, i)].conj();
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * self.data[k * n + j];
                }
            }
        }
        out
    }

    /// `tau(x* y)`, the Hilbert-Schmidt pairing.
    pub fn hs_dot(&self, other: &CMatrix) -> C64 {
        assert_eq!(self.n, other.n, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    fn symmetrized(&self) -> Self {
        Self::from_fn(self.n, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    pub fn block_diag(blocks: &[&CMatrix]) -> Self {
        let n: usize = blocks.iter().map(|b| b.n).sum();
        let mut out = Self::zeros(n);
        let mut off = 0;
        for b in blocks {
            for i in 0..b.n {
                for j in 0..b.n {
                    out[(off + i, off + j)] = b[(i, j)];
                }
            }
            off += b.n;
        }
        out
    }

    /// Matrix unit `e_{pq}`.
    pub fn unit(n: usize, p: usize, q: usize) -> Self {
        let mut m = Self::zeros(n);
        m[(p, q)] = C64::new(1.0, 0.0);
        m
    }

    pub(crate) fn add_scaled(&mut self, other: &CMatrix, z: C64) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * z;
        }
    }

    pub(crate) fn mul_into(&self, rhs: &CMatrix, out: &mut CMatrix) {
        let n = self.n;
        debug_assert!(rhs.n == n && out.n == n);
        out.data.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let row = &rhs.data[k * n..(k + 1) * n];
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (o, b) in dst.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        CMatrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        CMatrix {
            n: self.n,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        let mut out = CMatrix::zeros(self.n);
        self.mul_into(rhs, &mut out);
        out
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_real(-1.0)
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.n, rhs.n, "dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

/// Eigendecomposition `H = U diag(lambda) U*` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermEig {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Unitary whose columns are the matching eigenvectors.
    pub vectors: CMatrix,
    pub sweeps: usize,
}

impl HermEig {
    pub fn reconstruct(&self) -> CMatrix {
        spectral_apply(&self.vectors, &self.values, |x| x)
    }
}

fn ensure_hermitian(h: &CMatrix) -> Result<()> {
    let defect = h.hermitian_defect();
    if defect > HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    Ok(())
}

/// Cyclic Jacobi eigensolver for Hermitian matrices.
///
/// The input is symmetrized first. Each rotation first removes the phase of
/// the pivot `h_pq` with a diagonal unitary and then applies the real Jacobi
/// rotation that annihilates it.
pub fn herm_eig(h: &CMatrix) -> Result<HermEig> {
    ensure_hermitian(h)?;
    let n = h.dim();
    let mut a = h.symmetrized();
    let mut u = CMatrix::identity(n);
    let scale = a.frobenius();
    let mut sweeps = 0;
    if n > 1 && scale > 0.0 {
        let threshold = JACOBI_REL_TOL * scale;
        while sweeps < JACOBI_MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            if off < threshold {
                break;
            }
            sweeps += 1;
            for p in 0..n - 1 {
                for q in p + 1..n {
                    rotate(&mut a, &mut u, p, q);
                }
            }
        }
    }
    let mut order: Vec<(f64, usize)> = (0..n).map(|i| (a[(i, i)].re, i)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let values = order.iter().map(|&(v, _)| v).collect();
    let vectors = CMatrix::from_fn(n, |i, j| u[(i, order[j].1)]);
    Ok(HermEig {
        values,
        vectors,
        sweeps,
    })
}

fn rotate(a: &mut CMatrix, u: &mut CMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    // Skip rotations that cannot change the diagonal in floating point.
    if mag < f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
        a[(p, q)] = C64::new(0.0, 0.0);
        a[(q, p)] = C64::new(0.0, 0.0);
        return;
    }
    let phase = apq / mag;
    let theta = (aqq - app) / (2.0 * mag);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    // V restricted to (p, q): [[c, s], [-s e^{-i phi}, c e^{-i phi}]].
    let ph = phase.conj();
    let vpp = C64::new(c, 0.0);
    let vpq = C64::new(s, 0.0);
    let vqp = ph * (-s);
    let vqq = ph * c;
    let n = a.dim();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * vpp + akq * vqp;
        a[(k, q)] = akp * vpq + akq * vqq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = vpp.conj() * apk + vqp.conj() * aqk;
        a[(q, k)] = vpq.conj() * apk + vqq.conj() * aqk;
    }
    a[(p, q)] = C64::new(0.0, 0.0);
    a[(q, p)] = C64::new(0.0, 0.0);
    a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
    for k in 0..n {
        let ukp = u[(k, p)];
        let ukq = u[(k, q)];
        u[(k, p)] = ukp * vpp + ukq * vqp;
        u[(k, q)] = ukp * vpq + ukq * vqq;
    }
}

/// `U diag(g(lambda)) U*`.
fn spectral_apply(u: &CMatrix, values: &[f64], g: impl Fn(f64) -> f64) -> CMatrix {
    let n = u.dim();
    let gv: Vec<f64> = values.iter().map(|&l| g(l)).collect();
    CMatrix::from_fn(n, |i, j| {
        (0..n)
            .map(|k| u[(i, k)] * gv[k] * u[(j, k)].conj())
            .sum()
    })
}

/// `H^q` for Hermitian PSD `H`, with negative eigenvalues clamped to zero.
pub fn psd_power(h: &CMatrix, q: f64) -> Result<CMatrix> {
    if !(q >= 0.0) {
        return Err(Error::Param(format!("power must be nonnegative, got {q}")));
    }
    let eig = herm_eig(h)?;
    Ok(spectral_apply(&eig.vectors, &eig.values, |l| l.max(0.0).powf(q)))
}

/// `|x|^p = (x* x)^{p/2}`.
pub fn matrix_abs_power(x: &CMatrix, p: f64) -> Result<CMatrix> {
    if !(p >= 0.0) {
        return Err(Error::Param(format!("power must be nonnegative, got {p}")));
    }
    psd_power(&x.gram(), p / 2.0)
}

/// Singular values in descending order.
pub fn singular_values(x: &CMatrix) -> Vec<f64> {
    herm_eig(&x.gram())
        .expect("a Gram matrix is Hermitian")
        .values
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

pub fn spectral_norm(x: &CMatrix) -> f64 {
    singular_values(x).first().copied().unwrap_or(0.0)
}

/// Schatten `p`-norm for `p` in `[1, inf]` (use `f64::INFINITY` for the operator norm).
pub fn schatten_norm(x: &CMatrix, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Param(format!("Schatten exponent must be >= 1, got {p}")));
    }
    Ok(schatten_norm_unchecked(x, p))
}

pub(crate) fn schatten_norm_unchecked(x: &CMatrix, p: f64) -> f64 {
    if p == 2.0 {
        return x.frobenius();
    }
    let sv = singular_values(x);
    if p.is_infinite() {
        return sv.first().copied().unwrap_or(0.0);
    }
    schatten_from_singular(&sv, p)
}

/// `(sum sigma_i^p)^{1/p}`, scaled by the largest value to avoid overflow.
pub(crate) fn schatten_from_singular(sv: &[f64], p: f64) -> f64 {
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0.0;
    }
    top * sv.iter().map(|s| (s / top).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn psd_min_eig(h: &CMatrix) -> Result<f64> {
    Ok(herm_eig(h)?.values.last().copied().unwrap_or(0.0))
}

pub fn max_eig(h: &CMatrix) -> Result<f64> {
    Ok(herm_eig(h)?.values.first().copied().unwrap_or(0.0))
}
