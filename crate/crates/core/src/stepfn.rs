//! Matrix-valued step functions on the atoms of a [`Lattice`], together with
//! the d-adic filtration machinery: conditional expectations, martingale
//! differences and the generalized Haar system.
//!
//! On `[0, 1)` the Haar wavelets span only the mean-zero functions, so
//! analysis produces a mean `E_0 f` next to the wavelet coefficients and
//! synthesis adds it back.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Interval, Lattice};
use crate::ncmat::{CMatrix, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct StepFunction {
    lattice: Lattice,
    m: usize,
    values: Vec<CMatrix>,
}

/// `omega^e` for the principal d-th root of unity, reducing `e` mod `d` first.
pub fn root_of_unity(d: u32, e: u64) -> C64 {
    let r = e % d as u64;
    let angle = 2.0 * PI * r as f64 / d as f64;
    C64::new(angle.cos(), angle.sin())
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

impl StepFunction {
    pub fn from_values(lattice: Lattice, m: usize, values: Vec<CMatrix>) -> Result<Self> {
        if values.len() != lattice.num_atoms() {
            return Err(Error::Shape(format!(
                "{} values for {} atoms",
                values.len(),
                lattice.num_atoms()
            )));
        }
        if let Some(bad) = values.iter().position(|v| v.dim() != m) {
            return Err(Error::Shape(format!(
                "atom {bad} has dimension {} instead of {m}",
                values[bad].dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("step function values must be finite".into()));
        }
        Ok(StepFunction { lattice, m, values })
    }

    pub(crate) fn from_values_unchecked(lattice: Lattice, m: usize, values: Vec<CMatrix>) -> Self {
        debug_assert_eq!(values.len(), lattice.num_atoms());
        StepFunction { lattice, m, values }
    }

    pub fn constant(lattice: Lattice, value: &CMatrix) -> Self {
        StepFunction {
            lattice,
            m: value.dim(),
            values: vec![value.clone(); lattice.num_atoms()],
        }
    }

    pub fn zeros(lattice: Lattice, m: usize) -> Self {
        Self::constant(lattice, &CMatrix::zeros(m))
    }

    pub fn identity(lattice: Lattice, m: usize) -> Self {
        Self::constant(lattice, &CMatrix::identity(m))
    }

    /// Scalar-valued function from per-atom values.
    pub fn scalar(lattice: Lattice, values: &[C64]) -> Result<Self> {
        Self::from_values(
            lattice,
            1,
            values.iter().map(|&z| CMatrix::scalar(z)).collect(),
        )
    }

    /// Scalar indicator `1_I`.
    pub fn indicator(lattice: Lattice, iv: Interval) -> Result<Self> {
        let range = lattice.atom_range(iv)?;
        let values = (0..lattice.num_atoms())
            .map(|a| CMatrix::scalar(C64::new(if range.contains(&a) { 1.0 } else { 0.0 }, 0.0)))
            .collect();
        Ok(Self::from_values_unchecked(lattice, 1, values))
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn is_scalar(&self) -> bool {
        self.m == 1
    }

    pub fn values(&self) -> &[CMatrix] {
        &self.values
    }

    pub fn value(&self, atom: usize) -> &CMatrix {
        &self.values[atom]
    }

    pub fn map(&self, f: impl Fn(&CMatrix) -> CMatrix) -> Self {
        let values: Vec<CMatrix> = self.values.iter().map(f).collect();
        let m = values.first().map_or(self.m, CMatrix::dim);
        StepFunction {
            lattice: self.lattice,
            m,
            values,
        }
    }

    fn check_same(&self, other: &StepFunction, what: &str) -> Result<()> {
        if self.lattice != other.lattice {
            return Err(Error::Shape(format!("{what}: lattices differ")));
        }
        if self.m != other.m {
            return Err(Error::Shape(format!(
                "{what}: matrix dimensions {} and {} differ",
                self.m, other.m
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &StepFunction) -> Result<Self> {
        self.check_same(other, "add")?;
        Ok(self.zip_unchecked(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &StepFunction) -> Result<Self> {
        self.check_same(other, "sub")?;
        Ok(self.zip_unchecked(other, |a, b| a - b))
    }

    pub(crate) fn zip_unchecked(
        &self,
        other: &StepFunction,
        f: impl Fn(&CMatrix, &CMatrix) -> CMatrix,
    ) -> Self {
        let values: Vec<CMatrix> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| f(a, b))
            .collect();
        let m = values[0].dim();
        StepFunction {
            lattice: self.lattice,
            m,
            values,
        }
    }

    pub(crate) fn add_assign_unchecked(&mut self, other: &StepFunction) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub(crate) fn sub_assign_unchecked(&mut self, other: &StepFunction) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
    }

    pub fn scale(&self, z: C64) -> Self {
        self.map(|v| v.scale(z))
    }

    pub fn neg(&self) -> Self {
        self.map(|v| v.scale_real(-1.0))
    }

    /// Atomwise conjugate transpose.
    pub fn adjoint(&self) -> Self {
        self.map(CMatrix::adjoint)
    }

    /// Atomwise product `f(x) g(x)` in the written order. A scalar-valued
    /// operand is broadcast as a multiple of the identity.
    pub fn multiply(&self, other: &StepFunction) -> Result<Self> {
        if self.lattice != other.lattice {
            return Err(Error::Shape("multiply: lattices differ".into()));
        }
        if self.m != other.m && self.m != 1 && other.m != 1 {
            return Err(Error::Shape(format!(
                "multiply: matrix dimensions {} and {} differ",
                self.m, other.m
            )));
        }
        Ok(self.multiply_unchecked(other))
    }

    pub(crate) fn multiply_unchecked(&self, other: &StepFunction) -> Self {
        let m = self.m.max(other.m);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| match (a.dim(), b.dim()) {
                (1, 1) => CMatrix::scalar(a[(0, 0)] * b[(0, 0)]),
                (1, _) => b.scale(a[(0, 0)]),
                (_, 1) => a.scale(b[(0, 0)]),
                _ => a * b,
            })
            .collect();
        StepFunction {
            lattice: self.lattice,
            m,
            values,
        }
    }

    /// Averages over every interval, level by level: `out[n][k]` is the mean
    /// of `f` on `I_{n,k}`.
    pub(crate) fn level_averages(&self) -> Vec<Vec<CMatrix>> {
        let depth = self.lattice.depth() as usize;
        let d = self.lattice.d() as usize;
        let mut out: Vec<Vec<CMatrix>> = vec![Vec::new(); depth + 1];
        out[depth] = self.values.clone();
        let inv = 1.0 / d as f64;
        for n in (0..depth).rev() {
            let finer = &out[n + 1];
            let coarse: Vec<CMatrix> = finer
                .chunks(d)
                .map(|kids| {
                    let mut acc = kids[0].clone();
                    for k in &kids[1..] {
                        acc += k;
                    }
                    acc.scale_real(inv)
                })
                .collect();
            out[n] = coarse;
        }
        out
    }

    fn check_level(&self, n: u32, min: u32) -> Result<()> {
        if n < min || n > self.lattice.depth() {
            return Err(Error::Param(format!(
                "level {n} outside {min}..={}",
                self.lattice.depth()
            )));
        }
        Ok(())
    }

    /// `E_n f`.
    pub fn cond_expect(&self, n: u32) -> Result<Self> {
        self.check_level(n, 0)?;
        Ok(self.cond_expect_unchecked(n))
    }

    pub(crate) fn cond_expect_unchecked(&self, n: u32) -> Self {
        if n == self.lattice.depth() {
            return self.clone();
        }
        let w = self.lattice.atoms_per_interval(n);
        let inv = 1.0 / w as f64;
        let mut values = Vec::with_capacity(self.values.len());
        for block in self.values.chunks(w) {
            let mut acc = block[0].clone();
            for v in &block[1..] {
                acc += v;
            }
            let avg = acc.scale_real(inv);
            values.extend(std::iter::repeat_n(avg, w));
        }
        StepFunction {
            lattice: self.lattice,
            m: self.m,
            values,
        }
    }

    /// `d_n f = E_n f - E_{n-1} f`.
    pub fn mart_diff(&self, n: u32) -> Result<Self> {
        self.check_level(n, 1)?;
        Ok(self.mart_diff_unchecked(n))
    }

    pub(crate) fn mart_diff_unchecked(&self, n: u32) -> Self {
        let mut fine = self.cond_expect_unchecked(n);
        fine.sub_assign_unchecked(&self.cond_expect_unchecked(n - 1));
        fine
    }

    /// `f - E_0 f`.
    pub fn mean_zero(&self) -> Self {
        let mut out = self.clone();
        out.sub_assign_unchecked(&self.cond_expect_unchecked(0));
        out
    }

    /// `int f dmu` as a matrix.
    pub fn integral(&self) -> CMatrix {
        let mut acc = CMatrix::zeros(self.m);
        for v in &self.values {
            acc += v;
        }
        acc.scale_real(self.lattice.atom_measure())
    }

    /// `<g, f> = int conj(g) f dmu` for scalar `g`.
    pub fn pair_scalar(g: &StepFunction, f: &StepFunction) -> Result<CMatrix> {
        if !g.is_scalar() {
            return Err(Error::Shape("pair_scalar: first argument must be scalar-valued".into()));
        }
        if g.lattice != f.lattice {
            return Err(Error::Shape("pair_scalar: lattices differ".into()));
        }
        let mut acc = CMatrix::zeros(f.m);
        for (gv, fv) in g.values.iter().zip(&f.values) {
            let w = gv[(0, 0)].conj();
            if w != zero() {
                acc.add_scaled(fv, w);
            }
        }
        Ok(acc.scale_real(f.lattice.atom_measure()))
    }

    /// `<f, g> = int tau(f* g) dmu`, the inner product of `L_2(S_2^m)`.
    pub fn hs_inner(f: &StepFunction, g: &StepFunction) -> Result<C64> {
        f.check_same(g, "hs_inner")?;
        Ok(Self::hs_inner_unchecked(f, g))
    }

    pub(crate) fn hs_inner_unchecked(f: &StepFunction, g: &StepFunction) -> C64 {
        let s: C64 = f.values.iter().zip(&g.values).map(|(a, b)| a.hs_dot(b)).sum();
        s * f.lattice.atom_measure()
    }

    pub fn l2_norm(&self) -> f64 {
        Self::hs_inner_unchecked(self, self).re.max(0.0).sqrt()
    }

    /// Largest entrywise difference over all atoms.
    pub fn max_diff(&self, other: &StepFunction) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "lattice mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.max_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(CMatrix::max_abs).fold(0.0, f64::max)
    }

    /// Flat coordinates, atoms-major then row-major matrix entries.
    pub fn to_coords(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.values.len() * self.m * self.m);
        for v in &self.values {
            out.extend_from_slice(v.as_slice());
        }
        out
    }

    pub fn from_coords(lattice: Lattice, m: usize, coords: &[C64]) -> Result<Self> {
        let mm = m * m;
        if coords.len() != lattice.num_atoms() * mm {
            return Err(Error::Shape(format!(
                "{} coordinates for {} atoms of dimension {m}",
                coords.len(),
                lattice.num_atoms()
            )));
        }
        let values = coords
            .chunks(mm)
            .map(|c| CMatrix::from_row_major(m, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(StepFunction { lattice, m, values })
    }

    /// Atomwise block-diagonal embedding `diag(f, f, ..., f)` with `copies` blocks.
    pub fn block_embed(&self, copies: usize) -> Self {
        self.map(|v| {
            let blocks: Vec<&CMatrix> = std::iter::repeat_n(v, copies).collect();
            CMatrix::block_diag(&blocks)
        })
    }

    pub fn analyze(&self) -> HaarCoefficients {
        haar_analyze(self)
    }
}

/// Generalized Haar function `h_I^i`. For `i = 0` this is `d^{n/2} 1_I`.
pub fn haar_function(lattice: Lattice, iv: Interval, i: u32) -> Result<StepFunction> {
    lattice.check(iv)?;
    let d = lattice.d();
    if i >= d {
        return Err(Error::Param(format!("Haar index {i} must be below d = {d}")));
    }
    if i >= 1 && iv.level >= lattice.depth() {
        return Err(Error::Param(format!(
            "oscillating Haar functions need level < {}",
            lattice.depth()
        )));
    }
    let amp = (d as f64).powf(iv.level as f64 / 2.0);
    let range = lattice.atom_range(iv)?;
    let mut values = vec![CMatrix::scalar(zero()); lattice.num_atoms()];
    if i == 0 {
        for v in &mut values[range] {
            *v = CMatrix::scalar(C64::new(amp, 0.0));
        }
    } else {
        for (j, child) in lattice.children(iv)?.into_iter().enumerate() {
            let val = root_of_unity(d, i as u64 * (j as u64 + 1)) * amp;
            for v in &mut values[lattice.atom_range(child)?] {
                *v = CMatrix::scalar(val);
            }
        }
    }
    Ok(StepFunction::from_values_unchecked(lattice, 1, values))
}

/// Matrix coefficients `<h_I^i, f>` over all `(I, i)` with `level(I) < N`,
/// stored densely, plus the mean `E_0 f`.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarCoefficients {
    lattice: Lattice,
    m: usize,
    mean: CMatrix,
    coeffs: Vec<CMatrix>,
}

impl HaarCoefficients {
    pub fn zeros(lattice: Lattice, m: usize) -> Self {
        let slots = Self::slot_count(lattice);
        HaarCoefficients {
            lattice,
            m,
            mean: CMatrix::zeros(m),
            coeffs: vec![CMatrix::zeros(m); slots],
        }
    }

    fn slot_count(lattice: Lattice) -> usize {
        let intervals: u64 = (0..lattice.depth()).map(|n| lattice.level_len(n)).sum();
        intervals as usize * (lattice.d() as usize - 1)
    }

    /// Builds a coefficient set from explicit entries; every `(I, i)` must be
    /// given exactly once.
    pub fn from_entries(
        lattice: Lattice,
        m: usize,
        mean: CMatrix,
        entries: impl IntoIterator<Item = ((Interval, u32), CMatrix)>,
    ) -> Result<Self> {
        if mean.dim() != m {
            return Err(Error::Shape("mean has the wrong dimension".into()));
        }
        let mut out = Self::zeros(lattice, m);
        out.mean = mean;
        let mut seen = vec![false; out.coeffs.len()];
        for ((iv, i), c) in entries {
            if c.dim() != m {
                return Err(Error::Shape(format!("coefficient at {iv:?} has the wrong dimension")));
            }
            let slot = out.slot(iv, i)?;
            if seen[slot] {
                return Err(Error::Incomplete(format!("duplicate entry for {iv:?}, i = {i}")));
            }
            seen[slot] = true;
            out.coeffs[slot] = c;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let (iv, i) = out.key(missing);
            return Err(Error::Incomplete(format!("missing {iv:?}, i = {i}")));
        }
        Ok(out)
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn mean(&self) -> &CMatrix {
        &self.mean
    }

    pub fn mean_mut(&mut self) -> &mut CMatrix {
        &mut self.mean
    }

    fn level_offset(&self, level: u32) -> usize {
        let d = self.lattice.d() as u64;
        ((d.pow(level) - 1) / (d - 1)) as usize
    }

    fn slot(&self, iv: Interval, i: u32) -> Result<usize> {
        self.lattice.check(iv)?;
        let d = self.lattice.d();
        if iv.level >= self.lattice.depth() || i == 0 || i >= d {
            return Err(Error::Param(format!("no Haar coefficient for {iv:?}, i = {i}")));
        }
        Ok((self.level_offset(iv.level) + iv.index as usize) * (d as usize - 1) + i as usize - 1)
    }

    fn key(&self, slot: usize) -> (Interval, u32) {
        let dm1 = self.lattice.d() as usize - 1;
        let (pos, i) = (slot / dm1, slot % dm1 + 1);
        let mut level = 0;
        while self.level_offset(level + 1) <= pos {
            level += 1;
        }
        (Interval::new(level, (pos - self.level_offset(level)) as u64), i as u32)
    }

    pub fn get(&self, iv: Interval, i: u32) -> Result<&CMatrix> {
        Ok(&self.coeffs[self.slot(iv, i)?])
    }

    pub fn set(&mut self, iv: Interval, i: u32, value: CMatrix) -> Result<()> {
        if value.dim() != self.m {
            return Err(Error::Shape("coefficient has the wrong dimension".into()));
        }
        let s = self.slot(iv, i)?;
        self.coeffs[s] = value;
        Ok(())
    }

    pub(crate) fn at(&self, level: u32, index: usize, i: u32) -> &CMatrix {
        let dm1 = self.lattice.d() as usize - 1;
        &self.coeffs[(self.level_offset(level) + index) * dm1 + i as usize - 1]
    }

    pub fn coefficients_mut(&mut self) -> impl Iterator<Item = &mut CMatrix> {
        self.coeffs.iter_mut()
    }

    /// `((I, i), <h_I^i, f>)` in level-major order.
    pub fn iter(&self) -> impl Iterator<Item = ((Interval, u32), &CMatrix)> + '_ {
        self.coeffs.iter().enumerate().map(|(s, c)| (self.key(s), c))
    }

    pub fn map(&self, f: impl Fn(&CMatrix) -> CMatrix) -> Self {
        let coeffs: Vec<CMatrix> = self.coeffs.iter().map(&f).collect();
        let mean = f(&self.mean);
        HaarCoefficients {
            lattice: self.lattice,
            m: mean.dim(),
            mean,
            coeffs,
        }
    }

    /// `sum ||<h_I^i, f>||_{S_2}^2` over wavelet coefficients (mean excluded).
    pub fn wavelet_energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.frobenius().powi(2)).sum()
    }

    pub fn synthesize(&self) -> Result<StepFunction> {
        if self.coeffs.len() != Self::slot_count(self.lattice) {
            return Err(Error::Incomplete("wrong number of coefficient slots".into()));
        }
        if self.mean.dim() != self.m || self.coeffs.iter().any(|c| c.dim() != self.m) {
            return Err(Error::Shape("coefficient dimensions are inconsistent".into()));
        }
        Ok(self.synthesize_unchecked())
    }

    pub(crate) fn synthesize_unchecked(&self) -> StepFunction {
        let lattice = self.lattice;
        let d = lattice.d();
        let mut values = vec![self.mean.clone(); lattice.num_atoms()];
        for level in 0..lattice.depth() {
            let amp = (d as f64).powf(level as f64 / 2.0);
            let child_w = lattice.atoms_per_interval(level + 1);
            for index in 0..lattice.level_len(level) as usize {
                for j in 0..d as usize {
                    let mut add = CMatrix::zeros(self.m);
                    for i in 1..d {
                        let w = root_of_unity(d, i as u64 * (j as u64 + 1)) * amp;
                        add.add_scaled(self.at(level, index, i), w);
                    }
                    let start = (index * d as usize + j) * child_w;
                    for v in &mut values[start..start + child_w] {
                        *v += &add;
                    }
                }
            }
        }
        StepFunction::from_values_unchecked(lattice, self.m, values)
    }
}

/// `<h_I^i, f>` for every wavelet, computed from child averages.
pub fn haar_analyze(f: &StepFunction) -> HaarCoefficients {
    let lattice = f.lattice();
    let d = lattice.d();
    let avgs = f.level_averages();
    let mut out = HaarCoefficients::zeros(lattice, f.dim());
    out.mean = avgs[0][0].clone();
    let dm1 = d as usize - 1;
    for level in 0..lattice.depth() {
        // <h_I^i, f> = d^{n/2} d^{-(n+1)} sum_j conj(omega^{i(j+1)}) avg_{child j} f
        let w = (d as f64).powf(level as f64 / 2.0) / (d as f64).powi(level as i32 + 1);
        let offset = out.level_offset(level);
        for index in 0..lattice.level_len(level) as usize {
            for i in 1..d {
                let mut acc = CMatrix::zeros(f.dim());
                for j in 0..d as usize {
                    let z = root_of_unity(d, i as u64 * (j as u64 + 1)).conj() * w;
                    acc.add_scaled(&avgs[level as usize + 1][index * d as usize + j], z);
                }
                out.coeffs[(offset + index) * dm1 + i as usize - 1] = acc;
            }
        }
    }
    out
}

pub fn haar_synthesize(c: &HaarCoefficients) -> Result<StepFunction> {
    c.synthesize()
}

/// Serialized form: `{d, N, m, atoms: [[re, im], ...]}` with atoms-major,
/// row-major entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub d: u32,
    #[serde(rename = "N")]
    pub depth: u32,
    pub m: usize,
    pub atoms: Vec<[f64; 2]>,
}

impl From<&StepFunction> for StepRecord {
    fn from(f: &StepFunction) -> Self {
        StepRecord {
            d: f.lattice.d(),
            depth: f.lattice.depth(),
            m: f.m,
            atoms: f.to_coords().iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl TryFrom<StepRecord> for StepFunction {
    type Error = Error;

    fn try_from(r: StepRecord) -> Result<Self> {
        let lattice = Lattice::new(r.d, r.depth)?;
        let coords: Vec<C64> = r.atoms.iter().map(|[re, im]| C64::new(*re, *im)).collect();
        StepFunction::from_coords(lattice, r.m, &coords)
    }
}

impl Serialize for StepFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StepRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StepFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = StepRecord::deserialize(d)?;
        StepFunction::try_from(rec).map_err(serde::de::Error::custom)
    }
}
