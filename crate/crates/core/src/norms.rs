//! Norms and square functions of step functions.
//!
//! `L_p` norms use the standard trace on `M_m`. BMO sups run over every
//! interval of the lattice, root included; for the column/row BMO the index
//! `m` runs over `1..=N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Interval;
use crate::ncmat::{herm_eig, max_eig, psd_power, schatten_from_singular, singular_values, CMatrix, C64};
use crate::paraproducts::product_coefficients;
use crate::stepfn::{haar_analyze, HaarCoefficients, StepFunction};

/// The BMO flavours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BmoVariant {
    /// Norm-valued: averaged squared operator norm of the deviation.
    M,
    /// Strong operator: sup over unit vectors of the averaged deviation.
    So,
    /// Column: `sup_m ||E_m sum_{k>=m} |d_k b|^2||^{1/2}`.
    C,
    /// Row: column BMO of the pointwise adjoint.
    R,
    /// Max of column and row.
    Cr,
}

impl BmoVariant {
    pub const ALL: [BmoVariant; 5] = [BmoVariant::M, BmoVariant::So, BmoVariant::C, BmoVariant::R, BmoVariant::Cr];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub p: f64,
    pub bmo: BmoVariant,
}

impl NormParams {
    pub fn new(p: f64, bmo: BmoVariant) -> Result<Self> {
        check_p(p)?;
        Ok(NormParams { p, bmo })
    }

    /// Conjugate exponent `p / (p - 1)`.
    pub fn conjugate(&self) -> f64 {
        conjugate_exponent(self.p)
    }
}

pub fn conjugate_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) {
        return Err(Error::Param(format!("p must lie in [1, inf], got {p}")));
    }
    Ok(())
}

/// `(sum_atoms mu * sum_i x_i^p)^{1/p}` over per-atom nonnegative spectra,
/// scaled by the largest entry.
fn lp_of_spectra(spectra: &[Vec<f64>], mu: f64, p: f64) -> f64 {
    let top = spectra.iter().flatten().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0.0;
    }
    if p.is_infinite() {
        return top;
    }
    let s: f64 = spectra
        .iter()
        .flatten()
        .map(|x| (x / top).powf(p))
        .sum();
    top * (mu * s).powf(1.0 / p)
}

/// `||f||_p`; `p = inf` gives the largest atomwise operator norm.
pub fn lp_norm(f: &StepFunction, p: f64) -> Result<f64> {
    check_p(p)?;
    if p == 2.0 {
        return Ok(f.l2_norm());
    }
    let spectra: Vec<Vec<f64>> = f.values().iter().map(singular_values).collect();
    Ok(lp_of_spectra(&spectra, f.lattice().atom_measure(), p))
}

/// `||g||_p` for a function given through its pointwise square `g^* g`.
fn lp_norm_from_square(sq: &StepFunction, p: f64) -> f64 {
    let spectra: Vec<Vec<f64>> = sq
        .values()
        .iter()
        .map(|h| {
            herm_eig(h)
                .expect("squares are Hermitian")
                .values
                .into_iter()
                .map(|l| l.max(0.0).sqrt())
                .collect()
        })
        .collect();
    lp_of_spectra(&spectra, sq.lattice().atom_measure(), p)
}

pub fn bmo(b: &StepFunction, variant: BmoVariant) -> f64 {
    match variant {
        BmoVariant::M => bmo_m(b),
        BmoVariant::So => bmo_so(b),
        BmoVariant::C => bmo_column(b),
        BmoVariant::R => bmo_row(b),
        BmoVariant::Cr => bmo_cr(b),
    }
}

/// `sup_I (avg_I ||b - b_I||^2)^{1/2}` with the operator norm.
pub fn bmo_m(b: &StepFunction) -> f64 {
    let lattice = b.lattice();
    let avgs = b.level_averages();
    let sq: Vec<f64> = b
        .values()
        .iter()
        .enumerate()
        .flat_map(|(x, v)| {
            let avgs = &avgs;
            lattice.levels().map(move |n| {
                let w = lattice.atoms_per_interval(n);
                let s = singular_values(&(v - &avgs[n as usize][x / w]));
                s.first().copied().unwrap_or(0.0).powi(2)
            })
        })
        .collect();
    let levels = lattice.depth() as usize + 1;
    let mut best: f64 = 0.0;
    for n in lattice.levels() {
        let w = lattice.atoms_per_interval(n);
        for start in (0..lattice.num_atoms()).step_by(w) {
            let total: f64 = (start..start + w).map(|x| sq[x * levels + n as usize]).sum();
            best = best.max(total / w as f64);
        }
    }
    best.sqrt()
}

/// `sup_I lambda_max(avg_I (b - b_I)^*(b - b_I))^{1/2}`.
pub fn bmo_so(b: &StepFunction) -> f64 {
    bmo_so_witness(b).value
}

/// Where [`bmo_so`] is attained: the interval and a top unit eigenvector of
/// its averaged deviation.
#[derive(Clone, Debug)]
pub struct BmoSoWitness {
    pub value: f64,
    pub interval: Interval,
    pub vector: Vec<C64>,
}

pub fn bmo_so_witness(b: &StepFunction) -> BmoSoWitness {
    let lattice = b.lattice();
    let avgs = b.level_averages();
    let mut best = BmoSoWitness {
        value: 0.0,
        interval: Interval::ROOT,
        vector: Vec::new(),
    };
    let mut top_eig = f64::NEG_INFINITY;
    for n in lattice.levels() {
        let w = lattice.atoms_per_interval(n);
        for (k, avg) in avgs[n as usize].iter().enumerate() {
            let mut acc = CMatrix::zeros(b.dim());
            for v in &b.values()[k * w..(k + 1) * w] {
                acc += &(v - avg).gram();
            }
            let eig = herm_eig(&acc.scale_real(1.0 / w as f64)).expect("Gram sums are Hermitian");
            if eig.values[0] > top_eig {
                top_eig = eig.values[0];
                best.interval = Interval::new(n, k as u64);
                best.vector = (0..b.dim()).map(|i| eig.vectors[(i, 0)]).collect();
            }
        }
    }
    best.value = top_eig.max(0.0).sqrt();
    best
}

/// `sup_{1<=m<=N} ||E_m sum_{k=m}^N |d_k b|^2||^{1/2}`.
pub fn bmo_column(b: &StepFunction) -> f64 {
    let lattice = b.lattice();
    let depth = lattice.depth();
    let avgs = b.level_averages();
    let d = lattice.d() as usize;
    // tail[x] = sum_{k >= m} |d_k b|^2 at atom x, built from k = N downwards.
    let mut tail = vec![CMatrix::zeros(b.dim()); lattice.num_atoms()];
    let mut best: f64 = 0.0;
    for m in (1..=depth).rev() {
        let w = lattice.atoms_per_interval(m);
        for (x, t) in tail.iter_mut().enumerate() {
            let j = x / w;
            *t += &(&avgs[m as usize][j] - &avgs[m as usize - 1][j / d]).gram();
        }
        for block in tail.chunks(w) {
            let mut acc = block[0].clone();
            for t in &block[1..] {
                acc += t;
            }
            let top = max_eig(&acc.scale_real(1.0 / w as f64)).expect("Gram sums are Hermitian");
            best = best.max(top);
        }
    }
    best.max(0.0).sqrt()
}

pub fn bmo_row(b: &StepFunction) -> f64 {
    bmo_column(&b.adjoint())
}

pub fn bmo_cr(b: &StepFunction) -> f64 {
    bmo_column(b).max(bmo_row(b))
}

/// Pointwise `S(g)^2 = sum_k |d_k g|^2`.
pub fn square_fn_sq(g: &StepFunction) -> StepFunction {
    let lattice = g.lattice();
    let mut acc = StepFunction::zeros(lattice, g.dim());
    for k in 1..=lattice.depth() {
        acc.add_assign_unchecked(&g.mart_diff_unchecked(k).map(CMatrix::gram));
    }
    acc
}

/// Pointwise `s(g)^2 = sum_k E_{k-1} |d_k g|^2`.
pub fn cond_square_fn_sq(g: &StepFunction) -> StepFunction {
    let lattice = g.lattice();
    let mut acc = StepFunction::zeros(lattice, g.dim());
    for k in 1..=lattice.depth() {
        let sq = g.mart_diff_unchecked(k).map(CMatrix::gram);
        acc.add_assign_unchecked(&sq.cond_expect_unchecked(k - 1));
    }
    acc
}

fn psd_root(sq: &StepFunction) -> StepFunction {
    sq.map(|h| psd_power(h, 0.5).expect("squares are Hermitian"))
}

/// The martingale square function `S(g)` as a PSD-valued step function.
pub fn square_fn(g: &StepFunction) -> StepFunction {
    psd_root(&square_fn_sq(g))
}

/// The conditional square function `s(g)`.
pub fn cond_square_fn(g: &StepFunction) -> StepFunction {
    psd_root(&cond_square_fn_sq(g))
}

/// `||g||_{h_{p,c}} = ||s(g)||_p` for `p` in `[1, inf)`.
pub fn hpc_norm(g: &StepFunction, p: f64) -> Result<f64> {
    check_p(p)?;
    if p.is_infinite() {
        return Err(Error::Param("h_{p,c} needs a finite p".into()));
    }
    Ok(lp_norm_from_square(&cond_square_fn_sq(g), p))
}

/// `int sup_{0<=m<=N} ||E_m g||_{S_1}`.
pub fn h1max_norm(g: &StepFunction) -> f64 {
    let lattice = g.lattice();
    let avgs = g.level_averages();
    let mut per_level: Vec<Vec<f64>> = Vec::with_capacity(avgs.len());
    for level in &avgs {
        per_level.push(level.iter().map(|v| schatten_from_singular(&singular_values(v), 1.0)).collect());
    }
    let mut total = 0.0;
    for x in 0..lattice.num_atoms() {
        let best = lattice
            .levels()
            .map(|n| per_level[n as usize][x / lattice.atoms_per_interval(n)])
            .fold(0.0, f64::max);
        total += best;
    }
    total * lattice.atom_measure()
}

/// Ratio `|| sup_m ||E_m(sum_{j>m} d_j a . d_j f)||_{S_p} ||_{L_p} / (bmo_M(a) ||f||_p)`,
/// monitored for scalar `a`. Returns `None` when the denominator vanishes.
pub fn maximal_tail_ratio(a: &StepFunction, f: &StepFunction, p: f64) -> Result<Option<f64>> {
    check_p(p)?;
    if !a.is_scalar() || a.lattice() != f.lattice() {
        return Err(Error::Shape("maximal_tail_ratio: `a` must be scalar on the same lattice".into()));
    }
    let denom = bmo_m(a) * lp_norm(f, p)?;
    if denom < 1e-12 {
        return Ok(None);
    }
    let lattice = f.lattice();
    let depth = lattice.depth();
    let products: Vec<StepFunction> = (1..=depth)
        .map(|j| {
            let dj = a.mart_diff_unchecked(j);
            f.mart_diff_unchecked(j).zip_unchecked(&dj, |fv, av| fv.scale(av[(0, 0)]))
        })
        .collect();
    let mut sup = vec![0.0f64; lattice.num_atoms()];
    let mut tail = StepFunction::zeros(lattice, f.dim());
    for m in (0..depth).rev() {
        tail.add_assign_unchecked(&products[m as usize]);
        let cond = tail.cond_expect_unchecked(m);
        for (s, v) in sup.iter_mut().zip(cond.values()) {
            *s = s.max(schatten_from_singular(&singular_values(v), p));
        }
    }
    let spectra: Vec<Vec<f64>> = sup.into_iter().map(|s| vec![s]).collect();
    Ok(Some(lp_of_spectra(&spectra, lattice.atom_measure(), p) / denom))
}

/// Minimum eigenvalue of
/// `(sup_I sum_i ||a_{I,i}||^2) sum_J sum_j b_{J,j}^* b_{J,j} - sum_I |sum_i a_{I,i} b_{I,i}|^2`;
/// nonnegative up to rounding.
pub fn aibi_gap(a: &HaarCoefficients, b: &HaarCoefficients) -> Result<f64> {
    if a.lattice() != b.lattice() || a.dim() != b.dim() {
        return Err(Error::Shape("aibi_gap: families must share lattice and dimension".into()));
    }
    let lattice = a.lattice();
    let d = lattice.d();
    let m = a.dim();
    let mut sup_a: f64 = 0.0;
    let mut lhs = CMatrix::zeros(m);
    let mut energy = CMatrix::zeros(m);
    for level in 0..lattice.depth() {
        for index in 0..lattice.level_len(level) as usize {
            let mut row = 0.0;
            let mut prod = CMatrix::zeros(m);
            for i in 1..d {
                let ai = a.at(level, index, i);
                let bi = b.at(level, index, i);
                let s = singular_values(ai).first().copied().unwrap_or(0.0);
                row += s * s;
                prod += &(ai * bi);
                energy += &bi.gram();
            }
            sup_a = sup_a.max(row);
            lhs += &prod.gram();
        }
    }
    let gap = &energy.scale_real(sup_a) - &lhs;
    Ok(herm_eig(&gap)?.values.last().copied().unwrap_or(0.0))
}

/// `s((Lambda_b - (pi_{b^*})^*) f)^2` from Haar coefficients:
/// `sum_{I,l} |c_{I,l}|^2 / |I|^2` on `I`, with
/// `c_{I,l} = sum_{i+j = l mod d} <h_I^i, b><h_I^j, f>`.
pub fn cond_square_defect_closed(b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    if b.lattice() != f.lattice() || (b.dim() != f.dim() && b.dim() != 1 && f.dim() != 1) {
        return Err(Error::Shape("cond_square_defect_closed: incompatible inputs".into()));
    }
    let lattice = b.lattice();
    let m = b.dim().max(f.dim());
    let cb = haar_analyze(b);
    let cf = haar_analyze(f);
    let mut values = vec![CMatrix::zeros(m); lattice.num_atoms()];
    for level in 0..lattice.depth() {
        let inv_mu2 = 1.0 / lattice.level_measure(level).powi(2);
        let w = lattice.atoms_per_interval(level);
        for (index, per_l) in product_coefficients(&cb, &cf, level).iter().enumerate() {
            let mut acc = CMatrix::zeros(m);
            for c in per_l {
                acc += &c.gram();
            }
            let acc = acc.scale_real(inv_mu2);
            for v in &mut values[index * w..(index + 1) * w] {
                *v += &acc;
            }
        }
    }
    Ok(StepFunction::from_values_unchecked(lattice, m, values))
}

#[cfg(test)]
mod tests;
