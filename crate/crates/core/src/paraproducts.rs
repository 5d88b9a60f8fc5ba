//! Paraproducts and their relatives as maps on [`StepFunction`]s.
//!
//! With `b_k = E_k b` and `d_k b = b_k - b_{k-1}` for `k = 1..=N`:
//!
//! * `pi_b(f)      = sum_k d_k b . f_{k-1}`
//! * `pi_b^*(f)    = sum_k E_{k-1}(d_k b^* . d_k f)`
//! * `Lambda_b(f)  = sum_k d_k b . d_k f`
//! * `R_b(f)       = sum_k b_{k-1} . d_k f`
//! * `Theta_b      = pi_b + Lambda_b`
//!
//! so that `b f = pi_b f + Lambda_b f + R_b f + b_0 f_0` exactly at finite
//! depth. Products are left multiplications in the written order; a
//! scalar-valued operand broadcasts.
//!
//! The fast operators work on per-level interval averages. The reference forms
//! ([`pi_haar_form`], [`pi_star_haar_form`], [`dk_product_expansion`]) go
//! through Haar coefficients instead and serve as independent checks.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::ncmat::{CMatrix, C64};
use crate::stepfn::{haar_analyze, root_of_unity, HaarCoefficients, StepFunction};

/// Default cap on the dimension `d^N m^2` of dense assemblies.
pub const DEFAULT_DIMENSION_CAP: usize = 8192;

fn mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    match (a.dim(), b.dim()) {
        (1, 1) => CMatrix::scalar(a[(0, 0)] * b[(0, 0)]),
        (1, _) => b.scale(a[(0, 0)]),
        (_, 1) => a.scale(b[(0, 0)]),
        _ => a * b,
    }
}

fn check_pair(b: &StepFunction, f: &StepFunction, what: &str) -> Result<()> {
    if b.lattice() != f.lattice() {
        return Err(Error::Shape(format!("{what}: lattices differ")));
    }
    if b.dim() != f.dim() && b.dim() != 1 && f.dim() != 1 {
        return Err(Error::Shape(format!(
            "{what}: symbol dimension {} incompatible with argument dimension {}",
            b.dim(),
            f.dim()
        )));
    }
    Ok(())
}

fn require_scalar(a: &StepFunction, what: &str) -> Result<()> {
    if !a.is_scalar() {
        return Err(Error::Shape(format!("{what}: symbol `a` must be scalar-valued")));
    }
    Ok(())
}

/// Per-level interval data, used to assemble sums of level-measurable terms.
struct Levels {
    lattice: Lattice,
    avgs: Vec<Vec<CMatrix>>,
}

impl Levels {
    fn new(f: &StepFunction) -> Self {
        Levels {
            lattice: f.lattice(),
            avgs: f.level_averages(),
        }
    }

    /// `d_k f` on the level-`k` interval `j`.
    fn diff(&self, k: usize, j: usize) -> CMatrix {
        let d = self.lattice.d() as usize;
        &self.avgs[k][j] - &self.avgs[k - 1][j / d]
    }

    fn avg(&self, k: usize, j: usize) -> &CMatrix {
        &self.avgs[k][j]
    }
}

/// Sums terms that are constant on the intervals of their level:
/// `out(x) = sum_n terms[n][interval of x at level n]`.
fn push_down(lattice: Lattice, m: usize, terms: Vec<Option<Vec<CMatrix>>>) -> StepFunction {
    let d = lattice.d() as usize;
    let mut acc = vec![CMatrix::zeros(m)];
    for (n, term) in terms.into_iter().enumerate() {
        if n > 0 {
            acc = (0..acc.len() * d).map(|j| acc[j / d].clone()).collect();
        }
        if let Some(t) = term {
            for (a, t) in acc.iter_mut().zip(&t) {
                *a += t;
            }
        }
    }
    StepFunction::from_values_unchecked(lattice, m, acc)
}

fn level_sum(
    b: &StepFunction,
    f: &StepFunction,
    term: impl Fn(&Levels, &Levels, usize, usize) -> CMatrix,
) -> StepFunction {
    let lattice = b.lattice();
    let m = b.dim().max(f.dim());
    let lb = Levels::new(b);
    let lf = Levels::new(f);
    let depth = lattice.depth() as usize;
    let mut terms: Vec<Option<Vec<CMatrix>>> = vec![None; depth + 1];
    for (k, slot) in terms.iter_mut().enumerate().skip(1) {
        let len = lattice.level_len(k as u32) as usize;
        *slot = Some((0..len).map(|j| term(&lb, &lf, k, j)).collect());
    }
    push_down(lattice, m, terms)
}

/// `pi_b(f) = sum_k d_k b . E_{k-1} f`.
pub fn pi(b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    check_pair(b, f, "pi")?;
    let d = b.lattice().d() as usize;
    Ok(level_sum(b, f, |lb, lf, k, j| mul(&lb.diff(k, j), lf.avg(k - 1, j / d))))
}

/// `Lambda_b(f) = sum_k d_k b . d_k f`.
pub fn lambda(b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    check_pair(b, f, "lambda")?;
    Ok(level_sum(b, f, |lb, lf, k, j| mul(&lb.diff(k, j), &lf.diff(k, j))))
}

/// `R_b(f) = sum_k E_{k-1} b . d_k f`.
pub fn r_op(b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    check_pair(b, f, "r_op")?;
    let d = b.lattice().d() as usize;
    Ok(level_sum(b, f, |lb, lf, k, j| mul(lb.avg(k - 1, j / d), &lf.diff(k, j))))
}

/// `Theta_b = pi_b + Lambda_b`.
pub fn theta(b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    let mut out = pi(b, f)?;
    out.add_assign_unchecked(&lambda(b, f)?);
    Ok(out)
}

/// `pi_b^*(f) = sum_k E_{k-1}(d_k b^* . d_k f)`, the adjoint of [`pi`] for the
/// pairing [`StepFunction::hs_inner`].
pub fn pi_star(b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    check_pair(b, f, "pi_star")?;
    let lattice = b.lattice();
    let d = lattice.d() as usize;
    let m = b.dim().max(f.dim());
    let lb = Levels::new(b);
    let lf = Levels::new(f);
    let depth = lattice.depth() as usize;
    let inv = 1.0 / d as f64;
    let mut terms: Vec<Option<Vec<CMatrix>>> = vec![None; depth + 1];
    for k in 1..=depth {
        let parents = lattice.level_len(k as u32 - 1) as usize;
        let level: Vec<CMatrix> = (0..parents)
            .map(|p| {
                let mut acc = CMatrix::zeros(m);
                for j in p * d..(p + 1) * d {
                    acc += &mul(&lb.diff(k, j).adjoint(), &lf.diff(k, j));
                }
                acc.scale_real(inv)
            })
            .collect();
        terms[k - 1] = Some(level);
    }
    Ok(push_down(lattice, m, terms))
}

/// Adjoint of `Lambda_b`: `g -> sum_k d_k(d_k b^* . g)`.
pub fn lambda_adjoint(b: &StepFunction, g: &StepFunction) -> Result<StepFunction> {
    check_pair(b, g, "lambda_adjoint")?;
    let n = b.lattice().depth();
    let m = b.dim().max(g.dim());
    let mut out = StepFunction::zeros(b.lattice(), m);
    for k in 1..=n {
        let dkb = b.mart_diff_unchecked(k).adjoint();
        out.add_assign_unchecked(&dkb.multiply_unchecked(g).mart_diff_unchecked(k));
    }
    Ok(out)
}

/// Adjoint of `R_b`: `g -> sum_k d_k(b_{k-1}^* . g)`.
pub fn r_op_adjoint(b: &StepFunction, g: &StepFunction) -> Result<StepFunction> {
    check_pair(b, g, "r_op_adjoint")?;
    let n = b.lattice().depth();
    let m = b.dim().max(g.dim());
    let mut out = StepFunction::zeros(b.lattice(), m);
    for k in 1..=n {
        let bk = b.cond_expect_unchecked(k - 1).adjoint();
        out.add_assign_unchecked(&bk.multiply_unchecked(g).mart_diff_unchecked(k));
    }
    Ok(out)
}

/// `pi_b(f) = sum_{I,i} h_I^i <h_I^i, b> <1_I/|I|, f>`, evaluated through
/// Haar coefficients.
pub fn pi_haar_form(b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    check_pair(b, f, "pi_haar_form")?;
    let lattice = b.lattice();
    let d = lattice.d();
    let cb = haar_analyze(b);
    let favg = f.level_averages();
    let m = b.dim().max(f.dim());
    let mut values = vec![CMatrix::zeros(m); lattice.num_atoms()];
    for level in 0..lattice.depth() {
        let amp = (d as f64).powf(level as f64 / 2.0);
        let child_w = lattice.atoms_per_interval(level + 1);
        for index in 0..lattice.level_len(level) as usize {
            let avg_f = &favg[level as usize][index];
            for j in 0..d as usize {
                let mut add = CMatrix::zeros(m);
                for i in 1..d {
                    let h = root_of_unity(d, i as u64 * (j as u64 + 1)) * amp;
                    add.add_scaled(&mul(cb.at(level, index, i), avg_f), h);
                }
                let start = (index * d as usize + j) * child_w;
                for v in &mut values[start..start + child_w] {
                    *v += &add;
                }
            }
        }
    }
    Ok(StepFunction::from_values_unchecked(lattice, m, values))
}

/// `pi_b^*(f) = sum_{I,i} (1_I/|I|) <h_I^i, b>^* <h_I^i, f>`.
pub fn pi_star_haar_form(b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    check_pair(b, f, "pi_star_haar_form")?;
    let lattice = b.lattice();
    let cb = haar_analyze(b);
    let cf = haar_analyze(f);
    let m = b.dim().max(f.dim());
    let mut values = vec![CMatrix::zeros(m); lattice.num_atoms()];
    for level in 0..lattice.depth() {
        let inv_measure = (lattice.d() as f64).powi(level as i32);
        let w = lattice.atoms_per_interval(level);
        for index in 0..lattice.level_len(level) as usize {
            let mut acc = CMatrix::zeros(m);
            for i in 1..lattice.d() {
                acc += &mul(&cb.at(level, index, i).adjoint(), cf.at(level, index, i));
            }
            let acc = acc.scale_real(inv_measure);
            for v in &mut values[index * w..(index + 1) * w] {
                *v += &acc;
            }
        }
    }
    Ok(StepFunction::from_values_unchecked(lattice, m, values))
}

/// `Lambda_b - (pi_{b^*})^*`, i.e. `sum_k d_k(d_k b . d_k f)`.
pub fn lambda_defect(b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    let mut out = lambda(b, f)?;
    out.sub_assign_unchecked(&pi_star(&b.adjoint(), f)?);
    Ok(out)
}

/// `[pi_a, M_b](f) = pi_a(b f) - b pi_a(f)` for scalar `a`.
pub fn commutator_pi_mult(a: &StepFunction, b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    require_scalar(a, "commutator_pi_mult")?;
    check_pair(b, f, "commutator_pi_mult")?;
    check_pair(a, f, "commutator_pi_mult")?;
    let mut out = pi(a, &b.multiply_unchecked(f))?;
    out.sub_assign_unchecked(&b.multiply_unchecked(&pi(a, f)?));
    Ok(out)
}

/// `[pi_a, R_b](f) = pi_a(R_b f) - R_b(pi_a f)` for scalar `a`.
pub fn commutator_pi_r(a: &StepFunction, b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    require_scalar(a, "commutator_pi_r")?;
    let mut out = pi(a, &r_op(b, f)?)?;
    out.sub_assign_unchecked(&r_op(b, &pi(a, f)?)?);
    Ok(out)
}

/// Expanded form of `[pi_a, R_b](f)` at finite depth:
/// `-sum_k d_k a (sum_{j<k} d_j b d_j f) - pi_a(pi_b f) - pi_a(b_0 f_0)`.
/// The last term vanishes when either mean is zero.
pub fn commutator_pi_r_expanded(
    a: &StepFunction,
    b: &StepFunction,
    f: &StepFunction,
) -> Result<StepFunction> {
    require_scalar(a, "commutator_pi_r_expanded")?;
    check_pair(b, f, "commutator_pi_r_expanded")?;
    let n = a.lattice().depth();
    let m = b.dim().max(f.dim());
    let mut out = StepFunction::zeros(a.lattice(), m);
    let mut partial = StepFunction::zeros(a.lattice(), m);
    for k in 1..=n {
        out.sub_assign_unchecked(&a.mart_diff_unchecked(k).multiply_unchecked(&partial));
        let dk = b.mart_diff_unchecked(k).multiply_unchecked(&f.mart_diff_unchecked(k));
        partial.add_assign_unchecked(&dk);
    }
    out.sub_assign_unchecked(&pi(a, &pi(b, f)?)?);
    let means = b.cond_expect_unchecked(0).multiply_unchecked(&f.cond_expect_unchecked(0));
    out.sub_assign_unchecked(&pi(a, &means)?);
    Ok(out)
}

/// `V_{a,b}(f) = sum_k d_k a . E_{k-1}(sum_{j >= k} d_j b . d_j f)`.
pub fn v_ab(a: &StepFunction, b: &StepFunction, f: &StepFunction) -> Result<StepFunction> {
    require_scalar(a, "v_ab")?;
    check_pair(b, f, "v_ab")?;
    check_pair(a, f, "v_ab")?;
    let n = a.lattice().depth();
    let m = b.dim().max(f.dim());
    let mut out = StepFunction::zeros(a.lattice(), m);
    let mut tail = StepFunction::zeros(a.lattice(), m);
    for k in (1..=n).rev() {
        tail.add_assign_unchecked(&b.mart_diff_unchecked(k).multiply_unchecked(&f.mart_diff_unchecked(k)));
        let cond = tail.cond_expect_unchecked(k - 1);
        out.add_assign_unchecked(&a.mart_diff_unchecked(k).multiply_unchecked(&cond));
    }
    Ok(out)
}

/// `d_j abar . d_j g` for `j = 1..=N` (index 0 unused).
fn abar_g_products(a: &StepFunction, g: &StepFunction) -> Vec<StepFunction> {
    let n = a.lattice().depth();
    let abar = a.adjoint();
    let mut out = vec![StepFunction::zeros(a.lattice(), g.dim())];
    for j in 1..=n {
        out.push(abar.mart_diff_unchecked(j).multiply_unchecked(&g.mart_diff_unchecked(j)));
    }
    out
}

/// `W_{a,f,g} = sum_k sum_{j<=k} E_{j-1}(d_j abar d_j g) d_k f^*
///             - sum_k d_k(d_k abar d_k g) f_{k-1}^*`.
pub fn w_afg(a: &StepFunction, f: &StepFunction, g: &StepFunction) -> Result<StepFunction> {
    require_scalar(a, "w_afg")?;
    check_pair(a, f, "w_afg")?;
    if f.lattice() != g.lattice() || f.dim() != g.dim() {
        return Err(Error::Shape("w_afg: f and g must share lattice and dimension".into()));
    }
    let n = a.lattice().depth();
    let y = abar_g_products(a, g);
    let fstar = f.adjoint();
    let mut out = StepFunction::zeros(a.lattice(), f.dim());
    let mut x_partial = StepFunction::zeros(a.lattice(), f.dim());
    for k in 1..=n {
        x_partial.add_assign_unchecked(&y[k as usize].cond_expect_unchecked(k - 1));
        out.add_assign_unchecked(&x_partial.multiply_unchecked(&fstar.mart_diff_unchecked(k)));
        let dk = y[k as usize].mart_diff_unchecked(k);
        out.sub_assign_unchecked(&dk.multiply_unchecked(&fstar.cond_expect_unchecked(k - 1)));
    }
    Ok(out)
}

/// Closed form of `E_m(W_{a,f,g})`:
/// `E_m(sum_j E_{j-1}(d_j abar d_j g)) f_m^* - E_m(sum_{j>m} d_j abar d_j g) f_m^*
///  - sum_{j<=m} (d_j abar d_j g) f_{j-1}^*`.
pub fn w_cond_closed(
    a: &StepFunction,
    f: &StepFunction,
    g: &StepFunction,
    m_level: u32,
) -> Result<StepFunction> {
    require_scalar(a, "w_cond_closed")?;
    check_pair(a, f, "w_cond_closed")?;
    let n = a.lattice().depth();
    if m_level > n {
        return Err(Error::Param(format!("level {m_level} exceeds depth {n}")));
    }
    let y = abar_g_products(a, g);
    let fstar = f.adjoint();
    let fm = fstar.cond_expect_unchecked(m_level);
    let mut full = StepFunction::zeros(a.lattice(), f.dim());
    let mut tail = StepFunction::zeros(a.lattice(), f.dim());
    let mut head = StepFunction::zeros(a.lattice(), f.dim());
    for j in 1..=n {
        full.add_assign_unchecked(&y[j as usize].cond_expect_unchecked(j - 1));
        if j > m_level {
            tail.add_assign_unchecked(&y[j as usize]);
        } else {
            head.add_assign_unchecked(&y[j as usize].multiply_unchecked(&fstar.cond_expect_unchecked(j - 1)));
        }
    }
    let mut out = full.cond_expect_unchecked(m_level).multiply_unchecked(&fm);
    out.sub_assign_unchecked(&tail.cond_expect_unchecked(m_level).multiply_unchecked(&fm));
    out.sub_assign_unchecked(&head);
    Ok(out)
}

/// `d_k(d_k b . d_k f)` from Haar coefficients:
/// `sum_{I in D_{k-1}} sum_{l=1}^{d-1} sum_{i+j = l mod d} <h_I^i,b><h_I^j,f> h_I^l / |I|^{1/2}`.
pub fn dk_product_expansion(b: &StepFunction, f: &StepFunction, k: u32) -> Result<StepFunction> {
    check_pair(b, f, "dk_product_expansion")?;
    let lattice = b.lattice();
    if k < 1 || k > lattice.depth() {
        return Err(Error::Param(format!("k = {k} outside 1..={}", lattice.depth())));
    }
    let cb = haar_analyze(b);
    let cf = haar_analyze(f);
    let coeffs = product_coefficients(&cb, &cf, k - 1);
    let d = lattice.d();
    let level = k - 1;
    let m = b.dim().max(f.dim());
    // h_I^l / |I|^{1/2} = d^{level} omega^{l(j+1)} on child j.
    let amp = (d as f64).powi(level as i32);
    let child_w = lattice.atoms_per_interval(k);
    let mut values = vec![CMatrix::zeros(m); lattice.num_atoms()];
    for (index, per_l) in coeffs.iter().enumerate() {
        for j in 0..d as usize {
            let mut add = CMatrix::zeros(m);
            for (l, c) in per_l.iter().enumerate() {
                let l = l as u64 + 1;
                add.add_scaled(c, root_of_unity(d, l * (j as u64 + 1)) * amp);
            }
            let start = (index * d as usize + j) * child_w;
            for v in &mut values[start..start + child_w] {
                *v += &add;
            }
        }
    }
    Ok(StepFunction::from_values_unchecked(lattice, m, values))
}

/// `c_{I,l} = sum_{i+j = l mod d} <h_I^i, b><h_I^j, f>` for every interval of
/// `level` and `l = 1..d-1`.
pub(crate) fn product_coefficients(
    cb: &HaarCoefficients,
    cf: &HaarCoefficients,
    level: u32,
) -> Vec<Vec<CMatrix>> {
    let lattice = cb.lattice();
    let d = lattice.d();
    let m = cb.dim().max(cf.dim());
    (0..lattice.level_len(level) as usize)
        .map(|index| {
            (1..d)
                .map(|l| {
                    let mut acc = CMatrix::zeros(m);
                    for i in 1..d {
                        let j = (l + d - i) % d;
                        if j == 0 {
                            continue;
                        }
                        acc += &mul(cb.at(level, index, i), cf.at(level, index, j));
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Named symbol in an [`OperatorSpec`].
#[derive(Clone, Debug)]
pub struct Symbol {
    pub name: String,
    pub value: Arc<StepFunction>,
}

impl Symbol {
    pub fn new(name: impl Into<String>, value: StepFunction) -> Self {
        Symbol {
            name: name.into(),
            value: Arc::new(value),
        }
    }
}

/// A symbolic linear operator built from paraproduct leaves.
#[derive(Clone, Debug)]
pub enum OperatorSpec {
    Identity,
    Pi(Symbol),
    PiStar(Symbol),
    Lambda(Symbol),
    R(Symbol),
    Theta(Symbol),
    LeftMult(Symbol),
    Compose(Box<OperatorSpec>, Box<OperatorSpec>),
    Sum(Box<OperatorSpec>, Box<OperatorSpec>),
    Scale(C64, Box<OperatorSpec>),
    Commutator(Box<OperatorSpec>, Box<OperatorSpec>),
    Adjoint(Box<OperatorSpec>),
}

impl OperatorSpec {
    pub fn compose(a: OperatorSpec, b: OperatorSpec) -> Self {
        OperatorSpec::Compose(Box::new(a), Box::new(b))
    }

    pub fn sum(a: OperatorSpec, b: OperatorSpec) -> Self {
        OperatorSpec::Sum(Box::new(a), Box::new(b))
    }

    pub fn scale(z: C64, a: OperatorSpec) -> Self {
        OperatorSpec::Scale(z, Box::new(a))
    }

    pub fn commutator(a: OperatorSpec, b: OperatorSpec) -> Self {
        OperatorSpec::Commutator(Box::new(a), Box::new(b))
    }

    pub fn adjoint(a: OperatorSpec) -> Self {
        OperatorSpec::Adjoint(Box::new(a))
    }

    pub fn symbols(&self) -> Vec<&Symbol> {
        let mut out = Vec::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols<'a>(&'a self, out: &mut Vec<&'a Symbol>) {
        use OperatorSpec::*;
        match self {
            Identity => {}
            Pi(s) | PiStar(s) | Lambda(s) | R(s) | Theta(s) | LeftMult(s) => out.push(s),
            Compose(a, b) | Sum(a, b) | Commutator(a, b) => {
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
            Scale(_, a) | Adjoint(a) => a.collect_symbols(out),
        }
    }

    /// Lattice and matrix dimension the operator acts on, inferred from its
    /// symbols. Fails when the symbols disagree or there are none.
    pub fn domain(&self) -> Result<(Lattice, usize)> {
        let syms = self.symbols();
        let first = syms
            .first()
            .ok_or_else(|| Error::Shape("operator has no symbols; give its domain explicitly".into()))?;
        let lattice = first.value.lattice();
        let m = syms.iter().map(|s| s.value.dim()).max().unwrap_or(1);
        self.check_domain(lattice, m)?;
        Ok((lattice, m))
    }

    pub fn check_domain(&self, lattice: Lattice, m: usize) -> Result<()> {
        for s in self.symbols() {
            if s.value.lattice() != lattice {
                return Err(Error::Shape(format!("symbol `{}` lives on a different lattice", s.name)));
            }
            if s.value.dim() != 1 && s.value.dim() != m {
                return Err(Error::Shape(format!(
                    "symbol `{}` has dimension {} but the operator acts on dimension {m}",
                    s.name,
                    s.value.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&self, f: &StepFunction) -> Result<StepFunction> {
        use OperatorSpec::*;
        Ok(match self {
            Identity => f.clone(),
            Pi(s) => pi(&s.value, f)?,
            PiStar(s) => pi_star(&s.value, f)?,
            Lambda(s) => lambda(&s.value, f)?,
            R(s) => r_op(&s.value, f)?,
            Theta(s) => theta(&s.value, f)?,
            LeftMult(s) => s.value.multiply(f)?,
            Compose(a, b) => a.apply(&b.apply(f)?)?,
            Sum(a, b) => a.apply(f)?.add(&b.apply(f)?)?,
            Scale(z, a) => a.apply(f)?.scale(*z),
            Commutator(a, b) => a.apply(&b.apply(f)?)?.sub(&b.apply(&a.apply(f)?)?)?,
            Adjoint(a) => a.apply_adjoint(f)?,
        })
    }

    /// Applies the Hilbert-space adjoint of the operator.
    pub fn apply_adjoint(&self, g: &StepFunction) -> Result<StepFunction> {
        use OperatorSpec::*;
        Ok(match self {
            Identity => g.clone(),
            Pi(s) => pi_star(&s.value, g)?,
            PiStar(s) => pi(&s.value, g)?,
            Lambda(s) => lambda_adjoint(&s.value, g)?,
            R(s) => r_op_adjoint(&s.value, g)?,
            Theta(s) => pi_star(&s.value, g)?.add(&lambda_adjoint(&s.value, g)?)?,
            LeftMult(s) => s.value.adjoint().multiply(g)?,
            Compose(a, b) => b.apply_adjoint(&a.apply_adjoint(g)?)?,
            Sum(a, b) => a.apply_adjoint(g)?.add(&b.apply_adjoint(g)?)?,
            Scale(z, a) => a.apply_adjoint(g)?.scale(z.conj()),
            // [A, B]^* = B^* A^* - A^* B^*
            Commutator(a, b) => {
                let ba = b.apply_adjoint(&a.apply_adjoint(g)?)?;
                let ab = a.apply_adjoint(&b.apply_adjoint(g)?)?;
                ba.sub(&ab)?
            }
            Adjoint(a) => a.apply(g)?,
        })
    }

    /// Parses the text form against a table of named symbols.
    pub fn parse(text: &str, symbols: &BTreeMap<String, Arc<StepFunction>>) -> Result<Self> {
        parse_with(text, |name| {
            symbols.get(name).cloned().ok_or_else(|| Error::Parse {
                pos: 0,
                msg: format!("unknown symbol `{name}`"),
            })
        })
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use OperatorSpec::*;
        match self {
            Identity => write!(f, "identity"),
            Pi(s) => write!(f, "pi({})", s.name),
            PiStar(s) => write!(f, "pistar({})", s.name),
            Lambda(s) => write!(f, "lambda({})", s.name),
            R(s) => write!(f, "r({})", s.name),
            Theta(s) => write!(f, "theta({})", s.name),
            LeftMult(s) => write!(f, "mult({})", s.name),
            Compose(a, b) => write!(f, "compose({a}, {b})"),
            Sum(a, b) => write!(f, "sum({a}, {b})"),
            Scale(z, a) => {
                if z.im == 0.0 {
                    write!(f, "scale({}, {a})", z.re)
                } else {
                    write!(f, "scale({}{:+}i, {a})", z.re, z.im)
                }
            }
            Commutator(a, b) => write!(f, "commutator({a}, {b})"),
            Adjoint(a) => write!(f, "adjoint({a})"),
        }
    }
}

/// Parses the text form, e.g. `commutator(pi(a), mult(b))`, resolving symbol
/// names through `resolve`.
pub fn parse_with(
    text: &str,
    mut resolve: impl FnMut(&str) -> Result<Arc<StepFunction>>,
) -> Result<OperatorSpec> {
    let mut p = Parser { src: text, pos: 0 };
    let spec = p.expr(&mut resolve)?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.error("trailing input"));
    }
    Ok(spec)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> Result<()> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> Result<&str> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.error("expected a name"));
        }
        self.pos += len;
        Ok(&self.src[start..start + len])
    }

    fn number(&mut self) -> Result<C64> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let len = rest.find([',', ')']).unwrap_or(rest.len());
        let raw: String = rest[..len].chars().filter(|c| !c.is_whitespace()).collect();
        self.pos += len;
        parse_complex(&raw).ok_or_else(|| Error::Parse {
            pos: start,
            msg: format!("bad number `{raw}`"),
        })
    }

    fn expr(&mut self, resolve: &mut dyn FnMut(&str) -> Result<Arc<StepFunction>>) -> Result<OperatorSpec> {
        let start = self.pos;
        let name = self.ident()?.to_ascii_lowercase();
        if matches!(name.as_str(), "identity" | "id") {
            self.skip_ws();
            if self.src[self.pos..].starts_with('(') {
                self.eat('(')?;
                self.eat(')')?;
            }
            return Ok(OperatorSpec::Identity);
        }
        self.eat('(')?;
        let leaf = |p: &mut Self, resolve: &mut dyn FnMut(&str) -> Result<Arc<StepFunction>>| -> Result<Symbol> {
            let pos = p.pos;
            let sym = p.ident()?.to_string();
            let value = resolve(&sym).map_err(|e| match e {
                Error::Parse { msg, .. } => Error::Parse { pos, msg },
                other => other,
            })?;
            Ok(Symbol { name: sym, value })
        };
        let spec = match name.as_str() {
            "pi" => OperatorSpec::Pi(leaf(self, resolve)?),
            "pistar" | "pi_star" => OperatorSpec::PiStar(leaf(self, resolve)?),
            "lambda" => OperatorSpec::Lambda(leaf(self, resolve)?),
            "r" => OperatorSpec::R(leaf(self, resolve)?),
            "theta" => OperatorSpec::Theta(leaf(self, resolve)?),
            "mult" | "leftmult" => OperatorSpec::LeftMult(leaf(self, resolve)?),
            "compose" | "sum" | "commutator" => {
                let a = self.expr(resolve)?;
                self.eat(',')?;
                let b = self.expr(resolve)?;
                match name.as_str() {
                    "compose" => OperatorSpec::compose(a, b),
                    "sum" => OperatorSpec::sum(a, b),
                    _ => OperatorSpec::commutator(a, b),
                }
            }
            "scale" => {
                let z = self.number()?;
                self.eat(',')?;
                OperatorSpec::scale(z, self.expr(resolve)?)
            }
            "adjoint" => OperatorSpec::adjoint(self.expr(resolve)?),
            other => {
                return Err(Error::Parse {
                    pos: start,
                    msg: format!("unknown operator `{other}`"),
                })
            }
        };
        self.eat(')')?;
        Ok(spec)
    }
}

/// Parses `2`, `-0.5`, `i`, `-2i`, `1+2i`, `1.5-0.5i`.
fn parse_complex(s: &str) -> Option<C64> {
    if s.is_empty() {
        return None;
    }
    if let Some(body) = s.strip_suffix('i') {
        // Find the split between real and imaginary parts, skipping a leading
        // sign and exponent signs.
        let split = body
            .char_indices()
            .skip(1)
            .filter(|&(i, c)| (c == '+' || c == '-') && !body[..i].ends_with(['e', 'E']))
            .map(|(i, _)| i)
            .last();
        let (re, im) = match split {
            Some(i) => (body[..i].parse::<f64>().ok()?, &body[i..]),
            None => (0.0, body),
        };
        let im = match im {
            "" | "+" => 1.0,
            "-" => -1.0,
            x => x.parse::<f64>().ok()?,
        };
        return Some(C64::new(re, im));
    }
    s.parse::<f64>().ok().map(|x| C64::new(x, 0.0))
}

/// Dense matrix of an operator in the orthonormal basis
/// `mu^{-1/2} 1_atom (x) e_pq`, atoms-major with matrix units minor.
#[derive(Clone, Debug)]
pub struct AssembledOperator {
    pub lattice: Lattice,
    pub m: usize,
    pub matrix: CMatrix,
}

impl AssembledOperator {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        let n = self.dim();
        let a = self.matrix.as_slice();
        (0..n)
            .map(|i| a[i * n..(i + 1) * n].iter().zip(x).map(|(u, v)| u * v).sum())
            .collect()
    }

    pub fn adjoint_matvec(&self, y: &[C64]) -> Vec<C64> {
        let n = self.dim();
        let a = self.matrix.as_slice();
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (i, yi) in y.iter().enumerate() {
            for (o, u) in out.iter_mut().zip(&a[i * n..(i + 1) * n]) {
                *o += u.conj() * yi;
            }
        }
        out
    }

    pub fn adjoint(&self) -> AssembledOperator {
        AssembledOperator {
            lattice: self.lattice,
            m: self.m,
            matrix: self.matrix.adjoint(),
        }
    }
}

/// Dense assembly on the domain inferred from the symbols.
pub fn assemble(spec: &OperatorSpec) -> Result<AssembledOperator> {
    let (lattice, m) = spec.domain()?;
    assemble_on(spec, lattice, m, DEFAULT_DIMENSION_CAP)
}

/// Dense assembly on an explicit domain. Columns are computed in parallel
/// and written to disjoint slots, so the result does not depend on the
/// number of worker threads.
pub fn assemble_on(spec: &OperatorSpec, lattice: Lattice, m: usize, cap: usize) -> Result<AssembledOperator> {
    spec.check_domain(lattice, m)?;
    let mm = m * m;
    let dim = lattice.num_atoms() * mm;
    if dim > cap {
        return Err(Error::DimensionCap { dim, cap });
    }
    let columns: Vec<Vec<C64>> = (0..dim)
        .into_par_iter()
        .map(|c| {
            let (atom, pq) = (c / mm, c % mm);
            let mut values = vec![CMatrix::zeros(m); lattice.num_atoms()];
            values[atom] = CMatrix::unit(m, pq / m, pq % m);
            let e = StepFunction::from_values_unchecked(lattice, m, values);
            let out = spec.apply(&e)?;
            if out.dim() != m {
                return Err(Error::Shape(format!(
                    "operator maps dimension {m} to dimension {}",
                    out.dim()
                )));
            }
            Ok(out.to_coords())
        })
        .collect::<Result<_>>()?;
    let mut matrix = CMatrix::zeros(dim);
    for (c, col) in columns.iter().enumerate() {
        for (r, z) in col.iter().enumerate() {
            matrix[(r, c)] = *z;
        }
    }
    Ok(AssembledOperator { lattice, m, matrix })
}
