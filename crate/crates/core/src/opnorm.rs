//! Operator norms and extremal searches.
//!
//! `L_2 -> L_2` norms come from power iteration on `T^* T`, either on a dense
//! assembly or matrix-free. For `p != 2` only lower bounds with explicit
//! witnesses are produced. The scans sample or optimize ratios of operator
//! norms to symbol norms and report them row by row.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::ncmat::{max_eig, psd_power, CMatrix, C64};
use crate::norms::{bmo_m, bmo_so, bmo_so_witness, hpc_norm, lp_norm};
use crate::paraproducts::{assemble_on, commutator_pi_mult, pi, theta, AssembledOperator, OperatorSpec, Symbol, DEFAULT_DIMENSION_CAP};
use crate::random::{complex_gaussian, random_mean_zero, random_step, rng_from_seed, trial_seed, LabRng};
use crate::stepfn::StepFunction;

/// A linear map on `C^n` together with its adjoint.
pub trait LinearMap: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64]) -> Vec<C64>;
    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64>;
}

impl LinearMap for AssembledOperator {
    fn dim(&self) -> usize {
        AssembledOperator::dim(self)
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.matvec(x)
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        self.adjoint_matvec(y)
    }
}

/// An [`OperatorSpec`] acting on flat coordinates without assembly.
pub struct MatrixFree<'a> {
    spec: &'a OperatorSpec,
    lattice: Lattice,
    m: usize,
}

impl<'a> MatrixFree<'a> {
    pub fn new(spec: &'a OperatorSpec, lattice: Lattice, m: usize) -> Result<Self> {
        spec.check_domain(lattice, m)?;
        Ok(MatrixFree { spec, lattice, m })
    }

    fn lift(&self, x: &[C64]) -> StepFunction {
        StepFunction::from_coords(self.lattice, self.m, x).expect("finite iterate of matching length")
    }
}

impl LinearMap for MatrixFree<'_> {
    fn dim(&self) -> usize {
        self.lattice.num_atoms() * self.m * self.m
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.spec.apply(&self.lift(x)).expect("domain checked").to_coords()
    }

    fn apply_adjoint(&self, y: &[C64]) -> Vec<C64> {
        self.spec.apply_adjoint(&self.lift(y)).expect("domain checked").to_coords()
    }
}

fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn normalize(x: &mut [C64]) -> f64 {
    let n = norm(x);
    if n > 0.0 {
        for z in x.iter_mut() {
            *z /= n;
        }
    }
    n
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    /// Relative change in the singular value estimate that counts as converged.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PowerParams {
    fn default() -> Self {
        PowerParams {
            tol: 1e-10,
            max_iters: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PowerResult {
    /// `||T q||` for the unit witness `q`; never exceeds the true norm beyond rounding.
    pub value: f64,
    pub witness: Vec<C64>,
    pub iterations: usize,
    pub converged: bool,
}

fn power_run(map: &dyn LinearMap, mut x: Vec<C64>, params: &PowerParams) -> PowerResult {
    let mut prev = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut sigma = 0.0;
    while iterations < params.max_iters {
        iterations += 1;
        let y = map.apply(&x);
        sigma = norm(&y);
        if sigma == 0.0 {
            converged = true;
            break;
        }
        let mut z = map.apply_adjoint(&y);
        if normalize(&mut z) == 0.0 {
            converged = true;
            break;
        }
        if (sigma - prev).abs() <= params.tol * sigma {
            converged = true;
            break;
        }
        prev = sigma;
        x = z;
    }
    PowerResult {
        value: sigma,
        witness: x,
        iterations,
        converged,
    }
}

fn random_unit(rng: &mut LabRng, n: usize) -> Vec<C64> {
    let mut x: Vec<C64> = (0..n).map(|_| complex_gaussian(rng)).collect();
    normalize(&mut x);
    x
}

/// Largest singular value by power iteration on `T^* T`.
///
/// Starts from `warm` when given (and nonzero), otherwise from a seeded
/// Gaussian vector. A run that does not converge is followed by one restart
/// from a fresh random vector; the better of the two is returned.
pub fn power_iteration(map: &dyn LinearMap, params: &PowerParams, warm: Option<&[C64]>) -> PowerResult {
    let n = map.dim();
    let mut rng = rng_from_seed(params.seed);
    let start = match warm {
        Some(w) if w.len() == n && norm(w) > 0.0 => {
            let mut x = w.to_vec();
            normalize(&mut x);
            x
        }
        _ => random_unit(&mut rng, n),
    };
    let first = power_run(map, start, params);
    if first.converged {
        return first;
    }
    let mut rng = rng_from_seed(trial_seed(params.seed, 1));
    let second = power_run(map, random_unit(&mut rng, n), params);
    let iterations = first.iterations + second.iterations;
    let mut best = if second.value > first.value { second } else { first };
    best.iterations = iterations;
    best
}

#[derive(Clone, Debug)]
pub struct OpNorm {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Unit-norm maximizing function found by the iteration.
    pub witness: StepFunction,
}

fn finish(lattice: Lattice, m: usize, r: PowerResult) -> OpNorm {
    let mut w = r.witness;
    normalize(&mut w);
    let witness = StepFunction::from_coords(lattice, m, &w).expect("finite witness");
    let scale = lattice.atom_measure().sqrt();
    OpNorm {
        value: r.value,
        converged: r.converged,
        iterations: r.iterations,
        witness: witness.scale(C64::new(1.0 / scale, 0.0)),
    }
}

/// `||T||_{L_2 -> L_2}` on the domain inferred from the symbols, through dense
/// assembly (capped at [`DEFAULT_DIMENSION_CAP`]).
pub fn l2_opnorm(spec: &OperatorSpec) -> Result<OpNorm> {
    let (lattice, m) = spec.domain()?;
    l2_opnorm_on(spec, lattice, m, &PowerParams::default())
}

pub fn l2_opnorm_on(spec: &OperatorSpec, lattice: Lattice, m: usize, params: &PowerParams) -> Result<OpNorm> {
    let op = assemble_on(spec, lattice, m, DEFAULT_DIMENSION_CAP)?;
    Ok(finish(lattice, m, power_iteration(&op, params, None)))
}

/// Matrix-free variant of [`l2_opnorm_on`]; `warm` is an optional starting
/// function.
pub fn l2_opnorm_matrix_free(
    spec: &OperatorSpec,
    lattice: Lattice,
    m: usize,
    params: &PowerParams,
    warm: Option<&StepFunction>,
) -> Result<OpNorm> {
    let map = MatrixFree::new(spec, lattice, m)?;
    let w = warm.map(StepFunction::to_coords);
    Ok(finish(lattice, m, power_iteration(&map, params, w.as_deref())))
}

/// Largest of `count` Rayleigh-type quotients `||T x|| / ||x||` at seeded random `x`.
pub fn rayleigh_sample(map: &dyn LinearMap, count: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| {
            let x = random_unit(&mut rng, map.dim());
            norm(&map.apply(&x))
        })
        .fold(0.0, f64::max)
}

/// Parameters of the derivative-free searches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub restarts: usize,
    pub max_iters: usize,
    /// Initial step, relative to the scale of the current point.
    pub step_init: f64,
    pub step_shrink: f64,
    pub seed: u64,
    /// The search stops once the relative step falls below this.
    pub tol: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            restarts: 4,
            max_iters: 200,
            step_init: 0.5,
            step_shrink: 0.5,
            seed: 0,
            tol: 1e-4,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.restarts < 1 {
            return Err(Error::Param("restarts must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Param("tol must be positive".into()));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::Param("step_shrink must lie in (0, 1)".into()));
        }
        if !(self.step_init > 0.0) {
            return Err(Error::Param("step_init must be positive".into()));
        }
        Ok(())
    }
}

/// A ratio together with everything needed to recompute it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioWitness {
    pub symbol: Option<StepFunction>,
    pub test_function: Option<StepFunction>,
    pub ratio: f64,
    pub norms: BTreeMap<String, f64>,
}

fn lp_ratio(spec: &OperatorSpec, f: &StepFunction, p: f64) -> Result<f64> {
    let den = lp_norm(f, p)?;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(lp_norm(&spec.apply(f)?, p)? / den)
}

fn check_open_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::Param(format!("p must lie in (1, inf), got {p}")));
    }
    Ok(())
}

/// Certified lower bound for `||T||_{L_p -> L_p}` on the domain inferred from
/// the symbols.
pub fn lp_opnorm_lower(spec: &OperatorSpec, p: f64, params: &SearchParams) -> Result<RatioWitness> {
    let (lattice, m) = spec.domain()?;
    lp_opnorm_lower_on(spec, lattice, m, p, params)
}

/// Coordinate hill climbing on the real and imaginary parts of the atom
/// entries of `f`. Each pass tries `+-step` on every coordinate and keeps
/// strict improvements; a pass without improvement multiplies the step by
/// `step_shrink`. The returned ratio is the one attained by the returned
/// test function.
pub fn lp_opnorm_lower_on(
    spec: &OperatorSpec,
    lattice: Lattice,
    m: usize,
    p: f64,
    params: &SearchParams,
) -> Result<RatioWitness> {
    check_open_p(p)?;
    params.validate()?;
    spec.check_domain(lattice, m)?;
    let runs: Vec<(f64, StepFunction)> = (0..params.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(trial_seed(params.seed, r as u64));
            let f = random_step(&mut rng, lattice, m);
            climb_coordinates(spec, f, p, params)
        })
        .collect::<Result<_>>()?;
    let (ratio, f) = runs
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .expect("at least one restart");
    let mut norms = BTreeMap::new();
    norms.insert("lp_f".to_string(), lp_norm(&f, p)?);
    norms.insert("lp_tf".to_string(), lp_norm(&spec.apply(&f)?, p)?);
    Ok(RatioWitness {
        symbol: None,
        test_function: Some(f),
        ratio,
        norms,
    })
}

fn climb_coordinates(spec: &OperatorSpec, f: StepFunction, p: f64, params: &SearchParams) -> Result<(f64, StepFunction)> {
    let (lattice, m) = (f.lattice(), f.dim());
    let mut x = f.to_coords();
    let mut best = lp_ratio(spec, &f, p)?;
    let scale = x.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut step = params.step_init;
    let eval = |x: &[C64]| -> Result<f64> { lp_ratio(spec, &StepFunction::from_coords(lattice, m, x)?, p) };
    for _ in 0..params.max_iters {
        if step < params.tol {
            break;
        }
        let mut improved = false;
        for c in 0..x.len() {
            for dir in [C64::new(1.0, 0.0), C64::new(-1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0)] {
                let old = x[c];
                x[c] = old + dir * (step * scale);
                let r = eval(&x)?;
                if r > best {
                    best = r;
                    improved = true;
                } else {
                    x[c] = old;
                }
            }
        }
        if !improved {
            step *= params.step_shrink;
        }
    }
    let f = StepFunction::from_coords(lattice, m, &x)?;
    Ok((lp_ratio(spec, &f, p)?, f))
}

/// Parameters of the dimension-scaling search for `||pi_b|| / ||b||_{BMO_so}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KatzParams {
    pub search: SearchParams,
    /// Power iteration used inside the search.
    pub inner: PowerParams,
    /// Power iteration used for the reported values.
    pub outer: PowerParams,
}

impl Default for KatzParams {
    fn default() -> Self {
        KatzParams {
            search: SearchParams {
                restarts: 4,
                max_iters: 600,
                step_init: 0.3,
                step_shrink: 0.5,
                seed: 0,
                tol: 1e-6,
            },
            inner: PowerParams {
                tol: 1e-9,
                max_iters: 2_000,
                seed: 0,
            },
            outer: PowerParams {
                tol: 1e-13,
                max_iters: 10_000,
                seed: 0,
            },
        }
    }
}

/// `rho(b) = ||pi_b||_{L_2 -> L_2} / ||b||_{BMO_so}` with its constituents.
#[derive(Clone, Debug)]
pub struct KatzRatio {
    pub ratio: f64,
    pub opnorm2: f64,
    pub bmo_so: f64,
    pub witness: StepFunction,
    pub converged: bool,
}

pub fn katz_ratio(b: &StepFunction, params: &PowerParams, warm: Option<&StepFunction>) -> Result<KatzRatio> {
    let spec = OperatorSpec::Pi(Symbol::new("b", b.clone()));
    let op = l2_opnorm_matrix_free(&spec, b.lattice(), b.dim(), params, warm)?;
    let so = bmo_so(b);
    if so < 1e-12 {
        return Err(Error::AllDegenerate);
    }
    Ok(KatzRatio {
        ratio: op.value / so,
        opnorm2: op.value,
        bmo_so: so,
        witness: op.witness,
        converged: op.converged,
    })
}

/// One row of the dimension scan.
#[derive(Clone, Debug)]
pub struct KatzRow {
    pub n: usize,
    pub ratio: f64,
    pub bmo_so: f64,
    pub opnorm2: f64,
    /// Seed of the restart that produced the best symbol.
    pub seed: u64,
    /// Search steps taken by that restart.
    pub iters: usize,
    /// Best symbol found (labelled best found, not extremal).
    pub symbol: StepFunction,
}

impl KatzRow {
    pub fn log_n1(&self) -> f64 {
        ((self.n + 1) as f64).ln()
    }

    pub fn sqrt_log_n1(&self) -> f64 {
        self.log_n1().sqrt()
    }
}

/// Ascent direction of `rho` at `b` in the real `L_2` pairing.
///
/// With `q` the top right singular function of `pi_b`, `u = pi_b q / sigma`
/// and `(I, v)` the interval and eigenvector attaining `BMO_so`:
/// `grad sigma = sum_k d_k(u . (E_{k-1} q)^*)` and
/// `grad beta = 1_I (b - b_I) v v^* / (|I| beta)`.
pub fn katz_gradient(b: &StepFunction, value: &KatzRatio) -> Result<StepFunction> {
    let lattice = b.lattice();
    let m = b.dim();
    let q = &value.witness;
    let sigma = value.opnorm2;
    let u = pi(b, q)?.scale(C64::new(1.0 / sigma, 0.0));
    let mut g_sigma = StepFunction::zeros(lattice, m);
    for k in 1..=lattice.depth() {
        let prod = u.multiply(&q.cond_expect(k - 1)?.adjoint())?;
        g_sigma = g_sigma.add(&prod.mart_diff(k)?)?;
    }
    let so = bmo_so_witness(b);
    let beta = so.value;
    let vv = CMatrix::from_fn(m, |i, j| so.vector[i] * so.vector[j].conj());
    let range = lattice.atom_range(so.interval)?;
    let avg = b.cond_expect(so.interval.level)?;
    let w = sigma / (lattice.measure(so.interval)? * beta.powi(3));
    let values = (0..lattice.num_atoms())
        .map(|x| {
            let g = g_sigma.value(x).scale_real(1.0 / beta);
            if range.contains(&x) {
                let gb = &(b.value(x) - avg.value(x)) * &vv;
                &g - &gb.scale_real(w)
            } else {
                g
            }
        })
        .collect();
    StepFunction::from_values(lattice, m, values)
}

struct Climb {
    symbol: StepFunction,
    value: KatzRatio,
    seed: u64,
    iters: usize,
}

fn step_along(b: &StepFunction, dir: &StepFunction, step: f64) -> StepFunction {
    let k = step * b.l2_norm() / dir.l2_norm();
    b.add(&dir.scale(C64::new(k, 0.0))).expect("same shape")
}

/// `F_P(b) = (sum_I tr A_I^P)^{1/(2P)}` with `A_I = avg_I (b - b_I)^*(b - b_I)`,
/// a smooth upper bound for `BMO_so`, and its gradient.
fn smooth_bmo_so(b: &StepFunction, power: f64) -> (f64, StepFunction) {
    let lattice = b.lattice();
    let m = b.dim();
    let avgs = b.level_averages();
    let mut blocks = Vec::new();
    for n in lattice.levels() {
        let w = lattice.atoms_per_interval(n);
        for (k, avg) in avgs[n as usize].iter().enumerate() {
            let mut acc = CMatrix::zeros(m);
            for v in &b.values()[k * w..(k + 1) * w] {
                acc += &(v - avg).gram();
            }
            blocks.push((n, k, w, acc.scale_real(1.0 / w as f64)));
        }
    }
    let top = blocks
        .iter()
        .map(|(_, _, _, a)| max_eig(a).expect("Hermitian"))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let powered: Vec<CMatrix> = blocks
        .iter()
        .map(|(_, _, _, a)| psd_power(&a.scale_real(1.0 / top), power - 1.0).expect("Hermitian"))
        .collect();
    let sum: f64 = blocks
        .iter()
        .zip(&powered)
        .map(|((_, _, _, a), q)| (q * &a.scale_real(1.0 / top)).trace().re)
        .sum();
    let value = top.sqrt() * sum.powf(1.0 / (2.0 * power));
    let mut values = vec![CMatrix::zeros(m); lattice.num_atoms()];
    let coef = value / (top * sum);
    for ((n, k, w, _), q) in blocks.iter().zip(&powered) {
        let scale = coef / lattice.level_measure(*n);
        let avg = &avgs[*n as usize][*k];
        for x in k * w..(k + 1) * w {
            let g = &(b.value(x) - avg) * q;
            values[x] += &g.scale_real(scale);
        }
    }
    (value, StepFunction::from_values_unchecked(lattice, m, values))
}

/// Objective of one stage of the symbol search.
#[derive(Clone, Copy)]
enum Objective {
    Exact,
    Smoothed(f64),
}

struct Point {
    value: KatzRatio,
    /// The stage objective; equals `value.ratio` for [`Objective::Exact`].
    score: f64,
}

fn evaluate(b: &StepFunction, obj: Objective, params: &PowerParams, warm: Option<&StepFunction>) -> Result<Point> {
    let value = katz_ratio(b, params, warm)?;
    let score = match obj {
        Objective::Exact => value.ratio,
        Objective::Smoothed(p) => value.opnorm2 / smooth_bmo_so(b, p).0,
    };
    Ok(Point { value, score })
}

fn objective_gradient(b: &StepFunction, obj: Objective, point: &Point) -> Result<StepFunction> {
    match obj {
        Objective::Exact => katz_gradient(b, &point.value),
        Objective::Smoothed(p) => {
            let (f, gf) = smooth_bmo_so(b, p);
            let sigma = point.value.opnorm2;
            let q = &point.value.witness;
            let u = pi(b, q)?.scale(C64::new(1.0 / sigma, 0.0));
            let mut g = gf.scale(C64::new(-sigma / (f * f), 0.0));
            for k in 1..=b.lattice().depth() {
                let prod = u.multiply(&q.cond_expect(k - 1)?.adjoint())?;
                g.add_assign_unchecked(&prod.mart_diff(k)?.scale(C64::new(1.0 / f, 0.0)));
            }
            Ok(g)
        }
    }
}

/// Ascent on mean-zero symbols, first on smoothed objectives with increasing
/// exponent and then on `rho` itself. Each step tries the gradient direction,
/// then a random direction drawn as Gaussian Haar coefficients; the step,
/// relative to `||b||_2`, grows after gradient successes and shrinks when
/// both proposals fail. The point with the best exact `rho` is returned.
fn climb_symbol(start: StepFunction, seed: u64, params: &KatzParams) -> Result<Climb> {
    let s = &params.search;
    let lattice = start.lattice();
    let m = start.dim();
    let mut rng = rng_from_seed(seed);
    let mut symbol = start;
    let first = katz_ratio(&symbol, &params.inner, None)?;
    let mut best = Climb {
        symbol: symbol.clone(),
        value: first,
        seed,
        iters: 0,
    };
    let mut iters = 0;
    let stages = [Objective::Smoothed(8.0), Objective::Smoothed(64.0), Objective::Exact];
    let per_stage = s.max_iters.div_ceil(stages.len());
    for obj in stages {
        let mut point = evaluate(&symbol, obj, &params.inner, Some(&best.value.witness))?;
        let mut step = s.step_init;
        let mut taken = 0;
        while taken < per_stage && step >= s.tol {
            taken += 1;
            iters += 1;
            let grad = objective_gradient(&symbol, obj, &point)?;
            let random = random_mean_zero(&mut rng, lattice, m);
            let mut accepted = None;
            if grad.l2_norm() > 0.0 {
                let cand = step_along(&symbol, &grad, step);
                let p = evaluate(&cand, obj, &params.inner, Some(&point.value.witness))?;
                if p.score > point.score {
                    accepted = Some((cand, p, true));
                }
            }
            if accepted.is_none() {
                let cand = step_along(&symbol, &random, step);
                let p = evaluate(&cand, obj, &params.inner, Some(&point.value.witness))?;
                if p.score > point.score {
                    accepted = Some((cand, p, false));
                }
            }
            match accepted {
                Some((cand, p, by_gradient)) => {
                    symbol = cand;
                    point = p;
                    if by_gradient {
                        step = (step * 1.5).min(1.0);
                    }
                    if point.value.ratio > best.value.ratio {
                        best.symbol = symbol.clone();
                        best.value = point.value.clone();
                        best.iters = iters;
                    }
                }
                None => step *= s.step_shrink,
            }
        }
    }
    Ok(best)
}

/// For each `n` in `dims` (ascending powers of two), searches `M_n`-valued
/// mean-zero symbols on `lattice` for large `rho(b)`. Dimension `2n` starts
/// one climb from `diag(best_n, best_n)`, so `rho` is nondecreasing along the
/// scan up to the accuracy of the power iteration.
pub fn katz_scan(dims: &[usize], lattice: Lattice, params: &KatzParams) -> Result<Vec<KatzRow>> {
    params.search.validate()?;
    for (i, &n) in dims.iter().enumerate() {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Param(format!("dimension {n} is not a power of two")));
        }
        if i > 0 && n <= dims[i - 1] {
            return Err(Error::Param("dimensions must be strictly ascending".into()));
        }
    }
    let mut rows: Vec<KatzRow> = Vec::with_capacity(dims.len());
    let mut prev: Option<StepFunction> = None;
    let base = params.search.seed;
    for &n in dims {
        let warm = prev.as_ref().map(|b| b.block_embed(n / b.dim()));
        let starts: Vec<(StepFunction, u64)> = (0..params.search.restarts)
            .map(|r| {
                let seed = trial_seed(base, (n as u64) << 32 | r as u64);
                match (&warm, r) {
                    (Some(w), 0) => (w.clone(), seed),
                    _ => (random_mean_zero(&mut rng_from_seed(seed), lattice, n), seed),
                }
            })
            .collect();
        let climbs: Vec<Climb> = starts
            .into_par_iter()
            .map(|(c, seed)| climb_symbol(c, trial_seed(seed, 1), params).map(|mut cl| {
                cl.seed = seed;
                cl
            }))
            .collect::<Result<_>>()?;
        let best = climbs
            .into_iter()
            .reduce(|a, b| if b.value.ratio > a.value.ratio { b } else { a })
            .expect("at least one restart");
        let symbol = best.symbol;
        let mut fin = katz_ratio(&symbol, &params.outer, Some(&best.value.witness))?;
        let mut chosen = symbol;
        if let Some(w) = &warm {
            let embedded = w.clone();
            let alt = katz_ratio(&embedded, &params.outer, None)?;
            if alt.ratio > fin.ratio {
                fin = alt;
                chosen = embedded;
            }
        }
        rows.push(KatzRow {
            n,
            ratio: fin.ratio,
            bmo_so: fin.bmo_so,
            opnorm2: fin.opnorm2,
            seed: best.seed,
            iters: best.iters,
            symbol: chosen.clone(),
        });
        prev = Some(chosen);
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommutatorForm {
    /// `[pi_a, M_b] f` evaluated directly.
    Direct,
    /// The same operator written as `-([pi_a^*, M_{b^*}])^*`.
    Dual,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub d: u32,
    /// Matrix dimension of `b` and `f`.
    pub m: usize,
    pub seed: u64,
}

/// One depth of a ratio scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanRow {
    pub depth: u32,
    pub p: f64,
    pub sup_ratio: f64,
    pub q50: f64,
    pub q90: f64,
    /// Nondegenerate trials that entered the statistics.
    pub trials: usize,
    pub seed: u64,
    #[serde(skip)]
    pub ratios: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(depth: u32, p: f64, seed: u64, ratios: Vec<Option<f64>>) -> Result<ScanRow> {
    let ratios: Vec<f64> = ratios.into_iter().flatten().collect();
    if ratios.is_empty() {
        return Err(Error::AllDegenerate);
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(ScanRow {
        depth,
        p,
        sup_ratio: *sorted.last().expect("nonempty"),
        q50: quantile(&sorted, 0.5),
        q90: quantile(&sorted, 0.9),
        trials: ratios.len(),
        seed,
        ratios,
    })
}

fn check_depths(depths: &[u32]) -> Result<()> {
    if depths.is_empty() || depths.iter().any(|n| !(1..=8).contains(n)) {
        return Err(Error::Param("depths must be a nonempty subset of 1..=8".into()));
    }
    Ok(())
}

/// One sample of `||[pi_a, M_b] f||_p / (||a||_BMO ||b||_BMO_M ||f||_p)`;
/// `None` when the denominator is below `1e-12`.
pub fn commutator_ratio(
    a: &StepFunction,
    b: &StepFunction,
    f: &StepFunction,
    p: f64,
    form: CommutatorForm,
) -> Result<Option<f64>> {
    let den = bmo_m(a) * bmo_m(b) * lp_norm(f, p)?;
    if den < 1e-12 {
        return Ok(None);
    }
    let num = match form {
        CommutatorForm::Direct => commutator_pi_mult(a, b, f)?,
        CommutatorForm::Dual => {
            let spec = OperatorSpec::scale(
                C64::new(-1.0, 0.0),
                OperatorSpec::adjoint(OperatorSpec::commutator(
                    OperatorSpec::PiStar(Symbol::new("a", a.clone())),
                    OperatorSpec::LeftMult(Symbol::new("b*", b.adjoint())),
                )),
            );
            spec.apply(f)?
        }
    };
    Ok(Some(lp_norm(&num, p)? / den))
}

/// Random mean-zero scalar `a`, `M_m`-valued `b` and `f` for trial `t`.
pub fn commutator_instance(lattice: Lattice, m: usize, seed: u64) -> (StepFunction, StepFunction, StepFunction) {
    let mut rng = rng_from_seed(seed);
    let a = random_mean_zero(&mut rng, lattice, 1);
    let b = random_mean_zero(&mut rng, lattice, m);
    let f = random_mean_zero(&mut rng, lattice, m);
    (a, b, f)
}

/// Sup and quantiles of the commutator ratio over seeded random trials, per depth.
pub fn commutator_ratio_scan(
    p: f64,
    depths: &[u32],
    trials: usize,
    params: &ScanParams,
    form: CommutatorForm,
) -> Result<Vec<ScanRow>> {
    check_open_p(p)?;
    check_depths(depths)?;
    depths
        .iter()
        .map(|&depth| {
            let lattice = Lattice::new(params.d, depth)?;
            let ratios = (0..trials as u64)
                .into_par_iter()
                .map(|t| {
                    let (a, b, f) = commutator_instance(lattice, params.m, trial_seed(params.seed, t));
                    commutator_ratio(&a, &b, &f, p, form)
                })
                .collect::<Result<Vec<_>>>()?;
            summarize(depth, p, params.seed, ratios)
        })
        .collect()
}

/// `hpc(Theta_b f) / (||b||_BMO_M ||f||_p)` for `p >= 2`, and
/// `||Theta_b f||_p / (||b||_BMO_M ||f||_{h_{p,c}})` for `p < 2`.
pub fn theta_ratio(b: &StepFunction, f: &StepFunction, p: f64) -> Result<Option<f64>> {
    let tf = theta(b, f)?;
    let (num, fnorm) = if p >= 2.0 {
        (hpc_norm(&tf, p)?, lp_norm(f, p)?)
    } else {
        (lp_norm(&tf, p)?, hpc_norm(f, p)?)
    };
    let den = bmo_m(b) * fnorm;
    if den < 1e-12 {
        return Ok(None);
    }
    Ok(Some(num / den))
}

pub fn theta_ratio_scan(p: f64, depths: &[u32], trials: usize, params: &ScanParams) -> Result<Vec<ScanRow>> {
    check_open_p(p)?;
    check_depths(depths)?;
    depths
        .iter()
        .map(|&depth| {
            let lattice = Lattice::new(params.d, depth)?;
            let ratios = (0..trials as u64)
                .into_par_iter()
                .map(|t| {
                    let mut rng = rng_from_seed(trial_seed(params.seed, t));
                    let b = random_mean_zero(&mut rng, lattice, params.m);
                    let f = random_mean_zero(&mut rng, lattice, params.m);
                    theta_ratio(&b, &f, p)
                })
                .collect::<Result<Vec<_>>>()?;
            summarize(depth, p, params.seed, ratios)
        })
        .collect()
}

#[derive(Serialize)]
struct KatzCsvRow {
    n: usize,
    ratio: f64,
    bmo_so: f64,
    opnorm2: f64,
    seed: u64,
    iters: usize,
}

#[derive(Serialize)]
struct ScanCsvRow {
    depth: u32,
    p: f64,
    sup_ratio: f64,
    q50: f64,
    q90: f64,
    trials: usize,
    seed: u64,
}

/// CSV with header `n,ratio,bmo_so,opnorm2,seed,iters`.
pub fn write_katz_csv<W: Write>(rows: &[KatzRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(KatzCsvRow {
            n: r.n,
            ratio: r.ratio,
            bmo_so: r.bmo_so,
            opnorm2: r.opnorm2,
            seed: r.seed,
            iters: r.iters,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with header `depth,p,sup_ratio,q50,q90,trials,seed`.
pub fn write_scan_csv<W: Write>(rows: &[ScanRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(ScanCsvRow {
            depth: r.depth,
            p: r.p,
            sup_ratio: r.sup_ratio,
            q50: r.q50,
            q90: r.q90,
            trials: r.trials,
            seed: r.seed,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
