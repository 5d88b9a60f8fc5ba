//! Reproducible experiment runs and their reports.
//!
//! Every run is a function of its [`ExperimentConfig`]: trial `t` draws its
//! instance from `trial_seed(seed, t)`, trials run in parallel, and results
//! are reduced in trial order, so reports are byte-identical for any number
//! of worker threads.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::ncmat::{psd_min_eig, C64};
use crate::norms::{
    aibi_gap, bmo, bmo_m, bmo_so, cond_square_defect_closed, cond_square_fn_sq, conjugate_exponent, h1max_norm,
    hpc_norm, lp_norm, maximal_tail_ratio, square_fn_sq, BmoVariant,
};
use crate::opnorm::{
    commutator_ratio_scan, katz_ratio, katz_scan, l2_opnorm_matrix_free, lp_opnorm_lower_on, theta_ratio_scan,
    write_katz_csv, write_scan_csv, CommutatorForm, KatzParams, KatzRow, PowerParams, ScanParams, ScanRow,
    SearchParams,
};
use crate::paraproducts::{
    assemble_on, commutator_pi_mult, commutator_pi_r, commutator_pi_r_expanded, dk_product_expansion, lambda,
    lambda_adjoint, lambda_defect, pi, pi_haar_form, pi_star, r_op, r_op_adjoint, theta, v_ab, w_afg,
    w_cond_closed, OperatorSpec, Symbol,
};
use crate::random::{random_haar_coefficients, random_mean_zero, random_with_mean, rng_from_seed, trial_seed};
use crate::stepfn::{haar_analyze, haar_function, StepFunction};

pub const SCHEMA: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Largest operator dimension for which suites run dense-assembly checks.
pub const SUITE_ASSEMBLY_CAP: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Identities,
    Norms,
    Opnorm,
    Katz,
    CommutatorScan,
    ThetaScan,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub d: u32,
    pub depth: u32,
    /// Matrix dimension of symbols and test functions.
    pub m: usize,
    pub p: f64,
    pub trials: usize,
    pub seed: u64,
    /// Global tolerance override for every residual case.
    pub tol: Option<f64>,
    /// Per-case tolerance overrides, by case name.
    pub tolerances: BTreeMap<String, f64>,
    /// Matrix dimensions of the katz scan.
    pub dims: Vec<usize>,
    /// Depths of the ratio scans.
    pub depths: Vec<u32>,
    /// Operator text for the opnorm run; symbols `a` (scalar) and `b`.
    pub operator: String,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Identities,
            d: 2,
            depth: 3,
            m: 2,
            p: 2.0,
            trials: 50,
            seed: 0,
            tol: None,
            tolerances: BTreeMap::new(),
            dims: vec![1, 2, 4, 8],
            depths: vec![4, 6],
            operator: "pi(b)".into(),
            out: None,
            format: OutputFormat::Json,
        }
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        Lattice::new(self.d, self.depth)?;
        if self.m < 1 {
            return Err(Error::Param("matrix dimension must be at least 1".into()));
        }
        if !(self.p >= 1.0) {
            return Err(Error::Param(format!("p must be at least 1, got {}", self.p)));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(Error::Param("tolerance must be positive".into()));
            }
        }
        if self.tolerances.values().any(|t| !(*t > 0.0)) {
            return Err(Error::Param("tolerances must be positive".into()));
        }
        match self.kind {
            ExperimentKind::CommutatorScan | ExperimentKind::ThetaScan => {
                if !(self.p > 1.0 && self.p.is_finite()) {
                    return Err(Error::Param(format!("scans need p in (1, inf), got {}", self.p)));
                }
                if self.depths.is_empty() || self.depths.iter().any(|n| !(1..=8).contains(n)) {
                    return Err(Error::Param("depths must be a nonempty subset of 1..=8".into()));
                }
            }
            ExperimentKind::Katz if self.dims.is_empty() => {
                return Err(Error::Param("katz needs at least one dimension".into()));
            }
            _ => {}
        }
        Ok(())
    }

    fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.d, self.depth)
    }

    fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.tolerances
            .get(name)
            .copied()
            .or(self.tol)
            .unwrap_or(default)
    }
}

/// How a case decides `pass`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseMode {
    /// Worst residual over trials must not exceed the tolerance.
    Residual,
    /// Smallest value over trials must exceed the threshold.
    AtLeast,
    /// Monitored value; always passes.
    Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub name: String,
    pub mode: CaseMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub max_residual: f64,
    pub pass_all: bool,
    /// Seconds; left out of serialized reports so they stay byte-stable.
    #[serde(skip)]
    pub wall_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KatzRecord {
    pub n: usize,
    pub ratio: f64,
    pub bmo_so: f64,
    pub opnorm2: f64,
    pub seed: u64,
    pub iters: usize,
    pub log_n1: f64,
    pub sqrt_log_n1: f64,
    /// Best symbol found.
    pub symbol: StepFunction,
}

impl From<&KatzRow> for KatzRecord {
    fn from(r: &KatzRow) -> Self {
        KatzRecord {
            n: r.n,
            ratio: r.ratio,
            bmo_so: r.bmo_so,
            opnorm2: r.opnorm2,
            seed: r.seed,
            iters: r.iters,
            log_n1: r.log_n1(),
            sqrt_log_n1: r.sqrt_log_n1(),
            symbol: r.symbol.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "table", content = "rows", rename_all = "kebab-case")]
pub enum Table {
    Katz(Vec<KatzRecord>),
    Scan(Vec<ScanRecord>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub depth: u32,
    pub p: f64,
    pub sup_ratio: f64,
    pub q50: f64,
    pub q90: f64,
    pub trials: usize,
    pub seed: u64,
    pub ratios: Vec<f64>,
}

impl From<&ScanRow> for ScanRecord {
    fn from(r: &ScanRow) -> Self {
        ScanRecord {
            depth: r.depth,
            p: r.p,
            sup_ratio: r.sup_ratio,
            q50: r.q50,
            q90: r.q90,
            trials: r.trials,
            seed: r.seed,
            ratios: r.ratios.clone(),
        }
    }
}

impl From<&ScanRecord> for ScanRow {
    fn from(r: &ScanRecord) -> Self {
        ScanRow {
            depth: r.depth,
            p: r.p,
            sup_ratio: r.sup_ratio,
            q50: r.q50,
            q90: r.q90,
            trials: r.trials,
            seed: r.seed,
            ratios: r.ratios.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub cases: Vec<CaseRecord>,
    pub aggregate: Aggregate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Table>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ExperimentReport {
    fn new(config: &ExperimentConfig, cases: Vec<CaseRecord>, table: Option<Table>, notes: Vec<String>) -> Self {
        let max_residual = cases.iter().filter_map(|c| c.residual).fold(0.0, f64::max);
        let pass_all = cases.iter().all(|c| c.pass);
        ExperimentReport {
            schema: SCHEMA,
            tool_version: TOOL_VERSION.to_string(),
            seed: config.seed,
            config: config.clone(),
            cases,
            aggregate: Aggregate {
                max_residual,
                pass_all,
                wall_time: None,
            },
            table,
            notes,
        }
    }

    pub fn case(&self, name: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV rendering: the scan table when there is one, otherwise the cases as
    /// `name,mode,residual,value,tolerance,pass`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        match &self.table {
            Some(Table::Katz(rows)) => {
                let rows: Vec<KatzRow> = rows
                    .iter()
                    .map(|r| KatzRow {
                        n: r.n,
                        ratio: r.ratio,
                        bmo_so: r.bmo_so,
                        opnorm2: r.opnorm2,
                        seed: r.seed,
                        iters: r.iters,
                        symbol: r.symbol.clone(),
                    })
                    .collect();
                write_katz_csv(&rows, &mut out)?;
            }
            Some(Table::Scan(rows)) => {
                let rows: Vec<ScanRow> = rows.iter().map(ScanRow::from).collect();
                write_scan_csv(&rows, &mut out)?;
            }
            None => {
                let mut w = csv::Writer::from_writer(&mut out);
                w.write_record(["name", "mode", "residual", "value", "tolerance", "pass"])?;
                for c in &self.cases {
                    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
                    let mode = match c.mode {
                        CaseMode::Residual => "residual",
                        CaseMode::AtLeast => "at-least",
                        CaseMode::Value => "value",
                    };
                    w.write_record([
                        c.name.clone(),
                        mode.to_string(),
                        opt(c.residual),
                        opt(c.value),
                        opt(c.tolerance),
                        c.pass.to_string(),
                    ])?;
                }
                w.flush()?;
            }
        }
        Ok(out)
    }

    pub fn render(&self, format: OutputFormat) -> Result<Vec<u8>> {
        match format {
            OutputFormat::Json => Ok(self.to_json()?.into_bytes()),
            OutputFormat::Csv => self.to_csv(),
        }
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Per-case accumulation of worst values, in first-seen order.
struct Cases<'a> {
    config: &'a ExperimentConfig,
    list: Vec<(String, CaseMode, f64, f64)>,
}

impl<'a> Cases<'a> {
    fn new(config: &'a ExperimentConfig) -> Self {
        Cases {
            config,
            list: Vec::new(),
        }
    }

    fn slot(&mut self, name: &str, mode: CaseMode, tol: f64, init: f64) -> &mut f64 {
        let pos = match self.list.iter().position(|c| c.0 == name) {
            Some(p) => p,
            None => {
                let tol = match mode {
                    CaseMode::Residual => self.config.tolerance(name, tol),
                    _ => self.config.tolerances.get(name).copied().unwrap_or(tol),
                };
                self.list.push((name.to_string(), mode, tol, init));
                self.list.len() - 1
            }
        };
        &mut self.list[pos].3
    }

    fn residual(&mut self, name: &str, tol: f64, r: f64) {
        let w = self.slot(name, CaseMode::Residual, tol, 0.0);
        *w = if r.is_nan() { f64::INFINITY } else { w.max(r) };
    }

    fn at_least(&mut self, name: &str, threshold: f64, v: f64) {
        let w = self.slot(name, CaseMode::AtLeast, threshold, f64::INFINITY);
        *w = if v.is_nan() { f64::NEG_INFINITY } else { w.min(v) };
    }

    fn value(&mut self, name: &str, v: f64) {
        let w = self.slot(name, CaseMode::Value, 0.0, f64::NEG_INFINITY);
        *w = w.max(v);
    }

    fn absorb(&mut self, obs: Vec<Obs>) {
        for o in obs {
            match o {
                Obs::Residual(n, t, r) => self.residual(n, t, r),
                Obs::AtLeast(n, t, v) => self.at_least(n, t, v),
                Obs::Value(n, v) => self.value(n, v),
            }
        }
    }

    fn finish(self) -> Vec<CaseRecord> {
        self.list
            .into_iter()
            .map(|(name, mode, tol, v)| {
                let finite = |x: f64| if x.is_finite() { Some(x) } else { None };
                match mode {
                    CaseMode::Residual => CaseRecord {
                        name,
                        mode,
                        residual: Some(if v.is_finite() { v } else { f64::MAX }),
                        value: None,
                        tolerance: Some(tol),
                        pass: v <= tol,
                    },
                    CaseMode::AtLeast => CaseRecord {
                        name,
                        mode,
                        residual: None,
                        value: finite(v),
                        tolerance: Some(tol),
                        pass: v > tol,
                    },
                    CaseMode::Value => CaseRecord {
                        name,
                        mode,
                        residual: None,
                        value: finite(v),
                        tolerance: None,
                        pass: true,
                    },
                }
            })
            .collect()
    }
}

/// One observation from a trial.
enum Obs {
    Residual(&'static str, f64, f64),
    AtLeast(&'static str, f64, f64),
    Value(&'static str, f64),
}

/// Runs the configured experiment. The report's `wall_time` is filled in
/// but is not serialized.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let mut report = match config.kind {
        ExperimentKind::Identities => run_identity_suite(config)?,
        ExperimentKind::Norms => run_norms_suite(config)?,
        ExperimentKind::Opnorm => run_opnorm(config)?,
        ExperimentKind::Katz | ExperimentKind::CommutatorScan | ExperimentKind::ThetaScan => run_scan(config)?,
    };
    report.aggregate.wall_time = Some(start.elapsed().as_secs_f64());
    Ok(report)
}

fn max_err(a: &StepFunction, b: &StepFunction) -> f64 {
    a.max_diff(b)
}

/// Haar orthonormality through analysis of each Haar function, plus the
/// product rule on every interval.
fn haar_observations(lattice: Lattice) -> Result<Vec<Obs>> {
    let d = lattice.d();
    let mut gram: f64 = 0.0;
    let mut product: f64 = 0.0;
    for iv in lattice.haar_intervals() {
        let hs: Vec<StepFunction> = (0..d).map(|i| haar_function(lattice, iv, i)).collect::<Result<_>>()?;
        for (i, h) in hs.iter().enumerate().skip(1) {
            let c = haar_analyze(h);
            gram = gram.max(c.mean().max_abs());
            for ((jv, j), v) in c.iter() {
                let target = if jv == iv && j as usize == i { 1.0 } else { 0.0 };
                gram = gram.max((v[(0, 0)] - C64::new(target, 0.0)).norm());
            }
            let sq = h.l2_norm();
            gram = gram.max((sq - 1.0).abs());
        }
        let inv_sqrt = 1.0 / lattice.measure(iv)?.sqrt();
        for i in 0..d as usize {
            for j in 0..d as usize {
                let lhs = hs[i].multiply(&hs[j])?;
                let rhs = hs[(i + j) % d as usize].scale(C64::new(inv_sqrt, 0.0));
                let support = StepFunction::indicator(lattice, iv)?;
                let rhs = rhs.multiply(&support)?;
                product = product.max(max_err(&lhs, &rhs));
            }
        }
    }
    Ok(vec![Obs::Residual("haar_gram", 1e-10, gram), Obs::Residual("product_rule", 1e-12, product)])
}

fn identity_trial(config: &ExperimentConfig, lattice: Lattice, t: u64) -> Result<Vec<Obs>> {
    let m = config.m;
    let mut rng = rng_from_seed(trial_seed(config.seed, t));
    let a = random_mean_zero(&mut rng, lattice, 1);
    let b = random_mean_zero(&mut rng, lattice, m);
    let f = random_mean_zero(&mut rng, lattice, m);
    let g = random_mean_zero(&mut rng, lattice, m);
    let bw = random_with_mean(&mut rng, lattice, m);
    let fw = random_with_mean(&mut rng, lattice, m);
    let mut obs = Vec::new();

    let rt = haar_analyze(&fw).synthesize()?;
    obs.push(Obs::Residual("haar_round_trip", 1e-12, max_err(&rt, &fw)));

    let mut sum = pi(&bw, &fw)?;
    sum.add_assign_unchecked(&lambda(&bw, &fw)?);
    sum.add_assign_unchecked(&r_op(&bw, &fw)?);
    sum.add_assign_unchecked(&bw.cond_expect(0)?.multiply(&fw.cond_expect(0)?)?);
    obs.push(Obs::Residual("decomposition", 1e-11, max_err(&sum, &bw.multiply(&fw)?)));

    let pairing = |x: C64, y: C64| (x - y).norm();
    obs.push(Obs::Residual(
        "pi_adjoint",
        1e-10,
        pairing(
            StepFunction::hs_inner(&pi(&b, &f)?, &g)?,
            StepFunction::hs_inner(&f, &pi_star(&b, &g)?)?,
        ),
    ));
    obs.push(Obs::Residual("pi_haar_form", 1e-11, max_err(&pi(&b, &f)?, &pi_haar_form(&b, &f)?)));
    let lr = pairing(
        StepFunction::hs_inner(&lambda(&b, &f)?, &g)?,
        StepFunction::hs_inner(&f, &lambda_adjoint(&b, &g)?)?,
    )
    .max(pairing(
        StepFunction::hs_inner(&r_op(&b, &f)?, &g)?,
        StepFunction::hs_inner(&f, &r_op_adjoint(&b, &g)?)?,
    ));
    obs.push(Obs::Residual("lambda_r_adjoint", 1e-10, lr));
    let th = pi(&b, &f)?.add(&lambda(&b, &f)?)?;
    obs.push(Obs::Residual("theta_split", 1e-12, max_err(&theta(&b, &f)?, &th)));

    // (pi_{b*})^* against Lambda_b as operators.
    let sb = Symbol::new("b", b.clone());
    let defect = OperatorSpec::sum(
        OperatorSpec::Lambda(sb.clone()),
        OperatorSpec::scale(
            C64::new(-1.0, 0.0),
            OperatorSpec::adjoint(OperatorSpec::Pi(Symbol::new("b*", b.adjoint()))),
        ),
    );
    let power = PowerParams {
        tol: 1e-12,
        seed: trial_seed(config.seed, t),
        ..PowerParams::default()
    };
    let gap = l2_opnorm_matrix_free(&defect, lattice, m, &power, None)?.value;
    if lattice.d() == 2 {
        obs.push(Obs::Residual("lambda_collapse", 1e-10, gap));
    } else {
        obs.push(Obs::AtLeast("lambda_generic", 1e-6, gap));
    }

    let dim = lattice.num_atoms() * m * m;
    if dim <= SUITE_ASSEMBLY_CAP {
        let p = assemble_on(&OperatorSpec::Pi(sb.clone()), lattice, m, SUITE_ASSEMBLY_CAP)?;
        let ps = assemble_on(&OperatorSpec::PiStar(sb.clone()), lattice, m, SUITE_ASSEMBLY_CAP)?;
        obs.push(Obs::Residual("pistar_assembled", 1e-10, ps.matrix.max_diff(&p.matrix.adjoint())));
    }

    let lhs = commutator_pi_mult(&a, &b, &f)?;
    let rhs = v_ab(&a, &b, &f)?.sub(&theta(&b, &pi(&a, &f)?)?)?;
    obs.push(Obs::Residual("commutator_pi_mult", 1e-9, max_err(&lhs, &rhs)));
    obs.push(Obs::Residual(
        "commutator_pi_r",
        1e-9,
        max_err(&commutator_pi_r(&a, &b, &f)?, &commutator_pi_r_expanded(&a, &b, &f)?),
    ));
    let remark = OperatorSpec::adjoint(OperatorSpec::commutator(
        OperatorSpec::PiStar(Symbol::new("a", a.clone())),
        OperatorSpec::LeftMult(sb.clone()),
    ));
    let dual = commutator_pi_mult(&a, &b.adjoint(), &f)?.neg();
    obs.push(Obs::Residual("commutator_adjoint", 1e-9, max_err(&remark.apply(&f)?, &dual)));

    let w = w_afg(&a, &f, &g)?;
    let mut wr: f64 = 0.0;
    for level in 0..=lattice.depth() {
        wr = wr.max(max_err(&w.cond_expect(level)?, &w_cond_closed(&a, &f, &g, level)?));
    }
    obs.push(Obs::Residual("w_closed_form", 1e-9, wr));
    let vf = v_ab(&a, &b, &f)?.sub(&lambda_defect(&b, &pi(&a, &f)?)?)?;
    obs.push(Obs::Residual(
        "v_pairing",
        1e-9,
        pairing(StepFunction::hs_inner(&vf, &g)?, StepFunction::hs_inner(&b, &w)?),
    ));

    let mut dk: f64 = 0.0;
    for k in 1..=lattice.depth() {
        let direct = b.mart_diff(k)?.multiply(&f.mart_diff(k)?)?.mart_diff(k)?;
        dk = dk.max(max_err(&dk_product_expansion(&b, &f, k)?, &direct));
    }
    obs.push(Obs::Residual("dk_product_expansion", 1e-11, dk));

    obs.extend(norm_observations(config, lattice, t)?);
    Ok(obs)
}

/// Invariants of the norms module for trial `t`.
fn norm_observations(config: &ExperimentConfig, lattice: Lattice, t: u64) -> Result<Vec<Obs>> {
    let m = config.m;
    let mut rng = rng_from_seed(trial_seed(config.seed, t) ^ 0x5EED);
    let b = random_with_mean(&mut rng, lattice, m);
    let f = random_with_mean(&mut rng, lattice, m);
    let g = random_mean_zero(&mut rng, lattice, m);
    let ca = random_haar_coefficients(&mut rng, lattice, m);
    let cb = random_haar_coefficients(&mut rng, lattice, m);
    let s = random_with_mean(&mut rng, lattice, 1);
    let mut obs = Vec::new();

    obs.push(Obs::Residual("aibi", 1e-9, (-aibi_gap(&ca, &cb)?).max(0.0)));
    let closed = cond_square_defect_closed(&b, &f)?;
    let direct = cond_square_fn_sq(&lambda_defect(&b, &f)?);
    obs.push(Obs::Residual("cond_square_closed", 1e-9, max_err(&closed, &direct)));

    let d = C64::new(lattice.d() as f64, 0.0);
    let reg = cond_square_fn_sq(&g).scale(d).sub(&square_fn_sq(&g))?;
    let mut worst: f64 = 0.0;
    for v in reg.values() {
        worst = worst.max(-psd_min_eig(v)?);
    }
    obs.push(Obs::Residual("regularity", 1e-10, worst));

    obs.push(Obs::Residual("bmo_so_le_bmo_m", 1e-10, (bmo_so(&b) - bmo_m(&b)).max(0.0)));
    let energy = haar_analyze(&g).wavelet_energy();
    obs.push(Obs::Residual("hpc_plancherel", 1e-9, (hpc_norm(&g, 2.0)?.powi(2) - energy).abs()));

    let z = C64::new(-1.5, 0.75);
    let zb = b.scale(z);
    let mut hom: f64 = 0.0;
    for v in BmoVariant::ALL {
        hom = hom.max((bmo(&zb, v) - z.norm() * bmo(&b, v)).abs());
    }
    for p in [1.0, config.p, 3.0, f64::INFINITY] {
        hom = hom.max((lp_norm(&zb, p)? - z.norm() * lp_norm(&b, p)?).abs());
    }
    hom = hom.max((hpc_norm(&zb, config.p.min(1e6))? - z.norm() * hpc_norm(&b, config.p.min(1e6))?).abs());
    hom = hom.max((h1max_norm(&zb) - z.norm() * h1max_norm(&b)).abs());
    obs.push(Obs::Residual("homogeneity", 1e-10, hom));

    let q = conjugate_exponent(config.p);
    let holder = StepFunction::hs_inner(&b, &f)?.norm() - lp_norm(&b, config.p)? * lp_norm(&f, q)?;
    obs.push(Obs::Residual("holder", 1e-9, holder.max(0.0)));

    // Scalar symbols: the norm-valued and strong-operator BMO reduce to the
    // sup-average formula, the column and row BMO to the martingale formula.
    let (avg, mart) = classical_bmo(&s);
    let collapse = (bmo_m(&s) - avg)
        .abs()
        .max((bmo_so(&s) - avg).abs())
        .max((bmo(&s, BmoVariant::C) - mart).abs())
        .max((bmo(&s, BmoVariant::R) - mart).abs());
    obs.push(Obs::Residual("bmo_scalar_collapse", 1e-10, collapse));

    obs.push(Obs::Value("bmo_cr_over_bmo_m", bmo(&b, BmoVariant::Cr) / bmo_m(&b)));
    let a = random_mean_zero(&mut rng, lattice, 1);
    if let Some(r) = maximal_tail_ratio(&a, &f, config.p)? {
        obs.push(Obs::Value("maximal_tail_ratio", r));
    }
    Ok(obs)
}

/// Sup-average and martingale BMO of a scalar function, straight from the
/// definitions.
fn classical_bmo(s: &StepFunction) -> (f64, f64) {
    let lattice = s.lattice();
    let vals: Vec<C64> = s.values().iter().map(|v| v[(0, 0)]).collect();
    let mut avg_best: f64 = 0.0;
    for iv in lattice.all_intervals() {
        let r = lattice.atom_range_unchecked(iv);
        let w = r.len() as f64;
        let mean: C64 = vals[r.clone()].iter().sum::<C64>() / w;
        let osc = vals[r].iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / w;
        avg_best = avg_best.max(osc);
    }
    let mut mart_best: f64 = 0.0;
    for m in 1..=lattice.depth() {
        let mut tail = vec![0.0; vals.len()];
        for k in m..=lattice.depth() {
            let dk = s.mart_diff_unchecked(k);
            for (t, v) in tail.iter_mut().zip(dk.values()) {
                *t += v[(0, 0)].norm_sqr();
            }
        }
        let w = lattice.atoms_per_interval(m);
        for block in tail.chunks(w) {
            mart_best = mart_best.max(block.iter().sum::<f64>() / w as f64);
        }
    }
    (avg_best.sqrt(), mart_best.sqrt())
}

fn run_trials(
    config: &ExperimentConfig,
    trial: impl Fn(&ExperimentConfig, Lattice, u64) -> Result<Vec<Obs>> + Sync,
) -> Result<Vec<Vec<Obs>>> {
    let lattice = config.lattice()?;
    (0..config.trials as u64)
        .into_par_iter()
        .map(|t| trial(config, lattice, t))
        .collect()
}

/// Every exact identity of the step-function, paraproduct and norm layers,
/// with the worst residual over `trials` random instances.
pub fn run_identity_suite(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let lattice = config.lattice()?;
    let mut cases = Cases::new(config);
    let mut notes = Vec::new();
    if config.trials > 0 {
        cases.absorb(haar_observations(lattice)?);
        if lattice.num_atoms() * config.m * config.m > SUITE_ASSEMBLY_CAP {
            notes.push(format!(
                "pistar_assembled skipped: operator dimension above {SUITE_ASSEMBLY_CAP}"
            ));
        }
    }
    for obs in run_trials(config, identity_trial)? {
        cases.absorb(obs);
    }
    Ok(ExperimentReport::new(config, cases.finish(), None, notes))
}

/// The norm-layer invariants alone, plus monitored statistics.
pub fn run_norms_suite(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut cases = Cases::new(config);
    for obs in run_trials(config, norm_observations)? {
        cases.absorb(obs);
    }
    Ok(ExperimentReport::new(config, cases.finish(), None, Vec::new()))
}

/// Norms of the operator named in `config.operator`, with random mean-zero
/// symbols `a` (scalar) and `b` drawn from `seed`.
pub fn run_opnorm(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let lattice = config.lattice()?;
    let mut rng = rng_from_seed(config.seed);
    let mut table = BTreeMap::new();
    table.insert("a".to_string(), Arc::new(random_mean_zero(&mut rng, lattice, 1)));
    table.insert("b".to_string(), Arc::new(random_mean_zero(&mut rng, lattice, config.m)));
    let spec = OperatorSpec::parse(&config.operator, &table)?;
    let m = config.m;
    let power = PowerParams {
        seed: config.seed,
        ..PowerParams::default()
    };
    let norm = l2_opnorm_matrix_free(&spec, lattice, m, &power, None)?;
    let adj = l2_opnorm_matrix_free(&OperatorSpec::adjoint(spec.clone()), lattice, m, &power, None)?;
    let mut cases = Cases::new(config);
    cases.value("l2_opnorm", norm.value);
    cases.residual("power_converged", 0.5, if norm.converged { 0.0 } else { 1.0 });
    cases.residual("adjoint_norm", 1e-8, (norm.value - adj.value).abs());
    let attained = spec.apply(&norm.witness)?.l2_norm();
    cases.residual("witness_attains", 1e-9, (attained - norm.value).abs());
    if config.p != 2.0 && config.p > 1.0 && config.p.is_finite() {
        let params = SearchParams {
            seed: config.seed,
            restarts: config.trials.clamp(1, 16),
            ..SearchParams::default()
        };
        let w = lp_opnorm_lower_on(&spec, lattice, m, config.p, &params)?;
        cases.value("lp_opnorm_lower", w.ratio);
    }
    Ok(ExperimentReport::new(config, cases.finish(), None, Vec::new()))
}

/// Katz dimension scan, commutator-ratio scan or Theta-ratio scan.
pub fn run_scan(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut cases = Cases::new(config);
    let mut notes = Vec::new();
    let table = match config.kind {
        ExperimentKind::Katz => {
            let lattice = config.lattice()?;
            let mut params = KatzParams::default();
            params.search.seed = config.seed;
            let rows = katz_scan(&config.dims, lattice, &params)?;
            let mut mono: f64 = 0.0;
            for w in rows.windows(2) {
                mono = mono.max(w[0].ratio - w[1].ratio);
            }
            cases.residual("katz_monotone", 1e-6, mono.max(0.0));
            let tight = params.outer;
            let mut inv: f64 = 0.0;
            for r in &rows {
                cases.value(leak_name(format!("rho_{}", r.n)), r.ratio);
                for z in [C64::new(2.0, 0.0), C64::new(0.0, 1.0)] {
                    let scaled = katz_ratio(&r.symbol.scale(z), &tight, None)?;
                    inv = inv.max((scaled.ratio - r.ratio).abs());
                }
                let emb = katz_ratio(&r.symbol.block_embed(2), &tight, None)?;
                inv = inv.max((emb.ratio - r.ratio).abs());
            }
            cases.residual("katz_invariance", 1e-8, inv);
            if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
                cases.value("rho_growth", last.ratio / first.ratio);
                cases.value("log_growth", last.log_n1() / first.log_n1());
                cases.value("sqrt_log_growth", last.sqrt_log_n1() / first.sqrt_log_n1());
            }
            notes.push("katz ratios are best found by search, not extremal".into());
            Table::Katz(rows.iter().map(KatzRecord::from).collect())
        }
        ExperimentKind::CommutatorScan => {
            let params = ScanParams {
                d: config.d,
                m: config.m,
                seed: config.seed,
            };
            let rows = commutator_ratio_scan(config.p, &config.depths, config.trials, &params, CommutatorForm::Direct)?;
            let dual = commutator_ratio_scan(config.p, &config.depths, config.trials, &params, CommutatorForm::Dual)?;
            let mut diff: f64 = 0.0;
            for (r, s) in rows.iter().zip(&dual) {
                diff = diff.max((r.sup_ratio - s.sup_ratio).abs());
                diff = diff.max((r.q50 - s.q50).abs()).max((r.q90 - s.q90).abs());
            }
            cases.residual("dual_form", 1e-9, diff);
            scan_cases(&mut cases, &rows);
            Table::Scan(rows.iter().map(ScanRecord::from).collect())
        }
        ExperimentKind::ThetaScan => {
            let params = ScanParams {
                d: config.d,
                m: config.m,
                seed: config.seed,
            };
            let rows = theta_ratio_scan(config.p, &config.depths, config.trials, &params)?;
            scan_cases(&mut cases, &rows);
            Table::Scan(rows.iter().map(ScanRecord::from).collect())
        }
        _ => return Err(Error::Config("not a scan kind".into())),
    };
    Ok(ExperimentReport::new(config, cases.finish(), Some(table), notes))
}

fn scan_cases(cases: &mut Cases<'_>, rows: &[ScanRow]) {
    for r in rows {
        cases.value(leak_name(format!("sup_ratio_depth_{}", r.depth)), r.sup_ratio);
    }
    let sups: Vec<f64> = rows.iter().map(|r| r.sup_ratio).collect();
    let hi = sups.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = sups.iter().copied().fold(f64::INFINITY, f64::min);
    cases.value("depth_spread", hi / lo);
}

/// Case names are `&'static str` in observations; the few dynamic ones are
/// interned here.
fn leak_name(s: String) -> &'static str {
    use std::collections::HashSet;
    use std::sync::{Mutex, OnceLock};
    static NAMES: OnceLock<Mutex<HashSet<&'static str>>> = OnceLock::new();
    let mut set = NAMES.get_or_init(|| Mutex::new(HashSet::new())).lock().expect("name table");
    if let Some(n) = set.get(s.as_str()) {
        return n;
    }
    let n: &'static str = Box::leak(s.into_boxed_str());
    set.insert(n);
    n
}
