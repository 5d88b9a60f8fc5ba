use super::*;
use crate::lattice::Interval;
use crate::ncmat::spectral_norm;
use crate::paraproducts::assemble;
use crate::random::{random_unitary, random_with_mean};
use crate::stepfn::haar_function;

fn lat(d: u32, n: u32) -> Lattice {
    Lattice::new(d, n).unwrap()
}

fn quick_katz(seed: u64) -> KatzParams {
    let mut p = KatzParams::default();
    p.search.restarts = 2;
    p.search.max_iters = 30;
    p.search.seed = seed;
    p
}

#[test]
fn l2_examples() {
    let mut rng = rng_from_seed(1);
    let l = lat(2, 3);
    let b = Symbol::new("b", random_with_mean(&mut rng, l, 2));
    let zero = OperatorSpec::sum(
        OperatorSpec::Pi(b.clone()),
        OperatorSpec::scale(C64::new(-1.0, 0.0), OperatorSpec::Pi(b.clone())),
    );
    assert!(l2_opnorm(&zero).unwrap().value < 1e-9);

    let u = StepFunction::from_values(l, 2, (0..8).map(|_| random_unitary(&mut rng, 2)).collect()).unwrap();
    let mult = l2_opnorm(&OperatorSpec::LeftMult(Symbol::new("u", u))).unwrap();
    assert!((mult.value - 1.0).abs() < 1e-9);

    // Sandwich for pi_h with h = h^1_{[0,1)} at d = 2, N = 2.
    let l = lat(2, 2);
    let h = haar_function(l, Interval::ROOT, 1).unwrap();
    let spec = OperatorSpec::Pi(Symbol::new("h", h));
    let op = assemble(&spec).unwrap();
    let v = l2_opnorm(&spec).unwrap();
    assert!(v.converged);
    assert!(rayleigh_sample(&op, 10_000, 3) <= v.value + 1e-12);
    assert!(v.value <= op.matrix.frobenius() + 1e-12);
    assert!((v.value - spectral_norm(&op.matrix)).abs() < 1e-9);
    assert!((v.value - 1.0).abs() < 1e-9);
}

#[test]
fn l2_invariants() {
    let mut rng = rng_from_seed(2);
    for (d, n, m) in [(2, 3, 2), (3, 2, 2)] {
        let l = lat(d, n);
        let a = Symbol::new("a", random_mean_zero(&mut rng, l, 1));
        let b = Symbol::new("b", random_with_mean(&mut rng, l, m));
        for spec in [
            OperatorSpec::Pi(b.clone()),
            OperatorSpec::Lambda(b.clone()),
            OperatorSpec::commutator(OperatorSpec::Pi(a.clone()), OperatorSpec::LeftMult(b.clone())),
        ] {
            let t = l2_opnorm(&spec).unwrap();
            let ta = l2_opnorm(&OperatorSpec::adjoint(spec.clone())).unwrap();
            assert!((t.value - ta.value).abs() < 1e-8, "{spec}");
            let op = assemble(&spec).unwrap();
            assert!(t.value >= rayleigh_sample(&op, 1000, 9) - 1e-9);
            let mf = l2_opnorm_matrix_free(&spec, l, m, &PowerParams::default(), None).unwrap();
            assert!((mf.value - t.value).abs() < 1e-8);
            // The witness attains the value.
            let tw = spec.apply(&t.witness).unwrap().l2_norm();
            assert!((tw - t.value).abs() < 1e-9 && (t.witness.l2_norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn lp_lower_bounds() {
    let mut rng = rng_from_seed(3);
    let l = lat(2, 2);
    let params = SearchParams {
        restarts: 2,
        max_iters: 20,
        ..SearchParams::default()
    };
    for p in [1.5, 3.0] {
        let w = lp_opnorm_lower_on(&OperatorSpec::Identity, l, 2, p, &params).unwrap();
        assert!(w.ratio >= 1.0 - 1e-9);
    }
    assert!(lp_opnorm_lower_on(&OperatorSpec::Identity, l, 2, 1.0, &params).is_err());

    let b = Symbol::new("b", random_with_mean(&mut rng, l, 2));
    let spec = OperatorSpec::Pi(b);
    let w2 = lp_opnorm_lower(&spec, 2.0, &params).unwrap();
    assert!(w2.ratio <= l2_opnorm(&spec).unwrap().value + 1e-8);

    let w3 = lp_opnorm_lower(&spec, 3.0, &params).unwrap();
    let again = lp_opnorm_lower(&spec, 3.0, &params).unwrap();
    assert_eq!(w3.ratio.to_bits(), again.ratio.to_bits());
    let f = w3.test_function.as_ref().unwrap();
    let recomputed = lp_norm(&spec.apply(f).unwrap(), 3.0).unwrap() / lp_norm(f, 3.0).unwrap();
    assert!((recomputed - w3.ratio).abs() < 1e-8);
}

#[test]
fn katz_ratio_invariances() {
    let mut rng = rng_from_seed(4);
    let l = lat(2, 3);
    let params = PowerParams {
        tol: 1e-13,
        ..PowerParams::default()
    };
    let b = random_mean_zero(&mut rng, l, 2);
    let r = katz_ratio(&b, &params, None).unwrap().ratio;
    for z in [C64::new(2.0, 0.0), C64::new(0.0, 1.0)] {
        let rz = katz_ratio(&b.scale(z), &params, None).unwrap().ratio;
        assert!((r - rz).abs() < 1e-9);
    }
    let emb = katz_ratio(&b.block_embed(2), &params, None).unwrap().ratio;
    assert!((r - emb).abs() < 1e-8);
    let u = random_unitary(&mut rng, 2);
    let conj = b.map(|v| &(&u.adjoint() * v) * &u);
    let rc = katz_ratio(&conj, &params, None).unwrap().ratio;
    assert!((r - rc).abs() < 1e-8);
}

#[test]
fn katz_gradient_matches_finite_differences() {
    let mut rng = rng_from_seed(8);
    let l = lat(2, 3);
    let params = PowerParams {
        tol: 1e-14,
        max_iters: 50_000,
        seed: 0,
    };
    let b = random_mean_zero(&mut rng, l, 2);
    let v = katz_ratio(&b, &params, None).unwrap();
    let g = katz_gradient(&b, &v).unwrap();
    for _ in 0..3 {
        let dir = random_mean_zero(&mut rng, l, 2);
        let h = 1e-6;
        let plus = katz_ratio(&b.add(&dir.scale(C64::new(h, 0.0))).unwrap(), &params, Some(&v.witness)).unwrap();
        let minus = katz_ratio(&b.sub(&dir.scale(C64::new(h, 0.0))).unwrap(), &params, Some(&v.witness)).unwrap();
        let fd = (plus.ratio - minus.ratio) / (2.0 * h);
        let an = StepFunction::hs_inner(&g, &dir).unwrap().re;
        assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "fd {fd} vs analytic {an}");
    }
}

#[test]
fn smoothed_objective_gradient() {
    let mut rng = rng_from_seed(9);
    let l = lat(3, 2);
    let params = PowerParams {
        tol: 1e-14,
        max_iters: 50_000,
        seed: 0,
    };
    let b = random_mean_zero(&mut rng, l, 2);
    let obj = Objective::Smoothed(8.0);
    assert!(smooth_bmo_so(&b, 8.0).0 >= bmo_so(&b));
    let point = evaluate(&b, obj, &params, None).unwrap();
    let g = objective_gradient(&b, obj, &point).unwrap();
    let dir = random_mean_zero(&mut rng, l, 2);
    let h = 1e-6;
    let plus = evaluate(&b.add(&dir.scale(C64::new(h, 0.0))).unwrap(), obj, &params, Some(&point.value.witness)).unwrap();
    let minus = evaluate(&b.sub(&dir.scale(C64::new(h, 0.0))).unwrap(), obj, &params, Some(&point.value.witness)).unwrap();
    let fd = (plus.score - minus.score) / (2.0 * h);
    let an = StepFunction::hs_inner(&g, &dir).unwrap().re;
    assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "fd {fd} vs analytic {an}");
}

#[test]
fn katz_scan_small() {
    let l = lat(2, 3);
    let rows = katz_scan(&[1, 2, 4], l, &quick_katz(5)).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].ratio > 0.0 && rows[0].ratio.is_finite());
    for w in rows.windows(2) {
        assert!(w[1].ratio >= w[0].ratio - 1e-6);
    }
    for r in &rows {
        assert_eq!(r.symbol.dim(), r.n);
        assert!((r.ratio - r.opnorm2 / r.bmo_so).abs() < 1e-12);
    }
    assert!(katz_scan(&[1, 3], l, &quick_katz(5)).is_err());
    assert!(katz_scan(&[2, 1], l, &quick_katz(5)).is_err());

    let again = katz_scan(&[1, 2, 4], l, &quick_katz(5)).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_katz_csv(&rows, &mut a).unwrap();
    write_katz_csv(&again, &mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("n,ratio,bmo_so,opnorm2,seed,iters\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn commutator_examples() {
    let mut rng = rng_from_seed(6);
    let l = lat(2, 3);
    let a = random_mean_zero(&mut rng, l, 1);
    let f = random_mean_zero(&mut rng, l, 2);
    let id = StepFunction::identity(l, 2);
    assert_eq!(commutator_ratio(&a, &id, &f, 2.0, CommutatorForm::Direct).unwrap(), None);
    let a_const = StepFunction::scalar(l, &vec![C64::new(1.5, 0.0); 8]).unwrap();
    let b = random_mean_zero(&mut rng, l, 2);
    let num = commutator_pi_mult(&a_const, &b, &f).unwrap();
    assert!(num.max_abs() < 1e-13);

    let params = ScanParams { d: 2, m: 2, seed: 11 };
    let one = commutator_ratio_scan(2.0, &[3], 50, &params, CommutatorForm::Direct).unwrap();
    let two = commutator_ratio_scan(2.0, &[3], 50, &params, CommutatorForm::Direct).unwrap();
    assert_eq!(one[0].sup_ratio.to_bits(), two[0].sup_ratio.to_bits());
    assert_eq!(one[0].trials, 50);
    let dual = commutator_ratio_scan(2.0, &[3], 50, &params, CommutatorForm::Dual).unwrap();
    for (x, y) in one[0].ratios.iter().zip(&dual[0].ratios) {
        assert!((x - y).abs() < 1e-10 * x.max(1.0));
    }
    assert!(commutator_ratio_scan(1.0, &[3], 5, &params, CommutatorForm::Direct).is_err());
    assert!(commutator_ratio_scan(2.0, &[9], 5, &params, CommutatorForm::Direct).is_err());
    assert!(matches!(
        commutator_ratio_scan(2.0, &[3], 0, &params, CommutatorForm::Direct),
        Err(Error::AllDegenerate)
    ));

    let mut out = Vec::new();
    write_scan_csv(&one, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("depth,p,sup_ratio,q50,q90,trials,seed\n"));
}

#[test]
fn theta_scan_runs() {
    let params = ScanParams { d: 3, m: 2, seed: 2 };
    for p in [1.5, 2.0, 4.0] {
        let rows = theta_ratio_scan(p, &[2, 3], 10, &params).unwrap();
        for r in rows {
            assert!(r.sup_ratio.is_finite() && r.sup_ratio > 0.0);
            assert!(r.q50 <= r.q90 && r.q90 <= r.sup_ratio);
        }
    }
}

#[test]
fn quantiles() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(quantile(&v, 0.5), 3.0);
    assert_eq!(quantile(&v, 0.9), 4.6);
    assert_eq!(quantile(&v, 1.0), 5.0);
    assert_eq!(quantile(&[7.0], 0.3), 7.0);
    assert!(quantile(&[], 0.5).is_nan());
}
