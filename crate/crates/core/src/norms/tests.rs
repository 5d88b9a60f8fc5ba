use super::*;
use crate::lattice::{Interval, Lattice};
use crate::ncmat::{psd_min_eig, C64};
use crate::paraproducts::lambda_defect;
use crate::random::{random_haar_coefficients, random_mean_zero, random_step, random_with_mean, rng_from_seed};
use crate::stepfn::haar_function;

fn lat(d: u32, n: u32) -> Lattice {
    Lattice::new(d, n).unwrap()
}

/// Classical sup-average BMO of a scalar function, by brute force.
fn classical_sup_average(b: &StepFunction) -> f64 {
    let l = b.lattice();
    let mut best: f64 = 0.0;
    for iv in l.all_intervals() {
        let r = l.atom_range(iv).unwrap();
        let w = r.len() as f64;
        let avg: C64 = r.clone().map(|x| b.value(x)[(0, 0)]).sum::<C64>() / w;
        let osc: f64 = r.map(|x| (b.value(x)[(0, 0)] - avg).norm_sqr()).sum::<f64>() / w;
        best = best.max(osc);
    }
    best.sqrt()
}

/// Classical martingale BMO `sup_m ||E_m sum_{k>=m} |d_k b|^2||_inf^{1/2}`.
fn classical_martingale(b: &StepFunction) -> f64 {
    let l = b.lattice();
    let mut best: f64 = 0.0;
    for m in 1..=l.depth() {
        let mut tail = StepFunction::zeros(l, 1);
        for k in m..=l.depth() {
            let dk = b.mart_diff(k).unwrap();
            tail = tail.add(&dk.adjoint().multiply(&dk).unwrap()).unwrap();
        }
        let e = tail.cond_expect(m).unwrap();
        for v in e.values() {
            best = best.max(v[(0, 0)].re);
        }
    }
    best.sqrt()
}

#[test]
fn lp_examples() {
    let l = lat(2, 3);
    let id = StepFunction::identity(l, 2);
    for p in [1.0, 1.5, 2.0, 3.0, 7.0] {
        assert!((lp_norm(&id, p).unwrap() - 2f64.powf(1.0 / p)).abs() < 1e-13);
    }
    assert!((lp_norm(&id, f64::INFINITY).unwrap() - 1.0).abs() < 1e-13);

    let phases: Vec<C64> = (0..8).map(|k| C64::from_polar(1.0, k as f64 * 0.7)).collect();
    let u = StepFunction::scalar(l, &phases).unwrap();
    for p in [1.0, 2.0, 4.5, f64::INFINITY] {
        assert!((lp_norm(&u, p).unwrap() - 1.0).abs() < 1e-13);
    }
    assert!(lp_norm(&u, 0.5).is_err());

    let mut rng = rng_from_seed(1);
    let f = random_step(&mut rng, lat(3, 2), 3);
    let mut s = 0.0;
    for v in f.values() {
        let h = v.gram();
        let h2 = &h * &h;
        s += h2.trace().re / 9.0;
    }
    assert!((lp_norm(&f, 4.0).unwrap() - s.powf(0.25)).abs() < 1e-11);
}

#[test]
fn bmo_examples() {
    let l = lat(2, 3);
    let mut rng = rng_from_seed(2);
    let k = random_step(&mut rng, lat(2, 1), 2).value(0).clone();
    let cst = StepFunction::constant(l, &k);
    for v in BmoVariant::ALL {
        assert!(bmo(&cst, v) < 1e-14);
    }

    let h = haar_function(l, Interval::ROOT, 1).unwrap();
    assert!((bmo_m(&h) - 1.0).abs() < 1e-14);
    assert!((bmo_column(&h) - 1.0).abs() < 1e-14);
    assert!((bmo_cr(&h) - 1.0).abs() < 1e-14);

    let zero = StepFunction::zeros(l, 1);
    let diag = StepFunction::from_values(
        l,
        2,
        (0..8)
            .map(|x| CMatrix::diag_real(&[h.value(x)[(0, 0)].re, zero.value(x)[(0, 0)].re]))
            .collect(),
    )
    .unwrap();
    assert!((bmo_so(&diag) - 1.0).abs() < 1e-14);

    let b = random_with_mean(&mut rng, l, 2);
    let shifted = b.add(&cst).unwrap();
    for v in BmoVariant::ALL {
        assert!((bmo(&b, v) - bmo(&shifted, v)).abs() < 1e-12);
    }
}

#[test]
fn bmo_order_and_scalar_collapse() {
    let mut rng = rng_from_seed(3);
    for (d, n) in [(2, 3), (3, 2), (2, 4)] {
        let l = lat(d, n);
        for _ in 0..20 {
            let b = random_with_mean(&mut rng, l, 3);
            assert!(bmo_so(&b) <= bmo_m(&b) + 1e-10);
            assert!(bmo_row(&b) <= bmo_cr(&b) && bmo_column(&b) <= bmo_cr(&b));

            let s = random_with_mean(&mut rng, l, 1);
            let avg = classical_sup_average(&s);
            let mart = classical_martingale(&s);
            assert!((bmo_m(&s) - avg).abs() < 1e-10);
            assert!((bmo_so(&s) - avg).abs() < 1e-10);
            assert!((bmo_column(&s) - mart).abs() < 1e-10);
            assert!((bmo_row(&s) - mart).abs() < 1e-10);
        }
    }
}

#[test]
fn homogeneity_and_holder() {
    let mut rng = rng_from_seed(4);
    let l = lat(3, 2);
    let z = C64::new(-1.3, 0.4);
    for _ in 0..10 {
        let f = random_with_mean(&mut rng, l, 2);
        let g = random_with_mean(&mut rng, l, 2);
        let zf = f.scale(z);
        for p in [1.0, 1.5, 2.0, 3.0, f64::INFINITY] {
            assert!((lp_norm(&zf, p).unwrap() - z.norm() * lp_norm(&f, p).unwrap()).abs() < 1e-10);
            let q = conjugate_exponent(p);
            let ip = StepFunction::hs_inner(&f, &g).unwrap().norm();
            assert!(ip <= lp_norm(&f, p).unwrap() * lp_norm(&g, q).unwrap() + 1e-9);
        }
        for p in [1.0, 2.0, 3.5] {
            assert!((hpc_norm(&zf, p).unwrap() - z.norm() * hpc_norm(&f, p).unwrap()).abs() < 1e-10);
        }
        for v in BmoVariant::ALL {
            assert!((bmo(&zf, v) - z.norm() * bmo(&f, v)).abs() < 1e-10);
        }
        assert!((h1max_norm(&zf) - z.norm() * h1max_norm(&f)).abs() < 1e-10);
    }
}

#[test]
fn square_function_examples() {
    let l = lat(2, 3);
    let a = CMatrix::from_real_rows(&[&[1.0, 2.0], &[0.0, -1.0]]).unwrap();
    let abs_a = psd_power(&a.gram(), 0.5).unwrap();
    let h = haar_function(l, Interval::ROOT, 1).unwrap();
    let g = h.multiply(&StepFunction::constant(l, &a)).unwrap();
    for s in [square_fn(&g), cond_square_fn(&g)] {
        for v in s.values() {
            assert!(v.max_diff(&abs_a) < 1e-12);
        }
    }
    let cst = StepFunction::constant(l, &a);
    assert!(square_fn(&cst).max_abs() < 1e-14);
    assert!(cond_square_fn(&cst).max_abs() < 1e-14);
    assert!(hpc_norm(&cst, 1.5).unwrap() < 1e-14);

    for p in [1.0, 2.0, 3.0] {
        let expect = schatten_from_singular(&singular_values(&a), p);
        assert!((hpc_norm(&g, p).unwrap() - expect).abs() < 1e-12);
    }
    assert!(hpc_norm(&g, f64::INFINITY).is_err());
}

#[test]
fn hpc_plancherel_and_regularity() {
    let mut rng = rng_from_seed(5);
    for (d, n) in [(2, 3), (3, 2), (4, 2)] {
        let l = lat(d, n);
        for _ in 0..10 {
            let g = random_mean_zero(&mut rng, l, 2);
            let energy = haar_analyze(&g).wavelet_energy();
            assert!((hpc_norm(&g, 2.0).unwrap().powi(2) - energy).abs() < 1e-9);

            let gap = cond_square_fn_sq(&g)
                .scale(C64::new(d as f64, 0.0))
                .sub(&square_fn_sq(&g))
                .unwrap();
            for v in gap.values() {
                assert!(psd_min_eig(v).unwrap() >= -1e-10);
            }
        }
    }
}

#[test]
fn h1max_examples() {
    let l = lat(2, 3);
    let a = CMatrix::from_real_rows(&[&[3.0, 0.0], &[0.0, -4.0]]).unwrap();
    assert!((h1max_norm(&StepFunction::constant(l, &a)) - 7.0).abs() < 1e-12);

    let vals: Vec<C64> = [0.5, 2.0, 0.0, 1.0, 3.0, 0.25, 1.0, 1.0].iter().map(|&x| C64::new(x, 0.0)).collect();
    let g = StepFunction::scalar(l, &vals).unwrap();
    let mut brute = 0.0;
    for x in 0..8 {
        let mut best: f64 = 0.0;
        for m in 0..=3 {
            best = best.max(g.cond_expect(m).unwrap().value(x)[(0, 0)].re);
        }
        brute += best / 8.0;
    }
    assert!((h1max_norm(&g) - brute).abs() < 1e-13);
    assert!(h1max_norm(&g) >= lp_norm(&g, 1.0).unwrap() - 1e-13);
}

#[test]
fn aibi_and_closed_form() {
    let mut rng = rng_from_seed(6);
    for (d, n) in [(2, 3), (3, 2), (5, 2)] {
        let l = lat(d, n);
        for _ in 0..10 {
            let a = random_haar_coefficients(&mut rng, l, 2);
            let b = random_haar_coefficients(&mut rng, l, 2);
            assert!(aibi_gap(&a, &b).unwrap() >= -1e-9);

            let bf = random_with_mean(&mut rng, l, 2);
            let f = random_with_mean(&mut rng, l, 2);
            let direct = cond_square_fn_sq(&lambda_defect(&bf, &f).unwrap());
            let closed = cond_square_defect_closed(&bf, &f).unwrap();
            assert!(direct.max_diff(&closed) < 1e-9);
        }
    }
}

#[test]
fn maximal_tail_ratio_behaviour() {
    let mut rng = rng_from_seed(7);
    let l = lat(2, 3);
    let a = random_mean_zero(&mut rng, l, 1);
    let f = random_with_mean(&mut rng, l, 2);
    let r = maximal_tail_ratio(&a, &f, 2.0).unwrap().unwrap();
    assert!(r.is_finite() && r > 0.0);
    let zero_a = StepFunction::zeros(l, 1);
    assert!(maximal_tail_ratio(&zero_a, &f, 2.0).unwrap().is_none());
    assert!(maximal_tail_ratio(&f, &f, 2.0).is_err());
}
