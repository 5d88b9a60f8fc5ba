use paralab::experiments::{run_norms_suite, ExperimentConfig, ExperimentKind};
use paralab::norms::{bmo, bmo_m, bmo_so, cond_square_fn_sq, hpc_norm, lp_norm, square_fn_sq, BmoVariant};
use paralab::ncmat::psd_min_eig;
use paralab::paraproducts::{lambda, pi, pi_star, r_op, theta};
use paralab::random::{random_mean_zero, random_with_mean, rng_from_seed};
use paralab::stepfn::haar_analyze;
use paralab::{Lattice, StepFunction, C64};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Lattice, usize, u64)> {
    (2u32..=4, 1u32..=3, 1usize..=3, any::<u64>()).prop_map(|(d, n, m, s)| (Lattice::new(d, n).unwrap(), m, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn haar_round_trip((lattice, m, seed) in instance()) {
        let f = random_with_mean(&mut rng_from_seed(seed), lattice, m);
        let back = haar_analyze(&f).synthesize().unwrap();
        prop_assert!(back.max_diff(&f) < 1e-12);
    }

    #[test]
    fn product_decomposes((lattice, m, seed) in instance()) {
        let mut rng = rng_from_seed(seed);
        let b = random_with_mean(&mut rng, lattice, m);
        let f = random_with_mean(&mut rng, lattice, m);
        let parts = pi(&b, &f).unwrap()
            .add(&lambda(&b, &f).unwrap()).unwrap()
            .add(&r_op(&b, &f).unwrap()).unwrap()
            .add(&b.cond_expect(0).unwrap().multiply(&f.cond_expect(0).unwrap()).unwrap()).unwrap();
        prop_assert!(parts.max_diff(&b.multiply(&f).unwrap()) < 1e-11);
    }

    #[test]
    fn pi_star_is_adjoint((lattice, m, seed) in instance()) {
        let mut rng = rng_from_seed(seed);
        let b = random_mean_zero(&mut rng, lattice, m);
        let f = random_with_mean(&mut rng, lattice, m);
        let g = random_with_mean(&mut rng, lattice, m);
        let lhs = StepFunction::hs_inner(&pi(&b, &f).unwrap(), &g).unwrap();
        let rhs = StepFunction::hs_inner(&f, &pi_star(&b, &g).unwrap()).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()));
    }

    #[test]
    fn theta_is_linear_in_symbol((lattice, m, seed) in instance(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        let mut rng = rng_from_seed(seed);
        let b = random_mean_zero(&mut rng, lattice, m);
        let f = random_with_mean(&mut rng, lattice, m);
        let z = C64::new(re, im);
        let lhs = theta(&b.scale(z), &f).unwrap();
        let rhs = theta(&b, &f).unwrap().scale(z);
        prop_assert!(lhs.max_diff(&rhs) < 1e-10 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn bmo_ordering_and_homogeneity((lattice, m, seed) in instance(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        let b = random_with_mean(&mut rng_from_seed(seed), lattice, m);
        prop_assert!(bmo_so(&b) <= bmo_m(&b) + 1e-10);
        let z = C64::new(re, im);
        let zb = b.scale(z);
        for v in BmoVariant::ALL {
            prop_assert!((bmo(&zb, v) - z.norm() * bmo(&b, v)).abs() < 1e-10 * (1.0 + bmo(&b, v)));
        }
        for p in [1.0, 2.5, f64::INFINITY] {
            let base = lp_norm(&b, p).unwrap();
            prop_assert!((lp_norm(&zb, p).unwrap() - z.norm() * base).abs() < 1e-10 * (1.0 + base));
        }
        let h = hpc_norm(&b, 3.0).unwrap();
        prop_assert!((hpc_norm(&zb, 3.0).unwrap() - z.norm() * h).abs() < 1e-10 * (1.0 + h));
    }

    #[test]
    fn regularity_holds((lattice, m, seed) in instance()) {
        let g = random_mean_zero(&mut rng_from_seed(seed), lattice, m);
        let d = C64::new(lattice.d() as f64, 0.0);
        let gap = cond_square_fn_sq(&g).scale(d).sub(&square_fn_sq(&g)).unwrap();
        for v in gap.values() {
            prop_assert!(psd_min_eig(v).unwrap() >= -1e-10 * (1.0 + v.max_abs()));
        }
    }

    #[test]
    fn tightening_a_tolerance_never_flips_fail_to_pass(seed in 0u64..1000, scale in 1e-3f64..1.0) {
        let base = ExperimentConfig { trials: 2, depth: 2, seed, ..ExperimentConfig::new(ExperimentKind::Norms) };
        let loose = run_norms_suite(&base).unwrap();
        for c in loose.cases.iter().filter(|c| c.residual.is_some()) {
            let mut cfg = base.clone();
            cfg.tolerances.insert(c.name.clone(), c.tolerance.unwrap() * scale);
            let tight = run_norms_suite(&cfg).unwrap();
            let t = tight.case(&c.name).unwrap();
            prop_assert!(!t.pass || c.pass);
        }
    }
}
