//! Splits a matrix product b*f into its paraproduct pieces and runs the full
//! identity suite.

use paralab::experiments::{run_identity_suite, ExperimentConfig, ExperimentKind};
use paralab::paraproducts::{lambda, pi, r_op};
use paralab::random::{random_with_mean, rng_from_seed};
use paralab::Lattice;

fn main() -> paralab::Result<()> {
    let lattice = Lattice::new(2, 4)?;
    let mut rng = rng_from_seed(3);
    let b = random_with_mean(&mut rng, lattice, 3);
    let f = random_with_mean(&mut rng, lattice, 3);
    let mut sum = pi(&b, &f)?.add(&lambda(&b, &f)?)?.add(&r_op(&b, &f)?)?;
    sum = sum.add(&b.cond_expect(0)?.multiply(&f.cond_expect(0)?)?)?;
    println!("b f = pi + Lambda + R + E0b E0f, residual {:.2e}", sum.max_diff(&b.multiply(&f)?));

    for d in [2, 3] {
        let config = ExperimentConfig {
            d,
            trials: 20,
            seed: 7,
            ..ExperimentConfig::new(ExperimentKind::Identities)
        };
        let report = run_identity_suite(&config)?;
        println!("\nd = {d}: pass_all = {}", report.aggregate.pass_all);
        for c in &report.cases {
            let shown = c.residual.or(c.value).unwrap_or(f64::NAN);
            println!("  {:<22} {:>10.2e}  {}", c.name, shown, if c.pass { "ok" } else { "FAIL" });
        }
    }
    Ok(())
}
