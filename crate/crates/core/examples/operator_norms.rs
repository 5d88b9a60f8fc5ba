//! Builds operators from their text form and computes L2 operator norms by
//! power iteration, checking against the dense assembled matrix.

use std::collections::BTreeMap;
use std::sync::Arc;

use paralab::ncmat::spectral_norm;
use paralab::opnorm::{l2_opnorm_on, PowerParams};
use paralab::paraproducts::{assemble_on, OperatorSpec, DEFAULT_DIMENSION_CAP};
use paralab::random::{random_mean_zero, rng_from_seed};
use paralab::Lattice;

fn main() -> paralab::Result<()> {
    let lattice = Lattice::new(2, 3)?;
    let m = 2;
    let mut rng = rng_from_seed(11);
    let mut symbols = BTreeMap::new();
    symbols.insert("a".to_string(), Arc::new(random_mean_zero(&mut rng, lattice, 1)));
    symbols.insert("b".to_string(), Arc::new(random_mean_zero(&mut rng, lattice, m)));

    for text in ["pi(b)", "pistar(b)", "lambda(b)", "theta(b)", "commutator(pi(a), mult(b))", "compose(pi(a), pi(b))"] {
        let spec = OperatorSpec::parse(text, &symbols)?;
        let norm = l2_opnorm_on(&spec, lattice, m, &PowerParams::default())?;
        let dense = assemble_on(&spec, lattice, m, DEFAULT_DIMENSION_CAP)?;
        let exact = spectral_norm(&dense.matrix);
        println!(
            "{:<28} power {:.10}  dense {:.10}  iters {}",
            spec.to_string(),
            norm.value,
            exact,
            norm.iterations
        );
    }
    Ok(())
}
