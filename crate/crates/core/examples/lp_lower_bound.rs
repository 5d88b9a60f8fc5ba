//! Certified lower bounds for the L_p operator norm of a paraproduct,
//! found by hill climbing over test functions.

use std::collections::BTreeMap;
use std::sync::Arc;

use paralab::opnorm::{lp_opnorm_lower, SearchParams};
use paralab::paraproducts::OperatorSpec;
use paralab::random::{random_mean_zero, rng_from_seed};
use paralab::Lattice;

fn main() -> paralab::Result<()> {
    let lattice = Lattice::new(2, 3)?;
    let mut rng = rng_from_seed(5);
    let mut symbols = BTreeMap::new();
    symbols.insert("b".to_string(), Arc::new(random_mean_zero(&mut rng, lattice, 2)));
    let spec = OperatorSpec::parse("pi(b)", &symbols)?;
    let params = SearchParams { seed: 5, ..SearchParams::default() };
    for p in [1.5, 2.0, 4.0] {
        let w = lp_opnorm_lower(&spec, p, &params)?;
        println!("p = {p}: ||pi_b||_p >= {:.6}", w.ratio);
    }
    Ok(())
}
