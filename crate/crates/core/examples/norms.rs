//! Compares the BMO flavors, Hardy-space norms and square functions of a
//! random matrix-valued symbol.

use paralab::norms::{bmo, h1max_norm, hpc_norm, lp_norm, BmoVariant};
use paralab::random::{random_mean_zero, rng_from_seed};
use paralab::Lattice;

fn main() -> paralab::Result<()> {
    let lattice = Lattice::new(2, 5)?;
    let mut rng = rng_from_seed(2);
    let b = random_mean_zero(&mut rng, lattice, 3);
    for v in BmoVariant::ALL {
        println!("bmo {v:?}: {:.6}", bmo(&b, v));
    }
    for p in [1.0, 2.0, 4.0, f64::INFINITY] {
        println!("L_{p} norm: {:.6}", lp_norm(&b, p)?);
    }
    for p in [1.0, 2.0, 4.0] {
        println!("h_{p},c norm: {:.6}", hpc_norm(&b, p)?);
    }
    println!("h1 maximal norm: {:.6}", h1max_norm(&b));
    Ok(())
}
