//! Builds the Haar system on a small 3-adic lattice, checks orthonormality,
//! and round-trips a random matrix-valued function through analysis and
//! synthesis.

use paralab::random::{random_step, rng_from_seed};
use paralab::stepfn::haar_analyze;
use paralab::{haar_function, Lattice, StepFunction};

fn main() -> paralab::Result<()> {
    let lattice = Lattice::new(3, 2)?;
    let hs: Vec<StepFunction> = lattice
        .haar_intervals()
        .flat_map(|iv| (1..lattice.d()).map(move |i| haar_function(lattice, iv, i)))
        .collect::<paralab::Result<_>>()?;
    let mut worst: f64 = 0.0;
    for (a, ha) in hs.iter().enumerate() {
        for (b, hb) in hs.iter().enumerate() {
            let g = StepFunction::hs_inner(ha, hb)?;
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((g.re - target).abs().max(g.im.abs()));
        }
    }
    println!("{} Haar functions, Gram deviation {worst:.2e}", hs.len());

    let mut rng = rng_from_seed(1);
    let f = random_step(&mut rng, lattice, 2);
    let coeffs = haar_analyze(&f);
    let back = coeffs.synthesize()?;
    println!("round trip residual {:.2e}", back.max_diff(&f));
    println!("wavelet energy {:.6}, ||f - mean||^2 {:.6}", coeffs.wavelet_energy(), f.mean_zero().l2_norm().powi(2));
    Ok(())
}
