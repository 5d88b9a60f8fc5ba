//! Searches for symbols with large ||pi_b|| / bmo_so ratio as the matrix
//! dimension grows. Values are best found, not extremal.

use paralab::opnorm::{katz_scan, KatzParams};
use paralab::Lattice;

fn main() -> paralab::Result<()> {
    let lattice = Lattice::new(2, 3)?;
    let params = KatzParams::default();
    let rows = katz_scan(&[1, 2, 4], lattice, &params)?;
    println!("{:>3} {:>10} {:>10} {:>10} {:>10}", "n", "ratio", "bmo_so", "||pi_b||", "log(n+1)");
    for r in &rows {
        println!("{:>3} {:>10.6} {:>10.6} {:>10.6} {:>10.6}", r.n, r.ratio, r.bmo_so, r.opnorm2, r.log_n1());
    }
    Ok(())
}
