//! Samples Theta_b ratios between L_p and the column Hardy space across
//! depths.

use paralab::opnorm::{theta_ratio_scan, ScanParams};

fn main() -> paralab::Result<()> {
    let params = ScanParams { d: 2, m: 2, seed: 1 };
    for p in [1.5, 2.0, 4.0] {
        for r in theta_ratio_scan(p, &[2, 4, 6], 30, &params)? {
            println!("p {p:<4} depth {} sup {:.4} median {:.4} q90 {:.4}", r.depth, r.sup_ratio, r.q50, r.q90);
        }
    }
    Ok(())
}
