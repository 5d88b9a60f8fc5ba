//! Samples ||[pi_a, M_b] f||_p / (||a||_BMO ||b||_BMO ||f||_p) at two depths
//! and writes the table as CSV to stdout.

use paralab::opnorm::{commutator_ratio_scan, write_scan_csv, CommutatorForm, ScanParams};

fn main() -> paralab::Result<()> {
    let params = ScanParams { d: 2, m: 2, seed: 7 };
    let mut rows = Vec::new();
    for p in [1.5, 2.0, 3.0] {
        rows.extend(commutator_ratio_scan(p, &[3, 5], 40, &params, CommutatorForm::Direct)?);
    }
    write_scan_csv(&rows, std::io::stdout())?;
    Ok(())
}
