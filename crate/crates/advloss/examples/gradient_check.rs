//! Validate every analytic gradient against central finite differences.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use advloss::cli::{all_pass, run_gradcheck};

fn main() {
    let rows = run_gradcheck(42);
    println!("{:<22} {:>12} {:>10} {:>6}", "check", "max_rel_err", "threshold", "status");
    for row in &rows {
        println!(
            "{:<22} {:>12.3e} {:>10.0e} {:>6}",
            row.name,
            row.max_rel_err,
            row.threshold,
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    assert!(all_pass(&rows), "gradient check failed");
    println!("\nall gradients agree with finite differences");
}
