//! Finite-difference verification of every backward rule.
//!
//! Each layer's analytic gradient is compared against central differences
//! at 64-bit precision on seeded random inputs. Run with:
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use onebit::gradcheck::{gradient_suite, TOLERANCE};

fn main() {
    let entries = gradient_suite(1);
    println!("{:<28} {:>14}  result", "op", "max rel err");
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    for e in &entries {
        println!(
            "{:<28} {:>14.3e}  {}",
            e.name,
            e.max_rel_err,
            if e.passed() { "pass" } else { "FAIL" }
        );
        worst = worst.max(e.max_rel_err);
        if !e.passed() {
            failed += 1;
        }
    }
    println!();
    println!("worst relative error {worst:.3e} against tolerance {TOLERANCE:.0e}");
    if failed > 0 {
        eprintln!("{failed} checks failed");
        std::process::exit(1);
    }
}
