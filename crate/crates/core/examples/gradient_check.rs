//! Runs the finite-difference gradient suite, then repeats the conv input
//! check with a deliberately sign-flipped backward pass to show it fails.
//!
//! cargo run --release --example gradient_check -- [seed]

use mmtsn::verify::gradient_suite;

fn main() -> mmtsn::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let report = gradient_suite(seed)?;
    let worst = report
        .checks
        .iter()
        .max_by(|a, b| (a.max_rel_error / a.tolerance).total_cmp(&(b.max_rel_error / b.tolerance)))
        .expect("suite is not empty");
    println!(
        "{} checks, {} failed, {:.2} s; closest to tolerance: {} ({:.2e} of {:.0e})",
        report.checks.len(),
        report.failures().count(),
        report.elapsed.as_secs_f64(),
        worst.name,
        worst.max_rel_error,
        worst.tolerance
    );

    mmtsn::tensor::gradcheck::fault::set_conv_input_grad_sign_flip(true);
    let broken = gradient_suite(seed)?;
    mmtsn::tensor::gradcheck::fault::set_conv_input_grad_sign_flip(false);
    println!("with conv input gradient negated:");
    for c in broken.failures() {
        println!("  FAIL {:<40} {:.2e}", c.name, c.max_rel_error);
    }
    Ok(())
}
