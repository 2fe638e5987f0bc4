//! Runs the gradient-check and oracle suites and prints one line per suite.

use dbcl::verify::run_all;

fn main() -> dbcl::Result<()> {
    let report = run_all(24, 100, 0)?;
    for suite in &report.suites {
        println!("{suite}");
    }
    println!("{}", if report.passed() { "all suites passed" } else { "some suites failed" });
    Ok(())
}
