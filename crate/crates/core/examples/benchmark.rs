//! Runs the periodic benchmark sweep and prints the CSV report.
//!
//! ```text
//! cargo run --release -p homog --example benchmark -- [n_paths] [seed]
//! ```

use homog::harness::{benchmark_config, run_convergence};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n_paths = args
        .next()
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(20_000);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2024);
    let report = run_convergence(&benchmark_config(n_paths, seed))?;
    print!("{}", report.to_csv());
    for w in &report.audit_warnings {
        eprintln!("audit: {w}");
    }
    Ok(())
}
