//! Checks the hand-written backward pass of the relation-aware GNN against
//! central finite differences on random small graphs.
//!
//!     cargo run --example gradient_check

use fedrkg::gradcheck::{self, GradcheckConfig};

pub fn run_example() -> anyhow::Result<()> {
    let report = gradcheck::run(&GradcheckConfig::default());
    for r in report.instances.iter().take(12) {
        println!(
            "instance {:>3}  d={} K={} H={} {:<9?}  scalars={:>3}  max rel err {:.2e}",
            r.index, r.dim, r.k, r.depth, r.mode, r.checked, r.max_rel_err
        );
    }
    println!("... {} instances, worst relative error {:.3e} (tolerance {:.0e})", report.instances.len(), report.max_rel_err, report.tolerance);
    anyhow::ensure!(report.passed(), "gradient check failed");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
