//! End-to-end federated training on the planted-preference synthetic data:
//! 500 clients, 32 per round, with pseudo items, label flipping and
//! gradient noise all switched on.
//!
//!     cargo run --release --example federated_training

use fedrkg::config::ExperimentConfig;
use fedrkg::runner;

pub fn run_example() -> anyhow::Result<()> {
    let cfg = ExperimentConfig { max_rounds: 300, eval_every: 25, patience: 0, ..ExperimentConfig::default() };
    let (data, _) = runner::load_dataset(&cfg)?;
    println!(
        "{} users, {} items, {} entities, {} triples",
        data.num_users,
        data.num_items,
        data.num_entities,
        data.kg.num_triples()
    );
    let outcome = runner::train_dataset(&cfg, &data, &mut |report, _, _, _| {
        if let Some(v) = &report.validation {
            println!("round {:>3}  loss {:.4}  valid AUC {:.4}", report.round + 1, report.mean_loss, v.auc.unwrap_or(f64::NAN));
        }
        Ok(())
    })?;
    let test = &outcome.test;
    println!("test AUC {:.4}  F1 {:.4}", test.auc.unwrap_or(f64::NAN), test.f1);
    for (k, r) in &test.recall_at_k {
        println!("  Recall@{k} {r:.4}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
