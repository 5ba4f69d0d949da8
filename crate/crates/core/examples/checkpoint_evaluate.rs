//! Trains briefly, writes a checkpoint through the runner, then reloads it
//! and scores the test split again.
//!
//!     cargo run --release --example checkpoint_evaluate

use fedrkg::config::ExperimentConfig;
use fedrkg::data::Split;
use fedrkg::params::Checkpoint;
use fedrkg::runner::{self, CHECKPOINT_FILE};

pub fn run_example() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join(format!("fedrkg-checkpoint-{}", std::process::id()));
    let cfg = ExperimentConfig { max_rounds: 60, eval_every: 20, output_dir: dir.clone(), ..ExperimentConfig::default() };
    let report = runner::run(&cfg)?;
    println!("trained {} rounds, test AUC {:.4}", report.rounds_run, report.test.auc.unwrap_or(f64::NAN));

    let path = dir.join(CHECKPOINT_FILE);
    let ckpt = Checkpoint::load(&path)?;
    let users = ckpt.user_emb.as_ref().map_or(0, |u| u.rows());
    println!(
        "{} bytes: {} entities, {} relations, {} layers, {users} user embeddings",
        std::fs::metadata(&path)?.len(),
        ckpt.params.num_entities(),
        ckpt.params.num_relations(),
        ckpt.params.model.layers.len()
    );

    let again = runner::evaluate_checkpoint(&cfg, &path, Split::Test)?;
    println!("reloaded test AUC {:.4}", again.auc.unwrap_or(f64::NAN));
    anyhow::ensure!(again == report.test);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
