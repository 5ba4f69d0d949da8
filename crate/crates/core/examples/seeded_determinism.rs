//! Every random decision is drawn from a stream keyed by (master seed, role,
//! round, client), so results do not depend on thread scheduling.
//!
//!     cargo run --release --example seeded_determinism

use fedrkg::config::ExperimentConfig;
use fedrkg::rng::{derive_seed, stream, Role};
use fedrkg::runner;
use rand::Rng;

fn metrics_with_threads(cfg: &ExperimentConfig, threads: usize) -> anyhow::Result<String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let (data, _) = runner::load_dataset(cfg)?;
    let out = pool.install(|| runner::train_dataset(cfg, &data, &mut |_, _, _, _| Ok(())))?;
    Ok(out.metrics_jsonl)
}

pub fn run_example() -> anyhow::Result<()> {
    for client in 0..3 {
        let seed = derive_seed(7, Role::Noise, 4, client);
        let draw: f64 = stream(7, Role::Noise, 4, client).gen();
        println!("noise stream for client {client} in round 4: seed {seed:#018x}, first draw {draw:.6}");
    }

    let cfg = ExperimentConfig { max_rounds: 40, eval_every: 10, seed: 7, ..ExperimentConfig::default() };
    let one = metrics_with_threads(&cfg, 1)?;
    let four = metrics_with_threads(&cfg, 4)?;
    println!("{} metrics lines; 1 thread and 4 threads identical: {}", one.lines().count(), one == four);
    anyhow::ensure!(one == four);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
