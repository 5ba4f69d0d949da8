//! The client-side privacy layer: pseudo items and randomized response on the
//! request, then clipping and Laplace noise on the gradient upload.
//!
//!     cargo run --example privacy_mechanisms

use std::collections::BTreeSet;

use fedrkg::model::{GradientPacket, LayerParams, ModelParams, PropagationMode};
use fedrkg::params::{SparseEntry, SparseGrad};
use fedrkg::privacy::{self, DpConfig};
use fedrkg::rng::{stream, Role};

pub fn run_example() -> anyhow::Result<()> {
    let cfg = DpConfig { delta: 0.1, lambda: 1e-4, flip_rate: 0.1, pseudo_count: None };
    println!("flip rate {} -> interaction budget {:.4}", cfg.flip_rate, privacy::interaction_budget(cfg.flip_rate));
    println!("delta {} lambda {} -> gradient budget {}", cfg.delta, cfg.lambda, privacy::privacy_budget(cfg.delta, cfg.lambda));

    let interactions: BTreeSet<u32> = [3, 8, 15, 16].into();
    let negatives = [1, 4, 9, 20];
    let mut rng = stream(1, Role::Request, 0, 0);
    let plan = privacy::generate_request_items(&interactions, &negatives, &cfg, &mut rng)?;
    println!("true interactions {interactions:?}");
    println!("server sees       {:?}", plan.request_items);
    println!("local labels      {:?}", plan.local_labels);

    let mut entity_grads = SparseGrad::new(3);
    entity_grads.insert(3, SparseEntry { grad: vec![0.5, -0.02, 0.0], count: 1 });
    let packet = GradientPacket {
        entity_grads,
        relation_grads: SparseGrad::new(3),
        model_grads: ModelParams {
            dim: 3,
            mode: PropagationMode::Replace,
            layers: vec![LayerParams { weight: vec![0.0; 9], bias: vec![0.0; 3] }],
        },
        user_grad: vec![9.0, 9.0, 9.0],
        weight: plan.request_items.len() as u32,
        loss: 0.69,
    };
    let noisy = privacy::ldp_encrypt(packet, &cfg, &mut stream(1, Role::Noise, 0, 0));
    println!("entity 3 before [0.5, -0.02, 0.0], after {:.5?}", noisy.entity_grads.get(3).unwrap());
    println!("user gradient after encryption: {:?}", noisy.user_grad);
    anyhow::ensure!(noisy.user_grad.is_empty());

    let mut rng = stream(2, Role::Noise, 0, 0);
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| privacy::sample_laplace(cfg.lambda, &mut rng)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let scale = draws.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
    println!("{n} Laplace draws: mean {mean:.2e}, estimated scale {scale:.4e}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
