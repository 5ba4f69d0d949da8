//! Server-side aggregation of gradient uploads. Each embedding row is
//! averaged over the clients that touched it, weighted by request size.
//!
//!     cargo run --example weighted_aggregation

use fedrkg::model::{LayerParams, ModelParams, PropagationMode};
use fedrkg::params::{SparseEntry, SparseGrad};
use fedrkg::server::aggregate;
use fedrkg::wire::{GradientUpload, WIRE_VERSION};

fn upload(client: u32, weight: u32, rows: &[(u32, f64)], model: f64) -> GradientUpload {
    let mut entity_grads = SparseGrad::new(1);
    for &(id, g) in rows {
        entity_grads.insert(id, SparseEntry { grad: vec![g], count: 1 });
    }
    GradientUpload {
        version: WIRE_VERSION,
        client,
        weight,
        entity_grads,
        relation_grads: SparseGrad::new(1),
        model_grads: ModelParams {
            dim: 1,
            mode: PropagationMode::Transform,
            layers: vec![LayerParams { weight: vec![model], bias: vec![0.0] }],
        },
    }
}

pub fn run_example() -> anyhow::Result<()> {
    let uploads = [
        upload(0, 1, &[(10, 2.0), (11, 4.0)], 2.0),
        upload(1, 3, &[(10, 6.0)], 6.0),
        upload(2, 4, &[(12, -1.0)], 0.0),
    ];
    let avg = aggregate(&uploads)?;
    for (id, e) in avg.entity_grads.iter() {
        println!("entity {id}: {:?}", e.grad);
    }
    let model = avg.model_grads.expect("model grads present");
    println!("model weight: {:?}", model.layers[0].weight);

    // row 10: (1*2 + 3*6) / 4; rows 11 and 12 have a single contributor
    anyhow::ensure!(avg.entity_grads.get(10) == Some(&[5.0][..]));
    anyhow::ensure!(avg.entity_grads.get(11) == Some(&[4.0][..]));
    anyhow::ensure!(avg.entity_grads.get(12) == Some(&[-1.0][..]));
    // dense parameters average over everyone: (2 + 18 + 0) / 8
    anyhow::ensure!(model.layers[0].weight == [2.5]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
