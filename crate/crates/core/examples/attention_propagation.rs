//! Relation-aware propagation for one user and one item: attention weights
//! over sampled neighbors, the aggregated item vector in both propagation
//! modes, and the resulting click probability and gradients.
//!
//!     cargo run --example attention_propagation

use std::collections::{BTreeMap, BTreeSet};

use fedrkg::kg::{Neighbor, Subgraph};
use fedrkg::model::{self, Anchor, LocalGraph, ModelParams, PropagationMode};
use fedrkg::rng::{stream, Role};

pub fn run_example() -> anyhow::Result<()> {
    let user = vec![1.0, -0.5];
    let relations = [vec![2.0, 0.0], vec![0.0, 1.0]];
    let rel_refs: Vec<&[f64]> = relations.iter().map(|r| r.as_slice()).collect();
    let alpha = model::attention_weights(&user, &rel_refs);
    println!("user {user:?} attends to relations with weights {alpha:.4?}");

    // item 0 linked to entity 1 by relation 0 and entity 2 by relation 1,
    // with each neighbor sampled once
    let subgraph = Subgraph {
        anchors: vec![0],
        layers: vec![BTreeMap::from([(0, vec![Neighbor { relation: 0, entity: 1 }, Neighbor { relation: 1, entity: 2 }])])],
        entities: BTreeSet::from([0, 1, 2]),
        relations: BTreeSet::from([0, 1]),
    };
    let entity_vecs = BTreeMap::from([(0, vec![0.1, 0.2]), (1, vec![1.0, 0.0]), (2, vec![0.0, 1.0])]);
    let relation_vecs = BTreeMap::from([(0, relations[0].clone()), (1, relations[1].clone())]);
    let graph = LocalGraph {
        user: user.clone(),
        anchors: vec![Anchor { item: 0, label: 1 }],
        subgraph,
        entity_vecs,
        relation_vecs,
    };
    graph.validate()?;

    for mode in [PropagationMode::Replace, PropagationMode::Transform] {
        let params = ModelParams::init(2, 1, mode, &mut stream(7, Role::Init, 0, 0));
        let fwd = model::forward(&graph, &params);
        let grads = model::backward(&graph, &params);
        println!("{mode:?}:");
        println!("  item vector {:.4?}", fwd.item_vecs[0]);
        println!("  prediction {:.4}  loss {:.4}", fwd.predictions[0], fwd.loss(&graph.labels()));
        if mode == PropagationMode::Replace {
            // a convex combination of the two neighbor vectors
            anyhow::ensure!((fwd.item_vecs[0][0] - alpha[0]).abs() < 1e-12);
            anyhow::ensure!((fwd.item_vecs[0][1] - alpha[1]).abs() < 1e-12);
        }
        println!("  user grad {:.4?}", grads.user_grad);
        for (id, e) in grads.entity_grads.iter() {
            println!("  entity {id} grad {:.4?}", e.grad);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
