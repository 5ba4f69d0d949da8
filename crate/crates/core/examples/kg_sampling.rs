//! Builds a small movie knowledge graph and samples a two-hop receptive field
//! around two requested items.
//!
//!     cargo run --example kg_sampling

use fedrkg::kg::{KnowledgeGraph, Triple};
use fedrkg::rng::{stream, Role};

pub fn run_example() -> anyhow::Result<()> {
    // items 0..3, then genre 4, director 5, actor 6
    let triples = [
        Triple::new(0, 0, 4),
        Triple::new(1, 0, 4),
        Triple::new(0, 1, 5),
        Triple::new(2, 1, 5),
        Triple::new(2, 2, 6),
        Triple::new(2, 2, 6), // duplicate, dropped
    ];
    let kg = KnowledgeGraph::build(&triples, 7, 3)?;
    println!("{} entities, {} relations, {} unique triples", kg.num_entities(), kg.num_relations(), kg.num_triples());
    for e in 0..kg.num_entities() as u32 {
        println!("  entity {e}: degree {}", kg.degree(e));
    }

    let mut rng = stream(42, Role::Sampling, 0, 0);
    let sg = kg.sample_subgraph(&[0, 3], 2, 2, &mut rng)?;
    for (l, layer) in sg.layers.iter().enumerate() {
        println!("layer {l}:");
        for (center, ns) in layer {
            let shown: Vec<String> = ns.iter().map(|n| format!("(r{}, e{})", n.relation, n.entity)).collect();
            println!("  {center} -> [{}]", shown.join(", "));
        }
    }
    println!("entities {:?}", sg.entities);
    println!("relations {:?}", sg.relations);

    // item 3 has no edges, so it keeps an empty neighbor list
    anyhow::ensure!(sg.layers[0][&3].is_empty());
    anyhow::ensure!(sg.layers[0][&0].len() == 2);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
