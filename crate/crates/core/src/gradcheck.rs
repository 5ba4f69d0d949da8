//! Central finite-difference check of [`model::backward`](crate::model::backward)
//! on small random instances.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::kg::{KnowledgeGraph, Triple};
use crate::model::{self, Anchor, LocalGraph, ModelParams, PropagationMode};
use crate::rng::SimRng;

/// Relative errors use `max(|analytic|, |numeric|, ERR_FLOOR)` as denominator.
/// Central differences at step 1e-5 carry roughly 1e-11 of cancellation noise,
/// so exactly-zero gradients need a floor well above that.
pub const ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { instances: 100, seed: 0, step: 1e-5, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceResult {
    pub index: usize,
    pub dim: usize,
    pub k: usize,
    pub depth: usize,
    pub mode: PropagationMode,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub instances: Vec<InstanceResult>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// A random graph of a few entities, `k`-sampled to `depth` hops around two
/// or three labelled anchors, with embeddings drawn from `[-1, 1]`.
pub fn random_instance<R: Rng>(rng: &mut R, dim: usize, k: usize, depth: usize, mode: PropagationMode) -> (LocalGraph, ModelParams) {
    let num_entities = 7;
    let num_relations = 3;
    let num_triples = rng.gen_range(4..=9);
    // entity 6 stays isolated unless drawn as an anchor
    let triples: Vec<Triple> = (0..num_triples)
        .map(|_| Triple::new(rng.gen_range(0..6), rng.gen_range(0..num_relations), rng.gen_range(0..6)))
        .collect();
    let kg = KnowledgeGraph::build(&triples, num_entities, num_relations as usize).expect("ids in range");

    let mut pool: Vec<u32> = (0..num_entities as u32).collect();
    pool.shuffle(rng);
    let n_anchors = rng.gen_range(2..=3);
    let anchors: Vec<Anchor> = pool[..n_anchors].iter().map(|&item| Anchor { item, label: rng.gen_range(0..=1) }).collect();
    let items: Vec<u32> = anchors.iter().map(|a| a.item).collect();
    let subgraph = kg.sample_subgraph(&items, k, depth, rng).expect("anchors in range");

    let vec_of = |rng: &mut R| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let entity_vecs: BTreeMap<_, _> = subgraph.entities.iter().map(|&e| (e, vec_of(rng))).collect();
    let relation_vecs: BTreeMap<_, _> = subgraph.relations.iter().map(|&r| (r, vec_of(rng))).collect();
    let user = vec_of(rng);
    let mut params = ModelParams::init(dim, depth, mode, rng);
    for b in params.layers.iter_mut().flat_map(|l| l.bias.iter_mut()) {
        *b = rng.gen_range(-0.5..0.5);
    }
    (LocalGraph { user, anchors, subgraph, entity_vecs, relation_vecs }, params)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ERR_FLOOR)
}

/// Largest relative error between the analytic gradient and central
/// differences over every input scalar, with the number of scalars checked.
pub fn check_instance(graph: &LocalGraph, params: &ModelParams, step: f64) -> (f64, usize) {
    let labels = graph.labels();
    let loss = |g: &LocalGraph, p: &ModelParams| model::forward(g, p).loss(&labels);
    let pkt = model::backward(graph, params);
    let mut worst = 0.0f64;
    let mut checked = 0;

    let central = |perturb: &mut dyn FnMut(f64) -> f64| -> f64 {
        let plus = perturb(step);
        let minus = perturb(-step);
        (plus - minus) / (2.0 * step)
    };

    for (&e, v) in &graph.entity_vecs {
        let analytic = pkt.entity_grads.get(e).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; v.len()]);
        for j in 0..v.len() {
            let numeric = central(&mut |h| {
                let mut g = graph.clone();
                g.entity_vecs.get_mut(&e).unwrap()[j] += h;
                loss(&g, params)
            });
            worst = worst.max(rel_err(analytic[j], numeric));
            checked += 1;
        }
    }
    for (&r, v) in &graph.relation_vecs {
        let analytic = pkt.relation_grads.get(r).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; v.len()]);
        for j in 0..v.len() {
            let numeric = central(&mut |h| {
                let mut g = graph.clone();
                g.relation_vecs.get_mut(&r).unwrap()[j] += h;
                loss(&g, params)
            });
            worst = worst.max(rel_err(analytic[j], numeric));
            checked += 1;
        }
    }
    for j in 0..graph.user.len() {
        let numeric = central(&mut |h| {
            let mut g = graph.clone();
            g.user[j] += h;
            loss(&g, params)
        });
        worst = worst.max(rel_err(pkt.user_grad[j], numeric));
        checked += 1;
    }
    let analytic: Vec<f64> = pkt.model_grads.values().copied().collect();
    for (j, a) in analytic.iter().enumerate() {
        let numeric = central(&mut |h| {
            let mut p = params.clone();
            *p.values_mut().nth(j).unwrap() += h;
            loss(graph, &p)
        });
        worst = worst.max(rel_err(*a, numeric));
        checked += 1;
    }
    (worst, checked)
}

/// Cycles through `d ∈ {2,4}`, `K ∈ {1,2}`, `H ∈ {0,1,2}` and both modes.
pub fn run(cfg: &GradcheckConfig) -> GradcheckReport {
    let mut rng = SimRng::seed_from_u64(cfg.seed);
    let mut instances = Vec::with_capacity(cfg.instances);
    for index in 0..cfg.instances {
        let dim = [2, 4][index % 2];
        let k = [1, 2][(index / 2) % 2];
        let depth = (index / 4) % 3;
        let mode = [PropagationMode::Replace, PropagationMode::Transform][(index / 12) % 2];
        let (graph, params) = random_instance(&mut rng, dim, k, depth, mode);
        let (max_rel_err, checked) = check_instance(&graph, &params, cfg.step);
        instances.push(InstanceResult { index, dim, k, depth, mode, max_rel_err, checked });
    }
    let max_rel_err = instances.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    GradcheckReport { instances, max_rel_err, tolerance: cfg.tolerance }
}
