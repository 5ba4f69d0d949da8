//! Relation-aware GNN run by each client.
//!
//! For hop `t = 1..=H` every center entity at hop distance `l <= H - t`
//! aggregates its `K` sampled neighbors from the previous hop,
//!
//! ```text
//! agg    = sum_k alpha_k * x_{n_k}
//! alpha  = softmax_k(<e_u, e_{r_k}>)
//! x_new  = agg                              (replace)
//! x_new  = tanh(W_t (x_self + agg) + b_t)   (transform)
//! ```
//!
//! and the prediction for an anchor item is `sigmoid(<e_u, x_item>)`.
//! Vectors are indexed by `(hop distance, entity)` so an entity reached at
//! two distances keeps two independent states that share one raw embedding.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kg::Subgraph;
use crate::params::SparseGrad;
use crate::{EntityId, Error, RelationId, Result};

/// Lower/upper clamp applied to predictions before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum PropagationMode {
    /// New state is the attention-weighted neighbor sum.
    Replace = 0,
    /// New state is `tanh(W (x_self + sum) + b)`.
    Transform = 1,
}

impl PropagationMode {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Replace),
            1 => Some(Self::Transform),
            _ => None,
        }
    }
}

impl std::str::FromStr for PropagationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replace" => Ok(Self::Replace),
            "transform" => Ok(Self::Transform),
            other => Err(Error::Config(format!("unknown propagation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Row-major `d × d`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-hop transforms. Also used as the shape of model gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    pub mode: PropagationMode,
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    /// Weights uniform on `[-1/sqrt(d), 1/sqrt(d)]`, zero biases.
    pub fn init<R: Rng + ?Sized>(dim: usize, layers: usize, mode: PropagationMode, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let layers = (0..layers)
            .map(|_| LayerParams {
                weight: (0..dim * dim).map(|_| rng.gen_range(-bound..=bound)).collect(),
                bias: vec![0.0; dim],
            })
            .collect();
        Self { dim, mode, layers }
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams { weight: vec![0.0; l.weight.len()], bias: vec![0.0; l.bias.len()] })
            .collect();
        Self { dim: self.dim, mode: self.mode, layers }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// All scalars, layer by layer (weight then bias).
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub item: EntityId,
    pub label: u8,
}

/// A client's training graph: the user, labelled anchor items, the sampled
/// receptive field and local copies of every embedding it references.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    pub user: Vec<f64>,
    pub anchors: Vec<Anchor>,
    pub subgraph: Subgraph,
    pub entity_vecs: BTreeMap<EntityId, Vec<f64>>,
    pub relation_vecs: BTreeMap<RelationId, Vec<f64>>,
}

impl LocalGraph {
    pub fn dim(&self) -> usize {
        self.user.len()
    }

    /// Checks the structural contract: vectors present for every member,
    /// matching dimensions, binary labels.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let bad = |m: String| Err(Error::Protocol(m));
        for a in &self.anchors {
            if a.label > 1 {
                return bad(format!("label {} for item {} is not binary", a.label, a.item));
            }
            if !self.entity_vecs.contains_key(&a.item) {
                return Err(Error::UnknownEntity(a.item));
            }
        }
        let sg = &self.subgraph;
        for (l, layer) in sg.layers.iter().enumerate() {
            if !layer.keys().copied().eq(sg.entities_at(l)) {
                return bad(format!("layer {l} centers do not match hop {l} entities"));
            }
            for n in layer.values().flatten() {
                if !sg.entities.contains(&n.entity) || !sg.relations.contains(&n.relation) {
                    return bad(format!("layer {l} neighbor ({}, {}) is not listed", n.relation, n.entity));
                }
            }
        }
        for e in &self.subgraph.entities {
            match self.entity_vecs.get(e) {
                None => return Err(Error::UnknownEntity(*e)),
                Some(v) if v.len() != d => return bad(format!("entity {e} has dimension {}", v.len())),
                _ => {}
            }
        }
        for r in &self.subgraph.relations {
            match self.relation_vecs.get(r) {
                None => return Err(Error::UnknownRelation(*r)),
                Some(v) if v.len() != d => return bad(format!("relation {r} has dimension {}", v.len())),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<u8> {
        self.anchors.iter().map(|a| a.label).collect()
    }
}

/// Gradients of one client's mean loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientPacket {
    pub entity_grads: SparseGrad,
    pub relation_grads: SparseGrad,
    pub model_grads: ModelParams,
    /// Stays on the client; empty once stripped for upload.
    pub user_grad: Vec<f64>,
    /// Number of request items, used as the aggregation weight.
    pub weight: u32,
    pub loss: f64,
}

impl GradientPacket {
    pub fn is_finite(&self) -> bool {
        self.entity_grads.iter().all(|(_, e)| e.grad.iter().all(|v| v.is_finite()))
            && self.relation_grads.iter().all(|(_, e)| e.grad.iter().all(|v| v.is_finite()))
            && self.model_grads.is_finite()
            && self.user_grad.iter().all(|v| v.is_finite())
    }

    /// Squared L2 norm over the shareable gradients.
    pub fn shared_norm_sq(&self) -> f64 {
        let sparse = |g: &SparseGrad| g.iter().flat_map(|(_, e)| e.grad.iter()).map(|v| v * v).sum::<f64>();
        sparse(&self.entity_grads) + sparse(&self.relation_grads) + self.model_grads.values().map(|v| v * v).sum::<f64>()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Numerically stable softmax (scores shifted by their maximum).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    assert!(!scores.is_empty(), "softmax of an empty list");
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// User-specific attention over a neighbor list's relations:
/// inner-product scores normalised with a softmax.
pub fn attention_weights(user: &[f64], relations: &[&[f64]]) -> Vec<f64> {
    assert!(!relations.is_empty(), "attention over an empty neighbor list");
    let scores: Vec<f64> = relations
        .iter()
        .map(|r| {
            assert_eq!(r.len(), user.len(), "relation vector has wrong dimension");
            dot(user, r)
        })
        .collect();
    softmax(&scores)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Readout: `sigmoid(<user, item>)`.
pub fn predict(user: &[f64], item_final: &[f64]) -> f64 {
    assert_eq!(user.len(), item_final.len(), "dimension mismatch");
    sigmoid(dot(user, item_final))
}

/// Mean binary cross-entropy with predictions clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bce_loss(predictions: &[f64], labels: &[u8]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "predictions and labels differ in length");
    assert!(!predictions.is_empty(), "loss over an empty batch");
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / predictions.len() as f64
}

/// Cached forward pass.
pub struct Forward {
    /// Distinct entities at each hop distance `0..=H`.
    levels: Vec<Vec<EntityId>>,
    index: Vec<HashMap<EntityId, usize>>,
    /// `states[t][l][i]`: vector of `levels[l][i]` after `t` hops (`l <= H - t`).
    states: Vec<Vec<Vec<Vec<f64>>>>,
    /// `inputs[t][l][i]`: `x_self + agg` fed to the transform at hop `t` (transform mode only).
    inputs: Vec<Vec<Vec<Vec<f64>>>>,
    /// Attention per center of layer `l`, aligned with its neighbor list.
    attention: Vec<HashMap<EntityId, Vec<f64>>>,
    /// Final vector per anchor, aligned with `LocalGraph::anchors`.
    pub item_vecs: Vec<Vec<f64>>,
    pub predictions: Vec<f64>,
}

impl Forward {
    pub fn loss(&self, labels: &[u8]) -> f64 {
        bce_loss(&self.predictions, labels)
    }
}

pub fn forward(graph: &LocalGraph, params: &ModelParams) -> Forward {
    let sg = &graph.subgraph;
    let depth = sg.depth();
    let d = graph.dim();
    assert_eq!(params.dim, d, "model dimension does not match the user embedding");
    if params.mode == PropagationMode::Transform {
        assert!(params.layers.len() >= depth, "model has fewer layers than the receptive field");
    }

    let levels: Vec<Vec<EntityId>> = (0..=depth).map(|l| sg.entities_at(l)).collect();
    let index: Vec<HashMap<EntityId, usize>> = levels
        .iter()
        .map(|lv| lv.iter().enumerate().map(|(i, &e)| (e, i)).collect())
        .collect();

    let raw = |e: &EntityId| graph.entity_vecs[e].clone();
    let mut states: Vec<Vec<Vec<Vec<f64>>>> = vec![levels.iter().map(|lv| lv.iter().map(raw).collect()).collect()];
    let mut inputs: Vec<Vec<Vec<Vec<f64>>>> = vec![Vec::new()];

    let attention: Vec<HashMap<EntityId, Vec<f64>>> = sg
        .layers
        .iter()
        .map(|layer| {
            layer
                .iter()
                .filter(|(_, ns)| !ns.is_empty())
                .map(|(&c, ns)| {
                    let rels: Vec<&[f64]> = ns.iter().map(|n| graph.relation_vecs[&n.relation].as_slice()).collect();
                    (c, attention_weights(&graph.user, &rels))
                })
                .collect()
        })
        .collect();

    for t in 1..=depth {
        let prev = &states[t - 1];
        let mut cur = Vec::with_capacity(depth - t + 1);
        let mut cur_in = Vec::with_capacity(depth - t + 1);
        for l in 0..=depth - t {
            let mut lvl = Vec::with_capacity(levels[l].len());
            let mut lvl_in = Vec::new();
            for (i, c) in levels[l].iter().enumerate() {
                let neighbors = &sg.layers[l][c];
                let self_vec = &prev[l][i];
                if neighbors.is_empty() {
                    lvl.push(self_vec.clone());
                    if params.mode == PropagationMode::Transform {
                        lvl_in.push(Vec::new());
                    }
                    continue;
                }
                let alpha = &attention[l][c];
                let mut agg = vec![0.0; d];
                for (a, n) in alpha.iter().zip(neighbors) {
                    axpy(&mut agg, *a, &prev[l + 1][index[l + 1][&n.entity]]);
                }
                match params.mode {
                    PropagationMode::Replace => lvl.push(agg),
                    PropagationMode::Transform => {
                        let layer = &params.layers[t - 1];
                        let input: Vec<f64> = self_vec.iter().zip(&agg).map(|(s, a)| s + a).collect();
                        let out: Vec<f64> = (0..d)
                            .map(|r| (dot(&layer.weight[r * d..(r + 1) * d], &input) + layer.bias[r]).tanh())
                            .collect();
                        lvl.push(out);
                        lvl_in.push(input);
                    }
                }
            }
            cur.push(lvl);
            cur_in.push(lvl_in);
        }
        states.push(cur);
        inputs.push(cur_in);
    }

    let finals = &states[depth][0];
    let item_vecs: Vec<Vec<f64>> = graph.anchors.iter().map(|a| finals[index[0][&a.item]].clone()).collect();
    let predictions = item_vecs.iter().map(|x| predict(&graph.user, x)).collect();
    Forward { levels, index, states, inputs, attention, item_vecs, predictions }
}

/// Final item vectors for every anchor after `H` hops.
pub fn propagate(graph: &LocalGraph, params: &ModelParams) -> Vec<Vec<f64>> {
    forward(graph, params).item_vecs
}

/// Exact gradients of the mean BCE loss with respect to every gathered
/// entity and relation vector, the layer weights and the user embedding.
pub fn backward(graph: &LocalGraph, params: &ModelParams) -> GradientPacket {
    let fwd = forward(graph, params);
    backward_from(graph, params, &fwd)
}

pub fn backward_from(graph: &LocalGraph, params: &ModelParams, fwd: &Forward) -> GradientPacket {
    let sg = &graph.subgraph;
    let depth = sg.depth();
    let d = graph.dim();
    let n = graph.anchors.len();
    let labels = graph.labels();
    let loss = fwd.loss(&labels);

    let mut user_grad = vec![0.0; d];
    let mut model_grads = params.zeros_like();
    let mut rel_acc: BTreeMap<RelationId, (Vec<f64>, u32)> = BTreeMap::new();

    // readout
    let mut grad: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; d]; fwd.levels[0].len()]];
    for ((a, x), &p) in graph.anchors.iter().zip(&fwd.item_vecs).zip(&fwd.predictions) {
        let dz = if p < PROB_EPS || p > 1.0 - PROB_EPS { 0.0 } else { (p - f64::from(a.label)) / n as f64 };
        axpy(&mut user_grad, dz, x);
        axpy(&mut grad[0][fwd.index[0][&a.item]], dz, &graph.user);
    }

    for t in (1..=depth).rev() {
        let prev_states = &fwd.states[t - 1];
        let mut g_prev: Vec<Vec<Vec<f64>>> =
            (0..=depth - t + 1).map(|l| vec![vec![0.0; d]; fwd.levels[l].len()]).collect();
        for l in 0..=depth - t {
            for (i, c) in fwd.levels[l].iter().enumerate() {
                let g = &grad[l][i];
                let neighbors = &sg.layers[l][c];
                if neighbors.is_empty() {
                    axpy(&mut g_prev[l][i], 1.0, g);
                    continue;
                }
                let g_agg = match params.mode {
                    PropagationMode::Replace => g.clone(),
                    PropagationMode::Transform => {
                        let out = &fwd.states[t][l][i];
                        let input = &fwd.inputs[t][l][i];
                        let layer = &params.layers[t - 1];
                        let lg = &mut model_grads.layers[t - 1];
                        let gz: Vec<f64> = g.iter().zip(out).map(|(g, o)| g * (1.0 - o * o)).collect();
                        let mut g_in = vec![0.0; d];
                        for r in 0..d {
                            lg.bias[r] += gz[r];
                            axpy(&mut lg.weight[r * d..(r + 1) * d], gz[r], input);
                            axpy(&mut g_in, gz[r], &layer.weight[r * d..(r + 1) * d]);
                        }
                        axpy(&mut g_prev[l][i], 1.0, &g_in);
                        g_in
                    }
                };
                let alpha = &fwd.attention[l][c];
                let mut d_alpha = Vec::with_capacity(neighbors.len());
                for (a, nb) in alpha.iter().zip(neighbors) {
                    let j = fwd.index[l + 1][&nb.entity];
                    axpy(&mut g_prev[l + 1][j], *a, &g_agg);
                    d_alpha.push(dot(&g_agg, &prev_states[l + 1][j]));
                }
                let weighted: f64 = alpha.iter().zip(&d_alpha).map(|(a, da)| a * da).sum();
                for ((a, da), nb) in alpha.iter().zip(&d_alpha).zip(neighbors) {
                    let ds = a * (da - weighted);
                    let rv = &graph.relation_vecs[&nb.relation];
                    axpy(&mut user_grad, ds, rv);
                    let slot = rel_acc.entry(nb.relation).or_insert_with(|| (vec![0.0; d], 0));
                    axpy(&mut slot.0, ds, &graph.user);
                    slot.1 += 1;
                }
            }
        }
        grad = g_prev;
    }

    let mut entity_grads = SparseGrad::new(d);
    for (l, level) in fwd.levels.iter().enumerate() {
        for (i, e) in level.iter().enumerate() {
            entity_grads.accumulate(*e, &grad[l][i]);
        }
    }
    let mut relation_grads = SparseGrad::new(d);
    for (r, (g, count)) in rel_acc {
        relation_grads.insert(r, crate::params::SparseEntry { grad: g, count });
    }

    GradientPacket {
        entity_grads,
        relation_grads,
        model_grads,
        user_grad,
        weight: n as u32,
        loss,
    }
}
