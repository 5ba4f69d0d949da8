//! A simulated client: one user's private interactions and user embedding.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;

use crate::model::{self, Anchor, GradientPacket, LocalGraph, ModelParams};
use crate::privacy::{generate_request_items, DpConfig, RequestPlan};
use crate::rng::{stream, Role};
use crate::server::SubgraphResponse;
use crate::wire::RequestMessage;
use crate::{EntityId, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub user_id: u32,
    /// Trained locally, never sent anywhere.
    pub user_embedding: Vec<f64>,
    /// Training-split positives.
    pub interactions: BTreeSet<EntityId>,
    /// Master seed for this client's request and noise streams.
    pub seed: u64,
}

impl ClientState {
    /// Items `0..num_items` the user has not interacted with.
    pub fn negatives_pool(&self, num_items: usize) -> Vec<EntityId> {
        (0..num_items as EntityId).filter(|i| !self.interactions.contains(i)).collect()
    }

    /// Samples pseudo items uniformly from the non-interacted items and runs
    /// randomized response. Only the item list leaves the client.
    pub fn build_request(&self, num_items: usize, dp: &DpConfig, round: u64) -> Result<(RequestPlan, RequestMessage)> {
        let mut rng = stream(self.seed, Role::Request, round, u64::from(self.user_id));
        let pool = self.negatives_pool(num_items);
        let p = dp.pseudo_items_for(self.interactions.len());
        if p > pool.len() {
            return Err(Error::Config(format!(
                "client {} needs {p} pseudo items but only {} are available",
                self.user_id,
                pool.len()
            )));
        }
        let negatives: Vec<EntityId> = index::sample(&mut rng, pool.len(), p).into_iter().map(|i| pool[i]).collect();
        let plan = generate_request_items(&self.interactions, &negatives, dp, &mut rng)?;
        if plan.request_items.is_empty() {
            return Err(Error::Config(format!("client {} has nothing to request", self.user_id)));
        }
        let msg = RequestMessage::new(self.user_id, plan.request_items.clone());
        Ok((plan, msg))
    }
}

/// Attaches the client's labels and user embedding to the server's
/// subgraph. Every requested item must come back as an anchor.
pub fn merge_graphs(user: &[f64], plan: &RequestPlan, response: &SubgraphResponse) -> Result<LocalGraph> {
    let returned: BTreeSet<EntityId> = response.subgraph.anchors.iter().copied().collect();
    if let Some(missing) = plan.request_items.iter().find(|i| !returned.contains(i)) {
        return Err(Error::Protocol(format!("response is missing requested item {missing}")));
    }
    let anchors = plan
        .request_items
        .iter()
        .zip(&plan.local_labels)
        .map(|(&item, &label)| Anchor { item, label })
        .collect();
    let graph = LocalGraph {
        user: user.to_vec(),
        anchors,
        subgraph: response.subgraph.clone(),
        entity_vecs: response.entity_vecs.clone(),
        relation_vecs: response.relation_vecs.clone(),
    };
    graph.validate()?;
    Ok(graph)
}

#[derive(Debug, Clone)]
pub struct LocalTrainOutput {
    /// Gradients summed over epochs; `user_grad` still attached.
    pub packet: GradientPacket,
    pub user_embedding: Vec<f64>,
}

/// Forward + backward on the local graph. The user embedding takes an SGD
/// step after every epoch. With more than one epoch the local copies of the
/// shared parameters are stepped too and the packet carries the summed
/// gradient, so `theta - eta * packet` reproduces the local trajectory.
/// `loss` is the loss at the distributed parameters.
pub fn local_train(graph: &LocalGraph, model: &ModelParams, eta: f64, epochs: usize) -> LocalTrainOutput {
    assert!(epochs >= 1, "at least one local epoch");
    let mut g = graph.clone();
    let mut m = model.clone();
    let mut total: Option<GradientPacket> = None;
    for epoch in 0..epochs {
        let pkt = model::backward(&g, &m);
        for (u, gu) in g.user.iter_mut().zip(&pkt.user_grad) {
            *u -= eta * gu;
        }
        if epoch + 1 < epochs {
            step_local(&mut g, &mut m, &pkt, eta);
        }
        total = Some(match total {
            None => pkt,
            Some(acc) => sum_packets(acc, &pkt),
        });
    }
    LocalTrainOutput { packet: total.unwrap(), user_embedding: g.user }
}

fn step_local(g: &mut LocalGraph, m: &mut ModelParams, pkt: &GradientPacket, eta: f64) {
    let step = |vecs: &mut BTreeMap<u32, Vec<f64>>, id: u32, grad: &[f64]| {
        if let Some(v) = vecs.get_mut(&id) {
            v.iter_mut().zip(grad).for_each(|(p, gr)| *p -= eta * gr);
        }
    };
    for (id, e) in pkt.entity_grads.iter() {
        step(&mut g.entity_vecs, id, &e.grad);
    }
    for (id, e) in pkt.relation_grads.iter() {
        step(&mut g.relation_vecs, id, &e.grad);
    }
    for (p, gr) in m.values_mut().zip(pkt.model_grads.values()) {
        *p -= eta * gr;
    }
}

fn sum_packets(mut acc: GradientPacket, other: &GradientPacket) -> GradientPacket {
    for (id, e) in other.entity_grads.iter() {
        acc.entity_grads.accumulate(id, &e.grad);
    }
    for (id, e) in other.relation_grads.iter() {
        acc.relation_grads.accumulate(id, &e.grad);
    }
    for (a, b) in acc.model_grads.values_mut().zip(other.model_grads.values()) {
        *a += b;
    }
    for (a, b) in acc.user_grad.iter_mut().zip(&other.user_grad) {
        *a += b;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{KnowledgeGraph, Triple};
    use crate::model::PropagationMode;
    use crate::params::ParameterState;
    use crate::rng::SimRng;
    use crate::server::serve_request;
    use rand::SeedableRng;

    fn client(items: &[EntityId]) -> ClientState {
        ClientState { user_id: 2, user_embedding: vec![0.3, -0.1], interactions: items.iter().copied().collect(), seed: 11 }
    }

    fn world() -> (KnowledgeGraph, ParameterState) {
        let triples: Vec<Triple> = (0..6).map(|i| Triple::new(i, i % 2, 6 + i % 3)).collect();
        let kg = KnowledgeGraph::build(&triples, 9, 2).unwrap();
        let params = ParameterState::init(9, 2, 2, 1, PropagationMode::Transform, &mut SimRng::seed_from_u64(1));
        (kg, params)
    }

    fn dp(q: f64, p: Option<usize>) -> DpConfig {
        DpConfig { delta: 1.0, lambda: 0.0, flip_rate: q, pseudo_count: p }
    }

    #[test]
    fn plain_request_lists_interactions() {
        let (plan, msg) = client(&[1, 4]).build_request(6, &dp(0.0, Some(0)), 0).unwrap();
        let mut items = msg.items.clone();
        items.sort();
        assert_eq!(items, vec![1, 4]);
        assert_eq!(plan.request_items, msg.items);
    }

    #[test]
    fn request_is_deterministic_per_round() {
        let c = client(&[1, 4]);
        let a = c.build_request(6, &dp(0.1, None), 3).unwrap();
        let b = c.build_request(6, &dp(0.1, None), 3).unwrap();
        assert_eq!(a, b);
        let pseudo: BTreeSet<_> = a.1.items.iter().filter(|i| !c.interactions.contains(i)).collect();
        assert_eq!(pseudo.len(), 2);
    }

    #[test]
    fn request_without_room_for_pseudo_items_fails() {
        assert!(client(&[0, 1, 2]).build_request(4, &dp(0.0, None), 0).is_err());
        assert!(client(&[]).build_request(4, &dp(0.0, Some(0)), 0).is_err());
    }

    #[test]
    fn merged_graph_bounds_entities() {
        let (kg, params) = world();
        let c = client(&[0, 1]);
        let (plan, msg) = c.build_request(6, &dp(0.0, Some(0)), 0).unwrap();
        let resp = serve_request(&msg, &kg, &params, 4, 1, &mut SimRng::seed_from_u64(0)).unwrap();
        let g = merge_graphs(&c.user_embedding, &plan, &resp).unwrap();
        assert!(g.subgraph.entities.len() <= 1 + 2 + 8);
        assert_eq!(g.anchors.len(), 2);
    }

    #[test]
    fn depth_zero_merge_has_anchors_only() {
        let (kg, params) = world();
        let c = client(&[0, 1]);
        let (plan, msg) = c.build_request(6, &dp(0.0, Some(0)), 0).unwrap();
        let resp = serve_request(&msg, &kg, &params, 4, 0, &mut SimRng::seed_from_u64(0)).unwrap();
        let g = merge_graphs(&c.user_embedding, &plan, &resp).unwrap();
        assert_eq!(g.subgraph.entities, [0, 1].into());
    }

    #[test]
    fn anchor_shared_with_neighbor_has_one_vector() {
        let kg = KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 2, 1).unwrap();
        let params = ParameterState::init(2, 1, 2, 1, PropagationMode::Transform, &mut SimRng::seed_from_u64(1));
        let c = client(&[0, 1]);
        let (plan, msg) = c.build_request(2, &dp(0.0, Some(0)), 0).unwrap();
        let resp = serve_request(&msg, &kg, &params, 2, 1, &mut SimRng::seed_from_u64(0)).unwrap();
        let g = merge_graphs(&c.user_embedding, &plan, &resp).unwrap();
        assert_eq!(g.entity_vecs.len(), 2);
    }

    #[test]
    fn missing_anchor_is_protocol_error() {
        let (kg, params) = world();
        let c = client(&[0, 1]);
        let (plan, _) = c.build_request(6, &dp(0.0, Some(0)), 0).unwrap();
        let partial = RequestMessage::new(2, vec![0]);
        let resp = serve_request(&partial, &kg, &params, 4, 1, &mut SimRng::seed_from_u64(0)).unwrap();
        assert!(matches!(merge_graphs(&c.user_embedding, &plan, &resp), Err(Error::Protocol(_))));
    }

    fn trained(epochs: usize) -> LocalTrainOutput {
        let (kg, params) = world();
        let c = client(&[0, 3]);
        let (plan, msg) = c.build_request(6, &dp(0.0, None), 0).unwrap();
        let resp = serve_request(&msg, &kg, &params, 2, 1, &mut SimRng::seed_from_u64(0)).unwrap();
        let g = merge_graphs(&c.user_embedding, &plan, &resp).unwrap();
        local_train(&g, &resp.model, 0.5, epochs)
    }

    #[test]
    fn second_epoch_changes_packet() {
        let one = trained(1);
        let two = trained(2);
        assert_ne!(one.packet.entity_grads, two.packet.entity_grads);
        assert_ne!(one.user_embedding, two.user_embedding);
        assert_eq!(one.packet.loss, two.packet.loss);
    }

    #[test]
    fn packet_bookkeeping() {
        let (kg, params) = world();
        let c = client(&[0, 3]);
        let (plan, msg) = c.build_request(6, &dp(0.0, None), 0).unwrap();
        let resp = serve_request(&msg, &kg, &params, 2, 1, &mut SimRng::seed_from_u64(0)).unwrap();
        let g = merge_graphs(&c.user_embedding, &plan, &resp).unwrap();
        let out = local_train(&g, &resp.model, 0.1, 1);
        assert_eq!(out.packet.weight as usize, plan.request_items.len());
        assert_eq!(out.packet.loss, model::forward(&g, &resp.model).loss(&plan.local_labels));
        let expected: Vec<f64> = c.user_embedding.iter().zip(&out.packet.user_grad).map(|(u, gu)| u - 0.1 * gu).collect();
        assert_eq!(out.user_embedding, expected);
    }

    #[test]
    fn optimum_gives_tiny_packet() {
        // labels agree with confident predictions
        let (kg, mut params) = world();
        params.model = ModelParams::init(2, 1, PropagationMode::Replace, &mut SimRng::seed_from_u64(0));
        let mut c = client(&[0]);
        c.user_embedding = vec![40.0, 0.0];
        for e in 0..9 {
            params.entity_emb.row_mut(e).copy_from_slice(&[1.0, 0.0]);
        }
        let (plan, msg) = c.build_request(6, &dp(0.0, Some(0)), 0).unwrap();
        let resp = serve_request(&msg, &kg, &params, 2, 1, &mut SimRng::seed_from_u64(0)).unwrap();
        let g = merge_graphs(&c.user_embedding, &plan, &resp).unwrap();
        let out = local_train(&g, &resp.model, 0.1, 1);
        assert!(out.packet.shared_norm_sq() < 1e-20);
    }
}
