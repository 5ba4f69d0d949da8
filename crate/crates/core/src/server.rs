//! Round orchestration: client selection, request servicing, weighted
//! aggregation of uploads and the global gradient step.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{local_train, merge_graphs, ClientState};
use crate::kg::{KnowledgeGraph, Subgraph};
use crate::metrics::MetricReport;
use crate::model::{ModelParams, PropagationMode};
use crate::params::{ParameterState, SparseEntry, SparseGrad};
use crate::privacy::{ldp_encrypt, DpConfig};
use crate::rng::{stream, Role};
use crate::wire::{GradientUpload, RequestMessage};
use crate::{EntityId, Error, RelationId, Result};

/// Hyperparameters of one federated round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    /// Neighbor sample size.
    pub k: usize,
    pub dim: usize,
    /// Receptive-field depth.
    pub depth: usize,
    pub eta: f64,
    pub clients_per_round: usize,
    pub dp: DpConfig,
    pub epochs: usize,
    pub mode: PropagationMode,
    /// Items occupy entity ids `0..num_items`; pseudo items are drawn from them.
    pub num_items: usize,
    pub seed: u64,
}

/// What the server ships back for one request: the sampled receptive field,
/// copies of exactly the embeddings it references, and the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphResponse {
    pub subgraph: Subgraph,
    pub entity_vecs: BTreeMap<EntityId, Vec<f64>>,
    pub relation_vecs: BTreeMap<RelationId, Vec<f64>>,
    pub model: ModelParams,
}

/// Weighted mean of the uploads. Sparse rows are averaged over the clients
/// that actually sent them.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedGradient {
    pub entity_grads: SparseGrad,
    pub relation_grads: SparseGrad,
    pub model_grads: Option<ModelParams>,
}

impl AggregatedGradient {
    pub fn empty(dim: usize) -> Self {
        Self { entity_grads: SparseGrad::new(dim), relation_grads: SparseGrad::new(dim), model_grads: None }
    }

    pub fn is_finite(&self) -> bool {
        let sparse_ok = |g: &SparseGrad| g.iter().all(|(_, e)| e.grad.iter().all(|v| v.is_finite()));
        sparse_ok(&self.entity_grads)
            && sparse_ok(&self.relation_grads)
            && self.model_grads.as_ref().is_none_or(|m| m.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub mean_loss: f64,
    pub participants: usize,
    /// Kept out of the metrics stream so reruns stay byte-identical.
    #[serde(skip)]
    pub duration_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub validation: Option<MetricReport>,
}

/// Uniform sample of `active` distinct client indices out of `total`, sorted.
pub fn select_clients<R: Rng + ?Sized>(total: usize, active: usize, rng: &mut R) -> Result<Vec<u32>> {
    if active > total {
        return Err(Error::Config(format!("cannot select {active} clients out of {total}")));
    }
    let mut ids: Vec<u32> = index::sample(rng, total, active).into_iter().map(|i| i as u32).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Samples the receptive field of the requested items and gathers the
/// embeddings it touches.
pub fn serve_request<R: Rng + ?Sized>(
    msg: &RequestMessage,
    kg: &KnowledgeGraph,
    params: &ParameterState,
    k: usize,
    depth: usize,
    rng: &mut R,
) -> Result<SubgraphResponse> {
    if let Some(&bad) = msg.items.iter().find(|&&i| i as usize >= kg.num_entities()) {
        return Err(Error::Protocol(format!("client {} requested unknown item {bad}", msg.client)));
    }
    let subgraph = kg.sample_subgraph(&msg.items, k, depth, rng)?;
    let (entity_vecs, relation_vecs) = params.gather(&subgraph.entities, &subgraph.relations)?;
    Ok(SubgraphResponse { subgraph, entity_vecs, relation_vecs, model: params.model.clone() })
}

/// `sum_n w_n g_n / sum_n w_n` with `w_n` the request size of client `n`.
///
/// Uploads are reduced in client-id order, so the result does not depend on
/// the order they arrived in. For a sparse row only the clients that sent it
/// enter the denominator; rows nobody sent are absent.
pub fn aggregate(uploads: &[GradientUpload]) -> Result<AggregatedGradient> {
    assert!(!uploads.is_empty(), "aggregate over no uploads");
    let mut sorted: Vec<&GradientUpload> = uploads.iter().collect();
    sorted.sort_by_key(|u| u.client);

    let first = &sorted[0].model_grads;
    let dim = first.dim;
    for u in &sorted {
        if u.weight == 0 {
            return Err(Error::Protocol(format!("client {} uploaded with zero weight", u.client)));
        }
        if !first.same_shape(&u.model_grads) || u.entity_grads.dim() != dim || u.relation_grads.dim() != dim {
            return Err(Error::Protocol(format!("client {} uploaded gradients of the wrong shape", u.client)));
        }
    }

    let sparse = |pick: fn(&GradientUpload) -> &SparseGrad| {
        let mut acc: BTreeMap<u32, (Vec<f64>, f64, u32)> = BTreeMap::new();
        for u in &sorted {
            let w = f64::from(u.weight);
            for (id, e) in pick(u).iter() {
                let slot = acc.entry(id).or_insert_with(|| (vec![0.0; dim], 0.0, 0));
                for (a, g) in slot.0.iter_mut().zip(&e.grad) {
                    *a += w * g;
                }
                slot.1 += w;
                slot.2 += 1;
            }
        }
        let mut out = SparseGrad::new(dim);
        for (id, (mut num, wsum, count)) in acc {
            num.iter_mut().for_each(|v| *v /= wsum);
            out.insert(id, SparseEntry { grad: num, count });
        }
        out
    };
    let entity_grads = sparse(|u| &u.entity_grads);
    let relation_grads = sparse(|u| &u.relation_grads);

    let mut model = first.zeros_like();
    let mut wsum = 0.0;
    for u in &sorted {
        let w = f64::from(u.weight);
        for (a, g) in model.values_mut().zip(u.model_grads.values()) {
            *a += w * g;
        }
        wsum += w;
    }
    model.values_mut().for_each(|v| *v /= wsum);

    Ok(AggregatedGradient { entity_grads, relation_grads, model_grads: Some(model) })
}

/// Everything one client produced in a round.
#[derive(Debug, Clone)]
pub struct ClientOutcome {
    pub client: u32,
    pub upload: GradientUpload,
    pub user_embedding: Vec<f64>,
    pub loss: f64,
    /// Serialized server-bound messages, in send order.
    pub request_bytes: Vec<u8>,
    pub upload_bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Server {
    pub kg: KnowledgeGraph,
    pub params: ParameterState,
    pub config: RoundConfig,
}

impl Server {
    pub fn new(kg: KnowledgeGraph, params: ParameterState, config: RoundConfig) -> Self {
        Self { kg, params, config }
    }

    /// One client's request → response → training → upload exchange against
    /// the current parameters. Messages cross the boundary in encoded form.
    pub fn exchange(&self, client: &ClientState, round: u64) -> Result<ClientOutcome> {
        let cfg = &self.config;
        let (plan, msg) = client.build_request(cfg.num_items, &cfg.dp, round)?;
        let request_bytes = msg.encode();

        let msg = RequestMessage::decode(&request_bytes)?;
        let mut sampling = stream(cfg.seed, Role::Sampling, round, u64::from(msg.client));
        let response = serve_request(&msg, &self.kg, &self.params, cfg.k, cfg.depth, &mut sampling)?;

        let graph = merge_graphs(&client.user_embedding, &plan, &response)?;
        let trained = local_train(&graph, &response.model, cfg.eta, cfg.epochs);
        let loss = trained.packet.loss;
        let mut noise = stream(client.seed, Role::Noise, round, u64::from(client.user_id));
        let noisy = ldp_encrypt(trained.packet, &cfg.dp, &mut noise);
        let upload_bytes = GradientUpload::from_packet(client.user_id, noisy).encode();

        let upload = GradientUpload::decode(&upload_bytes)?;
        Ok(ClientOutcome {
            client: client.user_id,
            upload,
            user_embedding: trained.user_embedding,
            loss,
            request_bytes,
            upload_bytes,
        })
    }

    pub fn run_round(&mut self, clients: &mut [ClientState], round: u64) -> Result<RoundReport> {
        self.run_round_tapped(clients, round, &mut |_| {})
    }

    /// Runs one round. Selected clients work in parallel against the same
    /// parameter snapshot; nothing (parameters or user embeddings) changes
    /// unless every client and the update succeed. `tap` sees each client's
    /// outcome in client-id order before the update is applied.
    pub fn run_round_tapped(
        &mut self,
        clients: &mut [ClientState],
        round: u64,
        tap: &mut dyn FnMut(&ClientOutcome),
    ) -> Result<RoundReport> {
        let start = Instant::now();
        let mut sel_rng = stream(self.config.seed, Role::Selection, round, 0);
        let selected = select_clients(clients.len(), self.config.clients_per_round, &mut sel_rng)?;

        let this = &*self;
        let outcomes: Vec<ClientOutcome> = selected
            .par_iter()
            .map(|&i| {
                let c = &clients[i as usize];
                this.exchange(c, round).map_err(|e| Error::Client { client: c.user_id, source: Box::new(e) })
            })
            .collect::<Result<_>>()?;

        outcomes.iter().for_each(|o| tap(o));
        let uploads: Vec<GradientUpload> = outcomes.iter().map(|o| o.upload.clone()).collect();
        let avg = aggregate(&uploads)?;
        self.params.apply_global_update(&avg, self.config.eta)?;

        for (o, &i) in outcomes.iter().zip(&selected) {
            clients[i as usize].user_embedding.clone_from(&o.user_embedding);
        }
        let mean_loss = outcomes.iter().map(|o| o.loss).sum::<f64>() / outcomes.len() as f64;
        Ok(RoundReport {
            round,
            mean_loss,
            participants: outcomes.len(),
            duration_ms: start.elapsed().as_secs_f64() * 1e3,
            validation: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_rounds: u64,
    pub eval_every: u64,
    /// Stop after this many evaluations without a new best validation AUC.
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub round: u64,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub evaluations: Vec<EvalRecord>,
    pub rounds_run: u64,
    pub stopped_early: bool,
}

/// Runs rounds until `max_rounds` or early stopping. `validate` is called
/// after every `eval_every`-th round; `on_round` sees every report along with
/// the updated state.
pub fn train(
    server: &mut Server,
    clients: &mut [ClientState],
    cfg: &TrainConfig,
    validate: &mut dyn FnMut(&Server, &[ClientState]) -> Result<MetricReport>,
    on_round: &mut dyn FnMut(&RoundReport, &Server, &[ClientState]) -> Result<()>,
) -> Result<TrainHistory> {
    let mut history = TrainHistory::default();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    for round in 0..cfg.max_rounds {
        let mut report = server.run_round(clients, round)?;
        history.rounds_run = round + 1;
        if cfg.eval_every > 0 && (round + 1) % cfg.eval_every == 0 {
            let metrics = validate(server, clients)?;
            let auc = metrics.auc.unwrap_or(f64::NEG_INFINITY);
            if auc > best {
                best = auc;
                stale = 0;
            } else {
                stale += 1;
            }
            history.evaluations.push(EvalRecord { round, metrics: metrics.clone() });
            report.validation = Some(metrics);
        }
        on_round(&report, server, clients)?;
        if stale >= cfg.patience && cfg.patience > 0 {
            history.stopped_early = true;
            break;
        }
    }
    Ok(history)
}
