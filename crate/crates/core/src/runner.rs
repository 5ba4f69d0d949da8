//! Experiment orchestration: data → init → federated training → final
//! evaluation, plus the file outputs of a run.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::ClientState;
use crate::config::{DatasetSource, ExperimentConfig};
use crate::data::{self, generate_synthetic, Dataset, Split, SynthConfig};
use crate::metrics::{evaluate, MetricReport, Scorer};
use crate::params::{Checkpoint, Embeddings, ParameterState};
use crate::rng::{stream, Role};
use crate::server::{self, RoundReport, Server, TrainHistory};
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_FILE: &str = "final_metrics.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const ID_MAP_FILE: &str = "user_ids.tsv";

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "FEDRKG_OUTPUT_DIR";

/// Builds the dataset named by the config. User ids are returned only for
/// file-backed data, where they were densified.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Vec<u64>>)> {
    match cfg.dataset {
        DatasetSource::Synthetic => {
            let syn = generate_synthetic(&cfg.synth(), &mut stream(cfg.seed, Role::Synthetic, 0, 0))?;
            Ok((syn.into_dataset(cfg.seed)?, None))
        }
        DatasetSource::Files => {
            let missing = || Error::Config("dataset = \"files\" needs ratings_path and kg_path".into());
            let ratings = cfg.ratings_path.as_deref().ok_or_else(missing)?;
            let kg = cfg.kg_path.as_deref().ok_or_else(missing)?;
            let (ds, ids) = Dataset::from_files(ratings, kg, cfg.positive_threshold, cfg.seed)?;
            Ok((ds, Some(ids)))
        }
    }
}

/// One client per user, holding its training positives and a user embedding
/// drawn from the user's own init stream.
pub fn init_clients(data: &Dataset, dim: usize, seed: u64) -> Vec<ClientState> {
    (0..data.num_users)
        .map(|u| {
            let emb = Embeddings::uniform(1, dim, &mut stream(seed, Role::UserInit, 0, u as u64));
            ClientState {
                user_id: u as u32,
                user_embedding: emb.as_slice().to_vec(),
                interactions: data.splits.train[u].iter().copied().collect(),
                seed,
            }
        })
        .collect()
}

pub fn init_server(cfg: &ExperimentConfig, data: &Dataset) -> Server {
    let mut rng = stream(cfg.seed, Role::Init, 0, 0);
    let params = ParameterState::init(data.num_entities, data.num_relations, cfg.dim, cfg.depth, cfg.mode, &mut rng);
    Server::new(data.kg.clone(), params, cfg.round_config(data.num_items))
}

pub fn user_table(clients: &[ClientState]) -> Vec<Vec<f64>> {
    clients.iter().map(|c| c.user_embedding.clone()).collect()
}

pub fn evaluate_split(
    cfg: &ExperimentConfig,
    server: &Server,
    users: &[Vec<f64>],
    data: &Dataset,
    split: Split,
    ks: &[usize],
) -> Result<MetricReport> {
    let scorer = Scorer { params: &server.params, kg: &server.kg, k: cfg.k, depth: cfg.depth, seed: cfg.seed };
    evaluate(&scorer, users, data, split, ks)
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub server: Server,
    pub clients: Vec<ClientState>,
    pub history: TrainHistory,
    /// One JSON object per round, newline-terminated.
    pub metrics_jsonl: String,
    pub test: MetricReport,
}

/// `final_metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub rounds_run: u64,
    pub stopped_early: bool,
    pub test: MetricReport,
}

/// Trains and evaluates without touching the filesystem. `on_round` sees
/// each report and its metrics line together with the state it describes.
pub fn train_dataset(
    cfg: &ExperimentConfig,
    data: &Dataset,
    on_round: &mut dyn FnMut(&RoundReport, &str, &Server, &[ClientState]) -> Result<()>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut server = init_server(cfg, data);
    let mut clients = init_clients(data, cfg.dim, cfg.seed);
    let mut jsonl = String::new();
    let history = server::train(
        &mut server,
        &mut clients,
        &cfg.train_config(),
        &mut |s, cs| evaluate_split(cfg, s, &user_table(cs), data, Split::Valid, &[]),
        &mut |report, s, cs| {
            let line = serde_json::to_string(report)? + "\n";
            on_round(report, &line, s, cs)?;
            jsonl.push_str(&line);
            Ok(())
        },
    )?;
    let test = evaluate_split(cfg, &server, &user_table(&clients), data, Split::Test, &cfg.recall_ks)?;
    Ok(RunOutcome { server, clients, history, metrics_jsonl: jsonl, test })
}

pub fn checkpoint_of(server: &Server, clients: &[ClientState]) -> Checkpoint {
    let dim = server.params.dim();
    let users: Vec<f64> = clients.iter().flat_map(|c| c.user_embedding.iter().copied()).collect();
    Checkpoint { params: server.params.clone(), user_emb: Some(Embeddings::from_rows(dim, users)) }
}

/// Full run with file outputs. The dataset is loaded before anything is
/// written, so data errors leave no output behind.
pub fn run(cfg: &ExperimentConfig) -> Result<FinalReport> {
    cfg.validate()?;
    let (data, user_ids) = load_dataset(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
    if let Some(ids) = &user_ids {
        data::save_id_map(&dir.join(ID_MAP_FILE), ids)?;
    }

    let mut metrics = std::io::BufWriter::new(fs::File::create(dir.join(METRICS_FILE))?);
    let outcome = train_dataset(cfg, &data, &mut |report, line, server, clients| {
        metrics.write_all(line.as_bytes())?;
        let round = report.round + 1;
        if cfg.checkpoint_every > 0 && round % cfg.checkpoint_every == 0 {
            metrics.flush()?;
            checkpoint_of(server, clients).save(&dir.join(format!("checkpoint_{round}.bin")))?;
        }
        Ok(())
    })?;
    metrics.flush()?;

    let report = FinalReport {
        rounds_run: outcome.history.rounds_run,
        stopped_early: outcome.history.stopped_early,
        test: outcome.test,
    };
    fs::write(dir.join(FINAL_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    checkpoint_of(&outcome.server, &outcome.clients).save(&dir.join(CHECKPOINT_FILE))?;
    Ok(report)
}

/// Scores a split with a saved checkpoint. Checkpoints without user
/// embeddings fall back to freshly initialised ones.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path, split: Split) -> Result<MetricReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (data, _) = load_dataset(cfg)?;
    let p = &ckpt.params;
    if p.num_entities() != data.num_entities || p.num_relations() != data.num_relations {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} entities and {} relations, dataset has {} and {}",
            p.num_entities(),
            p.num_relations(),
            data.num_entities,
            data.num_relations
        )));
    }
    if p.model.layers.len() != cfg.depth {
        return Err(Error::Checkpoint(format!("checkpoint has {} layers, config has depth {}", p.model.layers.len(), cfg.depth)));
    }
    let users = match &ckpt.user_emb {
        Some(u) if u.rows() == data.num_users => (0..u.rows()).map(|i| u.row(i).to_vec()).collect(),
        Some(u) => {
            return Err(Error::Checkpoint(format!("checkpoint has {} users, dataset has {}", u.rows(), data.num_users)));
        }
        None => user_table(&init_clients(&data, p.dim(), cfg.seed)),
    };
    let mut cfg = cfg.clone();
    cfg.dim = p.dim();
    cfg.mode = p.model.mode;
    let server = Server::new(data.kg.clone(), ckpt.params, cfg.round_config(data.num_items));
    evaluate_split(&cfg, &server, &users, &data, split, &cfg.recall_ks)
}

pub const SYNTH_RATINGS: &str = "ratings.txt";
pub const SYNTH_KG: &str = "kg.txt";
pub const SYNTH_CONFIG: &str = "config.toml";

/// Writes a synthetic dataset as ratings and KG files, plus a config that
/// trains on them.
pub fn write_synthetic(synth: &SynthConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let syn = generate_synthetic(synth, &mut stream(seed, Role::Synthetic, 0, 0))?;
    fs::create_dir_all(dir)?;
    let ratings = dir.join(SYNTH_RATINGS);
    let kg = dir.join(SYNTH_KG);
    let config = dir.join(SYNTH_CONFIG);
    data::save_ratings(&ratings, &syn.positives)?;
    crate::kg::write_triples(&kg, &syn.triples)?;

    let echo = ExperimentConfig {
        dataset: DatasetSource::Files,
        ratings_path: Some(ratings.clone()),
        kg_path: Some(kg.clone()),
        positive_threshold: 0.0,
        synth_users: synth.users,
        synth_items: synth.items,
        synth_attributes: synth.attributes,
        synth_relations: synth.relations,
        synth_interactions: synth.interactions_per_user,
        synth_preferred: synth.preferred_per_user,
        synth_noise: synth.noise,
        synth_extra_triples: synth.extra_triples,
        seed,
        ..ExperimentConfig::default()
    };
    fs::write(&config, echo.to_toml())?;
    Ok(vec![ratings, kg, config])
}
