//! Experiment configuration: one flat TOML table, every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::model::PropagationMode;
use crate::privacy::DpConfig;
use crate::server::{RoundConfig, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    #[default]
    Synthetic,
    Files,
}

impl std::str::FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "files" => Ok(Self::Files),
            other => Err(Error::Config(format!("unknown dataset source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub ratings_path: Option<PathBuf>,
    pub kg_path: Option<PathBuf>,
    /// Ratings at or above this value count as positives.
    pub positive_threshold: f64,

    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_attributes: usize,
    pub synth_relations: usize,
    pub synth_interactions: usize,
    pub synth_preferred: usize,
    pub synth_noise: f64,
    pub synth_extra_triples: usize,

    /// K
    pub k: usize,
    /// d
    pub dim: usize,
    /// H
    pub depth: usize,
    /// η
    pub eta: f64,
    /// 𝒩
    pub clients_per_round: usize,
    /// p; one per interaction when absent.
    pub pseudo_items: Option<usize>,
    /// q
    pub flip_rate: f64,
    /// δ
    pub delta: f64,
    /// λ
    pub lambda: f64,
    pub epochs: usize,
    pub max_rounds: u64,
    pub eval_every: u64,
    pub patience: usize,
    /// φ
    pub mode: PropagationMode,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write `checkpoint_<round>.bin` every this many rounds; 0 disables.
    pub checkpoint_every: u64,
    pub recall_ks: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let dp = DpConfig::default();
        Self {
            dataset: DatasetSource::Synthetic,
            ratings_path: None,
            kg_path: None,
            positive_threshold: 0.0,
            synth_users: synth.users,
            synth_items: synth.items,
            synth_attributes: synth.attributes,
            synth_relations: synth.relations,
            synth_interactions: synth.interactions_per_user,
            synth_preferred: synth.preferred_per_user,
            synth_noise: synth.noise,
            synth_extra_triples: synth.extra_triples,
            k: 4,
            dim: 16,
            depth: 1,
            eta: 2.0,
            clients_per_round: 32,
            pseudo_items: dp.pseudo_count,
            flip_rate: dp.flip_rate,
            delta: dp.delta,
            lambda: dp.lambda,
            epochs: 1,
            max_rounds: 300,
            eval_every: 10,
            patience: 10,
            mode: PropagationMode::Transform,
            seed: 0,
            output_dir: PathBuf::from("out"),
            checkpoint_every: 0,
            recall_ks: vec![5, 10, 20],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim < 1 {
            return bad("dim must be at least 1");
        }
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if self.clients_per_round < 1 {
            return bad("clients_per_round must be at least 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.positive_threshold.is_finite()) {
            return bad("positive_threshold must be finite");
        }
        if self.dataset == DatasetSource::Files && (self.ratings_path.is_none() || self.kg_path.is_none()) {
            return bad("dataset = \"files\" needs ratings_path and kg_path");
        }
        if self.recall_ks.contains(&0) {
            return bad("recall_ks entries must be positive");
        }
        self.dp().validate()?;
        if self.dataset == DatasetSource::Synthetic && !(0.0..=1.0).contains(&self.synth_noise) {
            return bad("synth_noise must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn dp(&self) -> DpConfig {
        DpConfig {
            delta: self.delta,
            lambda: self.lambda,
            flip_rate: self.flip_rate,
            pseudo_count: self.pseudo_items,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            users: self.synth_users,
            items: self.synth_items,
            attributes: self.synth_attributes,
            relations: self.synth_relations,
            interactions_per_user: self.synth_interactions,
            preferred_per_user: self.synth_preferred,
            noise: self.synth_noise,
            extra_triples: self.synth_extra_triples,
        }
    }

    pub fn round_config(&self, num_items: usize) -> RoundConfig {
        RoundConfig {
            k: self.k,
            dim: self.dim,
            depth: self.depth,
            eta: self.eta,
            clients_per_round: self.clients_per_round,
            dp: self.dp(),
            epochs: self.epochs,
            mode: self.mode,
            num_items,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_rounds: self.max_rounds,
            eval_every: self.eval_every,
            patience: self.patience,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lastfm_table_values_are_accepted() {
        let cfg = ExperimentConfig::from_toml(
            "dataset = \"files\"\nratings_path = \"r.txt\"\nkg_path = \"kg.txt\"\n\
             k = 8\ndim = 16\ndepth = 1\nlambda = 1e-4\neta = 5e-4\nclients_per_round = 32\n",
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!((cfg.k, cfg.dim, cfg.depth, cfg.clients_per_round), (8, 16, 1, 32));
        assert_eq!(cfg.lambda, 1e-4);
        assert_eq!(cfg.eta, 5e-4);
    }

    #[test]
    fn rejects_out_of_range_values() {
        for text in ["dim = 0", "eta = 0.0", "eta = -1.0", "flip_rate = 0.5", "flip_rate = -0.1", "k = 0"] {
            let cfg = ExperimentConfig::from_toml(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
        ExperimentConfig::from_toml("depth = 0").unwrap().validate().unwrap();
    }

    #[test]
    fn unknown_and_malformed_keys_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("colour = 3"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("dim = \"x\""), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("mode = \"sum\""), Err(Error::Config(_))));
    }

    #[test]
    fn files_source_needs_paths() {
        let cfg = ExperimentConfig::from_toml("dataset = \"files\"").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.pseudo_items = Some(3);
        cfg.mode = PropagationMode::Replace;
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
