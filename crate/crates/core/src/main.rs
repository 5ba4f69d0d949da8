use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use fedrkg::config::{DatasetSource, ExperimentConfig};
use fedrkg::data::{Split, SynthConfig};
use fedrkg::gradcheck::{self, GradcheckConfig};
use fedrkg::model::PropagationMode;
use fedrkg::runner::{self, OUTPUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "fedrkg", version, about = "Federated recommendation over a shared knowledge graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics, final test metrics and a checkpoint.
    Train(Overrides),
    /// Score a held-out split with a saved checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write a synthetic dataset as ratings, KG and config files.
    Synth(SynthArgs),
    /// Compare the manual backward pass against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Flags mirror the config keys and win over the file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<DatasetSource>,
    #[arg(long)]
    ratings_path: Option<PathBuf>,
    #[arg(long)]
    kg_path: Option<PathBuf>,
    #[arg(long)]
    positive_threshold: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    clients_per_round: Option<usize>,
    #[arg(long)]
    pseudo_items: Option<usize>,
    #[arg(long)]
    flip_rate: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_rounds: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    mode: Option<PropagationMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    synth_noise: Option<f64>,
}

impl Overrides {
    fn resolve(self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(output_dir, dataset, positive_threshold, k, dim, depth, eta, clients_per_round, flip_rate, delta, lambda);
        set!(epochs, max_rounds, eval_every, patience, mode, seed, checkpoint_every, synth_noise);
        if self.ratings_path.is_some() {
            cfg.ratings_path = self.ratings_path;
        }
        if self.kg_path.is_some() {
            cfg.kg_path = self.kg_path;
        }
        if self.pseudo_items.is_some() {
            cfg.pseudo_items = self.pseudo_items;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = "synthetic")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    attributes: Option<usize>,
    #[arg(long)]
    relations: Option<usize>,
    #[arg(long)]
    interactions: Option<usize>,
    #[arg(long)]
    preferred: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    extra_triples: Option<usize>,
}

impl SynthArgs {
    fn synth(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            users: self.users.unwrap_or(d.users),
            items: self.items.unwrap_or(d.items),
            attributes: self.attributes.unwrap_or(d.attributes),
            relations: self.relations.unwrap_or(d.relations),
            interactions_per_user: self.interactions.unwrap_or(d.interactions_per_user),
            preferred_per_user: self.preferred.unwrap_or(d.preferred_per_user),
            noise: self.noise.unwrap_or(d.noise),
            extra_triples: self.extra_triples.unwrap_or(d.extra_triples),
        }
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}` (expected valid or test)")),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let mut out = std::io::stdout().lock();
    match Cli::parse().command {
        Command::Train(o) => {
            let cfg = o.resolve()?;
            let report = runner::run(&cfg)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            eprintln!("outputs written to {}", cfg.output_dir.display());
        }
        Command::Evaluate { checkpoint, split, overrides } => {
            let cfg = overrides.resolve()?;
            let report = runner::evaluate_checkpoint(&cfg, &checkpoint, split)
                .with_context(|| format!("evaluating {}", checkpoint.display()))?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Command::Synth(args) => {
            for path in runner::write_synthetic(&args.synth(), args.seed, &args.out)? {
                writeln!(out, "{}", path.display())?;
            }
        }
        Command::Gradcheck { instances, seed, step, tolerance } => {
            let report = gradcheck::run(&GradcheckConfig { instances, seed, step, tolerance });
            for r in &report.instances {
                writeln!(
                    out,
                    "{:>4} d={} K={} H={} {:<9?} max rel err {:.3e}",
                    r.index, r.dim, r.k, r.depth, r.mode, r.max_rel_err
                )?;
            }
            writeln!(out, "worst {:.3e}, tolerance {:.0e}", report.max_rel_err, report.tolerance)?;
            if !report.passed() {
                eprintln!("gradient check failed");
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
