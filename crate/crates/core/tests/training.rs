use fedrkg::config::ExperimentConfig;
use fedrkg::data::Split;
use fedrkg::runner::{self, init_clients, init_server, load_dataset, user_table};
use fedrkg::server::{train, TrainConfig};
use fedrkg::wire::RequestMessage;

fn small() -> ExperimentConfig {
    ExperimentConfig { synth_users: 120, synth_items: 60, synth_attributes: 6, max_rounds: 20, eval_every: 5, ..ExperimentConfig::default() }
}

#[test]
fn zero_user_embeddings_leave_the_server_untouched() {
    // with u = 0 every prediction is 1/2 and all shared gradients vanish
    let cfg = ExperimentConfig { lambda: 0.0, ..small() };
    let (data, _) = load_dataset(&cfg).unwrap();
    let mut server = init_server(&cfg, &data);
    let mut clients = init_clients(&data, cfg.dim, cfg.seed);
    clients.iter_mut().for_each(|c| c.user_embedding.fill(0.0));
    let before = server.params.clone();
    let report = server.run_round(&mut clients, 0).unwrap();
    assert_eq!(report.participants, cfg.clients_per_round);
    assert_eq!(server.params, before);
}

#[test]
fn failed_round_changes_nothing() {
    let cfg = ExperimentConfig { clients_per_round: 120, ..small() };
    let (data, _) = load_dataset(&cfg).unwrap();
    let mut server = init_server(&cfg, &data);
    let mut clients = init_clients(&data, cfg.dim, cfg.seed);
    server.run_round(&mut clients, 0).unwrap();

    clients[17].interactions.insert(data.num_entities as u32 + 5);
    let params = server.params.clone();
    let users = user_table(&clients);
    let err = server.run_round(&mut clients, 1).unwrap_err();
    assert!(err.to_string().contains("client 17"), "{err}");
    assert_eq!(server.params, params);
    assert_eq!(user_table(&clients), users);
}

#[test]
fn exchange_is_deterministic_and_weighted_by_request_size() {
    let cfg = small();
    let (data, _) = load_dataset(&cfg).unwrap();
    let server = init_server(&cfg, &data);
    let clients = init_clients(&data, cfg.dim, cfg.seed);
    for c in clients.iter().take(10) {
        let a = server.exchange(c, 3).unwrap();
        let b = server.exchange(c, 3).unwrap();
        assert_eq!(a.request_bytes, b.request_bytes);
        assert_eq!(a.upload_bytes, b.upload_bytes);
        let req = RequestMessage::decode(&a.request_bytes).unwrap();
        assert_eq!(a.upload.weight as usize, req.items.len());
        // one pseudo item per interaction by default
        assert_eq!(req.items.len(), 2 * c.interactions.len());
        assert_ne!(a.request_bytes, server.exchange(c, 4).unwrap().request_bytes);
    }
}

#[test]
fn zero_rounds_return_the_initial_state() {
    let cfg = ExperimentConfig { max_rounds: 0, ..small() };
    let (data, _) = load_dataset(&cfg).unwrap();
    let mut server = init_server(&cfg, &data);
    let mut clients = init_clients(&data, cfg.dim, cfg.seed);
    let before = server.params.clone();
    let history = train(
        &mut server,
        &mut clients,
        &cfg.train_config(),
        &mut |_, _| unreachable!("no evaluation without rounds"),
        &mut |_, _, _| Ok(()),
    )
    .unwrap();
    assert_eq!(history.rounds_run, 0);
    assert!(history.evaluations.is_empty());
    assert_eq!(server.params, before);
}

#[test]
fn patience_stops_a_plateau() {
    // a step this small cannot move any parameter, so validation AUC never improves
    let cfg = ExperimentConfig { eta: 1e-300, ..small() };
    let (data, _) = load_dataset(&cfg).unwrap();
    let mut server = init_server(&cfg, &data);
    let mut clients = init_clients(&data, cfg.dim, cfg.seed);
    let tc = TrainConfig { max_rounds: 100, eval_every: 2, patience: 3 };
    let mut reports = 0;
    let history = train(
        &mut server,
        &mut clients,
        &tc,
        &mut |s, cs| runner::evaluate_split(&cfg, s, &user_table(cs), &data, Split::Valid, &[]),
        &mut |_, _, _| {
            reports += 1;
            Ok(())
        },
    )
    .unwrap();
    assert!(history.stopped_early);
    assert_eq!(history.evaluations.len(), 4);
    assert_eq!(history.rounds_run, 8);
    assert_eq!(reports, 8);
    let aucs: Vec<_> = history.evaluations.iter().map(|e| e.metrics.auc).collect();
    assert!(aucs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn history_has_one_entry_per_evaluation() {
    let cfg = ExperimentConfig { max_rounds: 23, eval_every: 5, patience: 0, ..small() };
    let (data, _) = load_dataset(&cfg).unwrap();
    let out = runner::train_dataset(&cfg, &data, &mut |_, _, _, _| Ok(())).unwrap();
    assert_eq!(out.history.rounds_run, 23);
    let rounds: Vec<u64> = out.history.evaluations.iter().map(|e| e.round).collect();
    assert_eq!(rounds, vec![4, 9, 14, 19]);
    assert_eq!(out.metrics_jsonl.lines().count(), 23);
    assert_eq!(out.metrics_jsonl.lines().filter(|l| l.contains("\"validation\"")).count(), 4);
}

#[test]
fn validation_auc_rises_during_training() {
    let cfg = ExperimentConfig { max_rounds: 200, eval_every: 1, patience: 0, ..ExperimentConfig::default() };
    let (data, _) = load_dataset(&cfg).unwrap();
    let out = runner::train_dataset(&cfg, &data, &mut |_, _, _, _| Ok(())).unwrap();
    let aucs: Vec<f64> = out.history.evaluations.iter().map(|e| e.metrics.auc.unwrap()).collect();
    let first = aucs[..20].iter().sum::<f64>() / 20.0;
    let last = aucs[aucs.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(last > first + 0.1, "first 20 rounds {first:.4}, last 20 rounds {last:.4}");
}

#[test]
fn run_writes_outputs_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { output_dir: dir.path().to_path_buf(), checkpoint_every: 10, ..small() };
    let report = runner::run(&cfg).unwrap();
    for f in [runner::METRICS_FILE, runner::FINAL_FILE, runner::CHECKPOINT_FILE, runner::CONFIG_FILE, "checkpoint_10.bin", "checkpoint_20.bin"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let echoed = ExperimentConfig::load(&dir.path().join(runner::CONFIG_FILE)).unwrap();
    assert_eq!(echoed, cfg);
    let text = std::fs::read_to_string(dir.path().join(runner::FINAL_FILE)).unwrap();
    let parsed: runner::FinalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, report);
    let again = runner::evaluate_checkpoint(&cfg, &dir.path().join(runner::CHECKPOINT_FILE), Split::Test).unwrap();
    assert_eq!(again, report.test);
}

#[test]
fn missing_dataset_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = ExperimentConfig {
        dataset: fedrkg::config::DatasetSource::Files,
        ratings_path: Some(dir.path().join("absent.txt")),
        kg_path: Some(dir.path().join("absent_kg.txt")),
        output_dir: out.clone(),
        ..ExperimentConfig::default()
    };
    let err = runner::run(&cfg).unwrap_err();
    assert!(err.to_string().contains("absent.txt"), "{err}");
    assert!(!out.exists());
}

#[test]
fn untrained_checkpoint_scores_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { max_rounds: 0, output_dir: dir.path().to_path_buf(), ..ExperimentConfig::default() };
    runner::run(&cfg).unwrap();
    let m = runner::evaluate_checkpoint(&cfg, &dir.path().join(runner::CHECKPOINT_FILE), Split::Test).unwrap();
    let auc = m.auc.unwrap();
    assert!((auc - 0.5).abs() <= 0.05, "auc {auc}");
}

#[test]
fn checkpoint_for_another_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { max_rounds: 0, output_dir: dir.path().to_path_buf(), ..small() };
    runner::run(&cfg).unwrap();
    let other = ExperimentConfig { synth_items: 61, ..cfg.clone() };
    assert!(runner::evaluate_checkpoint(&other, &dir.path().join(runner::CHECKPOINT_FILE), Split::Test).is_err());
}

#[test]
fn synth_writes_three_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let synth = fedrkg::data::SynthConfig { users: 500, items: 200, ..Default::default() };
    let files = runner::write_synthetic(&synth, 3, dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
    let cfg = ExperimentConfig::load(&files[2]).unwrap();
    cfg.validate().unwrap();
    let (data, ids) = load_dataset(&cfg).unwrap();
    assert_eq!(data.num_users, 500);
    assert_eq!(data.num_items, 200);
    assert_eq!(data.kg.num_triples(), 200);
    assert_eq!(ids.unwrap(), (0..500).collect::<Vec<u64>>());
}
