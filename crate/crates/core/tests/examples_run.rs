//! Every example doubles as a smoke test.

#[path = "../examples/attention_propagation.rs"]
mod attention_propagation;

#[test]
fn attention_propagation_runs() {
    attention_propagation::run_example().unwrap();
}

#[path = "../examples/checkpoint_evaluate.rs"]
mod checkpoint_evaluate;

#[test]
fn checkpoint_evaluate_runs() {
    checkpoint_evaluate::run_example().unwrap();
}

#[path = "../examples/dataset_loading.rs"]
mod dataset_loading;

#[test]
fn dataset_loading_runs() {
    dataset_loading::run_example().unwrap();
}

#[path = "../examples/evaluation_metrics.rs"]
mod evaluation_metrics;

#[test]
fn evaluation_metrics_runs() {
    evaluation_metrics::run_example().unwrap();
}

#[path = "../examples/federated_training.rs"]
mod federated_training;

#[test]
fn federated_training_runs() {
    federated_training::run_example().unwrap();
}

#[path = "../examples/gradient_check.rs"]
mod gradient_check;

#[test]
fn gradient_check_runs() {
    gradient_check::run_example().unwrap();
}

#[path = "../examples/kg_sampling.rs"]
mod kg_sampling;

#[test]
fn kg_sampling_runs() {
    kg_sampling::run_example().unwrap();
}

#[path = "../examples/privacy_mechanisms.rs"]
mod privacy_mechanisms;

#[test]
fn privacy_mechanisms_runs() {
    privacy_mechanisms::run_example().unwrap();
}

#[path = "../examples/seeded_determinism.rs"]
mod seeded_determinism;

#[test]
fn seeded_determinism_runs() {
    seeded_determinism::run_example().unwrap();
}

#[path = "../examples/weighted_aggregation.rs"]
mod weighted_aggregation;

#[test]
fn weighted_aggregation_runs() {
    weighted_aggregation::run_example().unwrap();
}

#[path = "../examples/wire_messages.rs"]
mod wire_messages;

#[test]
fn wire_messages_runs() {
    wire_messages::run_example().unwrap();
}
