//! AUC, F1 and Recall@K on hand-made scores.
//!
//!     cargo run --example evaluation_metrics

use std::collections::BTreeSet;

use fedrkg::metrics::{auc, f1, recall_at_k, F1_THRESHOLD};

pub fn run_example() -> anyhow::Result<()> {
    let scores = [0.9, 0.8, 0.55, 0.4, 0.3, 0.1];
    let labels = [1, 0, 1, 1, 0, 0];
    let a = auc(&scores, &labels).expect("both classes present");
    let f = f1(&scores, &labels, F1_THRESHOLD);
    println!("AUC {a:.4}  F1 {f:.4}");
    // 7 of the 9 positive-negative pairs are ordered correctly
    anyhow::ensure!((a - 7.0 / 9.0).abs() < 1e-12);

    println!("AUC with one class only: {:?}", auc(&[0.2, 0.7], &[1, 1]));

    let candidates = [10, 11, 12, 13, 14];
    let cand_scores = [0.2, 0.9, 0.1, 0.7, 0.5];
    let held_out: BTreeSet<u32> = [12, 13].into();
    let recall = recall_at_k(&candidates, &cand_scores, &held_out, &[1, 2, 5]).expect("has positives");
    for (k, r) in &recall {
        println!("Recall@{k} = {r}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
