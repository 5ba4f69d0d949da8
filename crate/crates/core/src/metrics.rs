//! CTR and top-K evaluation.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::kg::KnowledgeGraph;
use crate::model::{self, Anchor, LocalGraph};
use crate::params::ParameterState;
use crate::rng::{stream, Role};
use crate::{EntityId, Result};

/// Probability threshold for F1.
pub const F1_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Absent when the pooled labels contain a single class.
    pub auc: Option<f64>,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub recall_at_k: BTreeMap<usize, f64>,
    pub users: usize,
    pub pairs: usize,
}

/// Mann–Whitney AUC; ties count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks across ties
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_run = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg_rank * pos_in_run as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// F1 of the rule `score >= threshold`; 0 when nothing is predicted positive.
pub fn f1(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    assert_eq!(scores.len(), labels.len());
    assert!(!scores.is_empty(), "F1 over no predictions");
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fp == 0 || tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Fraction of `positives` among the `k` best-scored candidates, for each
/// `k`. Ties in score are broken by ascending item id. `None` when there are
/// no positives.
pub fn recall_at_k(candidates: &[EntityId], scores: &[f64], positives: &BTreeSet<EntityId>, ks: &[usize]) -> Option<BTreeMap<usize, f64>> {
    assert_eq!(candidates.len(), scores.len());
    if positives.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(candidates[a].cmp(&candidates[b])));
    let mut out = BTreeMap::new();
    for &k in ks {
        let hits = order.iter().take(k).filter(|&&i| positives.contains(&candidates[i])).count();
        out.insert(k, hits as f64 / positives.len() as f64);
    }
    Some(out)
}

/// Scores items for one user with the global parameters: samples a
/// receptive field around the items, propagates and applies the readout.
pub struct Scorer<'a> {
    pub params: &'a ParameterState,
    pub kg: &'a KnowledgeGraph,
    pub k: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Scorer<'_> {
    /// The receptive field for `user` is drawn from a fixed stream, so
    /// repeated evaluations of the same user see the same neighborhoods.
    pub fn score(&self, user: u32, user_embedding: &[f64], items: &[EntityId]) -> Result<Vec<f64>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let mut rng = stream(self.seed, Role::Evaluation, 0, u64::from(user));
        let subgraph = self.kg.sample_subgraph(items, self.k, self.depth, &mut rng)?;
        let (entity_vecs, relation_vecs) = self.params.gather(&subgraph.entities, &subgraph.relations)?;
        let graph = LocalGraph {
            user: user_embedding.to_vec(),
            anchors: items.iter().map(|&item| Anchor { item, label: 0 }).collect(),
            subgraph,
            entity_vecs,
            relation_vecs,
        };
        Ok(model::forward(&graph, &self.params.model).predictions)
    }
}

/// Pooled AUC and F1 over every `(user, item)` pair of a held-out split, plus
/// mean Recall@K over all items the user has not seen in earlier splits.
pub fn evaluate(scorer: &Scorer, users: &[Vec<f64>], data: &Dataset, split: Split, ks: &[usize]) -> Result<MetricReport> {
    let (positives, negatives) = data.held_out(split);
    let per_user: Vec<(Vec<f64>, Vec<u8>, Option<BTreeMap<usize, f64>>)> = (0..data.num_users)
        .into_par_iter()
        .map(|u| -> Result<_> {
            let pos = &positives[u];
            let neg = &negatives[u];
            let items: Vec<EntityId> = pos.iter().chain(neg).copied().collect();
            let scores = scorer.score(u as u32, &users[u], &items)?;
            let labels: Vec<u8> = std::iter::repeat_n(1, pos.len()).chain(std::iter::repeat_n(0, neg.len())).collect();

            let recall = if ks.is_empty() || pos.is_empty() {
                None
            } else {
                let mut excluded: BTreeSet<EntityId> = data.splits.train[u].iter().copied().collect();
                if split == Split::Test {
                    excluded.extend(&data.splits.valid[u]);
                }
                let candidates: Vec<EntityId> = (0..data.num_items as EntityId).filter(|i| !excluded.contains(i)).collect();
                let cand_scores = scorer.score(u as u32, &users[u], &candidates)?;
                recall_at_k(&candidates, &cand_scores, &pos.iter().copied().collect(), ks)
            };
            Ok((scores, labels, recall))
        })
        .collect::<Result<_>>()?;

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut recall_sum: BTreeMap<usize, f64> = BTreeMap::new();
    let mut recall_users = 0usize;
    let mut users_with_pairs = 0usize;
    for (s, l, r) in per_user {
        if !s.is_empty() {
            users_with_pairs += 1;
        }
        scores.extend(s);
        labels.extend(l);
        if let Some(r) = r {
            recall_users += 1;
            for (k, v) in r {
                *recall_sum.entry(k).or_default() += v;
            }
        }
    }
    let recall_at_k = recall_sum.into_iter().map(|(k, v)| (k, v / recall_users as f64)).collect();
    Ok(MetricReport {
        auc: auc(&scores, &labels),
        f1: if scores.is_empty() { 0.0 } else { f1(&scores, &labels, F1_THRESHOLD) },
        recall_at_k,
        users: users_with_pairs,
        pairs: scores.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct pairwise count.
    fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    num += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]), Some(1.0));
        assert_eq!(auc(&[0.9, 0.4, 0.35, 0.8], &[1, 0, 1, 0]), Some(0.5));
        assert_eq!(auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]), Some(0.5));
        assert_eq!(auc(&[0.3, 0.2], &[1, 1]), None);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count(v in proptest::collection::vec((0u8..5, 0u8..2), 2..40)) {
            let scores: Vec<f64> = v.iter().map(|(s, _)| f64::from(*s) / 4.0).collect();
            let labels: Vec<u8> = v.iter().map(|(_, l)| *l).collect();
            match auc(&scores, &labels) {
                Some(a) => prop_assert!((a - auc_pairs(&scores, &labels)).abs() < 1e-12),
                None => prop_assert!(labels.iter().all(|&l| l == labels[0])),
            }
        }

        #[test]
        fn auc_invariant_under_monotone_map(v in proptest::collection::vec((-5.0f64..5.0, 0u8..2), 2..40)) {
            let scores: Vec<f64> = v.iter().map(|(s, _)| *s).collect();
            let labels: Vec<u8> = v.iter().map(|(_, l)| *l).collect();
            let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
            prop_assert_eq!(auc(&scores, &labels), auc(&mapped, &labels));
        }

        #[test]
        fn recall_monotone_in_k(seed_scores in proptest::collection::vec(0.0f64..1.0, 20), pos in proptest::collection::btree_set(0u32..20, 1..6)) {
            let cands: Vec<u32> = (0..20).collect();
            let ks: Vec<usize> = (0..=21).collect();
            let r = recall_at_k(&cands, &seed_scores, &pos, &ks).unwrap();
            for k in 1..=21 {
                prop_assert!(r[&k] >= r[&(k - 1)]);
            }
        }
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(&[0.9, 0.1, 0.7], &[1, 0, 1], 0.5), 1.0);
        assert!((f1(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0], 0.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1(&[0.1, 0.2], &[1, 0], 0.5), 0.0);
    }

    #[test]
    fn f1_threshold_extremes() {
        let s = [0.2, 0.5, 0.9, 0.4];
        let l = [1, 0, 1, 1];
        assert_eq!(f1(&s, &l, 0.95), 0.0);
        assert_eq!(f1(&s, &l, 0.1), f1(&[1.0; 4], &l, 0.5));
    }

    #[test]
    fn recall_examples() {
        let cands = [3, 5, 8];
        let r = recall_at_k(&cands, &[0.1, 0.9, 0.5], &[5].into(), &[1, 3, 10]).unwrap();
        assert_eq!(r[&1], 1.0);
        assert_eq!(r[&10], 1.0);
        assert!(recall_at_k(&cands, &[0.1, 0.9, 0.5], &BTreeSet::new(), &[1]).is_none());
    }
}
