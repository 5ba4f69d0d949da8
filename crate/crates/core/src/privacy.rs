//! Local differential privacy on both things a client sends the server.
//!
//! Requests: real interactions are mixed with pseudo items the user never
//! touched, and every candidate's 0/1 label goes through randomized response
//! (kept with probability `e^eps / (e^eps + 1)`). Uploads: every gradient
//! element is clamped to `[-delta, delta]` and gets i.i.d. `Laplace(0, lambda)`
//! noise, which gives `eps = 2 * delta / lambda` per coordinate.

use std::collections::{BTreeSet, HashSet};

use rand::distributions::Open01;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::GradientPacket;
use crate::{EntityId, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Per-element clip threshold.
    pub delta: f64,
    /// Laplace noise scale; 0 disables noise.
    pub lambda: f64,
    /// Label flip probability, in `[0, 0.5)`.
    pub flip_rate: f64,
    /// Pseudo items mixed into each request. `None` uses one per interaction.
    pub pseudo_count: Option<usize>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { delta: 0.1, lambda: 1e-4, flip_rate: 0.1, pseudo_count: None }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be > 0, got {}", self.delta)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(0.0..0.5).contains(&self.flip_rate) {
            return Err(Error::Config(format!("flip rate must lie in [0, 0.5), got {}", self.flip_rate)));
        }
        Ok(())
    }

    pub fn pseudo_items_for(&self, interactions: usize) -> usize {
        self.pseudo_count.unwrap_or(interactions)
    }
}

/// What the client keeps after building a request.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestPlan {
    /// Sent to the server, in shuffled order, without duplicates.
    pub request_items: Vec<EntityId>,
    /// Post-flip training labels aligned with `request_items`. Never sent.
    pub local_labels: Vec<u8>,
    /// How many real interactions the request contains. Never sent.
    pub true_positive_count: usize,
}

/// Budget of randomized response with flip probability `q`: `ln((1 - q) / q)`.
pub fn interaction_budget(flip_rate: f64) -> f64 {
    ((1.0 - flip_rate) / flip_rate).ln()
}

/// Flip probability `1 / (e^eps + 1)` for a randomized-response budget.
pub fn flip_rate_for_budget(eps: f64) -> f64 {
    1.0 / (eps.exp() + 1.0)
}

/// Budget of the gradient mechanism, `2 * delta / lambda`. Infinite without noise.
pub fn privacy_budget(delta: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        f64::INFINITY
    } else {
        2.0 * delta / lambda
    }
}

/// Mixes the first `p` negatives (label 0) into the interactions (label 1),
/// flips each label independently with probability `q` and shuffles.
pub fn generate_request_items<R: Rng + ?Sized>(
    interactions: &BTreeSet<EntityId>,
    negatives: &[EntityId],
    config: &DpConfig,
    rng: &mut R,
) -> Result<RequestPlan> {
    let p = config.pseudo_items_for(interactions.len());
    if negatives.len() < p {
        return Err(Error::Config(format!(
            "need {p} pseudo items but only {} non-interacted items are available",
            negatives.len()
        )));
    }
    let pseudo = &negatives[..p];
    let mut seen = HashSet::with_capacity(p);
    for n in pseudo {
        if interactions.contains(n) || !seen.insert(*n) {
            return Err(Error::Config(format!("pseudo item {n} is an interaction or repeated")));
        }
    }

    let mut candidates: Vec<(EntityId, u8)> = interactions
        .iter()
        .map(|&i| (i, 1))
        .chain(pseudo.iter().map(|&i| (i, 0)))
        .collect();
    for c in candidates.iter_mut() {
        if config.flip_rate > 0.0 && rng.gen_bool(config.flip_rate) {
            c.1 ^= 1;
        }
    }
    candidates.shuffle(rng);
    let (request_items, local_labels) = candidates.into_iter().unzip();
    Ok(RequestPlan { request_items, local_labels, true_positive_count: interactions.len() })
}

/// One draw from `Laplace(0, scale)` by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn perturb<R: Rng + ?Sized>(xs: &mut [f64], config: &DpConfig, rng: &mut R) {
    for x in xs {
        *x = x.clamp(-config.delta, config.delta);
        if config.lambda > 0.0 {
            *x += sample_laplace(config.lambda, rng);
        }
    }
}

/// Clamps and noises every shareable gradient element and drops the user
/// gradient. Noise is drawn entity rows first, then relation rows, then the
/// model, each in id order.
pub fn ldp_encrypt<R: Rng + ?Sized>(mut packet: GradientPacket, config: &DpConfig, rng: &mut R) -> GradientPacket {
    for row in packet.entity_grads.values_mut() {
        perturb(row, config, rng);
    }
    for row in packet.relation_grads.values_mut() {
        perturb(row, config, rng);
    }
    for layer in packet.model_grads.layers.iter_mut() {
        perturb(&mut layer.weight, config, rng);
        perturb(&mut layer.bias, config, rng);
    }
    packet.user_grad = Vec::new();
    packet
}
