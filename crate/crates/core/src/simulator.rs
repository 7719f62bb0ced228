//! Weighted rank-vote ensemble standing in for the unknown production
//! recommender.
//!
//! Each member model ranks a candidate pool on its own scale; the ensemble
//! combines the member *ranks*, not raw scores, so members with different
//! score magnitudes vote on equal footing. The combined score of an item is
//! minus the weighted mean of its member ranks — higher is better, and a rank
//! of 1 is the member's favorite.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::artifact;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::recmodels::{AnyModel, ModelHyper, ModelKind, RecModel};
use crate::rng::substream_seed;

/// An item together with its combined ensemble score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item: usize,
    pub score: f64,
}

/// One member of the simulated recommender ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub kind: ModelKind,
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// Overrides the campaign-wide hyperparameters when present.
    #[serde(default)]
    pub hyper: Option<ModelHyper>,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ensemble<M = AnyModel> {
    members: Vec<M>,
    weights: Vec<f64>,
}

impl<M: RecModel> Ensemble<M> {
    pub fn new(members: Vec<M>, weights: Vec<f64>) -> Result<Ensemble<M>> {
        if members.is_empty() {
            return Err(Error::InvalidConfig("ensemble needs at least one member".into()));
        }
        if members.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "got {} members but {} weights",
                members.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidConfig(
                "ensemble weights must be positive and finite".into(),
            ));
        }
        let (u0, v0) = (members[0].n_users(), members[0].n_items());
        if members.iter().any(|m| m.n_users() != u0 || m.n_items() != v0) {
            return Err(Error::InvalidConfig(
                "ensemble members disagree on the user/item universe".into(),
            ));
        }
        Ok(Ensemble { members, weights })
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[M] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn n_users(&self) -> usize {
        self.members[0].n_users()
    }

    pub fn n_items(&self) -> usize {
        self.members[0].n_items()
    }

    /// Ranks `candidate_pool` for one user by weighted rank voting.
    ///
    /// Every member assigns each candidate a rank (1 = best, ties broken by
    /// item index); the combined score is -(weighted mean rank). The result
    /// is sorted best-first with ties again broken by item index.
    pub fn aggregate_ranks(
        &self,
        user: usize,
        history: &[usize],
        candidate_pool: &[usize],
    ) -> Vec<RankedItem> {
        let p = candidate_pool.len();
        let inv_total = 1.0 / self.weight_sum();
        let mut combined = vec![0.0; p];
        let mut order: Vec<usize> = (0..p).collect();
        let mut scores = vec![0.0; p];
        for (member, &w) in self.members.iter().zip(&self.weights) {
            for (s, &item) in scores.iter_mut().zip(candidate_pool) {
                *s = member.score(user, history, item);
            }
            order.sort_by(|&a, &b| {
                scores[b]
                    .total_cmp(&scores[a])
                    .then(candidate_pool[a].cmp(&candidate_pool[b]))
            });
            for (pos, &slot) in order.iter().enumerate() {
                combined[slot] += w * (pos + 1) as f64;
            }
        }
        let mut out: Vec<RankedItem> = candidate_pool
            .iter()
            .zip(&combined)
            .map(|(&item, &c)| RankedItem {
                item,
                score: -c * inv_total,
            })
            .collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.item.cmp(&b.item)));
        out
    }
}

impl Ensemble<AnyModel> {
    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::save_json(path, "ensemble", 1, self)
    }

    pub fn load(path: &Path) -> Result<Ensemble<AnyModel>> {
        artifact::load_json(path, "ensemble", 1)
    }
}

/// Trains one model per spec, each from its own seed substream, and wires
/// them into an ensemble.
pub fn train_ensemble(
    ds: &Dataset,
    specs: &[MemberSpec],
    default_hyper: &ModelHyper,
    master_seed: u64,
) -> Result<Ensemble<AnyModel>> {
    if specs.is_empty() {
        return Err(Error::InvalidConfig("simulator member list is empty".into()));
    }
    let mut members = Vec::with_capacity(specs.len());
    for (m, spec) in specs.iter().enumerate() {
        let hyper = spec.hyper.as_ref().unwrap_or(default_hyper);
        let seed = substream_seed(master_seed, &format!("sim-member.{m}"));
        log::info!("training simulator member {m}: {}", spec.kind);
        members.push(AnyModel::train(spec.kind, ds, hyper, seed)?);
    }
    Ensemble::new(members, specs.iter().map(|s| s.weight).collect())
}
