//! Victim/simulator recommenders behind one differentiable-model contract.
//!
//! Both models expose scoring, ranking, per-sample losses, analytic gradients,
//! and per-sample Hessian-vector products over a single flat `f64` parameter
//! vector, which is what the outcome estimator differentiates through.
//!
//! Loss convention: the per-sample loss carries the global L2 term scaled by
//! `1/N` (N = number of decomposed training samples), so the sum of per-sample
//! losses equals the full training objective and the mean Hessian matches the
//! objective's Hessian.

mod bprmf;
mod fpmc;

pub use bprmf::{train_bprmf, BprmfModel};
pub use fpmc::{train_fpmc, FpmcModel};

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm_sq};
use crate::parallel;

/// One decomposed training sample: a BPR pair for non-sequential models, a
/// prefix/next pair with a sampled negative for sequential ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingSample {
    Pair {
        user: usize,
        pos: usize,
        neg: usize,
    },
    Seq {
        user: usize,
        prefix: Vec<usize>,
        next: usize,
        neg: usize,
    },
}

impl TrainingSample {
    pub fn user(&self) -> usize {
        match self {
            TrainingSample::Pair { user, .. } | TrainingSample::Seq { user, .. } => *user,
        }
    }
}

/// Shared training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct ModelHyper {
    pub dim: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub epochs: usize,
    pub neg_samples: usize,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            dim: 16,
            learning_rate: 0.05,
            l2_reg: 0.01,
            epochs: 200,
            neg_samples: 1,
        }
    }
}

impl ModelHyper {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("model dim must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "l2_reg must be nonnegative and finite, got {}",
                self.l2_reg
            )));
        }
        // the amortized end-of-epoch weight decay must keep a positive factor
        if self.learning_rate * 2.0 * self.l2_reg >= 1.0 {
            return Err(Error::InvalidConfig(
                "learning_rate * 2 * l2_reg must stay below 1".into(),
            ));
        }
        if self.neg_samples == 0 {
            return Err(Error::InvalidConfig("neg_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// The differentiable-model contract shared by every recommender here.
///
/// Injected ("phantom") users — indices at or past `n_users` — are scored
/// with the mean user embedding and contribute no user-block gradient or
/// curvature terms: they have no trained embedding of their own, so the mean
/// acts as a constant surrogate.
pub trait RecModel {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// L2 coefficient on the squared parameter norm of the full objective.
    fn l2_coeff(&self) -> f64 {
        0.0
    }

    /// Size of the canonical training-sample decomposition this model was
    /// trained on; scales the per-sample L2 share.
    fn n_train_samples(&self) -> usize {
        0
    }

    /// Prediction score; this is the test function the estimator
    /// differentiates.
    fn score(&self, user: usize, history: &[usize], item: usize) -> f64;

    /// Accumulates `scale * d score / d theta` into `out`.
    fn add_score_grad(&self, user: usize, history: &[usize], item: usize, scale: f64, out: &mut [f64]);

    /// Data term of the per-sample loss (no L2 share).
    fn sample_data_loss(&self, z: &TrainingSample) -> f64;

    /// Accumulates the gradient of the data term.
    fn add_sample_data_grad(&self, z: &TrainingSample, scale: f64, out: &mut [f64]);

    /// Accumulates the Hessian-vector product of the data term.
    fn add_sample_data_hvp(&self, z: &TrainingSample, v: &[f64], scale: f64, out: &mut [f64]);

    /// Canonical decomposition of a dataset into training samples, with
    /// deterministic per-user negative draws.
    fn training_samples(&self, ds: &Dataset) -> Vec<TrainingSample>;

    /// The sample this model derives from position `t` of an injected
    /// sequence, or `None` if that position contributes nothing (e.g. the
    /// first event of a sequence model, or an exhausted negative pool).
    fn injected_sample_at(
        &self,
        phantom_user: usize,
        items: &[usize],
        t: usize,
        seed: u64,
    ) -> Option<TrainingSample> {
        let _ = (phantom_user, items, t, seed);
        None
    }

    /// All samples an injected sequence contributes for this model.
    fn injected_samples(&self, phantom_user: usize, items: &[usize], seed: u64) -> Vec<TrainingSample> {
        (0..items.len())
            .filter_map(|t| self.injected_sample_at(phantom_user, items, t, seed))
            .collect()
    }

    /// L2 share carried by each decomposed sample.
    fn l2_per_sample(&self) -> f64 {
        if self.n_train_samples() == 0 {
            0.0
        } else {
            self.l2_coeff() / self.n_train_samples() as f64
        }
    }

    /// Full per-sample loss: data term plus this sample's L2 share.
    fn sample_loss(&self, z: &TrainingSample) -> f64 {
        self.sample_data_loss(z) + self.l2_per_sample() * norm_sq(self.params())
    }

    /// Gradient of [`RecModel::sample_loss`].
    fn add_sample_loss_grad(&self, z: &TrainingSample, scale: f64, out: &mut [f64]) {
        self.add_sample_data_grad(z, scale, out);
        let ridge = 2.0 * self.l2_per_sample();
        if ridge != 0.0 {
            axpy(scale * ridge, self.params(), out);
        }
    }

    /// Hessian-vector product of [`RecModel::sample_loss`].
    fn add_sample_hvp(&self, z: &TrainingSample, v: &[f64], scale: f64, out: &mut [f64]) {
        self.add_sample_data_hvp(z, v, scale, out);
        let ridge = 2.0 * self.l2_per_sample();
        if ridge != 0.0 {
            axpy(scale * ridge, v, out);
        }
    }

    /// `grad_data(z) . with` without materializing the gradient; models
    /// override this with an O(dim) sparse computation.
    fn sample_data_grad_dot(&self, z: &TrainingSample, with: &[f64]) -> f64 {
        let mut g = vec![0.0; self.param_dim()];
        self.add_sample_data_grad(z, 1.0, &mut g);
        dot(&g, with)
    }
}

/// Uniform negative draw outside `exclude`; `None` when the pool is empty.
pub(crate) fn draw_negative<R: Rng>(
    rng: &mut R,
    n_items: usize,
    exclude: &HashSet<usize>,
) -> Option<usize> {
    if exclude.len() >= n_items {
        return None;
    }
    loop {
        let candidate = rng.random_range(0..n_items);
        if !exclude.contains(&candidate) {
            return Some(candidate);
        }
    }
}

/// A ranked recommendation list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopK {
    pub items: Vec<usize>,
    /// Set when fewer than `k` candidates were available.
    pub truncated: bool,
}

/// Top-k items by descending score, ties broken by ascending item index.
pub fn top_k<M: RecModel>(
    model: &M,
    user: usize,
    history: &[usize],
    k: usize,
    exclude_history: bool,
) -> TopK {
    let excluded: HashSet<usize> = if exclude_history {
        history.iter().copied().collect()
    } else {
        HashSet::new()
    };
    let mut scored: Vec<(f64, usize)> = (0..model.n_items())
        .filter(|i| !excluded.contains(i))
        .map(|i| (model.score(user, history, i), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let take = k.min(scored.len());
    if take > 0 && take < scored.len() {
        scored.select_nth_unstable_by(take - 1, cmp);
    }
    let front = &mut scored[..take];
    front.sort_unstable_by(cmp);
    TopK {
        truncated: take < k,
        items: front.iter().map(|&(_, i)| i).collect(),
    }
}

/// Fraction of holdout users whose validation item appears in their top-k
/// list (scored over the full catalog).
pub fn validation_hit_rate<M: RecModel + Sync>(model: &M, ds: &Dataset, k: usize) -> f64 {
    let users = ds.holdout_users();
    if users.is_empty() {
        return 0.0;
    }
    let hits = parallel::map_collect(&users, |&u| {
        let val = ds.val_item(u).expect("holdout user has a val item");
        top_k(model, u, ds.train(u), k, false).items.contains(&val)
    });
    hits.iter().filter(|&&h| h).count() as f64 / users.len() as f64
}

/// Model family tag used in configs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bprmf,
    Fpmc,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Bprmf => write!(f, "bprmf"),
            ModelKind::Fpmc => write!(f, "fpmc"),
        }
    }
}

/// A trained recommender of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum AnyModel {
    Bprmf(BprmfModel),
    Fpmc(FpmcModel),
}

impl AnyModel {
    pub fn train(kind: ModelKind, ds: &Dataset, hyper: &ModelHyper, seed: u64) -> Result<AnyModel> {
        match kind {
            ModelKind::Bprmf => train_bprmf(ds, hyper, seed).map(AnyModel::Bprmf),
            ModelKind::Fpmc => train_fpmc(ds, hyper, seed).map(AnyModel::Fpmc),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Bprmf(_) => ModelKind::Bprmf,
            AnyModel::Fpmc(_) => ModelKind::Fpmc,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::artifact::save_json(path, "model", 1, self)
    }

    pub fn load(path: &Path) -> Result<AnyModel> {
        crate::artifact::load_json(path, "model", 1)
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident ( $($arg:expr),* )) => {
        match $self {
            AnyModel::Bprmf(inner) => inner.$m($($arg),*),
            AnyModel::Fpmc(inner) => inner.$m($($arg),*),
        }
    };
}

impl RecModel for AnyModel {
    fn n_users(&self) -> usize {
        delegate!(self, n_users())
    }
    fn n_items(&self) -> usize {
        delegate!(self, n_items())
    }
    fn param_dim(&self) -> usize {
        delegate!(self, param_dim())
    }
    fn params(&self) -> &[f64] {
        delegate!(self, params())
    }
    fn params_mut(&mut self) -> &mut [f64] {
        delegate!(self, params_mut())
    }
    fn l2_coeff(&self) -> f64 {
        delegate!(self, l2_coeff())
    }
    fn n_train_samples(&self) -> usize {
        delegate!(self, n_train_samples())
    }
    fn score(&self, user: usize, history: &[usize], item: usize) -> f64 {
        delegate!(self, score(user, history, item))
    }
    fn add_score_grad(&self, user: usize, history: &[usize], item: usize, scale: f64, out: &mut [f64]) {
        delegate!(self, add_score_grad(user, history, item, scale, out))
    }
    fn sample_data_loss(&self, z: &TrainingSample) -> f64 {
        delegate!(self, sample_data_loss(z))
    }
    fn add_sample_data_grad(&self, z: &TrainingSample, scale: f64, out: &mut [f64]) {
        delegate!(self, add_sample_data_grad(z, scale, out))
    }
    fn add_sample_data_hvp(&self, z: &TrainingSample, v: &[f64], scale: f64, out: &mut [f64]) {
        delegate!(self, add_sample_data_hvp(z, v, scale, out))
    }
    fn training_samples(&self, ds: &Dataset) -> Vec<TrainingSample> {
        delegate!(self, training_samples(ds))
    }
    fn injected_sample_at(
        &self,
        phantom_user: usize,
        items: &[usize],
        t: usize,
        seed: u64,
    ) -> Option<TrainingSample> {
        delegate!(self, injected_sample_at(phantom_user, items, t, seed))
    }
    fn sample_data_grad_dot(&self, z: &TrainingSample, with: &[f64]) -> f64 {
        delegate!(self, sample_data_grad_dot(z, with))
    }
}
