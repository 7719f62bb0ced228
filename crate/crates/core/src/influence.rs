//! Outcome estimation: predicts how an injected training sample would shift
//! target-item scores, without retraining the victim.
//!
//! The parameter shift from upweighting a sample is approximated by
//! -H^-1 grad L(z); the induced score shift on a target is then
//! -grad f_test . H^-1 grad L(z). The inverse Hessian-vector product is
//! computed with the stochastic LiSSA recursion. [`InfluenceEstimator`]
//! precomputes, per ensemble member, the inverse-HVP of the averaged target
//! score gradient so each agent query costs one sparse gradient dot product.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TargetSpec};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, scale as scale_vec};
use crate::parallel;
use crate::recmodels::{RecModel, TrainingSample};
use crate::rng::substream_seed;
use crate::simulator::Ensemble;

/// Parameters of the LiSSA inverse-HVP recursion.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LissaConfig {
    /// Recursion length per repeat.
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Spectral normalizer; the scaled Hessian must contract.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Independent repeats averaged at the end.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Samples per stochastic Hessian estimate; at or above the sample count
    /// the recursion becomes deterministic full-batch.
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Ridge added to the Hessian before inversion.
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_depth() -> usize {
    1000
}
fn default_scale() -> f64 {
    10.0
}
fn default_repeats() -> usize {
    4
}
fn default_batch() -> usize {
    16
}
fn default_damping() -> f64 {
    0.01
}

impl Default for LissaConfig {
    fn default() -> Self {
        LissaConfig {
            depth: default_depth(),
            scale: default_scale(),
            repeats: default_repeats(),
            batch: default_batch(),
            damping: default_damping(),
        }
    }
}

impl LissaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("lissa depth must be >= 1".into()));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidConfig("lissa scale must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("lissa repeats must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("lissa batch must be >= 1".into()));
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(Error::InvalidConfig("lissa damping must be >= 0".into()));
        }
        Ok(())
    }
}

/// A (user, item) pair whose score the attack tries to raise, together with
/// the user's history as seen at evaluation time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSample {
    pub user: usize,
    pub item: usize,
    pub history: Vec<usize>,
}

/// Cross product of target users and target items, each paired with the
/// user's training history.
pub fn expand_targets(ds: &Dataset, spec: &TargetSpec) -> Vec<TargetSample> {
    let mut out = Vec::with_capacity(spec.target_users.len() * spec.target_items.len());
    for &u in &spec.target_users {
        for &v in &spec.target_items {
            out.push(TargetSample {
                user: u,
                item: v,
                history: ds.train(u).to_vec(),
            });
        }
    }
    out
}

/// Hessian-vector product of the averaged training objective at the current
/// parameters: (1/N) sum_z d2 loss(z) . v, plus `damping * v`.
pub fn hvp<M: RecModel + Sync>(model: &M, ds: &Dataset, v: &[f64], damping: f64) -> Vec<f64> {
    hvp_samples(model, &model.training_samples(ds), v, damping)
}

/// [`hvp`] over a prebuilt sample list (the list must be the model's full
/// decomposition for the 1/N weighting to mean what it says).
pub fn hvp_samples<M: RecModel + Sync>(
    model: &M,
    samples: &[TrainingSample],
    v: &[f64],
    damping: f64,
) -> Vec<f64> {
    debug_assert_eq!(v.len(), model.param_dim());
    let mut out = batch_data_hvp(model, samples, v);
    let ridge = 2.0 * model.l2_coeff() / samples.len().max(1) as f64;
    axpy(ridge + damping, v, &mut out);
    out
}

/// Mean data-term HVP over a batch; the caller adds ridge and damping.
fn batch_data_hvp<M: RecModel + Sync>(
    model: &M,
    batch: &[TrainingSample],
    v: &[f64],
) -> Vec<f64> {
    let mut out = parallel::chunked_sum(batch, model.param_dim(), |chunk, acc| {
        for z in chunk {
            model.add_sample_data_hvp(z, v, 1.0, acc);
        }
    });
    scale_vec(1.0 / batch.len().max(1) as f64, &mut out);
    out
}

/// Approximates `(H + damping I)^-1 v` by the LiSSA recursion
/// `r <- v + (I - (H_batch + damping I)/scale) r`, averaging `repeats`
/// independent runs and rescaling by `1/scale`.
pub fn inverse_hvp<M: RecModel + Sync>(
    model: &M,
    ds: &Dataset,
    v: &[f64],
    cfg: &LissaConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    inverse_hvp_samples(model, &model.training_samples(ds), v, cfg, seed)
}

/// [`inverse_hvp`] over a prebuilt full sample list.
pub fn inverse_hvp_samples<M: RecModel + Sync>(
    model: &M,
    samples: &[TrainingSample],
    v: &[f64],
    cfg: &LissaConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if v.len() != model.param_dim() {
        return Err(Error::InvalidConfig(format!(
            "inverse_hvp vector has length {}, model has {} parameters",
            v.len(),
            model.param_dim()
        )));
    }
    let v_norm = norm(v);
    if v_norm == 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    let guard = 1e6 * v_norm;
    let n = samples.len();
    let full_batch = cfg.batch >= n;
    // each sample's ridge share contributes this much curvature on its own
    let ridge = 2.0 * model.l2_coeff() / n.max(1) as f64;

    let mut acc = vec![0.0; v.len()];
    let mut batch: Vec<TrainingSample> = Vec::with_capacity(cfg.batch.min(n));
    for rep in 0..cfg.repeats {
        let mut rng = crate::rng::substream_n(seed, "lissa-batch", rep as u64);
        let mut r = v.to_vec();
        for _ in 0..cfg.depth {
            let hr = if full_batch {
                let mut h = batch_data_hvp(model, samples, &r);
                axpy(ridge + cfg.damping, &r, &mut h);
                h
            } else {
                batch.clear();
                for idx in rand::seq::index::sample(&mut rng, n, cfg.batch) {
                    batch.push(samples[idx].clone());
                }
                let mut h = batch_data_hvp(model, &batch, &r);
                axpy(ridge + cfg.damping, &r, &mut h);
                h
            };
            for ((ri, &vi), hi) in r.iter_mut().zip(v).zip(hr) {
                *ri = vi + *ri - hi / cfg.scale;
            }
            let r_norm = norm(&r);
            if !r_norm.is_finite() || r_norm > guard {
                return Err(Error::LissaDiverged);
            }
        }
        axpy(1.0, &r, &mut acc);
    }
    scale_vec(1.0 / (cfg.repeats as f64 * cfg.scale), &mut acc);
    Ok(acc)
}

/// First-order estimate of how upweighting `z_delta` shifts the target's
/// score: -grad f_test . (H + damping I)^-1 grad L(z_delta). Interpreted
/// per unit of sample weight (one injected sample weighs ~1/N).
pub fn score_influence<M: RecModel + Sync>(
    model: &M,
    ds: &Dataset,
    z_delta: &TrainingSample,
    target: &TargetSample,
    cfg: &LissaConfig,
    seed: u64,
) -> Result<f64> {
    let mut g = vec![0.0; model.param_dim()];
    model.add_sample_loss_grad(z_delta, 1.0, &mut g);
    let shift = inverse_hvp(model, ds, &g, cfg, seed)?;
    let mut f = vec![0.0; model.param_dim()];
    model.add_score_grad(target.user, &target.history, target.item, 1.0, &mut f);
    Ok(-dot(&f, &shift))
}

/// Ensemble-level influence of a set of injected user sequences: each member
/// decomposes the sequences into its own training samples, per-sample
/// influences are summed and averaged over targets, and members vote by
/// weight.
///
/// This is the direct (uncached) computation; [`InfluenceEstimator`] answers
/// the same question from precomputed caches.
pub fn sequence_influence<M: RecModel + Sync>(
    ens: &Ensemble<M>,
    ds: &Dataset,
    sequences: &[Vec<usize>],
    targets: &[TargetSample],
    cfg: &LissaConfig,
    seed: u64,
) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let inv_targets = 1.0 / targets.len() as f64;
    let mut total = 0.0;
    for (m, (member, &w)) in ens.members().iter().zip(ens.weights()).enumerate() {
        let samples = member.training_samples(ds);
        let member_seed = substream_seed(seed, &format!("influence-member.{m}"));
        let mut member_sum = 0.0;
        for (k, seq) in sequences.iter().enumerate() {
            let phantom = ds.n_users() + k;
            for z in member.injected_samples(phantom, seq, seed) {
                let mut g = vec![0.0; member.param_dim()];
                member.add_sample_loss_grad(&z, 1.0, &mut g);
                let shift = inverse_hvp_samples(member, &samples, &g, cfg, member_seed)?;
                for t in targets {
                    let mut f = vec![0.0; member.param_dim()];
                    member.add_score_grad(t.user, &t.history, t.item, 1.0, &mut f);
                    member_sum -= dot(&f, &shift) * inv_targets;
                }
            }
        }
        total += w * member_sum;
    }
    Ok(total / ens.weight_sum())
}

struct MemberCache {
    /// (H_m + damping I)^-1 applied to the averaged target score gradient.
    steer: Vec<f64>,
    /// Cached steer . params, for the ridge share of injected-sample grads.
    steer_dot_params: f64,
    l2_per_sample: f64,
}

/// Precomputed per-member caches that reduce one influence query to a sparse
/// gradient dot product. Built once per trained ensemble; read-only after.
pub struct InfluenceEstimator<'a, M> {
    ens: &'a Ensemble<M>,
    caches: Vec<MemberCache>,
    n_clean_users: usize,
    injection_seed: u64,
}

impl<'a, M: RecModel + Sync> InfluenceEstimator<'a, M> {
    pub fn build(
        ens: &'a Ensemble<M>,
        ds: &Dataset,
        targets: &[TargetSample],
        cfg: &LissaConfig,
        seed: u64,
    ) -> Result<InfluenceEstimator<'a, M>> {
        if targets.is_empty() {
            return Err(Error::EmptyTargets);
        }
        let inv_targets = 1.0 / targets.len() as f64;
        let mut caches = Vec::with_capacity(ens.n_members());
        for (m, member) in ens.members().iter().enumerate() {
            let samples = member.training_samples(ds);
            let mut gbar = vec![0.0; member.param_dim()];
            for t in targets {
                member.add_score_grad(t.user, &t.history, t.item, inv_targets, &mut gbar);
            }
            let member_seed = substream_seed(seed, &format!("influence-member.{m}"));
            let steer = inverse_hvp_samples(member, &samples, &gbar, cfg, member_seed)?;
            let steer_dot_params = dot(&steer, member.params());
            caches.push(MemberCache {
                steer,
                steer_dot_params,
                l2_per_sample: member.l2_per_sample(),
            });
        }
        Ok(InfluenceEstimator {
            ens,
            caches,
            n_clean_users: ds.n_users(),
            injection_seed: seed,
        })
    }

    /// Index space for injected (phantom) users: the k-th controlled user.
    pub fn phantom_user(&self, k: usize) -> usize {
        self.n_clean_users + k
    }

    /// Target-averaged influence of one decomposed sample under one member.
    /// Equals -grad L(z) . steer via symmetry of the damped Hessian.
    fn member_sample_influence(&self, m: usize, z: &TrainingSample) -> f64 {
        let cache = &self.caches[m];
        let member = &self.ens.members()[m];
        let data = member.sample_data_grad_dot(z, &cache.steer);
        let ridge = 2.0 * cache.l2_per_sample * cache.steer_dot_params;
        -(data + ridge)
    }

    /// Influence of the single new training sample created by extending a
    /// phantom user's sequence to `items` (whose last entry is the new step).
    pub fn step_influence(&self, phantom_user: usize, items: &[usize]) -> f64 {
        debug_assert!(!items.is_empty());
        let t = items.len() - 1;
        let inv_w = 1.0 / self.ens.weight_sum();
        let mut total = 0.0;
        for (m, (member, &w)) in self
            .ens
            .members()
            .iter()
            .zip(self.ens.weights())
            .enumerate()
        {
            if let Some(z) = member.injected_sample_at(phantom_user, items, t, self.injection_seed)
            {
                total += w * self.member_sample_influence(m, &z);
            }
        }
        total * inv_w
    }

    /// Cached counterpart of [`sequence_influence`] over whole sequences.
    pub fn sequences_influence(&self, sequences: &[Vec<usize>]) -> f64 {
        let inv_w = 1.0 / self.ens.weight_sum();
        let mut total = 0.0;
        for (m, (member, &w)) in self
            .ens
            .members()
            .iter()
            .zip(self.ens.weights())
            .enumerate()
        {
            for (k, seq) in sequences.iter().enumerate() {
                let phantom = self.phantom_user(k);
                for z in member.injected_samples(phantom, seq, self.injection_seed) {
                    total += w * self.member_sample_influence(m, &z);
                }
            }
        }
        total * inv_w
    }

}

/// The estimator is the production reward signal for the attack agent: each
/// step of a rollout is priced by the influence of the training sample it
/// would create.
impl<M: RecModel + Sync> crate::agent::RewardSource for InfluenceEstimator<'_, M> {
    fn step_reward(&self, user_slot: usize, items: &[usize]) -> f64 {
        self.step_influence(self.phantom_user(user_slot), items)
    }
}

/// One row of the influence audit dump.
#[derive(Debug, Clone, Serialize)]
pub struct AuditRow {
    pub sequence: usize,
    pub member: usize,
    pub target: usize,
    pub contribution: f64,
}

/// Per-(sequence, member, target) influence contributions via the direct
/// path, for CSV audit of what the cached estimator aggregates.
pub fn influence_audit<M: RecModel + Sync>(
    ens: &Ensemble<M>,
    ds: &Dataset,
    sequences: &[Vec<usize>],
    targets: &[TargetSample],
    cfg: &LissaConfig,
    seed: u64,
) -> Result<Vec<AuditRow>> {
    if targets.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let mut rows = Vec::new();
    for (m, member) in ens.members().iter().enumerate() {
        let samples = member.training_samples(ds);
        let member_seed = substream_seed(seed, &format!("influence-member.{m}"));
        for (k, seq) in sequences.iter().enumerate() {
            let phantom = ds.n_users() + k;
            for z in member.injected_samples(phantom, seq, seed) {
                let mut g = vec![0.0; member.param_dim()];
                member.add_sample_loss_grad(&z, 1.0, &mut g);
                let shift = inverse_hvp_samples(member, &samples, &g, cfg, member_seed)?;
                for (ti, t) in targets.iter().enumerate() {
                    let mut f = vec![0.0; member.param_dim()];
                    member.add_score_grad(t.user, &t.history, t.item, 1.0, &mut f);
                    rows.push(AuditRow {
                        sequence: k,
                        member: m,
                        target: ti,
                        contribution: -dot(&f, &shift),
                    });
                }
            }
        }
    }
    Ok(rows)
}
