//! The attack agent's training loop: seeded episode rollouts against the
//! grouped action space, reward-balanced replay updates, and a periodically
//! synchronized target network.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::actionspace::{sample_item, ItemGroups};
use crate::error::{Error, Result};
use crate::rng::{substream_n, substream_seed};

use super::qnet::QNetwork;
use super::replay::{ReplayBuffer, Transition};

/// Gradient-norm clip applied to every batch update.
const GRAD_CLIP: f64 = 5.0;
/// Exploration kept during non-greedy sequence generation.
const GEN_EPSILON: f64 = 0.05;

/// Anything that can price the training sample created by appending one more
/// item to a controlled user's sequence. The influence estimator is the real
/// implementation; tests substitute contrived environments.
pub trait RewardSource {
    /// Value of the newest sample in `items` (the last element, with the
    /// prefix as its history) for controlled user `user_slot`.
    fn step_reward(&self, user_slot: usize, items: &[usize]) -> f64;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_eps_start")]
    pub eps_start: f64,
    #[serde(default = "default_eps_end")]
    pub eps_end: f64,
    #[serde(default = "default_sync_period")]
    pub sync_period: usize,
    #[serde(default = "default_replay_capacity")]
    pub replay_capacity: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_m_actions")]
    pub m_actions: usize,
    #[serde(default = "default_episodes_per_epoch")]
    pub episodes_per_epoch: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_gamma() -> f64 {
    0.9
}
fn default_eps_start() -> f64 {
    1.0
}
fn default_eps_end() -> f64 {
    0.05
}
fn default_sync_period() -> usize {
    10
}
fn default_replay_capacity() -> usize {
    10_000
}
fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    0.05
}
fn default_epochs() -> usize {
    200
}
fn default_m_actions() -> usize {
    15
}
fn default_episodes_per_epoch() -> usize {
    4
}
fn default_embed_dim() -> usize {
    16
}
fn default_hidden_dim() -> usize {
    32
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: default_gamma(),
            eps_start: default_eps_start(),
            eps_end: default_eps_end(),
            sync_period: default_sync_period(),
            replay_capacity: default_replay_capacity(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            m_actions: default_m_actions(),
            episodes_per_epoch: default_episodes_per_epoch(),
            embed_dim: default_embed_dim(),
            hidden_dim: default_hidden_dim(),
            seed: 0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be in [0,1], got {}",
                self.gamma
            )));
        }
        for (name, eps) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0,1], got {eps}")));
            }
        }
        if self.eps_end > self.eps_start {
            return Err(Error::InvalidConfig("eps_end must not exceed eps_start".into()));
        }
        if self.sync_period == 0 {
            return Err(Error::InvalidConfig("sync_period must be >= 1".into()));
        }
        if self.epochs == 0
            || self.m_actions == 0
            || self.episodes_per_epoch == 0
            || self.batch_size == 0
        {
            return Err(Error::InvalidConfig(
                "epochs, m_actions, episodes_per_epoch, and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Linear exploration decay: exactly `eps_start` at epoch 0 and exactly
    /// `eps_end` at the final epoch.
    pub fn epsilon_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.eps_end;
        }
        let frac = epoch as f64 / (self.epochs - 1) as f64;
        (1.0 - frac) * self.eps_start + frac * self.eps_end
    }
}

/// ε-greedy choice over the network's action values; greedy ties break to the
/// lowest group id.
pub fn select_action<R: Rng>(net: &QNetwork, state: &[usize], epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        return rng.random_range(0..net.n_actions);
    }
    let q = net.q_forward(state);
    let mut best = 0;
    for (a, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = a;
        }
    }
    best
}

/// One record per training epoch, written out as CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub epsilon: f64,
    pub mean_reward: f64,
    pub td_loss: f64,
}

pub fn write_epoch_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let wrap = |e: csv::Error| Error::io(path.display().to_string(), std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    for row in log {
        w.serialize(row).map_err(wrap)?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Trained policy network plus its last synchronized target and the log.
#[derive(Debug)]
pub struct DqnOutcome {
    pub net: QNetwork,
    pub target: QNetwork,
    pub log: Vec<EpochLog>,
}

/// One temporal-difference batch step. Targets come from the frozen `target`
/// network (max over next-state values; terminal steps use the reward alone);
/// the mean gradient is norm-clipped before the SGD step. Returns the mean
/// squared TD error.
pub(crate) fn dqn_update(
    policy: &mut QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
    lr: f64,
) -> f64 {
    let mut grad = vec![0.0; policy.params.len()];
    let mut loss_sum = 0.0;
    for t in batch {
        let mut td = t.reward;
        if !t.terminal {
            let next_best = target
                .q_forward(&t.next_state)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            td += gamma * next_best;
        }
        loss_sum += policy.q_backward(&t.state, t.action, td, &mut grad);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > GRAD_CLIP {
        let scale = GRAD_CLIP / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    for (p, g) in policy.params.iter_mut().zip(&grad) {
        *p -= lr * g;
    }
    loss_sum * inv
}

/// Trains the agent against `rewards` over the grouped action space.
///
/// Each epoch rolls out `episodes_per_epoch` episodes (one simulated
/// controlled user each, horizon `m_actions`) under the decayed ε, pricing
/// every step with the reward source, then applies one balanced-batch update
/// per episode. The target network re-synchronizes every `sync_period`
/// epochs.
pub fn train_dqn<S: RewardSource>(
    rewards: &S,
    groups: &ItemGroups,
    cfg: &DqnConfig,
) -> Result<DqnOutcome> {
    cfg.validate()?;
    let mut policy = QNetwork::new(
        groups.n_groups(),
        cfg.embed_dim,
        cfg.hidden_dim,
        substream_seed(cfg.seed, "dqn-init"),
    )?;
    let mut target = policy.clone();
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let epsilon = cfg.epsilon_at(epoch);
        let mut rollout_rng = substream_n(cfg.seed, "dqn-rollout", epoch as u64);
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        for slot in 0..cfg.episodes_per_epoch {
            let mut state: Vec<usize> = Vec::new();
            let mut items: Vec<usize> = Vec::new();
            let mut forbidden: HashSet<usize> = HashSet::new();
            for t in 0..cfg.m_actions {
                let action = select_action(&policy, &state, epsilon, &mut rollout_rng);
                let draw = sample_item(groups, action, &forbidden, &mut rollout_rng)?;
                forbidden.insert(draw.item);
                items.push(draw.item);
                let reward = rewards.step_reward(slot, &items);
                reward_sum += reward;
                reward_count += 1;
                let mut next_state = state.clone();
                next_state.push(action);
                replay.push(Transition {
                    state,
                    action,
                    reward,
                    next_state: next_state.clone(),
                    terminal: t + 1 == cfg.m_actions,
                });
                state = next_state;
            }
        }

        let mut update_rng = substream_n(cfg.seed, "dqn-update", epoch as u64);
        let mut loss_sum = 0.0;
        for _ in 0..cfg.episodes_per_epoch {
            let batch = replay.sample_balanced(cfg.batch_size, &mut update_rng);
            let loss = dqn_update(&mut policy, &target, &batch, cfg.gamma, cfg.learning_rate);
            if !loss.is_finite() {
                return Err(Error::NonFiniteTdLoss { epoch });
            }
            loss_sum += loss;
        }
        if (epoch + 1) % cfg.sync_period == 0 {
            target = policy.clone();
        }
        log.push(EpochLog {
            epoch,
            epsilon,
            mean_reward: reward_sum / reward_count as f64,
            td_loss: loss_sum / cfg.episodes_per_epoch as f64,
        });
        if epoch % 20 == 0 || epoch + 1 == cfg.epochs {
            log::debug!(
                "dqn epoch {epoch}: eps {epsilon:.3}, mean reward {:.5}, td loss {:.5}",
                log[epoch].mean_reward,
                log[epoch].td_loss
            );
        }
    }
    policy.check_finite()?;
    Ok(DqnOutcome {
        net: policy,
        target,
        log,
    })
}

/// One controlled user's generated behavior: the concrete items and the group
/// each item was actually drawn from (difference from the chosen action marks
/// an exhaustion fallback).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoisonSequence {
    pub items: Vec<usize>,
    pub trace: Vec<usize>,
}

/// Rolls out the trained policy once per controlled user. `greedy` follows
/// the argmax policy; otherwise a small constant exploration remains. Items
/// are sampled from the selected groups without within-user repetition.
pub fn generate_poison_sequences(
    net: &QNetwork,
    groups: &ItemGroups,
    n_users: usize,
    m_actions: usize,
    seed: u64,
    greedy: bool,
) -> Result<Vec<PoisonSequence>> {
    if m_actions == 0 {
        return Err(Error::InvalidConfig("m_actions must be >= 1".into()));
    }
    if net.n_actions != groups.n_groups() {
        return Err(Error::InvalidConfig(format!(
            "network covers {} groups, action space has {}",
            net.n_actions,
            groups.n_groups()
        )));
    }
    let epsilon = if greedy { 0.0 } else { GEN_EPSILON };
    let mut out = Vec::with_capacity(n_users);
    for user in 0..n_users {
        let mut rng = substream_n(seed, "poison-user", user as u64);
        let mut state: Vec<usize> = Vec::new();
        let mut items = Vec::with_capacity(m_actions);
        let mut trace = Vec::with_capacity(m_actions);
        let mut forbidden: HashSet<usize> = HashSet::new();
        for _ in 0..m_actions {
            let action = select_action(net, &state, epsilon, &mut rng);
            let draw = sample_item(groups, action, &forbidden, &mut rng)?;
            forbidden.insert(draw.item);
            items.push(draw.item);
            trace.push(draw.group);
            state.push(action);
        }
        out.push(PoisonSequence { items, trace });
    }
    Ok(out)
}
