//! The reinforcement-learning attack agent: a recurrent Q-network over
//! group-level actions, experience replay, and the seeded training loop that
//! turns influence rewards into a poisoning policy.

mod qnet;
mod replay;
mod train;

pub use qnet::QNetwork;
pub use replay::{ReplayBuffer, Transition};
pub use train::{
    generate_poison_sequences, select_action, train_dqn, write_epoch_log_csv, DqnConfig,
    DqnOutcome, EpochLog, PoisonSequence, RewardSource,
};
