//! Poisonforge core: a desk-scale laboratory for data-poisoning attacks on
//! next-item recommenders.
//!
//! The pipeline trains small victim recommenders, estimates how a candidate
//! injected interaction would shift target-item scores via influence
//! functions, trains a reinforcement-learning agent over item groups to
//! compose injected profiles, and measures the resulting change in
//! recommendation display rates under a fixed injection budget.

pub mod actionspace;
pub mod agent;
pub mod artifact;
pub mod attacks;
pub mod data;
pub mod diag;
pub mod error;
pub mod evalharness;
pub mod linalg;
pub mod influence;
pub mod parallel;
pub mod recmodels;
pub mod rng;
pub mod simulator;
pub mod synth;

pub use error::{Error, Result};
