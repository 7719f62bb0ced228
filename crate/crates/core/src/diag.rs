//! Small models with closed-form structure, used to validate the gradient,
//! curvature, and influence machinery against hand-computable answers.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::recmodels::{RecModel, TrainingSample};

/// Loss 1/2 * sum_k a_k * theta_k^2 replicated over `n_copies` identical
/// samples, so the averaged Hessian is exactly diag(a).
#[derive(Debug, Clone)]
pub struct QuadraticDiagModel {
    curvature: Vec<f64>,
    n_copies: usize,
    params: Vec<f64>,
}

impl QuadraticDiagModel {
    pub fn new(curvature: Vec<f64>, n_copies: usize) -> QuadraticDiagModel {
        assert!(n_copies > 0, "need at least one sample copy");
        let params = vec![0.0; curvature.len()];
        QuadraticDiagModel {
            curvature,
            n_copies,
            params,
        }
    }

    fn dummy_sample() -> TrainingSample {
        TrainingSample::Pair {
            user: 0,
            pos: 0,
            neg: 0,
        }
    }
}

impl RecModel for QuadraticDiagModel {
    fn n_users(&self) -> usize {
        1
    }

    fn n_items(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn l2_coeff(&self) -> f64 {
        0.0
    }

    fn n_train_samples(&self) -> usize {
        self.n_copies
    }

    fn score(&self, _user: usize, _history: &[usize], _item: usize) -> f64 {
        self.params.iter().sum()
    }

    fn add_score_grad(
        &self,
        _user: usize,
        _history: &[usize],
        _item: usize,
        scale: f64,
        out: &mut [f64],
    ) {
        for o in out.iter_mut() {
            *o += scale;
        }
    }

    fn sample_data_loss(&self, _z: &TrainingSample) -> f64 {
        0.5 * self
            .curvature
            .iter()
            .zip(&self.params)
            .map(|(a, t)| a * t * t)
            .sum::<f64>()
    }

    fn add_sample_data_grad(&self, _z: &TrainingSample, scale: f64, out: &mut [f64]) {
        for ((o, a), t) in out.iter_mut().zip(&self.curvature).zip(&self.params) {
            *o += scale * a * t;
        }
    }

    fn add_sample_data_hvp(&self, _z: &TrainingSample, v: &[f64], scale: f64, out: &mut [f64]) {
        for ((o, a), vp) in out.iter_mut().zip(&self.curvature).zip(v) {
            *o += scale * a * vp;
        }
    }

    fn training_samples(&self, _ds: &Dataset) -> Vec<TrainingSample> {
        vec![Self::dummy_sample(); self.n_copies]
    }

    fn injected_sample_at(
        &self,
        _phantom_user: usize,
        _items: &[usize],
        _t: usize,
        _seed: u64,
    ) -> Option<TrainingSample> {
        Some(Self::dummy_sample())
    }
}

/// One-parameter least-squares fit: each sample k contributes
/// (theta - value_k)^2, so the fitted parameter is the sample mean and every
/// influence quantity has a short pencil-and-paper answer.
#[derive(Debug, Clone)]
pub struct ScalarFitModel {
    values: Vec<f64>,
    extra: Vec<f64>,
    params: Vec<f64>,
}

impl ScalarFitModel {
    /// `values` are the training observations; `extra` holds candidate
    /// injected observations addressed by index past the training ones.
    pub fn new(values: Vec<f64>, extra: Vec<f64>) -> ScalarFitModel {
        assert!(!values.is_empty(), "need at least one observation");
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        ScalarFitModel {
            values,
            extra,
            params: vec![mean],
        }
    }

    /// Sample whose observation is `extra[k]`.
    pub fn extra_sample(&self, k: usize) -> TrainingSample {
        TrainingSample::Pair {
            user: 0,
            pos: self.values.len() + k,
            neg: 0,
        }
    }

    fn value_at(&self, pos: usize) -> f64 {
        if pos < self.values.len() {
            self.values[pos]
        } else {
            self.extra[pos - self.values.len()]
        }
    }

    fn pos_of(z: &TrainingSample) -> usize {
        match z {
            TrainingSample::Pair { pos, .. } => *pos,
            TrainingSample::Seq { next, .. } => *next,
        }
    }
}

impl RecModel for ScalarFitModel {
    fn n_users(&self) -> usize {
        1
    }

    fn n_items(&self) -> usize {
        self.values.len() + self.extra.len()
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn l2_coeff(&self) -> f64 {
        0.0
    }

    fn n_train_samples(&self) -> usize {
        self.values.len()
    }

    fn score(&self, _user: usize, _history: &[usize], _item: usize) -> f64 {
        self.params[0]
    }

    fn add_score_grad(
        &self,
        _user: usize,
        _history: &[usize],
        _item: usize,
        scale: f64,
        out: &mut [f64],
    ) {
        out[0] += scale;
    }

    fn sample_data_loss(&self, z: &TrainingSample) -> f64 {
        let r = self.params[0] - self.value_at(Self::pos_of(z));
        r * r
    }

    fn add_sample_data_grad(&self, z: &TrainingSample, scale: f64, out: &mut [f64]) {
        out[0] += scale * 2.0 * (self.params[0] - self.value_at(Self::pos_of(z)));
    }

    fn add_sample_data_hvp(&self, _z: &TrainingSample, v: &[f64], scale: f64, out: &mut [f64]) {
        out[0] += scale * 2.0 * v[0];
    }

    fn training_samples(&self, _ds: &Dataset) -> Vec<TrainingSample> {
        (0..self.values.len())
            .map(|pos| TrainingSample::Pair {
                user: 0,
                pos,
                neg: 0,
            })
            .collect()
    }

    fn injected_sample_at(
        &self,
        phantom_user: usize,
        items: &[usize],
        t: usize,
        _seed: u64,
    ) -> Option<TrainingSample> {
        Some(TrainingSample::Pair {
            user: phantom_user,
            pos: items[t],
            neg: 0,
        })
    }
}

/// Ranking stub with a fixed user-by-item score table and no trainable
/// behavior; exercises pure ranking and aggregation code paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedScoreModel {
    n_users: usize,
    n_items: usize,
    scores: Vec<f64>,
}

impl FixedScoreModel {
    /// `scores` is row-major user-by-item.
    pub fn new(n_users: usize, n_items: usize, scores: Vec<f64>) -> FixedScoreModel {
        assert_eq!(scores.len(), n_users * n_items);
        FixedScoreModel {
            n_users,
            n_items,
            scores,
        }
    }

    /// One inner vec of item scores per user; all rows must share a length.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> FixedScoreModel {
        let n_users = rows.len();
        let n_items = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_items));
        FixedScoreModel::new(n_users, n_items, rows.into_iter().flatten().collect())
    }
}

impl RecModel for FixedScoreModel {
    fn n_users(&self) -> usize {
        self.n_users
    }

    fn n_items(&self) -> usize {
        self.n_items
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn l2_coeff(&self) -> f64 {
        0.0
    }

    fn n_train_samples(&self) -> usize {
        0
    }

    fn score(&self, user: usize, _history: &[usize], item: usize) -> f64 {
        let row = user.min(self.n_users - 1);
        self.scores[row * self.n_items + item]
    }

    fn add_score_grad(
        &self,
        _user: usize,
        _history: &[usize],
        _item: usize,
        _scale: f64,
        _out: &mut [f64],
    ) {
    }

    fn sample_data_loss(&self, _z: &TrainingSample) -> f64 {
        0.0
    }

    fn add_sample_data_grad(&self, _z: &TrainingSample, _scale: f64, _out: &mut [f64]) {}

    fn add_sample_data_hvp(&self, _z: &TrainingSample, _v: &[f64], _scale: f64, _out: &mut [f64]) {}

    fn training_samples(&self, _ds: &Dataset) -> Vec<TrainingSample> {
        Vec::new()
    }

    fn injected_sample_at(
        &self,
        _phantom_user: usize,
        _items: &[usize],
        _t: usize,
        _seed: u64,
    ) -> Option<TrainingSample> {
        None
    }
}
