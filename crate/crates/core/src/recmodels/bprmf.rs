//! Matrix-factorization ranking model trained with the pairwise BPR loss.
//!
//! Flat parameter layout: user embeddings (|U|*d), then item embeddings
//! (|V|*d), then item biases (|V|).

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{draw_negative, validation_hit_rate, ModelHyper, RecModel, TrainingSample};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, scale as scale_vec, sigmoid, softplus_neg};
use crate::rng::{substream, substream_n};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BprmfModel {
    n_users: usize,
    n_items: usize,
    dim: usize,
    l2_reg: f64,
    n_train_samples: usize,
    seed: u64,
    params: Vec<f64>,
}

impl BprmfModel {
    /// Fresh model with uniform init in [-0.1/sqrt(d), 0.1/sqrt(d)].
    pub fn init(n_users: usize, n_items: usize, hyper: &ModelHyper, seed: u64) -> BprmfModel {
        let dim = hyper.dim;
        let len = (n_users + n_items) * dim + n_items;
        let bound = 0.1 / (dim as f64).sqrt();
        let mut rng = substream(seed, "bprmf-init");
        let params = (0..len)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        BprmfModel {
            n_users,
            n_items,
            dim,
            l2_reg: hyper.l2_reg,
            n_train_samples: 0,
            seed,
            params,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn user_off(&self, u: usize) -> usize {
        u * self.dim
    }

    fn item_off(&self, i: usize) -> usize {
        (self.n_users + i) * self.dim
    }

    fn bias_off(&self, i: usize) -> usize {
        (self.n_users + self.n_items) * self.dim + i
    }

    fn user_row(&self, u: usize) -> &[f64] {
        &self.params[self.user_off(u)..self.user_off(u) + self.dim]
    }

    fn item_row(&self, i: usize) -> &[f64] {
        &self.params[self.item_off(i)..self.item_off(i) + self.dim]
    }

    /// Mean user embedding; the constant surrogate for phantom users.
    fn mean_user_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        if self.n_users == 0 {
            return mean;
        }
        for u in 0..self.n_users {
            let row = self.user_row(u);
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        let inv = 1.0 / self.n_users as f64;
        for m in mean.iter_mut() {
            *m *= inv;
        }
        mean
    }

    /// Effective user embedding: the trained row for real users, the mean for
    /// phantom (injected) users.
    fn effective_user(&self, u: usize) -> std::borrow::Cow<'_, [f64]> {
        if u < self.n_users {
            std::borrow::Cow::Borrowed(self.user_row(u))
        } else {
            std::borrow::Cow::Owned(self.mean_user_row())
        }
    }

    fn pair(z: &TrainingSample) -> (usize, usize, usize) {
        match z {
            TrainingSample::Pair { user, pos, neg } => (*user, *pos, *neg),
            TrainingSample::Seq { .. } => {
                unreachable!("BPRMF received a sequence sample; decompositions were mixed up")
            }
        }
    }

    /// Utility difference s = p_u . (q_i - q_j) + b_i - b_j.
    fn pair_utility(&self, user: usize, pos: usize, neg: usize) -> f64 {
        let pu = self.effective_user(user);
        let qi = self.item_row(pos);
        let qj = self.item_row(neg);
        let mut s = self.params[self.bias_off(pos)] - self.params[self.bias_off(neg)];
        for d in 0..self.dim {
            s += pu[d] * (qi[d] - qj[d]);
        }
        s
    }

    pub(crate) fn set_n_train_samples(&mut self, n: usize) {
        self.n_train_samples = n;
    }
}

impl RecModel for BprmfModel {
    fn n_users(&self) -> usize {
        self.n_users
    }

    fn n_items(&self) -> usize {
        self.n_items
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
        self.l2_reg
    }

    fn n_train_samples(&self) -> usize {
        self.n_train_samples
    }

    fn score(&self, user: usize, _history: &[usize], item: usize) -> f64 {
        let pu = self.effective_user(user);
        let qi = self.item_row(item);
        let mut s = self.params[self.bias_off(item)];
        for d in 0..self.dim {
            s += pu[d] * qi[d];
        }
        s
    }

    fn add_score_grad(&self, user: usize, _history: &[usize], item: usize, scale: f64, out: &mut [f64]) {
        let dim = self.dim;
        if user < self.n_users {
            let uo = self.user_off(user);
            let io = self.item_off(item);
            for d in 0..dim {
                out[uo + d] += scale * self.params[io + d];
            }
        }
        let pu = self.effective_user(user);
        let io = self.item_off(item);
        for d in 0..dim {
            out[io + d] += scale * pu[d];
        }
        out[self.bias_off(item)] += scale;
    }

    fn sample_data_loss(&self, z: &TrainingSample) -> f64 {
        let (u, i, j) = Self::pair(z);
        softplus_neg(self.pair_utility(u, i, j))
    }

    fn add_sample_data_grad(&self, z: &TrainingSample, scale: f64, out: &mut [f64]) {
        let (u, i, j) = Self::pair(z);
        let s = self.pair_utility(u, i, j);
        let g = scale * (sigmoid(s) - 1.0); // d softplus(-s) / ds
        let dim = self.dim;
        let io = self.item_off(i);
        let jo = self.item_off(j);
        let pu = self.effective_user(u);
        if u < self.n_users {
            let uo = self.user_off(u);
            for d in 0..dim {
                out[uo + d] += g * (self.params[io + d] - self.params[jo + d]);
            }
        }
        for d in 0..dim {
            out[io + d] += g * pu[d];
            out[jo + d] -= g * pu[d];
        }
        out[self.bias_off(i)] += g;
        out[self.bias_off(j)] -= g;
    }

    fn add_sample_data_hvp(&self, z: &TrainingSample, v: &[f64], scale: f64, out: &mut [f64]) {
        let (u, i, j) = Self::pair(z);
        let s = self.pair_utility(u, i, j);
        let sig = sigmoid(s);
        let curv = sig * (1.0 - sig); // second derivative of softplus(-s)
        let slope = sig - 1.0; // first derivative
        let dim = self.dim;
        let io = self.item_off(i);
        let jo = self.item_off(j);
        let bio = self.bias_off(i);
        let bjo = self.bias_off(j);
        let real = u < self.n_users;
        let uo = if real { self.user_off(u) } else { 0 };
        let pu = self.effective_user(u);

        // grad_s . v
        let mut sv = v[bio] - v[bjo];
        for d in 0..dim {
            sv += pu[d] * (v[io + d] - v[jo + d]);
            if real {
                sv += v[uo + d] * (self.params[io + d] - self.params[jo + d]);
            }
        }

        // curvature term: curv * sv * grad_s, plus slope * (hess_s . v)
        let a = scale * curv * sv;
        let b = scale * slope;
        for d in 0..dim {
            let qdiff = self.params[io + d] - self.params[jo + d];
            if real {
                out[uo + d] += a * qdiff + b * (v[io + d] - v[jo + d]);
            }
            let vu = if real { v[uo + d] } else { 0.0 };
            out[io + d] += a * pu[d] + b * vu;
            out[jo + d] -= a * pu[d] + b * vu;
        }
        out[bio] += a;
        out[bjo] -= a;
    }

    fn training_samples(&self, ds: &Dataset) -> Vec<TrainingSample> {
        let mut out = Vec::with_capacity(ds.total_train_events());
        for u in 0..ds.n_users() {
            let train = ds.train(u);
            let exclude: HashSet<usize> = train.iter().copied().collect();
            let mut rng = substream_n(self.seed, "bprmf-canonical-neg", u as u64);
            for &pos in train {
                if let Some(neg) = draw_negative(&mut rng, self.n_items, &exclude) {
                    out.push(TrainingSample::Pair { user: u, pos, neg });
                }
            }
        }
        out
    }

    fn injected_sample_at(
        &self,
        phantom_user: usize,
        items: &[usize],
        t: usize,
        seed: u64,
    ) -> Option<TrainingSample> {
        let pos = items[t];
        let exclude: HashSet<usize> = items[..=t].iter().copied().collect();
        let mut rng = crate::rng::substream_nn(seed, "injected-neg", phantom_user as u64, t as u64);
        draw_negative(&mut rng, self.n_items, &exclude).map(|neg| TrainingSample::Pair {
            user: phantom_user,
            pos,
            neg,
        })
    }

    fn sample_data_grad_dot(&self, z: &TrainingSample, with: &[f64]) -> f64 {
        let (u, i, j) = Self::pair(z);
        let s = self.pair_utility(u, i, j);
        let g = sigmoid(s) - 1.0;
        let dim = self.dim;
        let io = self.item_off(i);
        let jo = self.item_off(j);
        let pu = self.effective_user(u);
        let mut acc = with[self.bias_off(i)] - with[self.bias_off(j)];
        for d in 0..dim {
            acc += pu[d] * (with[io + d] - with[jo + d]);
            if u < self.n_users {
                let uo = self.user_off(u);
                acc += with[uo + d] * (self.params[io + d] - self.params[jo + d]);
            }
        }
        g * acc
    }
}

/// Trains a BPRMF model with seeded SGD over uniformly negative-sampled BPR
/// pairs. The L2 penalty is applied as an amortized end-of-epoch weight decay
/// equivalent to spreading the ridge gradient over the epoch.
pub fn train_bprmf(ds: &Dataset, hyper: &ModelHyper, seed: u64) -> Result<BprmfModel> {
    hyper.validate()?;
    let mut model = BprmfModel::init(ds.n_users(), ds.n_items(), hyper, seed);
    model.set_n_train_samples(ds.total_train_events());

    let base: Vec<(usize, usize)> = (0..ds.n_users())
        .flat_map(|u| ds.train(u).iter().map(move |&pos| (u, pos)))
        .collect();
    if base.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let exclude: Vec<HashSet<usize>> = (0..ds.n_users())
        .map(|u| ds.train(u).iter().copied().collect())
        .collect();

    let mut order: Vec<usize> = (0..base.len()).collect();
    let mut rng = substream(seed, "bprmf-train");
    let lr = hyper.learning_rate;
    let decay = 1.0 - lr * 2.0 * hyper.l2_reg;
    let log_every = (hyper.epochs / 10).max(1);

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let (u, pos) = base[idx];
            for _ in 0..hyper.neg_samples {
                let Some(neg) = draw_negative(&mut rng, model.n_items, &exclude[u]) else {
                    continue;
                };
                let s = model.pair_utility(u, pos, neg);
                epoch_loss += softplus_neg(s);
                let g = sigmoid(s) - 1.0;
                let dim = model.dim;
                let uo = model.user_off(u);
                let io = model.item_off(pos);
                let jo = model.item_off(neg);
                for d in 0..dim {
                    let pu_d = model.params[uo + d];
                    let qdiff = model.params[io + d] - model.params[jo + d];
                    model.params[uo + d] -= lr * g * qdiff;
                    model.params[io + d] -= lr * g * pu_d;
                    model.params[jo + d] += lr * g * pu_d;
                }
                let bio = model.bias_off(pos);
                let bjo = model.bias_off(neg);
                model.params[bio] -= lr * g;
                model.params[bjo] += lr * g;
            }
        }
        if hyper.l2_reg > 0.0 {
            scale_vec(decay, &mut model.params);
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if log::log_enabled!(log::Level::Debug) && (epoch % log_every == 0 || epoch + 1 == hyper.epochs)
        {
            log::debug!(
                "bprmf epoch {epoch}: loss {epoch_loss:.4}, val hr@10 {:.4}",
                validation_hit_rate(&model, ds, 10)
            );
        }
    }
    ensure_finite(&model.params, "bprmf parameters")?;
    Ok(model)
}
