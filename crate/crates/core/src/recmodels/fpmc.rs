//! Factorized personalized Markov chain model for next-item ranking.
//!
//! Score(u, history, i) couples a user-item term with a transition term from
//! the last history item: <VUI_u, VIU_i> + <VIL_i, VLI_l>. Training uses
//! sequence BPR over prefix decompositions with sampled negatives.
//!
//! Flat parameter layout: VUI (|U|*d), VIU (|V|*d), VIL (|V|*d), VLI (|V|*d).

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{draw_negative, validation_hit_rate, ModelHyper, RecModel, TrainingSample};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, scale as scale_vec, sigmoid, softplus_neg};
use crate::rng::{substream, substream_n, substream_nn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpmcModel {
    n_users: usize,
    n_items: usize,
    dim: usize,
    l2_reg: f64,
    n_train_samples: usize,
    seed: u64,
    params: Vec<f64>,
}

impl FpmcModel {
    /// Fresh model with uniform init in [-0.1/sqrt(d), 0.1/sqrt(d)].
    pub fn init(n_users: usize, n_items: usize, hyper: &ModelHyper, seed: u64) -> FpmcModel {
        let dim = hyper.dim;
        let len = (n_users + 3 * n_items) * dim;
        let bound = 0.1 / (dim as f64).sqrt();
        let mut rng = substream(seed, "fpmc-init");
        let params = (0..len)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        FpmcModel {
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

    fn vui_off(&self, u: usize) -> usize {
        u * self.dim
    }

    fn viu_off(&self, i: usize) -> usize {
        (self.n_users + i) * self.dim
    }

    fn vil_off(&self, i: usize) -> usize {
        (self.n_users + self.n_items + i) * self.dim
    }

    fn vli_off(&self, l: usize) -> usize {
        (self.n_users + 2 * self.n_items + l) * self.dim
    }

    fn row(&self, off: usize) -> &[f64] {
        &self.params[off..off + self.dim]
    }

    fn mean_user_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        if self.n_users == 0 {
            return mean;
        }
        for u in 0..self.n_users {
            let row = self.row(self.vui_off(u));
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

    fn effective_user(&self, u: usize) -> std::borrow::Cow<'_, [f64]> {
        if u < self.n_users {
            std::borrow::Cow::Borrowed(self.row(self.vui_off(u)))
        } else {
            std::borrow::Cow::Owned(self.mean_user_row())
        }
    }

    fn seq_parts(z: &TrainingSample) -> (usize, Option<usize>, usize, usize) {
        match z {
            TrainingSample::Seq {
                user,
                prefix,
                next,
                neg,
            } => (*user, prefix.last().copied(), *next, *neg),
            TrainingSample::Pair { .. } => {
                unreachable!("FPMC received a pair sample; decompositions were mixed up")
            }
        }
    }

    /// Utility difference of the sequence-BPR sample.
    fn seq_utility(&self, user: usize, last: Option<usize>, next: usize, neg: usize) -> f64 {
        let vu = self.effective_user(user);
        let viu_i = self.row(self.viu_off(next));
        let viu_j = self.row(self.viu_off(neg));
        let mut s = 0.0;
        for d in 0..self.dim {
            s += vu[d] * (viu_i[d] - viu_j[d]);
        }
        if let Some(l) = last {
            let vli = self.row(self.vli_off(l));
            let vil_i = self.row(self.vil_off(next));
            let vil_j = self.row(self.vil_off(neg));
            for d in 0..self.dim {
                s += vli[d] * (vil_i[d] - vil_j[d]);
            }
        }
        s
    }

    pub(crate) fn set_n_train_samples(&mut self, n: usize) {
        self.n_train_samples = n;
    }
}

/// Number of prefix-decomposed samples a dataset yields for FPMC.
pub(crate) fn fpmc_sample_count(ds: &Dataset) -> usize {
    (0..ds.n_users())
        .map(|u| ds.train(u).len().saturating_sub(1))
        .sum()
}

impl RecModel for FpmcModel {
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

    fn score(&self, user: usize, history: &[usize], item: usize) -> f64 {
        let vu = self.effective_user(user);
        let viu = self.row(self.viu_off(item));
        let mut s = 0.0;
        for d in 0..self.dim {
            s += vu[d] * viu[d];
        }
        if let Some(&l) = history.last() {
            let vil = self.row(self.vil_off(item));
            let vli = self.row(self.vli_off(l));
            for d in 0..self.dim {
                s += vil[d] * vli[d];
            }
        }
        s
    }

    fn add_score_grad(&self, user: usize, history: &[usize], item: usize, scale: f64, out: &mut [f64]) {
        let dim = self.dim;
        let io = self.viu_off(item);
        if user < self.n_users {
            let uo = self.vui_off(user);
            for d in 0..dim {
                out[uo + d] += scale * self.params[io + d];
            }
        }
        let vu = self.effective_user(user);
        for d in 0..dim {
            out[io + d] += scale * vu[d];
        }
        if let Some(&l) = history.last() {
            let vil = self.vil_off(item);
            let vli = self.vli_off(l);
            for d in 0..dim {
                out[vil + d] += scale * self.params[vli + d];
                out[vli + d] += scale * self.params[vil + d];
            }
        }
    }

    fn sample_data_loss(&self, z: &TrainingSample) -> f64 {
        let (u, l, i, j) = Self::seq_parts(z);
        softplus_neg(self.seq_utility(u, l, i, j))
    }

    fn add_sample_data_grad(&self, z: &TrainingSample, scale: f64, out: &mut [f64]) {
        let (u, l, i, j) = Self::seq_parts(z);
        let s = self.seq_utility(u, l, i, j);
        let g = scale * (sigmoid(s) - 1.0);
        let dim = self.dim;
        let io = self.viu_off(i);
        let jo = self.viu_off(j);
        let vu = self.effective_user(u);
        if u < self.n_users {
            let uo = self.vui_off(u);
            for d in 0..dim {
                out[uo + d] += g * (self.params[io + d] - self.params[jo + d]);
            }
        }
        for d in 0..dim {
            out[io + d] += g * vu[d];
            out[jo + d] -= g * vu[d];
        }
        if let Some(l) = l {
            let vil_i = self.vil_off(i);
            let vil_j = self.vil_off(j);
            let vli_l = self.vli_off(l);
            for d in 0..dim {
                out[vil_i + d] += g * self.params[vli_l + d];
                out[vil_j + d] -= g * self.params[vli_l + d];
                out[vli_l + d] += g * (self.params[vil_i + d] - self.params[vil_j + d]);
            }
        }
    }

    fn add_sample_data_hvp(&self, z: &TrainingSample, v: &[f64], scale: f64, out: &mut [f64]) {
        let (u, l, i, j) = Self::seq_parts(z);
        let s = self.seq_utility(u, l, i, j);
        let sig = sigmoid(s);
        let curv = sig * (1.0 - sig);
        let slope = sig - 1.0;
        let dim = self.dim;
        let io = self.viu_off(i);
        let jo = self.viu_off(j);
        let real = u < self.n_users;
        let uo = if real { self.vui_off(u) } else { 0 };
        let vu = self.effective_user(u);

        let mut sv = 0.0;
        for d in 0..dim {
            sv += vu[d] * (v[io + d] - v[jo + d]);
            if real {
                sv += v[uo + d] * (self.params[io + d] - self.params[jo + d]);
            }
        }
        if let Some(l) = l {
            let vil_i = self.vil_off(i);
            let vil_j = self.vil_off(j);
            let vli_l = self.vli_off(l);
            for d in 0..dim {
                sv += v[vli_l + d] * (self.params[vil_i + d] - self.params[vil_j + d]);
                sv += self.params[vli_l + d] * (v[vil_i + d] - v[vil_j + d]);
            }
        }

        let a = scale * curv * sv;
        let b = scale * slope;
        for d in 0..dim {
            let viu_diff = self.params[io + d] - self.params[jo + d];
            if real {
                out[uo + d] += a * viu_diff + b * (v[io + d] - v[jo + d]);
            }
            let vu_v = if real { v[uo + d] } else { 0.0 };
            out[io + d] += a * vu[d] + b * vu_v;
            out[jo + d] -= a * vu[d] + b * vu_v;
        }
        if let Some(l) = l {
            let vil_i = self.vil_off(i);
            let vil_j = self.vil_off(j);
            let vli_l = self.vli_off(l);
            for d in 0..dim {
                let vil_diff = self.params[vil_i + d] - self.params[vil_j + d];
                out[vil_i + d] += a * self.params[vli_l + d] + b * v[vli_l + d];
                out[vil_j + d] -= a * self.params[vli_l + d] + b * v[vli_l + d];
                out[vli_l + d] += a * vil_diff + b * (v[vil_i + d] - v[vil_j + d]);
            }
        }
    }

    fn training_samples(&self, ds: &Dataset) -> Vec<TrainingSample> {
        let mut out = Vec::with_capacity(fpmc_sample_count(ds));
        for u in 0..ds.n_users() {
            let train = ds.train(u);
            let exclude: HashSet<usize> = train.iter().copied().collect();
            let mut rng = substream_n(self.seed, "fpmc-canonical-neg", u as u64);
            for t in 1..train.len() {
                if let Some(neg) = draw_negative(&mut rng, self.n_items, &exclude) {
                    out.push(TrainingSample::Seq {
                        user: u,
                        prefix: train[..t].to_vec(),
                        next: train[t],
                        neg,
                    });
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
        if t == 0 {
            return None; // the first event has no transition context
        }
        let exclude: HashSet<usize> = items[..=t].iter().copied().collect();
        let mut rng = substream_nn(seed, "injected-neg", phantom_user as u64, t as u64);
        draw_negative(&mut rng, self.n_items, &exclude).map(|neg| TrainingSample::Seq {
            user: phantom_user,
            prefix: items[..t].to_vec(),
            next: items[t],
            neg,
        })
    }

    fn sample_data_grad_dot(&self, z: &TrainingSample, with: &[f64]) -> f64 {
        let (u, l, i, j) = Self::seq_parts(z);
        let s = self.seq_utility(u, l, i, j);
        let g = sigmoid(s) - 1.0;
        let dim = self.dim;
        let io = self.viu_off(i);
        let jo = self.viu_off(j);
        let vu = self.effective_user(u);
        let mut acc = 0.0;
        for d in 0..dim {
            acc += vu[d] * (with[io + d] - with[jo + d]);
            if u < self.n_users {
                let uo = self.vui_off(u);
                acc += with[uo + d] * (self.params[io + d] - self.params[jo + d]);
            }
        }
        if let Some(l) = l {
            let vil_i = self.vil_off(i);
            let vil_j = self.vil_off(j);
            let vli_l = self.vli_off(l);
            for d in 0..dim {
                acc += with[vli_l + d] * (self.params[vil_i + d] - self.params[vil_j + d]);
                acc += self.params[vli_l + d] * (with[vil_i + d] - with[vil_j + d]);
            }
        }
        g * acc
    }
}

/// Trains an FPMC model with seeded SGD over prefix-decomposed sequence-BPR
/// samples; L2 applied as amortized end-of-epoch weight decay.
pub fn train_fpmc(ds: &Dataset, hyper: &ModelHyper, seed: u64) -> Result<FpmcModel> {
    hyper.validate()?;
    let mut model = FpmcModel::init(ds.n_users(), ds.n_items(), hyper, seed);
    model.set_n_train_samples(fpmc_sample_count(ds));

    let base: Vec<(usize, usize)> = (0..ds.n_users())
        .flat_map(|u| (1..ds.train(u).len()).map(move |t| (u, t)))
        .collect();
    if base.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let exclude: Vec<HashSet<usize>> = (0..ds.n_users())
        .map(|u| ds.train(u).iter().copied().collect())
        .collect();

    let mut order: Vec<usize> = (0..base.len()).collect();
    let mut rng = substream(seed, "fpmc-train");
    let lr = hyper.learning_rate;
    let decay = 1.0 - lr * 2.0 * hyper.l2_reg;
    let log_every = (hyper.epochs / 10).max(1);

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let (u, t) = base[idx];
            let train = ds.train(u);
            let last = train[t - 1];
            let next = train[t];
            for _ in 0..hyper.neg_samples {
                let Some(neg) = draw_negative(&mut rng, model.n_items, &exclude[u]) else {
                    continue;
                };
                let s = model.seq_utility(u, Some(last), next, neg);
                epoch_loss += softplus_neg(s);
                let g = sigmoid(s) - 1.0;
                let dim = model.dim;
                let uo = model.vui_off(u);
                let io = model.viu_off(next);
                let jo = model.viu_off(neg);
                let vil_i = model.vil_off(next);
                let vil_j = model.vil_off(neg);
                let vli_l = model.vli_off(last);
                for d in 0..dim {
                    let old_vu = model.params[uo + d];
                    let old_viu_i = model.params[io + d];
                    let old_viu_j = model.params[jo + d];
                    let old_vil_i = model.params[vil_i + d];
                    let old_vil_j = model.params[vil_j + d];
                    let old_vli = model.params[vli_l + d];
                    model.params[uo + d] = old_vu - lr * g * (old_viu_i - old_viu_j);
                    model.params[io + d] = old_viu_i - lr * g * old_vu;
                    model.params[jo + d] = old_viu_j + lr * g * old_vu;
                    model.params[vil_i + d] = old_vil_i - lr * g * old_vli;
                    model.params[vil_j + d] = old_vil_j + lr * g * old_vli;
                    model.params[vli_l + d] = old_vli - lr * g * (old_vil_i - old_vil_j);
                }
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
                "fpmc epoch {epoch}: loss {epoch_loss:.4}, val hr@10 {:.4}",
                validation_hit_rate(&model, ds, 10)
            );
        }
    }
    ensure_finite(&model.params, "fpmc parameters")?;
    Ok(model)
}
