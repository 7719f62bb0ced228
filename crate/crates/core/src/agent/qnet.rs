//! Action-value network: an action-embedding table feeding a single gated
//! recurrent layer and a linear head, with analytic backpropagation through
//! time. Parameters live in one flat vector so the optimizer and checkpoint
//! code stay generic.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::artifact;
use crate::error::{Error, Result};
use crate::linalg::ensure_finite;
use crate::rng::substream;

/// Flat-parameter recurrent Q-network. Layout, in order:
/// embeddings `(n_actions x d_e)`, update gate `Wz/Uz/bz`, reset gate
/// `Wr/Ur/br`, candidate `Wh/Uh/bh` (each `d_h x d_e`, `d_h x d_h`, `d_h`),
/// then the output layer `Wo (n_actions x d_h)` and bias `bo (n_actions)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub n_actions: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub params: Vec<f64>,
}

impl QNetwork {
    pub fn new(n_actions: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Result<QNetwork> {
        if n_actions == 0 || embed_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidConfig(
                "qnetwork dimensions must all be >= 1".into(),
            ));
        }
        let mut net = QNetwork {
            n_actions,
            embed_dim,
            hidden_dim,
            params: vec![0.0; Self::param_count(n_actions, embed_dim, hidden_dim)],
        };
        let mut rng = substream(seed, "qnet-init");
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for p in net.params.iter_mut() {
            *p = rng.random_range(-bound..bound);
        }
        // biases start at zero
        for off in [net.bz(), net.br(), net.bh()] {
            net.params[off..off + hidden_dim].iter_mut().for_each(|x| *x = 0.0);
        }
        let bo = net.bo();
        net.params[bo..bo + n_actions].iter_mut().for_each(|x| *x = 0.0);
        Ok(net)
    }

    pub fn param_count(n_actions: usize, d_e: usize, d_h: usize) -> usize {
        n_actions * d_e + 3 * (d_h * d_e + d_h * d_h + d_h) + n_actions * d_h + n_actions
    }

    // Offsets into the flat vector, in layout order.
    fn embed(&self) -> usize {
        0
    }
    fn wz(&self) -> usize {
        self.n_actions * self.embed_dim
    }
    fn uz(&self) -> usize {
        self.wz() + self.hidden_dim * self.embed_dim
    }
    fn bz(&self) -> usize {
        self.uz() + self.hidden_dim * self.hidden_dim
    }
    fn wr(&self) -> usize {
        self.bz() + self.hidden_dim
    }
    fn ur(&self) -> usize {
        self.wr() + self.hidden_dim * self.embed_dim
    }
    fn br(&self) -> usize {
        self.ur() + self.hidden_dim * self.hidden_dim
    }
    fn wh(&self) -> usize {
        self.br() + self.hidden_dim
    }
    fn uh(&self) -> usize {
        self.wh() + self.hidden_dim * self.embed_dim
    }
    fn bh(&self) -> usize {
        self.uh() + self.hidden_dim * self.hidden_dim
    }
    fn wo(&self) -> usize {
        self.bh() + self.hidden_dim
    }
    fn bo(&self) -> usize {
        self.wo() + self.n_actions * self.hidden_dim
    }

    fn embedding(&self, action: usize) -> &[f64] {
        let off = self.embed() + action * self.embed_dim;
        &self.params[off..off + self.embed_dim]
    }

    /// Action values for a (possibly empty) prefix of group-level actions.
    pub fn q_forward(&self, state: &[usize]) -> Vec<f64> {
        let trace = self.run_forward(state);
        self.head(trace.hs.last().expect("h0 always present"))
    }

    fn head(&self, h: &[f64]) -> Vec<f64> {
        let d_h = self.hidden_dim;
        let (wo, bo) = (self.wo(), self.bo());
        (0..self.n_actions)
            .map(|a| {
                let row = &self.params[wo + a * d_h..wo + (a + 1) * d_h];
                self.params[bo + a] + dot(row, h)
            })
            .collect()
    }

    /// One recurrent step: h' = (1-z) o h + z o tanh(Wh x + Uh (r o h) + bh).
    fn step(&self, x: &[f64], h: &[f64]) -> StepTrace {
        let d_h = self.hidden_dim;
        let z: Vec<f64> = (0..d_h)
            .map(|i| sigmoid(self.gate_pre(self.wz(), self.uz(), self.bz(), i, x, h)))
            .collect();
        let r: Vec<f64> = (0..d_h)
            .map(|i| sigmoid(self.gate_pre(self.wr(), self.ur(), self.br(), i, x, h)))
            .collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(ri, hi)| ri * hi).collect();
        let hc: Vec<f64> = (0..d_h)
            .map(|i| self.gate_pre(self.wh(), self.uh(), self.bh(), i, x, &rh).tanh())
            .collect();
        let h_next: Vec<f64> = (0..d_h)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * hc[i])
            .collect();
        StepTrace { z, r, hc, h_next }
    }

    fn gate_pre(&self, w: usize, u: usize, b: usize, i: usize, x: &[f64], h: &[f64]) -> f64 {
        let (d_e, d_h) = (self.embed_dim, self.hidden_dim);
        self.params[b + i]
            + dot(&self.params[w + i * d_e..w + (i + 1) * d_e], x)
            + dot(&self.params[u + i * d_h..u + (i + 1) * d_h], h)
    }

    fn run_forward(&self, state: &[usize]) -> ForwardTrace {
        let mut hs = vec![vec![0.0; self.hidden_dim]];
        let mut steps = Vec::with_capacity(state.len());
        for &a in state {
            let trace = self.step(self.embedding(a), hs.last().unwrap());
            hs.push(trace.h_next.clone());
            steps.push(trace);
        }
        ForwardTrace { hs, steps }
    }

    /// Gradient of (td_target - Q(s,a))^2 over the flat parameters,
    /// accumulated into `grad`; returns the squared error.
    pub fn q_backward(&self, state: &[usize], action: usize, td_target: f64, grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.params.len());
        let (d_e, d_h) = (self.embed_dim, self.hidden_dim);
        let trace = self.run_forward(state);
        let h_final = trace.hs.last().unwrap();
        let q = self.params[self.bo() + action]
            + dot(&self.params[self.wo() + action * d_h..][..d_h], h_final);
        let err = td_target - q;
        let dq = -2.0 * err; // d loss / d Q(s,a)

        grad[self.bo() + action] += dq;
        let wo_row = self.wo() + action * d_h;
        for i in 0..d_h {
            grad[wo_row + i] += dq * h_final[i];
        }
        let mut dh: Vec<f64> = self.params[wo_row..wo_row + d_h]
            .iter()
            .map(|w| dq * w)
            .collect();

        for (t, &a) in state.iter().enumerate().rev() {
            let StepTrace { z, r, hc, .. } = &trace.steps[t];
            let h_prev = &trace.hs[t];
            let x = self.embedding(a).to_vec();

            let mut dh_prev = vec![0.0; d_h];
            let mut dah = vec![0.0; d_h]; // candidate pre-activation
            let mut daz = vec![0.0; d_h]; // update-gate pre-activation
            for i in 0..d_h {
                let dhc = dh[i] * z[i];
                let dz = dh[i] * (hc[i] - h_prev[i]);
                dh_prev[i] = dh[i] * (1.0 - z[i]);
                dah[i] = dhc * (1.0 - hc[i] * hc[i]);
                daz[i] = dz * z[i] * (1.0 - z[i]);
            }
            // through the candidate's Uh (r o h_prev) input
            let mut dar = vec![0.0; d_h];
            #[allow(clippy::needless_range_loop)] // parallel arrays per hidden unit
            for i in 0..d_h {
                let mut drh = 0.0;
                for j in 0..d_h {
                    drh += self.params[self.uh() + j * d_h + i] * dah[j];
                }
                dar[i] = drh * h_prev[i] * r[i] * (1.0 - r[i]);
                dh_prev[i] += drh * r[i];
            }
            // weight and bias gradients for the three gates
            let rh: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();
            for i in 0..d_h {
                for j in 0..d_e {
                    grad[self.wz() + i * d_e + j] += daz[i] * x[j];
                    grad[self.wr() + i * d_e + j] += dar[i] * x[j];
                    grad[self.wh() + i * d_e + j] += dah[i] * x[j];
                }
                for j in 0..d_h {
                    grad[self.uz() + i * d_h + j] += daz[i] * h_prev[j];
                    grad[self.ur() + i * d_h + j] += dar[i] * h_prev[j];
                    grad[self.uh() + i * d_h + j] += dah[i] * rh[j];
                }
                grad[self.bz() + i] += daz[i];
                grad[self.br() + i] += dar[i];
                grad[self.bh() + i] += dah[i];
            }
            // into the previous hidden state and the embedded input
            #[allow(clippy::needless_range_loop)] // parallel arrays per hidden unit
            for i in 0..d_h {
                for j in 0..d_h {
                    dh_prev[i] += self.params[self.uz() + j * d_h + i] * daz[j]
                        + self.params[self.ur() + j * d_h + i] * dar[j];
                }
            }
            let emb = self.embed() + a * d_e;
            for j in 0..d_e {
                let mut dx = 0.0;
                for i in 0..d_h {
                    dx += self.params[self.wz() + i * d_e + j] * daz[i]
                        + self.params[self.wr() + i * d_e + j] * dar[i]
                        + self.params[self.wh() + i * d_e + j] * dah[i];
                }
                grad[emb + j] += dx;
            }
            dh = dh_prev;
        }
        err * err
    }

    pub fn check_finite(&self) -> Result<()> {
        ensure_finite(&self.params, "qnetwork parameters")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::save_json(path, "qnetwork", 1, self)
    }

    pub fn load(path: &Path) -> Result<QNetwork> {
        let net: QNetwork = artifact::load_json(path, "qnetwork", 1)?;
        if net.params.len() != Self::param_count(net.n_actions, net.embed_dim, net.hidden_dim) {
            return Err(Error::Malformed("qnetwork parameter length mismatch".into()));
        }
        Ok(net)
    }
}

struct StepTrace {
    z: Vec<f64>,
    r: Vec<f64>,
    hc: Vec<f64>,
    h_next: Vec<f64>,
}

struct ForwardTrace {
    /// h_0 .. h_T; one more entry than steps.
    hs: Vec<Vec<f64>>,
    steps: Vec<StepTrace>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
