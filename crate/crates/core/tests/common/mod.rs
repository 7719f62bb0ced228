//! Numeric oracles shared by the integration suites: central finite
//! differences, dense Hessian assembly, and a plain full-batch
//! gradient-descent trainer used as an independent retraining reference.

use poisonforge_core::influence::hvp_samples;
use poisonforge_core::linalg::{axpy, norm};
use poisonforge_core::recmodels::{RecModel, TrainingSample};

/// Central finite difference of the regularized per-sample loss over every
/// parameter.
pub fn fd_sample_grad<M: RecModel + Clone>(model: &M, z: &TrainingSample, h: f64) -> Vec<f64> {
    let n = model.param_dim();
    let mut probe = model.clone();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let orig = model.params()[j];
        probe.params_mut()[j] = orig + h;
        let up = probe.sample_loss(z);
        probe.params_mut()[j] = orig - h;
        let down = probe.sample_loss(z);
        probe.params_mut()[j] = orig;
        out[j] = (up - down) / (2.0 * h);
    }
    out
}

/// Mean regularized gradient over a full sample decomposition.
pub fn mean_loss_grad<M: RecModel>(model: &M, samples: &[TrainingSample]) -> Vec<f64> {
    let mut g = vec![0.0; model.param_dim()];
    let scale = 1.0 / samples.len().max(1) as f64;
    for z in samples {
        model.add_sample_loss_grad(z, scale, &mut g);
    }
    g
}

/// Central finite difference of the mean gradient along direction `v`: an
/// order h^2 estimate of the undamped Hessian-vector product.
pub fn fd_hessian_vector<M: RecModel + Clone>(
    model: &M,
    samples: &[TrainingSample],
    v: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut probe = model.clone();

    axpy(h, v, probe.params_mut());
    let up = mean_loss_grad(&probe, samples);

    probe.params_mut().copy_from_slice(model.params());
    axpy(-h, v, probe.params_mut());
    let down = mean_loss_grad(&probe, samples);

    up.iter()
        .zip(&down)
        .map(|(u, d)| (u - d) / (2.0 * h))
        .collect()
}

/// Row-major dense (H + damping I) assembled by applying the analytic
/// Hessian-vector operator to every basis vector.
pub fn dense_hessian<M: RecModel + Sync>(
    model: &M,
    samples: &[TrainingSample],
    damping: f64,
) -> Vec<f64> {
    let n = model.param_dim();
    let mut out = vec![0.0; n * n];
    let mut basis = vec![0.0; n];
    for j in 0..n {
        basis[j] = 1.0;
        let col = hvp_samples(model, samples, &basis, damping);
        basis[j] = 0.0;
        for i in 0..n {
            out[i * n + j] = col[i];
        }
    }
    out
}

/// Plain full-batch gradient descent on the mean regularized loss over a
/// fixed sample decomposition. Runs until the gradient norm falls to `tol`
/// or `max_iters` steps elapse; returns the final gradient norm.
pub fn full_batch_gd<M: RecModel>(
    model: &mut M,
    samples: &[TrainingSample],
    lr: f64,
    max_iters: usize,
    tol: f64,
) -> f64 {
    let mut gnorm = f64::INFINITY;
    for _ in 0..max_iters {
        let g = mean_loss_grad(model, samples);
        gnorm = norm(&g);
        if !gnorm.is_finite() {
            panic!("gradient descent diverged (non-finite gradient norm)");
        }
        if gnorm <= tol {
            return gnorm;
        }
        axpy(-lr, &g, model.params_mut());
    }
    gnorm
}
