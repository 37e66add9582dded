//! Marginal-likelihood objective, its gradient, and multi-start training.

use std::f64::consts::PI;

use nalgebra::DVector;

use super::{expand_params, factor_noisy_gram};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{kernel_grad_hyper, KernelParams};
use crate::optim::{minimize_box, BfgsOptions};

/// `yᵀ(K+σ²I)⁻¹y + log det(K+σ²I)` for one output column.
fn nll_column(inputs: &[DVector<f64>], y: &DVector<f64>, p: &KernelParams) -> Result<f64> {
    let chol = factor_noisy_gram(inputs, p)?;
    let v = chol.solve_lower(y);
    Ok(v.norm_squared() + chol.log_det())
}

fn nll_grad_column(
    inputs: &[DVector<f64>],
    y: &DVector<f64>,
    p: &KernelParams,
) -> Result<(f64, [f64; 3])> {
    let chol = factor_noisy_gram(inputs, p)?;
    let alpha = chol.solve(y);
    let value = y.dot(&alpha) + chol.log_det();
    let kinv = chol.inverse();
    let (dk_dlambda, dk_deta) = kernel_grad_hyper(inputs, p)?;
    let n = inputs.len();
    let term = |dk: &nalgebra::DMatrix<f64>| -> f64 {
        let trace: f64 = kinv.component_mul(dk).sum();
        trace - alpha.dot(&(dk * &alpha))
    };
    let g_lambda = term(&dk_dlambda);
    let g_eta = term(&dk_deta);
    // ∂K̃/∂log σ² = σ² I
    let mut tr = 0.0;
    for i in 0..n {
        tr += kinv[(i, i)];
    }
    let g_noise = p.sigma_w_sq * (tr - alpha.norm_squared());
    Ok((value, [g_lambda, g_eta, g_noise]))
}

/// Negative log-likelihood without constants, summed over outputs.
pub fn nll(data: &Dataset, params: &[KernelParams]) -> Result<f64> {
    let params = expand_params(params, data.output_dim())?;
    let mut total = 0.0;
    for (d, p) in params.iter().enumerate() {
        total += nll_column(data.inputs(), &data.target_column(d), p)?;
    }
    Ok(total)
}

/// Gradient of [`nll`] with respect to `(log λ, log η, log σ_w²)`, one triple
/// per output.
pub fn nll_grad(data: &Dataset, params: &[KernelParams]) -> Result<Vec<[f64; 3]>> {
    let params = expand_params(params, data.output_dim())?;
    params
        .iter()
        .enumerate()
        .map(|(d, p)| nll_grad_column(data.inputs(), &data.target_column(d), p).map(|(_, g)| g))
        .collect()
}

/// `log p(Y)` including constants: `−½(nll + N·n_d·log 2π)`.
pub fn log_evidence(data: &Dataset, params: &[KernelParams]) -> Result<f64> {
    let n = (data.len() * data.output_dim()) as f64;
    Ok(-0.5 * (nll(data, params)? + n * (2.0 * PI).ln()))
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub budget: usize,
    pub grad_tol: f64,
    /// Box on every log-parameter.
    pub log_bounds: (f64, f64),
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            budget: 200,
            grad_tol: 1e-7,
            log_bounds: ((1e-8f64).ln(), (1e6f64).ln()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: Vec<KernelParams>,
    pub nll: f64,
    pub nll_per_output: Vec<f64>,
    pub iterations: usize,
}

/// Minimizes the NLL in log-space from every start and keeps the best
/// result per output. Each start is applied to all outputs.
pub fn train_hyperparams(
    data: &Dataset,
    starts: &[KernelParams],
    opts: &TrainOptions,
) -> Result<TrainResult> {
    if starts.is_empty() {
        return Err(Error::Training("no starting points".into()));
    }
    for s in starts {
        s.validate()?;
    }
    let (lo, hi) = opts.log_bounds;
    let lower = DVector::from_element(3, lo);
    let upper = DVector::from_element(3, hi);
    let bfgs = BfgsOptions {
        max_iter: opts.budget,
        grad_tol: opts.grad_tol,
        ..Default::default()
    };
    let mut params = Vec::new();
    let mut per_output = Vec::new();
    let mut iterations = 0;
    for d in 0..data.output_dim() {
        let y = data.target_column(d);
        let mut best: Option<(f64, KernelParams)> = None;
        for start in starts {
            // zero noise has no log; start from the lower bound instead
            let mut x0 = start.to_log();
            for v in x0.iter_mut() {
                *v = v.clamp(lo, hi);
            }
            let x0 = DVector::from_row_slice(&x0);
            if nll_column(data.inputs(), &y, &KernelParams::from_log(x0.as_slice())).is_err() {
                continue;
            }
            let objective = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
                let p = KernelParams::from_log(x.as_slice());
                match nll_grad_column(data.inputs(), &y, &p) {
                    Ok((v, g)) => Ok((v, DVector::from_row_slice(&g))),
                    Err(Error::Factorization { .. }) => Ok((f64::INFINITY, DVector::zeros(3))),
                    Err(e) => Err(e),
                }
            };
            let res = minimize_box(objective, &x0, &lower, &upper, &bfgs)?;
            iterations += res.iterations;
            let p = KernelParams::from_log(res.x.as_slice());
            if best.as_ref().is_none_or(|(v, _)| res.f < *v) {
                best = Some((res.f, p));
            }
        }
        let (v, p) = best.ok_or_else(|| {
            Error::Training(format!("every start failed to factorize for output {d}"))
        })?;
        params.push(p);
        per_output.push(v);
    }
    Ok(TrainResult {
        params,
        nll: per_output.iter().sum(),
        nll_per_output: per_output,
        iterations,
    })
}
