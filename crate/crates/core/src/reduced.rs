//! The n-independent form of the Gaussian problem.
//!
//! For centered `X = U D V'` the full problem over `(theta, L)` with `L` of
//! size d x n has the same optimal value as
//!
//! `min 1/2 tr(H' T^-1 H) - 1/2 log det T - tr(H' S^1/2) + 1/2 tr(T S)
//!      + lambda ||T||_1 + gamma sqrt(n) ||H||_*`
//!
//! over a d x d matrix `H`, where `S = X X'/n`; a full solution is recovered
//! as `L = sqrt(n) H U V'`. The reduced problem is exactly the Gaussian
//! objective on data `S^1/2` with sample normalizer 1, so it runs on the same
//! engine.

use nalgebra::{DMatrix, DVector};

use crate::data::DataMatrix;
use crate::error::Result;
use crate::family::ModelParams;
use crate::linalg;
use crate::objective::{GaussianObjective, SmoothObjective};
use crate::prox::PenaltyConfig;
use crate::solver::{finish, Engine, FitResult, SolveOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedInstance {
    pub sigma: DMatrix<f64>,
    pub sqrt_sigma: DMatrix<f64>,
    /// d x min(d, n) left singular vectors of X.
    pub u: DMatrix<f64>,
    /// n x min(d, n) right singular vectors of X.
    pub v: DMatrix<f64>,
    pub n: usize,
}

/// Builds the reduced instance from centered data.
pub fn reduce(x: &DataMatrix) -> ReducedInstance {
    let sigma = linalg::symmetrize(&x.gram());
    let sqrt_sigma = linalg::psd_sqrt(&sigma);
    let svd = linalg::thin_svd(x.values());
    ReducedInstance {
        sigma,
        sqrt_sigma,
        u: svd.u,
        v: svd.v_t.transpose(),
        n: x.n_samples(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFit {
    pub theta: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

fn reduced_penalty(cfg: &PenaltyConfig, n: usize) -> PenaltyConfig {
    PenaltyConfig {
        gamma: cfg.gamma * (n as f64).sqrt(),
        ..*cfg
    }
}

/// Reduced objective including penalties, with `gamma` given on the full
/// problem's scale.
pub fn reduced_objective(theta: &DMatrix<f64>, h: &DMatrix<f64>, inst: &ReducedInstance, cfg: &PenaltyConfig) -> Result<f64> {
    let obj = GaussianObjective::with_normalizer(&inst.sqrt_sigma, 1.0);
    let p = ModelParams {
        alpha: DVector::zeros(theta.nrows()),
        theta: theta.clone(),
        latent: h.clone(),
    };
    Ok(obj.value(&p)? + reduced_penalty(cfg, inst.n).value(&p, obj.family()))
}

/// Minimizes the reduced problem. `cfg.gamma` is the full problem's weight;
/// the `sqrt(n)` factor is applied here.
pub fn fit_reduced(inst: &ReducedInstance, cfg: &PenaltyConfig, opts: &SolveOptions) -> Result<ReducedFit> {
    fit_reduced_warm(inst, cfg, opts, None)
}

/// As [`fit_reduced`], starting from `(theta, H)` when given.
pub fn fit_reduced_warm(
    inst: &ReducedInstance,
    cfg: &PenaltyConfig,
    opts: &SolveOptions,
    init: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<ReducedFit> {
    let d = inst.sigma.nrows();
    let obj = GaussianObjective::with_normalizer(&inst.sqrt_sigma, 1.0);
    let engine = Engine::new(&obj, reduced_penalty(cfg, inst.n), None, d, 1)?;
    let init = init.map(|(t, h)| ModelParams {
        alpha: DVector::zeros(d),
        theta: t.clone(),
        latent: h.clone(),
    });
    let start = engine.initial_point(d, d, opts, init.as_ref())?;
    let out = engine.run(start, opts)?;
    Ok(ReducedFit {
        objective: *out.trace.last().expect("trace holds the start point"),
        theta: out.params.theta,
        h: out.params.latent,
        objective_trace: out.trace,
        iterations: out.iterations,
        converged: out.converged,
        residual: out.residual,
    })
}

/// Full-size latent estimate `sqrt(n) H U V'`.
#[allow(non_snake_case)]
pub fn reconstruct_L(h: &DMatrix<f64>, inst: &ReducedInstance) -> DMatrix<f64> {
    (h * &inst.u) * inst.v.transpose() * (inst.n as f64).sqrt()
}

/// Gaussian fit of `(theta, L)` through the reduced problem. The data are
/// centered first; the returned trace is on the reduced objective, whose
/// optimal value coincides with the full one.
pub fn fit_gaussian_reduced(x: &DataMatrix, cfg: &PenaltyConfig, opts: &SolveOptions) -> Result<FitResult> {
    let (c, mean) = x.centered();
    let inst = reduce(&c);
    let r = fit_reduced(&inst, cfg, opts)?;
    let d = x.dim();
    let out = crate::solver::EngineOutput {
        params: ModelParams {
            alpha: DVector::zeros(d),
            latent: reconstruct_L(&r.h, &inst),
            theta: r.theta,
        },
        trace: r.objective_trace,
        iterations: r.iterations,
        converged: r.converged,
        residual: r.residual,
    };
    Ok(finish(out, Some(mean)))
}
