//! Structure-recovery and predictive metrics.

use nalgebra::DMatrix;

use crate::data::{support_of, DataMatrix, EdgeSet};
use crate::error::{Error, Result};
use crate::family::{FamilyKind, FamilySpec, ModelParams};
use crate::objective::objective_for;
use crate::prox::PenaltyConfig;
use crate::solver::{fit_warm, FitResult, SolveOptions, StructureConstraints, SUPPORT_TOL};

/// False discovery rate and power (true positive rate) of an edge estimate.
pub fn fdr_pwr(estimated: &EdgeSet, truth: &EdgeSet) -> (f64, f64) {
    let hits = estimated.intersection(truth).count() as f64;
    let false_pos = estimated.len() as f64 - hits;
    (
        false_pos / estimated.len().max(1) as f64,
        hits / truth.len().max(1) as f64,
    )
}

/// Exact support and latent-rank recovery.
pub fn recovery_success(fit: &FitResult, truth_theta: &DMatrix<f64>, truth_rank: usize) -> bool {
    fit.support == support_of(truth_theta, SUPPORT_TOL) && fit.rank == truth_rank
}

/// Held-out value of a fitted model on `x_test`: `alpha` and `theta` are
/// frozen at the fit and `L` is re-optimized (unpenalized) with every column
/// restricted to the column space of the fitted `L`. Returns the per-sample
/// smooth objective at that optimum.
///
/// Gaussian test data are centered with the training mean stored in the fit.
pub fn holdout_objective(model: &FitResult, x_test: &DataMatrix, family: &FamilySpec, opts: &SolveOptions) -> Result<f64> {
    let d = model.params.dim();
    if x_test.dim() != d {
        return Err(Error::Shape(format!("test data has {} variables, model has {d}", x_test.dim())));
    }
    let x = match (&model.center, family.kind) {
        (Some(mean), FamilyKind::Gaussian) => x_test.subtract_mean(mean),
        _ => x_test.clone(),
    };
    let n = x.n_samples();
    let basis = model.latent_basis();
    if basis.ncols() == 0 {
        let p = ModelParams {
            alpha: model.params.alpha.clone(),
            theta: model.params.theta.clone(),
            latent: DMatrix::zeros(d, n),
        };
        return objective_for(&x, family)?.value(&p);
    }

    // The mean fitted shift lies in the column space and keeps the
    // exponential family's constraint alpha + L < 0.
    let mean_shift = model.params.latent.column_mean();
    let init = ModelParams {
        alpha: model.params.alpha.clone(),
        theta: model.params.theta.clone(),
        latent: DMatrix::from_fn(d, n, |i, _| mean_shift[i]),
    };
    let cons = StructureConstraints {
        colspace: Some(basis),
        fix_alpha: Some(model.params.alpha.clone()),
        fix_theta: Some(model.params.theta.clone()),
        support: None,
    };
    let opts = SolveOptions { center: false, ..opts.clone() };
    let refit = fit_warm(&x, family, &PenaltyConfig::unpenalized(), &opts, Some(&cons), Some(&init))?;
    Ok(refit.objective())
}

/// Constant dropped from the smooth objective: the Gaussian normalizer
/// `d/2 log 2 pi`, the Ising `d log 2`, and the Poisson base measure
/// `mean_k sum_i log x_ik!`.
pub fn objective_offset(x: &DataMatrix, family: &FamilySpec) -> f64 {
    let d = x.dim() as f64;
    match family.kind {
        FamilyKind::Gaussian => 0.5 * d * (2.0 * std::f64::consts::PI).ln(),
        FamilyKind::Ising => d * std::f64::consts::LN_2,
        FamilyKind::Poisson => {
            let n = x.n_samples().max(1) as f64;
            x.values().iter().map(|v| ln_factorial(*v)).sum::<f64>() / n
        }
        FamilyKind::Exponential => 0.0,
    }
}

fn ln_factorial(v: f64) -> f64 {
    (2..=(v as u64)).map(|k| (k as f64).ln()).sum()
}

/// Held-out negative log-likelihood (Gaussian) or negative log
/// pseudo-likelihood (other families) per test sample, including all
/// parameter-free constants.
pub fn holdout_nll(model: &FitResult, x_test: &DataMatrix, family: &FamilySpec, opts: &SolveOptions) -> Result<f64> {
    Ok(holdout_objective(model, x_test, family, opts)? + objective_offset(x_test, family))
}
