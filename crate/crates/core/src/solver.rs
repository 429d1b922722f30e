//! Accelerated proximal-gradient minimization of
//! `smooth(alpha, theta, L) + lambda ||theta||_1 + gamma ||L||_*`
//! subject to family feasibility and optional structural constraints.
//!
//! One joint step updates all three blocks; the prox is separable (soft
//! thresholding on `theta`, singular value thresholding on `L`, identity on
//! `alpha`). The `L` block takes steps `n` times larger than the other blocks:
//! the smooth objective is an average over samples, so each column of `L`
//! only sees `1/n` of the curvature. Backtracking enforces the quadratic
//! upper bound in that block metric and rejects points outside the open
//! domain; momentum is restarted whenever an accelerated step would increase
//! the composite objective.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{edge_mask, support_of, DataMatrix, EdgeSet};
use crate::error::{Error, Result};
use crate::family::{FamilyKind, FamilySpec, ModelParams};
use crate::linalg;
use crate::objective::{objective_for, SmoothEval, SmoothObjective};
use crate::prox::{project_domain, prox_alpha_latent_capped, prox_l1_theta, svt, PenaltyConfig};

pub const SUPPORT_TOL: f64 = 1e-8;
pub const RANK_TOL: f64 = 1e-6;
pub const KKT_TOL: f64 = 1e-5;
const WINDOW: usize = 10;
const RESIDUAL_TOL: f64 = 1e-5;
const DIVERGENCE_NORM: f64 = 1e8;
const STEP_GROWTH: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol_rel_obj: f64,
    pub backtrack_factor: f64,
    pub init_step: f64,
    pub acceleration: bool,
    pub seed: u64,
    /// Start from a random feasible point drawn from `seed` instead of the
    /// default initialization.
    pub random_init: bool,
    /// Column-center the data on the Gaussian path (alpha is then fixed at 0).
    pub center: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 5000,
            tol_rel_obj: 1e-8,
            backtrack_factor: 0.5,
            init_step: 1.0,
            acceleration: true,
            seed: 0,
            random_init: false,
            center: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iter > 0
            && self.tol_rel_obj > 0.0
            && self.tol_rel_obj < 1.0
            && self.backtrack_factor > 0.0
            && self.backtrack_factor < 1.0
            && self.init_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid solver options {self:?}")))
        }
    }
}

/// Hard structural constraints used by constrained refits and held-out
/// evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructureConstraints {
    /// Allowed off-diagonal pattern of `theta`; entries outside are zero.
    pub support: Option<EdgeSet>,
    /// Orthonormal d x k basis; every column of `L` must lie in its span.
    /// A basis with zero columns forces `L = 0`.
    pub colspace: Option<DMatrix<f64>>,
    pub fix_alpha: Option<DVector<f64>>,
    pub fix_theta: Option<DMatrix<f64>>,
}

impl StructureConstraints {
    /// Constraint set forcing `L = 0` in dimension `d`.
    pub fn no_latent(d: usize) -> Self {
        StructureConstraints {
            colspace: Some(DMatrix::zeros(d, 0)),
            ..Default::default()
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if let Some(c) = &self.colspace {
            if c.nrows() != d {
                return Err(Error::Shape(format!("column-space basis has {} rows, expected {d}", c.nrows())));
            }
            if c.ncols() > 0 && linalg::orthonormality_error(c) > 1e-10 {
                return Err(Error::InvalidInput("column-space basis is not orthonormal".into()));
            }
        }
        if let Some(e) = &self.support {
            if e.iter().any(|edge| edge.j() >= d) {
                return Err(Error::Shape("support edge outside the variable range".into()));
            }
        }
        if let Some(a) = &self.fix_alpha {
            if a.len() != d {
                return Err(Error::Shape("fixed alpha has the wrong length".into()));
            }
        }
        if let Some(t) = &self.fix_theta {
            if t.shape() != (d, d) {
                return Err(Error::Shape("fixed theta has the wrong shape".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    /// Composite objective at the start point and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub support: EdgeSet,
    pub rank: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Composite gradient-mapping norm at the returned point (block metric).
    pub residual: f64,
    /// Mean removed from the data before fitting (Gaussian path only).
    pub center: Option<DVector<f64>>,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace always holds the start point")
    }

    /// Orthonormal basis for the column space of the latent estimate.
    pub fn latent_basis(&self) -> DMatrix<f64> {
        linalg::column_space(&self.params.latent, RANK_TOL)
    }
}

/// Problem instance for the generic engine: a smooth objective plus the
/// penalty, the family and normalized constraints.
pub(crate) struct Engine<'a> {
    pub obj: &'a dyn SmoothObjective,
    pub family: FamilySpec,
    pub cfg: PenaltyConfig,
    pub support_mask: Option<DMatrix<f64>>,
    pub colspace: Option<DMatrix<f64>>,
    pub fix_alpha: Option<DVector<f64>>,
    pub fix_theta: Option<DMatrix<f64>>,
    pub alpha_free: bool,
    pub latent_scale: f64,
}

impl<'a> Engine<'a> {
    pub fn new(
        obj: &'a dyn SmoothObjective,
        cfg: PenaltyConfig,
        cons: Option<&StructureConstraints>,
        d: usize,
        n: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let family = *obj.family();
        let cons = cons.cloned().unwrap_or_default();
        cons.validate(d)?;
        let alpha_free = family.kind != FamilyKind::Gaussian && cons.fix_alpha.is_none();
        Ok(Engine {
            obj,
            family,
            cfg,
            support_mask: cons.support.as_ref().map(|e| edge_mask(e, d)),
            colspace: cons.colspace,
            fix_alpha: cons.fix_alpha,
            fix_theta: cons.fix_theta,
            alpha_free,
            latent_scale: n.max(1) as f64,
        })
    }

    fn penalty(&self, p: &ModelParams) -> f64 {
        self.cfg.value(p, &self.family)
    }

    /// Open-domain membership beyond what `value` itself detects.
    fn in_domain(&self, p: &ModelParams) -> bool {
        match self.family.kind {
            FamilyKind::Gaussian => linalg::min_eig_exceeds(&p.theta, self.family.strict_margin),
            FamilyKind::Exponential => p.is_feasible(&self.family),
            _ => true,
        }
    }

    fn project_latent(&self, l: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.colspace {
            Some(c) if c.ncols() == 0 => DMatrix::zeros(l.nrows(), l.ncols()),
            Some(c) => c * (c.transpose() * l),
            None => l.clone(),
        }
    }

    fn project_theta(&self, t: &mut DMatrix<f64>) {
        if let Some(fixed) = &self.fix_theta {
            t.copy_from(fixed);
            return;
        }
        if !self.family.kind.has_diagonal() {
            t.fill_diagonal(0.0);
        }
        if let Some(mask) = &self.support_mask {
            let d = t.nrows();
            for j in 0..d {
                for i in 0..d {
                    if i != j && mask[(i, j)] == 0.0 {
                        t[(i, j)] = 0.0;
                    }
                }
            }
        }
    }

    /// Restricts a gradient to the directions the constraints leave free.
    fn project_gradient(&self, g: &mut SmoothEval) {
        if !self.alpha_free {
            g.grad_alpha.fill(0.0);
        }
        if self.fix_theta.is_some() {
            g.grad_theta.fill(0.0);
        } else {
            self.project_theta(&mut g.grad_theta);
        }
        g.grad_latent = self.project_latent(&g.grad_latent);
    }

    fn prox_step(&self, y: &ModelParams, g: &SmoothEval, step: f64) -> ModelParams {
        let mut alpha = if self.alpha_free {
            &y.alpha - &g.grad_alpha * step
        } else {
            y.alpha.clone()
        };
        let mut theta = match &self.fix_theta {
            Some(fixed) => fixed.clone(),
            None => prox_l1_theta(&(&y.theta - &g.grad_theta * step), step, &self.family, &self.cfg),
        };
        self.project_theta(&mut theta);
        let ls = step * self.latent_scale;
        let latent_target = &y.latent - &g.grad_latent * ls;
        let has_latent = !matches!(&self.colspace, Some(c) if c.ncols() == 0);
        if self.family.kind == FamilyKind::Exponential && has_latent {
            // alpha + L <= -margin couples the two blocks.
            let (alpha, latent) = prox_alpha_latent_capped(
                &alpha,
                &latent_target,
                self.latent_scale,
                step * self.cfg.gamma,
                self.family.strict_margin,
                !self.alpha_free,
                self.colspace.as_ref(),
                &y.latent,
            );
            return ModelParams { alpha, theta, latent };
        }
        let latent = if has_latent {
            self.project_latent(&svt(&latent_target, ls * self.cfg.gamma))
        } else {
            DMatrix::zeros(y.latent.nrows(), y.latent.ncols())
        };
        if self.alpha_free {
            alpha = project_domain(&self.family, &alpha, &latent, self.family.strict_margin).0;
        }
        ModelParams { alpha, theta, latent }
    }

    fn metric_sq(&self, a: &ModelParams, b: &ModelParams) -> f64 {
        (&a.alpha - &b.alpha).norm_squared()
            + (&a.theta - &b.theta).norm_squared()
            + (&a.latent - &b.latent).norm_squared() / self.latent_scale
    }

    fn params_norm(&self, p: &ModelParams) -> f64 {
        (p.alpha.norm_squared() + p.theta.norm_squared() + p.latent.norm_squared() / self.latent_scale).sqrt()
    }

    fn inner(&self, g: &SmoothEval, a: &ModelParams, b: &ModelParams) -> f64 {
        g.grad_alpha.dot(&(&a.alpha - &b.alpha))
            + g.grad_theta.dot(&(&a.theta - &b.theta))
            + g.grad_latent.dot(&(&a.latent - &b.latent))
    }

    fn gradient(&self, p: &ModelParams) -> Result<SmoothEval> {
        let mut g = self.obj.eval(p)?;
        self.project_gradient(&mut g);
        Ok(g)
    }

    /// Backtracking prox-gradient step from `y` (with gradient `g`).
    /// Returns the new point, its smooth value and the accepted step.
    fn backtrack(
        &self,
        y: &ModelParams,
        g: &SmoothEval,
        mut step: f64,
        factor: f64,
    ) -> Result<(ModelParams, f64, f64)> {
        for _ in 0..200 {
            let cand = self.prox_step(y, g, step);
            if self.in_domain(&cand) {
                if let Ok(fx) = self.obj.value(&cand) {
                    let bound = g.value + self.inner(g, &cand, y) + self.metric_sq(&cand, y) / (2.0 * step);
                    if fx <= bound + 1e-12 * (1.0 + g.value.abs()) {
                        return Ok((cand, fx, step));
                    }
                }
            }
            step *= factor;
        }
        Err(Error::InfeasibleStart("backtracking failed to find an admissible step".into()))
    }

    pub fn initial_point(&self, d: usize, n: usize, opts: &SolveOptions, init: Option<&ModelParams>) -> Result<ModelParams> {
        let mut p = match init {
            Some(p) => {
                if p.dim() != d || p.theta.shape() != (d, d) || p.latent.shape() != (d, n) {
                    return Err(Error::Shape("warm start has the wrong shape".into()));
                }
                p.clone()
            }
            None => self.default_point(d, n, opts),
        };
        if let Some(a) = &self.fix_alpha {
            p.alpha.copy_from(a);
        }
        if self.family.kind == FamilyKind::Gaussian {
            p.alpha.fill(0.0);
        }
        self.project_theta(&mut p.theta);
        p.latent = self.project_latent(&p.latent);
        if self.alpha_free {
            p.alpha = project_domain(&self.family, &p.alpha, &p.latent, self.family.strict_margin).0;
        }
        if !self.in_domain(&p) {
            return Err(Error::InfeasibleStart("start point violates the family constraints".into()));
        }
        self.obj
            .value(&p)
            .map_err(|e| Error::InfeasibleStart(format!("objective undefined at the start point: {e}")))?;
        Ok(p)
    }

    fn default_point(&self, d: usize, n: usize, opts: &SolveOptions) -> ModelParams {
        let kind = self.family.kind;
        let mut p = ModelParams::zeros(d, n);
        if kind == FamilyKind::Gaussian {
            p.theta = DMatrix::identity(d, d);
        }
        if kind == FamilyKind::Exponential {
            p.alpha.fill(-1.0);
        }
        if opts.random_init {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            for i in 0..d {
                for j in (i + 1)..d {
                    let v: f64 = rng.random_range(-0.1..0.1);
                    let v = if kind.nonnegative_interactions() { v.abs() } else { v } / d as f64;
                    p.theta[(i, j)] = v;
                    p.theta[(j, i)] = v;
                }
                if kind == FamilyKind::Gaussian {
                    p.theta[(i, i)] = rng.random_range(0.5..2.0);
                } else {
                    p.alpha[i] += rng.random_range(-0.2..0.2);
                }
            }
            p.latent = DMatrix::from_fn(d, n, |_, _| rng.random_range(-0.2..0.2));
            if kind == FamilyKind::Exponential {
                p.alpha.add_scalar_mut(-0.5);
            }
        }
        p
    }

    pub fn run(&self, start: ModelParams, opts: &SolveOptions) -> Result<EngineOutput> {
        opts.validate()?;
        let factor = opts.backtrack_factor;
        let mut x = start;
        let mut big_f = self.obj.value(&x)? + self.penalty(&x);
        let mut trace = vec![big_f];
        let mut step = opts.init_step;
        let mut y = x.clone();
        let mut x_prev: ModelParams;
        let mut momentum = 1.0f64;
        let mut y_is_x = true;
        let mut iterations = 0;
        let mut converged = false;
        let mut residual = f64::INFINITY;
        let mut since_check = 0usize;

        while iterations < opts.max_iter {
            iterations += 1;
            let g = if y_is_x {
                self.gradient(&x)?
            } else {
                match self.gradient(&y) {
                    Ok(g) if self.in_domain(&y) => g,
                    _ => {
                        y = x.clone();
                        y_is_x = true;
                        momentum = 1.0;
                        self.gradient(&x)?
                    }
                }
            };
            let (cand, f_smooth, accepted) = self.backtrack(&y, &g, step * STEP_GROWTH, factor)?;
            step = accepted;
            let f_new = f_smooth + self.penalty(&cand);
            if f_new > big_f + 1e-12 * (1.0 + big_f.abs()) {
                if !y_is_x {
                    y = x.clone();
                    y_is_x = true;
                    momentum = 1.0;
                    continue;
                }
                // A plain step cannot decrease any more: numerical floor.
                residual = (self.metric_sq(&x, &cand)).sqrt() / step;
                converged = residual <= RESIDUAL_TOL * (1.0 + self.params_norm(&x));
                break;
            }

            if y_is_x {
                // Plain step from x: its length is the gradient-mapping residual.
                residual = (self.metric_sq(&x, &cand)).sqrt() / step;
            }
            x_prev = std::mem::replace(&mut x, cand);
            big_f = f_new;
            trace.push(big_f);
            since_check += 1;

            if self.params_norm(&x) > DIVERGENCE_NORM {
                break;
            }

            let window_ok = trace.len() > WINDOW && {
                let old = trace[trace.len() - 1 - WINDOW];
                (old - big_f).abs() <= opts.tol_rel_obj * big_f.abs().max(1.0)
            };
            let residual_ok = y_is_x && residual <= RESIDUAL_TOL * (1.0 + self.params_norm(&x_prev));
            if window_ok && residual_ok {
                converged = true;
                break;
            }

            if window_ok && since_check >= WINDOW {
                // Take a plain step next so the residual gets measured.
                since_check = 0;
                y = x.clone();
                y_is_x = true;
                momentum = 1.0;
                continue;
            }

            if opts.acceleration {
                let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                let beta = (momentum - 1.0) / next;
                momentum = next;
                y = ModelParams {
                    alpha: &x.alpha + (&x.alpha - &x_prev.alpha) * beta,
                    theta: &x.theta + (&x.theta - &x_prev.theta) * beta,
                    latent: &x.latent + (&x.latent - &x_prev.latent) * beta,
                };
                y_is_x = beta == 0.0;
            } else {
                y = x.clone();
                y_is_x = true;
            }
        }
        Ok(EngineOutput {
            params: x,
            trace,
            iterations,
            converged,
            residual,
        })
    }
}

pub(crate) struct EngineOutput {
    pub params: ModelParams,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

pub(crate) fn finish(out: EngineOutput, center: Option<DVector<f64>>) -> FitResult {
    FitResult {
        support: support_of(&out.params.theta, SUPPORT_TOL),
        rank: linalg::numerical_rank(&out.params.latent, RANK_TOL),
        params: out.params,
        objective_trace: out.trace,
        iterations: out.iterations,
        converged: out.converged,
        residual: out.residual,
        center,
    }
}

fn check_data(x: &DataMatrix, family: &FamilySpec) -> Result<()> {
    for (k, col) in x.values().column_iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            if !family.value_in_domain(*v) {
                return Err(Error::InvalidInput(format!(
                    "value {v} of variable {} in sample {} is outside the {} domain",
                    i + 1,
                    k + 1,
                    family.kind
                )));
            }
        }
    }
    Ok(())
}

/// Data actually seen by the objective: centered on the Gaussian path
/// (unless disabled), untouched otherwise.
pub fn prepared_data(x: &DataMatrix, family: &FamilySpec, opts: &SolveOptions) -> (DataMatrix, Option<DVector<f64>>) {
    if family.kind == FamilyKind::Gaussian && opts.center {
        let (c, mean) = x.centered();
        (c, Some(mean))
    } else {
        (x.clone(), None)
    }
}

/// Fits `(alpha, theta, L)` by regularized conditional (pseudo-)likelihood.
pub fn fit(
    x: &DataMatrix,
    family: &FamilySpec,
    cfg: &PenaltyConfig,
    opts: &SolveOptions,
    cons: Option<&StructureConstraints>,
) -> Result<FitResult> {
    fit_warm(x, family, cfg, opts, cons, None)
}

/// As [`fit`], starting from `init` when given.
pub fn fit_warm(
    x: &DataMatrix,
    family: &FamilySpec,
    cfg: &PenaltyConfig,
    opts: &SolveOptions,
    cons: Option<&StructureConstraints>,
    init: Option<&ModelParams>,
) -> Result<FitResult> {
    check_data(x, family)?;
    let (data, center) = prepared_data(x, family, opts);
    let obj = objective_for(&data, family)?;
    let (d, n) = (data.dim(), data.n_samples());
    let engine = Engine::new(obj.as_ref(), *cfg, cons, d, n)?;
    let start = engine.initial_point(d, n, opts, init)?;
    let out = engine.run(start, opts)?;
    Ok(finish(out, center))
}

/// Smallest `lambda` for which the off-diagonal `theta` solution with `L = 0`
/// is exactly zero.
///
/// At the null model the off-diagonal gradient equals half the sample
/// covariance (Gaussian, diagonal-only fit) or the sample covariance
/// (pseudo-likelihood families with alpha at its unpenalized optimum). For
/// Poisson and exponential families `theta >= 0`, so only negative
/// covariances can pull an entry away from zero.
pub fn lambda_max(x: &DataMatrix, family: &FamilySpec, _cfg: &PenaltyConfig) -> Result<f64> {
    check_data(x, family)?;
    let (c, _) = x.centered();
    let cov = c.gram();
    let d = x.dim();
    let scale = if family.kind == FamilyKind::Gaussian { 0.5 } else { 1.0 };
    let mut best = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            let g = scale * 0.5 * (cov[(i, j)] + cov[(j, i)]);
            let pull = if family.kind.nonnegative_interactions() { -g } else { g.abs() };
            best = best.max(pull);
        }
    }
    Ok(best)
}

/// Spectral norm of the `L` gradient at the `L = 0` solution for the given
/// `lambda`: any `gamma` at or above it yields `L = 0`.
pub fn gamma_max(x: &DataMatrix, family: &FamilySpec, cfg: &PenaltyConfig, opts: &SolveOptions) -> Result<f64> {
    let null = fit(x, family, cfg, opts, Some(&StructureConstraints::no_latent(x.dim())))?;
    let (data, _) = prepared_data(x, family, opts);
    let obj = objective_for(&data, family)?;
    let g = obj.eval(&null.params)?;
    Ok(linalg::spectral_norm(&g.grad_latent))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Worst excess of `|grad_ij|` over `lambda` across zero off-diagonal entries
    /// (one-sided for nonnegative families).
    pub zero_theta_violation: f64,
    /// Worst `|grad_ij + lambda sign(theta_ij)|` across nonzero free entries.
    pub nonzero_theta_violation: f64,
    /// Excess over `gamma` of the largest singular value of the `L` gradient
    /// restricted to the null directions of `L`.
    pub latent_violation: f64,
    pub passed: bool,
}

/// Subgradient optimality spot-checks at a fitted point.
pub fn kkt_check(
    fit: &FitResult,
    x: &DataMatrix,
    family: &FamilySpec,
    cfg: &PenaltyConfig,
    cons: Option<&StructureConstraints>,
    opts: &SolveOptions,
) -> Result<KktReport> {
    let (data, _) = prepared_data(x, family, opts);
    let obj = objective_for(&data, family)?;
    let engine = Engine::new(obj.as_ref(), *cfg, cons, data.dim(), data.n_samples())?;
    let g = engine.gradient(&fit.params)?;
    let p = &fit.params;
    let d = p.dim();

    let mut zero_v = 0.0f64;
    let mut nonzero_v = 0.0f64;
    if engine.fix_theta.is_none() {
        for i in 0..d {
            for j in (i + 1)..d {
                if let Some(mask) = &engine.support_mask {
                    if mask[(i, j)] == 0.0 {
                        continue;
                    }
                }
                let gij = g.grad_theta[(i, j)];
                let t = p.theta[(i, j)];
                if t.abs() <= SUPPORT_TOL {
                    let excess = if family.kind.nonnegative_interactions() {
                        -gij - cfg.lambda
                    } else {
                        gij.abs() - cfg.lambda
                    };
                    zero_v = zero_v.max(excess);
                } else {
                    nonzero_v = nonzero_v.max((gij + cfg.lambda * t.signum()).abs());
                }
            }
        }
    }

    let latent_v = {
        let gl = &g.grad_latent;
        let svd = linalg::thin_svd(&p.latent);
        let top = svd.s.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..svd.s.len()).filter(|&i| top > 0.0 && svd.s[i] > RANK_TOL * top).collect();
        let u = svd.u.select_columns(&keep);
        let v_t = svd.v_t.select_rows(&keep);
        let left = gl - &u * (u.transpose() * gl);
        let perp = &left - (&left * v_t.transpose()) * &v_t;
        linalg::spectral_norm(&perp) - cfg.gamma
    };

    Ok(KktReport {
        zero_theta_violation: zero_v.max(0.0),
        nonzero_theta_violation: nonzero_v,
        latent_violation: latent_v.max(0.0),
        passed: zero_v <= KKT_TOL && latent_v <= KKT_TOL,
    })
}
