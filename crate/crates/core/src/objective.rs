//! Smooth parts of the two implemented objectives and their gradients.
//!
//! * Gaussian: the exact conditional negative log-likelihood with `alpha = 0`,
//!   `tr(L' T^{-1} L)/2n - log det T / 2 - tr(L' X)/n + tr(T X X')/2n`.
//! * Ising / Poisson / exponential: the conditional negative log
//!   pseudo-likelihood `(1/n) sum_k [sum_i rho(u_ik) - (alpha + L_k)' x_k + x_k' T x_k]`
//!   with `u_ik = alpha_i + L_ik - sum_{j != i} T_ij x_jk`.
//!
//! Gradients are taken with respect to every matrix entry, so `grad_theta` is
//! symmetric and an off-diagonal pair moves the objective by
//! `2 * grad_theta[(i, j)]` per unit.

use nalgebra::{DMatrix, DVector};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::family::{FamilyKind, FamilySpec, ModelParams};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothEval {
    pub value: f64,
    pub grad_alpha: DVector<f64>,
    pub grad_theta: DMatrix<f64>,
    pub grad_latent: DMatrix<f64>,
}

/// Smooth objective bound to a dataset.
pub trait SmoothObjective {
    fn value(&self, p: &ModelParams) -> Result<f64>;
    fn eval(&self, p: &ModelParams) -> Result<SmoothEval>;
    fn family(&self) -> &FamilySpec;
}

pub struct GaussianObjective<'a> {
    x: &'a DMatrix<f64>,
    cov: DMatrix<f64>,
    n: f64,
    family: FamilySpec,
}

impl<'a> GaussianObjective<'a> {
    pub fn new(x: &'a DataMatrix) -> Self {
        Self::from_matrix(x.values())
    }

    pub fn from_matrix(x: &'a DMatrix<f64>) -> Self {
        Self::with_normalizer(x, x.ncols().max(1) as f64)
    }

    /// Objective whose sample averages divide by `n` instead of the column
    /// count of `x`.
    pub fn with_normalizer(x: &'a DMatrix<f64>, n: f64) -> Self {
        GaussianObjective {
            x,
            cov: x * x.transpose() / n,
            n,
            family: FamilySpec::gaussian(),
        }
    }

    fn check_shapes(&self, p: &ModelParams) -> Result<()> {
        let (d, n) = self.x.shape();
        if p.theta.shape() != (d, d) || p.latent.shape() != (d, n) {
            return Err(Error::Shape(format!(
                "theta {:?} / L {:?} against data {d}x{n}",
                p.theta.shape(),
                p.latent.shape()
            )));
        }
        Ok(())
    }

    fn n(&self) -> f64 {
        self.n
    }
}

impl SmoothObjective for GaussianObjective<'_> {
    fn value(&self, p: &ModelParams) -> Result<f64> {
        self.check_shapes(p)?;
        let chol = linalg::cholesky(&p.theta)?;
        let n = self.n();
        let solved = chol.solve(&p.latent);
        let quad = p.latent.dot(&solved);
        let cross = p.latent.dot(self.x);
        Ok(quad / (2.0 * n) - 0.5 * chol.ln_determinant() - cross / n
            + 0.5 * p.theta.dot(&self.cov))
    }

    fn eval(&self, p: &ModelParams) -> Result<SmoothEval> {
        self.check_shapes(p)?;
        let chol = linalg::cholesky(&p.theta)?;
        let n = self.n();
        let solved = chol.solve(&p.latent);
        let quad = p.latent.dot(&solved);
        let cross = p.latent.dot(self.x);
        let value = quad / (2.0 * n) - 0.5 * chol.ln_determinant() - cross / n
            + 0.5 * p.theta.dot(&self.cov);

        let inv = chol.inverse();
        let outer = &solved * solved.transpose();
        let grad_theta = linalg::symmetrize(&(outer * (-0.5 / n) - inv * 0.5 + &self.cov * 0.5));
        let grad_latent = (solved - self.x) / n;
        Ok(SmoothEval {
            value,
            grad_alpha: DVector::zeros(p.dim()),
            grad_theta,
            grad_latent,
        })
    }

    fn family(&self) -> &FamilySpec {
        &self.family
    }
}

pub struct PseudoObjective<'a> {
    x: &'a DMatrix<f64>,
    second_moment: DMatrix<f64>,
    family: FamilySpec,
}

impl<'a> PseudoObjective<'a> {
    pub fn new(x: &'a DataMatrix, family: FamilySpec) -> Result<Self> {
        if family.kind == FamilyKind::Gaussian {
            return Err(Error::InvalidInput(
                "the Gaussian family uses the exact likelihood, not pseudo-likelihood".into(),
            ));
        }
        let x = x.values();
        let n = x.ncols().max(1) as f64;
        // Only off-diagonal interactions enter the node conditionals.
        let mut second_moment = x * x.transpose() / n;
        second_moment.fill_diagonal(0.0);
        Ok(PseudoObjective {
            x,
            second_moment,
            family,
        })
    }

    fn n(&self) -> f64 {
        self.x.ncols().max(1) as f64
    }

    /// Node-conditional natural parameters for every (node, sample).
    pub fn natural_params(&self, p: &ModelParams) -> Result<DMatrix<f64>> {
        let (d, n) = self.x.shape();
        if p.alpha.len() != d || p.theta.shape() != (d, d) || p.latent.shape() != (d, n) {
            return Err(Error::Shape(format!(
                "alpha {} / theta {:?} / L {:?} against data {d}x{n}",
                p.alpha.len(),
                p.theta.shape(),
                p.latent.shape()
            )));
        }
        let mut off = p.theta.clone();
        off.fill_diagonal(0.0);
        let mut u = &p.latent - off * self.x;
        for mut col in u.column_iter_mut() {
            col += &p.alpha;
        }
        Ok(u)
    }

    fn rho_sum(&self, u: &DMatrix<f64>) -> Result<f64> {
        let margin = self.family.strict_margin;
        let kind = self.family.kind;
        let mut total = 0.0;
        match kind {
            FamilyKind::Ising => {
                for &v in u.iter() {
                    total += crate::family::log_cosh(v);
                }
            }
            FamilyKind::Poisson => {
                for &v in u.iter() {
                    total += v.exp();
                }
            }
            FamilyKind::Exponential => {
                for &v in u.iter() {
                    if !(v < -margin) {
                        return Err(Error::Domain { kind, value: v });
                    }
                    total -= (-v).ln();
                }
            }
            FamilyKind::Gaussian => unreachable!("rejected in constructor"),
        }
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::Domain {
                kind,
                value: f64::INFINITY,
            })
        }
    }

    fn linear_terms(&self, p: &ModelParams) -> f64 {
        let shift: f64 = p.alpha.dot(&self.x.column_sum());
        (shift + p.latent.dot(self.x)) / self.n() - p.theta.dot(&self.second_moment)
    }
}

impl SmoothObjective for PseudoObjective<'_> {
    fn value(&self, p: &ModelParams) -> Result<f64> {
        let u = self.natural_params(p)?;
        Ok(self.rho_sum(&u)? / self.n() - self.linear_terms(p))
    }

    fn eval(&self, p: &ModelParams) -> Result<SmoothEval> {
        let u = self.natural_params(p)?;
        let n = self.n();
        let value = self.rho_sum(&u)? / n - self.linear_terms(p);

        let fam = self.family;
        let mean = match fam.kind {
            FamilyKind::Ising => u.map(f64::tanh),
            FamilyKind::Poisson => u.map(f64::exp),
            FamilyKind::Exponential => u.map(|v| -1.0 / v),
            FamilyKind::Gaussian => unreachable!(),
        };
        let resid = &mean - self.x;
        let grad_latent = &resid / n;
        let grad_alpha = resid.column_sum() / n;
        let mut row_grad = -(&mean * self.x.transpose()) / n;
        row_grad.fill_diagonal(0.0);
        row_grad += &self.second_moment;
        Ok(SmoothEval {
            value,
            grad_alpha,
            grad_theta: linalg::symmetrize(&row_grad),
            grad_latent,
        })
    }

    fn family(&self) -> &FamilySpec {
        &self.family
    }
}

/// Smooth Gaussian objective and gradient at `(theta, L)` (alpha fixed at 0).
pub fn gaussian_smooth(theta: &DMatrix<f64>, latent: &DMatrix<f64>, x: &DataMatrix) -> Result<SmoothEval> {
    let p = ModelParams {
        alpha: DVector::zeros(theta.nrows()),
        theta: theta.clone(),
        latent: latent.clone(),
    };
    GaussianObjective::new(x).eval(&p)
}

/// Smooth pseudo-likelihood objective and gradient.
pub fn pseudo_smooth(
    alpha: &DVector<f64>,
    theta: &DMatrix<f64>,
    latent: &DMatrix<f64>,
    x: &DataMatrix,
    family: &FamilySpec,
) -> Result<SmoothEval> {
    let p = ModelParams {
        alpha: alpha.clone(),
        theta: theta.clone(),
        latent: latent.clone(),
    };
    PseudoObjective::new(x, *family)?.eval(&p)
}

/// Builds the objective appropriate for `family`.
pub fn objective_for<'a>(x: &'a DataMatrix, family: &FamilySpec) -> Result<Box<dyn SmoothObjective + 'a>> {
    match family.kind {
        FamilyKind::Gaussian => Ok(Box::new(GaussianObjective {
            family: *family,
            ..GaussianObjective::new(x)
        })),
        _ => Ok(Box::new(PseudoObjective::new(x, *family)?)),
    }
}
