//! The four supported exponential families: one-dimensional conditional
//! log-partitions, the exact Gaussian log-partition, parameter feasibility
//! and node-conditional natural parameters.
//!
//! The ancillary statistic `h` only matters when sampling (the Poisson pmf);
//! every term it contributes to an objective is constant in the parameters,
//! so it is never evaluated here.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_STRICT_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    Gaussian,
    Ising,
    Poisson,
    Exponential,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 4] = [
        FamilyKind::Gaussian,
        FamilyKind::Ising,
        FamilyKind::Poisson,
        FamilyKind::Exponential,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Ising => "ising",
            FamilyKind::Poisson => "poisson",
            FamilyKind::Exponential => "exponential",
        }
    }

    /// Human-readable support of a single coordinate.
    pub fn domain(&self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "real line",
            FamilyKind::Ising => "{-1, +1}",
            FamilyKind::Poisson => "nonnegative integers",
            FamilyKind::Exponential => "nonnegative reals",
        }
    }

    /// Whether the family keeps a free diagonal in `theta`.
    pub fn has_diagonal(&self) -> bool {
        matches!(self, FamilyKind::Gaussian)
    }

    /// Whether off-diagonal interactions are constrained to be nonnegative.
    pub fn nonnegative_interactions(&self) -> bool {
        matches!(self, FamilyKind::Poisson | FamilyKind::Exponential)
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(FamilyKind::Gaussian),
            "ising" => Ok(FamilyKind::Ising),
            "poisson" => Ok(FamilyKind::Poisson),
            "exponential" => Ok(FamilyKind::Exponential),
            other => Err(Error::InvalidInput(format!("unknown family '{other}'"))),
        }
    }
}

/// A family together with the interiority margin used for its open
/// constraints (`theta > 0` for Gaussian, `u < 0` for exponential).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub strict_margin: f64,
}

impl FamilySpec {
    pub fn new(kind: FamilyKind) -> Self {
        FamilySpec {
            kind,
            strict_margin: DEFAULT_STRICT_MARGIN,
        }
    }

    pub fn gaussian() -> Self {
        Self::new(FamilyKind::Gaussian)
    }

    pub fn ising() -> Self {
        Self::new(FamilyKind::Ising)
    }

    pub fn poisson() -> Self {
        Self::new(FamilyKind::Poisson)
    }

    pub fn exponential() -> Self {
        Self::new(FamilyKind::Exponential)
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.strict_margin = margin;
        self
    }

    /// Whether a single observed value lies in the family's support.
    pub fn value_in_domain(&self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        match self.kind {
            FamilyKind::Gaussian => true,
            FamilyKind::Ising => v == 1.0 || v == -1.0,
            FamilyKind::Poisson => v >= 0.0 && v.fract() == 0.0,
            FamilyKind::Exponential => v >= 0.0,
        }
    }

    fn check_domain(&self, u: f64) -> Result<()> {
        let ok = match self.kind {
            FamilyKind::Exponential => u < -self.strict_margin,
            _ => u.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain {
                kind: self.kind,
                value: u,
            })
        }
    }
}

/// Natural parameters `(alpha, theta, L)`; column `k` of `latent` is the
/// latent shift of the node potentials for sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: DVector<f64>,
    pub theta: DMatrix<f64>,
    pub latent: DMatrix<f64>,
}

impl ModelParams {
    pub fn zeros(d: usize, n: usize) -> Self {
        ModelParams {
            alpha: DVector::zeros(d),
            theta: DMatrix::zeros(d, d),
            latent: DMatrix::zeros(d, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_samples(&self) -> usize {
        self.latent.ncols()
    }

    /// Feasibility of `(alpha + L^(k), theta)` for every sample `k`.
    pub fn is_feasible(&self, family: &FamilySpec) -> bool {
        if self.n_samples() == 0 {
            return is_feasible(family, &self.alpha, &self.theta);
        }
        // Only the exponential family constrains alpha; check theta once.
        if !is_feasible(family, &DVector::zeros(0), &self.theta) {
            return false;
        }
        if family.kind != FamilyKind::Exponential {
            return true;
        }
        self.latent.column_iter().all(|col| {
            col.iter()
                .zip(self.alpha.iter())
                .all(|(l, a)| a + l <= -family.strict_margin)
        })
    }
}

/// One-dimensional conditional log-partition.
pub fn rho(family: &FamilySpec, u: f64) -> Result<f64> {
    family.check_domain(u)?;
    Ok(match family.kind {
        FamilyKind::Gaussian => 0.5 * u * u + 0.5 * (2.0 * PI).ln(),
        FamilyKind::Ising => log_cosh(u),
        FamilyKind::Poisson => u.exp(),
        FamilyKind::Exponential => -(-u).ln(),
    })
}

pub fn rho_prime(family: &FamilySpec, u: f64) -> Result<f64> {
    family.check_domain(u)?;
    Ok(match family.kind {
        FamilyKind::Gaussian => u,
        FamilyKind::Ising => u.tanh(),
        FamilyKind::Poisson => u.exp(),
        FamilyKind::Exponential => -1.0 / u,
    })
}

pub(crate) fn log_cosh(u: f64) -> f64 {
    let a = u.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

/// Exact Gaussian log-partition `(alpha' theta^{-1} alpha - log det theta + d log 2 pi) / 2`.
pub fn log_partition_gaussian(alpha: &DVector<f64>, theta: &DMatrix<f64>) -> Result<f64> {
    if alpha.len() != theta.nrows() || !theta.is_square() {
        return Err(Error::Shape("alpha/theta dimensions disagree".into()));
    }
    let chol = linalg::cholesky(theta)?;
    let d = alpha.len() as f64;
    let quad = alpha.dot(&chol.solve(alpha));
    Ok(0.5 * (quad - chol.ln_determinant() + d * (2.0 * PI).ln()))
}

/// Membership of `(alpha_eff, theta)` in the family's valid-parameter set,
/// with open constraints tightened by `strict_margin`.
///
/// An empty `alpha_eff` skips the checks that involve it.
pub fn is_feasible(family: &FamilySpec, alpha_eff: &DVector<f64>, theta: &DMatrix<f64>) -> bool {
    let d = theta.nrows();
    if !theta.is_square() || theta.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let zero_diag = (0..d).all(|i| theta[(i, i)] == 0.0);
    let nonneg_off = (0..d).all(|i| (0..d).all(|j| i == j || theta[(i, j)] >= 0.0));
    match family.kind {
        FamilyKind::Gaussian => linalg::min_eig_exceeds(theta, family.strict_margin),
        FamilyKind::Ising => zero_diag,
        FamilyKind::Poisson => zero_diag && nonneg_off,
        FamilyKind::Exponential => {
            zero_diag
                && nonneg_off
                && alpha_eff.iter().all(|&a| a <= -family.strict_margin)
        }
    }
}

/// Natural parameter of `x_i` given the remaining coordinates:
/// `alpha_i + latent_i - sum_{j != i} theta_ij x_j`.
pub fn node_conditional_param(
    alpha: &DVector<f64>,
    latent_effect: &DVector<f64>,
    theta: &DMatrix<f64>,
    x: &DVector<f64>,
    i: usize,
) -> f64 {
    let mut u = alpha[i] + latent_effect[i];
    for j in 0..x.len() {
        if j != i {
            u -= theta[(i, j)] * x[j];
        }
    }
    u
}
