//! Ground-truth models and samplers for synthetic experiments.
//!
//! Observations follow the conditional model with natural parameters
//! `(alpha + B z, theta)`: the node conditional of `x_i` has natural parameter
//! `u_i = alpha_i + (B z)_i - sum_{j != i} theta_ij x_j`. Gaussian data are
//! drawn exactly; other families use single-site Gibbs sampling.
//!
//! Samples are generated in fixed-size blocks, each with its own ChaCha
//! stream derived from `(seed, block index)`, so output is identical for any
//! number of worker threads.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::family::{is_feasible, FamilyKind, FamilySpec};
use crate::linalg;

const BLOCK: usize = 64;
const STREAM_THETA: u64 = 1;
const STREAM_LOADING: u64 = 2;
const STREAM_SAMPLES: u64 = 1 << 32;
const REJECTION_BUDGET: usize = 10_000;
/// Largest Poisson log-rate accepted by the sampler.
pub const MAX_LOG_RATE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    Cycle,
    ErdosRenyi(f64),
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKind::Cycle => write!(f, "cycle"),
            GraphKind::ErdosRenyi(p) => write!(f, "erdos_renyi({p})"),
        }
    }
}

impl FromStr for GraphKind {
    type Err = Error;

    /// Accepts `cycle`, `erdos_renyi(p)` or `erdos_renyi:p`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "cycle" {
            return Ok(GraphKind::Cycle);
        }
        let p = s
            .strip_prefix("erdos_renyi(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("erdos_renyi:"))
            .ok_or_else(|| Error::InvalidInput(format!("unknown graph '{s}'")))?;
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad edge probability in '{s}'")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("edge probability {p} outside [0, 1]")));
        }
        Ok(GraphKind::ErdosRenyi(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentLaw {
    Rademacher,
    StandardNormal,
    ExponentialMean1,
}

impl LatentLaw {
    pub fn name(&self) -> &'static str {
        match self {
            LatentLaw::Rademacher => "rademacher",
            LatentLaw::StandardNormal => "standard_normal",
            LatentLaw::ExponentialMean1 => "exponential_mean1",
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LatentLaw::Rademacher => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            LatentLaw::StandardNormal => rng.sample(StandardNormal),
            LatentLaw::ExponentialMean1 => rng.sample(Exp1),
        }
    }
}

impl fmt::Display for LatentLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LatentLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rademacher" => Ok(LatentLaw::Rademacher),
            "standard_normal" | "normal" => Ok(LatentLaw::StandardNormal),
            "exponential_mean1" | "exponential" => Ok(LatentLaw::ExponentialMean1),
            other => Err(Error::InvalidInput(format!("unknown latent law '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthSpec {
    pub family: FamilySpec,
    pub d: usize,
    pub graph: GraphKind,
    pub edge_weight: f64,
    pub r: usize,
    pub singular_values: Vec<f64>,
    /// Target squared coherence of the loading column space; draws are
    /// accepted in `[r/d, 1.44 * target]`. `None` keeps a Haar-random basis.
    pub coherence_target: Option<f64>,
    pub latent_law: LatentLaw,
    pub alpha_value: f64,
}

impl TruthSpec {
    /// Standard synthetic setup for a family: weights 0.4 (1 for
    /// exponential), per-family loading scales and latent laws, and
    /// squared-coherence target `1.2 r / d`.
    pub fn standard(kind: FamilyKind, d: usize, r: usize, graph: GraphKind) -> Self {
        let family = FamilySpec::new(kind);
        let (small, large) = ([0.72, 0.7, 0.68], [2.0, 1.95, 1.9]);
        let level = r.clamp(1, 3) - 1;
        let sv = match kind {
            FamilyKind::Gaussian | FamilyKind::Ising => small[level],
            _ => large[level],
        };
        let (edge_weight, latent_law, alpha_value) = match kind {
            FamilyKind::Gaussian => (0.4, LatentLaw::Rademacher, 0.0),
            FamilyKind::Ising => (0.4, LatentLaw::StandardNormal, 0.0),
            FamilyKind::Poisson => (0.4, LatentLaw::Rademacher, 0.0),
            FamilyKind::Exponential => (1.0, LatentLaw::ExponentialMean1, -1.0),
        };
        TruthSpec {
            family,
            d,
            graph,
            edge_weight,
            r,
            singular_values: vec![sv; r],
            coherence_target: Some(1.2 * r as f64 / d.max(1) as f64),
            latent_law,
            alpha_value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.d < 2 {
            return bad("need at least two variables");
        }
        if self.r >= self.d {
            return bad("latent count must be below the dimension");
        }
        if self.singular_values.len() != self.r {
            return bad("one singular value per latent variable is required");
        }
        if self.singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("singular values must be finite and nonnegative");
        }
        if !self.edge_weight.is_finite() || !self.alpha_value.is_finite() {
            return bad("edge weight and alpha must be finite");
        }
        if self.family.kind.nonnegative_interactions() && self.edge_weight < 0.0 {
            return bad("this family requires nonnegative edge weights");
        }
        if self.family.kind == FamilyKind::Exponential && self.alpha_value >= 0.0 {
            return bad("exponential family requires negative alpha");
        }
        Ok(())
    }

    pub fn alpha(&self) -> DVector<f64> {
        DVector::from_element(self.d, self.alpha_value)
    }
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Population interaction matrix for `spec.graph`.
pub fn make_theta(spec: &TruthSpec, seed: u64) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let d = spec.d;
    let mut rng = substream(seed, STREAM_THETA);
    let mut theta = DMatrix::zeros(d, d);
    let mut set = |i: usize, j: usize| {
        theta[(i, j)] = spec.edge_weight;
        theta[(j, i)] = spec.edge_weight;
    };
    match spec.graph {
        GraphKind::Cycle => {
            for i in 0..d {
                let j = (i + 1) % d;
                if i != j {
                    set(i, j);
                }
            }
        }
        GraphKind::ErdosRenyi(p) => {
            for i in 0..d {
                for j in (i + 1)..d {
                    if rng.random_bool(p) {
                        set(i, j);
                    }
                }
            }
        }
    }
    if spec.family.kind == FamilyKind::Gaussian {
        theta.fill_diagonal(1.0);
        let margin = spec.family.strict_margin;
        if !linalg::min_eig_exceeds(&theta, margin) {
            let (eig, _) = linalg::sym_eigen_desc(&theta);
            let shift = margin - eig[d - 1] + 0.05;
            for i in 0..d {
                theta[(i, i)] += shift;
            }
        }
    }
    Ok(theta)
}

/// `max_i ||P e_i||^2` for the span of an orthonormal basis.
pub fn squared_coherence(basis: &DMatrix<f64>) -> f64 {
    basis
        .row_iter()
        .map(|row| row.norm_squared())
        .fold(0.0, f64::max)
}

/// Low-coherence orthonormal proposal: orthonormalized random sign matrix.
fn flat_basis<R: Rng + ?Sized>(d: usize, r: usize, rng: &mut R) -> DMatrix<f64> {
    let signs = DMatrix::from_fn(d, r, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    let qr = signs.qr();
    let mut q = qr.q();
    let rdiag = qr.r();
    for j in 0..r {
        if rdiag[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Loading matrix `B = Q diag(s) R'`.
///
/// With a coherence target, `Q` is drawn from a flat proposal and accepted
/// once its squared coherence lies in `[r/d, 1.44 * target]`. For the
/// exponential family the result is replaced by `-|B|` so that latent shifts
/// are nonpositive; its singular values then only approximate `s`.
pub fn make_loading(spec: &TruthSpec, seed: u64) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (d, r) = (spec.d, spec.r);
    if r == 0 {
        return Ok(DMatrix::zeros(d, 0));
    }
    let mut rng = substream(seed, STREAM_LOADING);
    let q = match spec.coherence_target {
        None => linalg::haar_orthonormal(d, r, &mut rng),
        Some(target) => {
            let hi = 1.44 * target;
            let lo = r as f64 / d as f64;
            let mut found = None;
            for draws in 1..=REJECTION_BUDGET {
                let q = flat_basis(d, r, &mut rng);
                let c = squared_coherence(&q);
                if c >= lo - 1e-12 && c <= hi {
                    found = Some(q);
                    break;
                }
                if draws == REJECTION_BUDGET && spec.family.kind != FamilyKind::Exponential {
                    return Err(Error::RejectionBudgetExceeded { draws });
                }
            }
            match found {
                Some(q) => q,
                None => flat_basis(d, r, &mut rng),
            }
        }
    };
    let rot = linalg::haar_orthonormal(r, r, &mut rng);
    let s = DMatrix::from_diagonal(&DVector::from_column_slice(&spec.singular_values));
    let b = q * s * rot.transpose();
    Ok(if spec.family.kind == FamilyKind::Exponential {
        -b.abs()
    } else {
        b
    })
}

/// Sampler tuning; defaults are `200 d` burn-in updates and `10 d` updates
/// between kept samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub thin: usize,
}

impl GibbsConfig {
    pub fn default_for(d: usize) -> Self {
        GibbsConfig {
            burn_in: 200 * d,
            thin: 10 * d,
        }
    }
}

/// Draws `n` observations from the model `(alpha, theta, B)` of `spec`.
pub fn sample(
    spec: &TruthSpec,
    alpha: &DVector<f64>,
    theta: &DMatrix<f64>,
    b: &DMatrix<f64>,
    n: usize,
    gibbs: GibbsConfig,
    seed: u64,
) -> Result<DataMatrix> {
    spec.validate()?;
    let d = spec.d;
    if theta.shape() != (d, d) || alpha.len() != d || b.nrows() != d {
        return Err(Error::Shape("truth parameters do not match the dimension".into()));
    }
    if gibbs.thin == 0 {
        return Err(Error::InvalidInput("thin must be at least 1".into()));
    }
    let family = spec.family;
    if !is_feasible(&family, &DVector::zeros(0), theta) {
        return Err(Error::InfeasibleTruth("theta is outside the family's valid set".into()));
    }
    if family.kind == FamilyKind::Exponential {
        if alpha.iter().any(|a| *a > -family.strict_margin) {
            return Err(Error::InfeasibleTruth("exponential family requires alpha < 0".into()));
        }
        let shifts_nonpositive =
            spec.latent_law == LatentLaw::ExponentialMean1 && b.iter().all(|v| *v <= 0.0);
        if b.amax() > 0.0 && !shifts_nonpositive {
            return Err(Error::InfeasibleTruth(
                "exponential family needs B <= 0 with nonnegative latents".into(),
            ));
        }
    }
    let chol = if family.kind == FamilyKind::Gaussian {
        Some(linalg::cholesky(theta).map_err(|_| Error::InfeasibleTruth("theta is not positive definite".into()))?)
    } else {
        None
    };

    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<Result<DMatrix<f64>>> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let count = BLOCK.min(n - blk * BLOCK);
            let mut rng = substream(seed, STREAM_SAMPLES + blk as u64);
            let mut out = DMatrix::zeros(d, count);
            let mut state = initial_state(family.kind, d);
            for k in 0..count {
                let z = DVector::from_fn(b.ncols(), |_, _| spec.latent_law.draw(&mut rng));
                let shift = alpha + b * z;
                match &chol {
                    Some(c) => {
                        let mean = c.solve(&shift);
                        let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                        let l_t = c.l().transpose();
                        let noise = l_t
                            .solve_upper_triangular(&eps)
                            .expect("Cholesky factor has a positive diagonal");
                        out.set_column(k, &(mean + noise));
                    }
                    None => {
                        let updates = if k == 0 { gibbs.burn_in.max(gibbs.thin) } else { gibbs.thin };
                        gibbs_updates(&family, theta, &shift, &mut state, updates, &mut rng)?;
                        out.set_column(k, &state);
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut values = DMatrix::zeros(d, n);
    for (blk, part) in parts.into_iter().enumerate() {
        let part = part?;
        values.columns_mut(blk * BLOCK, part.ncols()).copy_from(&part);
    }
    Ok(DataMatrix::from_values(values))
}

fn initial_state(kind: FamilyKind, d: usize) -> DVector<f64> {
    match kind {
        FamilyKind::Exponential | FamilyKind::Ising => DVector::from_element(d, 1.0),
        _ => DVector::zeros(d),
    }
}

/// Systematic-scan single-site updates (`count` of them, wrapping over nodes).
fn gibbs_updates<R: Rng + ?Sized>(
    family: &FamilySpec,
    theta: &DMatrix<f64>,
    shift: &DVector<f64>,
    x: &mut DVector<f64>,
    count: usize,
    rng: &mut R,
) -> Result<()> {
    let d = x.len();
    for step in 0..count {
        let i = step % d;
        let mut u = shift[i];
        for j in 0..d {
            if j != i {
                u -= theta[(i, j)] * x[j];
            }
        }
        x[i] = draw_conditional(family, u, rng)?;
    }
    Ok(())
}

/// One draw from the node conditional with natural parameter `u`.
pub fn draw_conditional<R: Rng + ?Sized>(family: &FamilySpec, u: f64, rng: &mut R) -> Result<f64> {
    match family.kind {
        FamilyKind::Ising => {
            let p_plus = 1.0 / (1.0 + (-2.0 * u).exp());
            Ok(if rng.random::<f64>() < p_plus { 1.0 } else { -1.0 })
        }
        FamilyKind::Poisson => {
            if u > MAX_LOG_RATE {
                return Err(Error::RateOverflow { log_rate: u });
            }
            let rate = u.exp();
            if rate < 1e-300 {
                return Ok(0.0);
            }
            let p = Poisson::new(rate).map_err(|_| Error::RateOverflow { log_rate: u })?;
            Ok(p.sample(rng))
        }
        FamilyKind::Exponential => {
            if !(u < 0.0) {
                return Err(Error::Domain { kind: family.kind, value: u });
            }
            let e = Exp::new(-u).map_err(|_| Error::Domain { kind: family.kind, value: u })?;
            Ok(e.sample(rng))
        }
        FamilyKind::Gaussian => Ok(u + rng.sample::<f64, _>(StandardNormal)),
    }
}

/// Full ground truth: `(alpha, theta, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub alpha: DVector<f64>,
    pub theta: DMatrix<f64>,
    pub loading: DMatrix<f64>,
}

pub fn make_truth(spec: &TruthSpec, seed: u64) -> Result<Truth> {
    Ok(Truth {
        alpha: spec.alpha(),
        theta: make_theta(spec, seed)?,
        loading: make_loading(spec, seed)?,
    })
}

/// Truth plus `n` samples, all from one seed.
pub fn generate(spec: &TruthSpec, n: usize, gibbs: GibbsConfig, seed: u64) -> Result<(Truth, DataMatrix)> {
    let truth = make_truth(spec, seed)?;
    let x = sample(spec, &truth.alpha, &truth.theta, &truth.loading, n, gibbs, seed)?;
    Ok((truth, x))
}
