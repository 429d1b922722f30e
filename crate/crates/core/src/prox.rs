//! Closed-form proximal operators and feasible-set projections.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::{FamilyKind, FamilySpec, ModelParams};
use crate::linalg;

/// Regularization weights: `lambda * ||theta||_1 + gamma * ||L||_*`.
///
/// The l1 norm runs over all penalized entries of `theta`, so each
/// off-diagonal pair is counted twice. The diagonal is only ever penalized
/// for the Gaussian family, and only when `penalize_diagonal` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub penalize_diagonal: bool,
}

impl PenaltyConfig {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        let cfg = PenaltyConfig {
            lambda,
            gamma,
            penalize_diagonal: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn unpenalized() -> Self {
        PenaltyConfig {
            lambda: 0.0,
            gamma: 0.0,
            penalize_diagonal: false,
        }
    }

    pub fn with_diagonal(mut self, on: bool) -> Self {
        self.penalize_diagonal = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.lambda) && ok(self.gamma) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "penalty weights must be finite and nonnegative (lambda = {}, gamma = {})",
                self.lambda, self.gamma
            )))
        }
    }

    fn diagonal_penalized(&self, family: &FamilySpec) -> bool {
        self.penalize_diagonal && family.kind == FamilyKind::Gaussian
    }

    pub fn l1_part(&self, theta: &DMatrix<f64>, family: &FamilySpec) -> f64 {
        let d = theta.nrows();
        let diag = self.diagonal_penalized(family);
        let mut total = 0.0;
        for j in 0..d {
            for i in 0..d {
                if i != j || diag {
                    total += theta[(i, j)].abs();
                }
            }
        }
        self.lambda * total
    }

    /// Penalty value at `p`.
    pub fn value(&self, p: &ModelParams, family: &FamilySpec) -> f64 {
        let nuclear = if self.gamma > 0.0 {
            self.gamma * linalg::nuclear_norm(&p.latent)
        } else {
            0.0
        };
        self.l1_part(&p.theta, family) + nuclear
    }
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Proximal map of `t * (lambda * ||.||_1 + indicator of the family's theta
/// constraints)`, applied entrywise to a symmetric matrix.
pub fn prox_l1_theta(m: &DMatrix<f64>, t: f64, family: &FamilySpec, cfg: &PenaltyConfig) -> DMatrix<f64> {
    let thresh = t * cfg.lambda;
    let d = m.nrows();
    let mut out = m.clone();
    let nonneg = family.kind.nonnegative_interactions();
    for j in 0..d {
        for i in 0..d {
            let v = m[(i, j)];
            out[(i, j)] = if i == j {
                if !family.kind.has_diagonal() {
                    0.0
                } else if cfg.diagonal_penalized(family) {
                    soft(v, thresh)
                } else {
                    v
                }
            } else if nonneg {
                (v - thresh).max(0.0)
            } else {
                soft(v, thresh)
            };
        }
    }
    out
}

/// Singular value thresholding: the proximal map of `t * ||.||_*`.
pub fn svt(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    if t <= 0.0 {
        return m.clone();
    }
    let svd = linalg::thin_svd(m);
    let keep: Vec<usize> = (0..svd.s.len()).filter(|&i| svd.s[i] > t).collect();
    if keep.is_empty() {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    let u = svd.u.select_columns(&keep);
    let shrunk = DVector::from_iterator(keep.len(), keep.iter().map(|&i| svd.s[i] - t));
    let mut v_t = svd.v_t.select_rows(&keep);
    for (r, s) in shrunk.iter().enumerate() {
        v_t.row_mut(r).scale_mut(*s);
    }
    u * v_t
}

/// Enforces `(alpha + L^(k))_i <= -margin` for the exponential family by the
/// smallest per-coordinate decrease of `alpha`; other families pass through.
pub fn project_domain(
    family: &FamilySpec,
    alpha: &DVector<f64>,
    latent: &DMatrix<f64>,
    margin: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    if family.kind != FamilyKind::Exponential {
        return (alpha.clone(), latent.clone());
    }
    let mut a = alpha.clone();
    for i in 0..a.len() {
        let top = if latent.ncols() == 0 {
            0.0
        } else {
            latent.row(i).max()
        };
        a[i] = a[i].min(-margin - top);
        // Rounding in -margin - top can leave a[i] + top one ulp too high.
        while a[i] + top > -margin {
            a[i] -= (a[i].abs() + top.abs()).max(1.0) * f64::EPSILON;
        }
    }
    (a, latent.clone())
}

/// Exact projection of one row onto `{(a, l): a + l_k <= -margin for all k}`
/// under the weights `(a - a0)^2 / 2 + w/2 sum_k (l_k - t_k)^2`. With
/// `fixed_a` the first coordinate is held at `a0`.
pub(crate) fn project_row_cap(a0: f64, t: &[f64], w: f64, margin: f64, fixed_a: bool) -> (f64, Vec<f64>) {
    let a = if fixed_a {
        a0
    } else {
        // Optimal a solves (a - a0) + w * sum_k max(0, t_k + margin + a) = 0.
        let mut sorted: Vec<f64> = t.to_vec();
        sorted.sort_unstable_by(|x, y| y.total_cmp(x));
        let mut a = a0;
        let mut acc = 0.0;
        for (j, &tk) in sorted.iter().enumerate() {
            if tk + margin + a <= 0.0 {
                break;
            }
            acc += tk;
            let active = (j + 1) as f64;
            a = (a0 - w * acc - w * active * margin) / (1.0 + w * active);
        }
        a
    };
    let cap = -margin - a;
    (a, t.iter().map(|&v| v.min(cap)).collect())
}

fn prox_nuclear_in(m: &DMatrix<f64>, t: f64, colspace: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    match colspace {
        Some(c) if c.ncols() == 0 => DMatrix::zeros(m.nrows(), m.ncols()),
        Some(c) => c * svt(&(c.transpose() * m), t),
        None => svt(m, t),
    }
}

/// Joint proximal map of `(alpha, L)` for the exponential family:
///
/// `argmin 1/2 |alpha - a0|^2 + 1/(2c) |L - m|^2 + tau ||L||_*`
/// subject to `alpha_i + L_ik <= -margin`, `L` in the span of `colspace`
/// (when given) and `alpha = a0` when `fixed_alpha`.
///
/// Returns the unconstrained prox directly when it is feasible; otherwise
/// runs ADMM on the split `L = Z` and finishes with a feasibility repair:
/// alpha is shifted down (free alpha) or `L` is pulled toward `fallback`, a
/// feasible point in the constraint set (fixed alpha).
#[allow(clippy::too_many_arguments)]
pub fn prox_alpha_latent_capped(
    a0: &DVector<f64>,
    m: &DMatrix<f64>,
    c: f64,
    tau: f64,
    margin: f64,
    fixed_alpha: bool,
    colspace: Option<&DMatrix<f64>>,
    fallback: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (d, n) = m.shape();
    let thresh = tau * c;
    let feasible = |a: &DVector<f64>, l: &DMatrix<f64>| (0..d).all(|i| (0..n).all(|k| a[i] + l[(i, k)] <= -margin));
    let mut l = prox_nuclear_in(m, thresh, colspace);
    if feasible(a0, &l) {
        return (a0.clone(), l);
    }

    let rho = 1.0 / c;
    let w = 1.0 / c + rho;
    let mut a = a0.clone();
    let mut z = l.clone();
    let mut u = DMatrix::zeros(d, n);
    let scale = 1.0 + m.norm() + a0.norm();
    let mut row = vec![0.0; n];
    for _ in 0..5000 {
        l = prox_nuclear_in(&(&z - &u), thresh, colspace);
        let z_prev = z.clone();
        for i in 0..d {
            for k in 0..n {
                row[k] = 0.5 * (m[(i, k)] + l[(i, k)] + u[(i, k)]);
            }
            let (ai, zi) = project_row_cap(a0[i], &row, w, margin, fixed_alpha);
            a[i] = ai;
            for k in 0..n {
                z[(i, k)] = zi[k];
            }
        }
        u += &l - &z;
        let primal = (&l - &z).norm();
        let dual = rho * (&z - &z_prev).norm();
        if primal <= 1e-11 * scale && dual <= 1e-11 * scale {
            break;
        }
    }

    if !fixed_alpha {
        let (a, _) = project_domain(&FamilySpec::exponential(), &a, &l, margin);
        return (a, l);
    }
    // Largest step from the feasible fallback toward l that stays feasible.
    let mut theta = 1.0f64;
    for i in 0..d {
        for k in 0..n {
            let (f0, f1) = (a[i] + fallback[(i, k)], a[i] + l[(i, k)]);
            if f1 > -margin && f1 > f0 {
                theta = theta.min(((-margin - f0) / (f1 - f0)).max(0.0));
            }
        }
    }
    let step = &l - fallback;
    loop {
        let candidate = fallback + &step * theta;
        if theta == 0.0 || feasible(&a, &candidate) {
            return (a, candidate);
        }
        theta = if theta < 1e-12 { 0.0 } else { theta * (1.0 - 1e-9) };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit() -> PenaltyConfig {
        PenaltyConfig::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn prox_l1_examples() {
        let z = DMatrix::zeros(3, 3);
        assert_eq!(prox_l1_theta(&z, 0.7, &FamilySpec::gaussian(), &unit()), z);

        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let out = prox_l1_theta(&m, 0.5, &FamilySpec::gaussian(), &unit());
        assert_eq!(out[(0, 1)], 1.5);
        assert_eq!(out[(0, 0)], 1.0);

        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.3, -0.3, 0.0]);
        for t in [1e-6, 0.1, 10.0] {
            assert_eq!(prox_l1_theta(&m, t, &FamilySpec::poisson(), &unit()), DMatrix::zeros(2, 2));
        }
    }

    #[test]
    fn prox_l1_diagonal_handling() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 3.0]);
        let g = prox_l1_theta(&m, 0.5, &FamilySpec::gaussian(), &unit().with_diagonal(true));
        assert_eq!((g[(0, 0)], g[(1, 1)], g[(0, 1)]), (1.5, 2.5, 0.0));
        let ising = prox_l1_theta(&m, 0.05, &FamilySpec::ising(), &unit());
        assert_eq!((ising[(0, 0)], ising[(1, 1)]), (0.0, 0.0));
        assert!((ising[(0, 1)] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn svt_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DMatrix::from_fn(3, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        assert_eq!(svt(&m, 0.0), m);

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let out = svt(&d, 2.0);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn project_domain_examples() {
        let alpha = DVector::from_vec(vec![0.5, -1.0]);
        let l = DMatrix::zeros(2, 3);
        let (a, _) = project_domain(&FamilySpec::ising(), &alpha, &l, 1e-8);
        assert_eq!(a, alpha);
        let (a, out_l) = project_domain(&FamilySpec::exponential(), &alpha, &l, 1e-8);
        assert_eq!(a.as_slice(), &[-1e-8, -1.0]);
        assert_eq!(out_l, l);

        let l = DMatrix::from_row_slice(1, 2, &[0.2, -0.4]);
        let (a, _) = project_domain(&FamilySpec::exponential(), &DVector::from_vec(vec![-0.1]), &l, 0.0);
        assert!((a[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn row_cap_projection_is_optimal() {
        let t = [0.5, -2.0, 0.1, 1.0];
        for fixed in [false, true] {
            let (a, l) = project_row_cap(0.3, &t, 0.7, 1e-3, fixed);
            assert!(l.iter().all(|v| a + v <= -1e-3 + 1e-15));
            let obj = |a: f64, l: &[f64]| 0.5 * (a - 0.3f64).powi(2) + 0.35 * l.iter().zip(&t).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            let best = obj(a, &l);
            let grid: Vec<f64> = if fixed { vec![0.3] } else { (0..4001).map(|i| -3.0 + i as f64 * 0.001).collect() };
            for b in grid {
                let cap = -1e-3 - b;
                let lb: Vec<f64> = t.iter().map(|v| v.min(cap)).collect();
                assert!(obj(b, &lb) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn capped_prox_is_feasible_and_beats_shifting() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = DMatrix::from_fn(3, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a0 = DVector::from_vec(vec![0.2, -0.5, 0.1]);
        let (c, tau, margin) = (6.0, 0.05, 1e-8);
        let fallback = DMatrix::from_element(3, 6, -5.0);
        let obj = |a: &DVector<f64>, l: &DMatrix<f64>| {
            0.5 * (a - &a0).norm_squared() + (l - &m).norm_squared() / (2.0 * c) + tau * linalg::nuclear_norm(l)
        };
        let (a, l) = prox_alpha_latent_capped(&a0, &m, c, tau, margin, false, None, &fallback);
        for i in 0..3 {
            for k in 0..6 {
                assert!(a[i] + l[(i, k)] <= -margin);
            }
        }
        let l_plain = svt(&m, tau * c);
        let (a_shift, _) = project_domain(&FamilySpec::exponential(), &a0, &l_plain, margin);
        assert!(obj(&a, &l) <= obj(&a_shift, &l_plain) + 1e-12);
        // Random feasible perturbations never do better.
        for _ in 0..200 {
            let dl = DMatrix::from_fn(3, 6, |_, _| 1e-3 * rng.sample::<f64, _>(StandardNormal));
            let da = DVector::from_fn(3, |_, _| 1e-3 * rng.sample::<f64, _>(StandardNormal));
            let (a2, l2) = (&a + da, &l + dl);
            let ok = (0..3).all(|i| (0..6).all(|k| a2[i] + l2[(i, k)] <= -margin));
            if ok {
                assert!(obj(&a2, &l2) >= obj(&a, &l) - 1e-9);
            }
        }

        let (a, l) = prox_alpha_latent_capped(&a0, &m, c, tau, margin, true, None, &fallback);
        assert_eq!(a, a0);
        for i in 0..3 {
            for k in 0..6 {
                assert!(a[i] + l[(i, k)] <= -margin);
            }
        }
    }

    fn random_sym(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        linalg::symmetrize(&m)
    }

    proptest! {
        #[test]
        fn prox_operators_are_nonexpansive(seed in 0u64..1000, t in 0.01f64..2.0, k in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fam = FamilySpec::new(FamilyKind::ALL[k]);
            let cfg = unit();
            let (a, b) = (random_sym(&mut rng, 4), random_sym(&mut rng, 4));
            let pa = prox_l1_theta(&a, t, &fam, &cfg);
            let pb = prox_l1_theta(&b, t, &fam, &cfg);
            prop_assert!((pa - pb).norm() <= (&a - &b).norm() + 1e-12);

            let a = DMatrix::from_fn(3, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = DMatrix::from_fn(3, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
            prop_assert!((svt(&a, t) - svt(&b, t)).norm() <= (&a - &b).norm() + 1e-12);
        }

        #[test]
        fn svt_is_orthogonally_equivariant(seed in 0u64..1000, t in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(3, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let u = linalg::haar_orthonormal(3, 3, &mut rng);
            let v = linalg::haar_orthonormal(4, 4, &mut rng);
            let lhs = svt(&(&u * &m * v.transpose()), t);
            let rhs = &u * svt(&m, t) * v.transpose();
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }

        #[test]
        fn prox_l1_keeps_symmetry_and_feasibility(seed in 0u64..1000, t in 0.0f64..1.0, k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fam = FamilySpec::new(FamilyKind::ALL[k]);
            let out = prox_l1_theta(&random_sym(&mut rng, 5), t, &fam, &unit());
            prop_assert!(linalg::max_asymmetry(&out) == 0.0);
            prop_assert!(crate::family::is_feasible(&fam, &DVector::from_element(5, -1.0), &out));
        }
    }
}
