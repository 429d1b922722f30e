//! Independent reference implementations used as oracles by the integration
//! tests. Nothing here calls into the solver or proximal code under test.

#![allow(dead_code)]

use lvgm_core::DataMatrix;
use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn symmetric(r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = normal_matrix(r, r, rng);
    (&a + a.transpose()) * 0.5
}

/// Random symmetric positive definite matrix with eigenvalues at least `floor`.
pub fn random_spd(d: usize, floor: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = normal_matrix(d, d, rng);
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * floor
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the sign
/// of R's diagonal absorbed).
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = normal_matrix(n, n, rng).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Gaussian data with a rank-one shared shift.
pub fn gaussian_data(d: usize, n: usize, seed: u64) -> DataMatrix {
    let mut rng = rng(seed);
    let b: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut m = DMatrix::zeros(d, n);
    for k in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        for i in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            m[(i, k)] = e + 0.8 * b[i] * z;
        }
    }
    DataMatrix::from_values(m)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Block coordinate-descent graphical lasso: minimizes
/// `-log det T + tr(S T) + rho * sum_{i != j} |T_ij|` with an unpenalized
/// diagonal, working on the covariance estimate `W` one column at a time.
pub fn graphical_lasso(s: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let d = s.nrows();
    let mut w = s.clone();
    let mut beta = DMatrix::<f64>::zeros(d - 1, d);
    let others = |j: usize| (0..d).filter(move |&k| k != j).collect::<Vec<_>>();
    for _sweep in 0..10_000 {
        let w_old = w.clone();
        for j in 0..d {
            let idx = others(j);
            let w11 = DMatrix::from_fn(d - 1, d - 1, |a, b| w[(idx[a], idx[b])]);
            let s12 = DVector::from_fn(d - 1, |a, _| s[(idx[a], j)]);
            let mut b = beta.column(j).into_owned();
            for _ in 0..100_000 {
                let mut delta = 0.0f64;
                for a in 0..d - 1 {
                    let mut r = s12[a];
                    for c in 0..d - 1 {
                        if c != a {
                            r -= w11[(a, c)] * b[c];
                        }
                    }
                    let new = soft(r, rho) / w11[(a, a)];
                    delta = delta.max((new - b[a]).abs());
                    b[a] = new;
                }
                if delta < 1e-15 {
                    break;
                }
            }
            let w12 = &w11 * &b;
            for (a, &i) in idx.iter().enumerate() {
                w[(i, j)] = w12[a];
                w[(j, i)] = w12[a];
            }
            beta.set_column(j, &b);
        }
        if (&w - &w_old).amax() < 1e-14 {
            break;
        }
    }
    let mut theta = DMatrix::zeros(d, d);
    for j in 0..d {
        let idx = others(j);
        let b = beta.column(j);
        let w12 = DVector::from_fn(d - 1, |a, _| w[(idx[a], j)]);
        let t22 = 1.0 / (w[(j, j)] - w12.dot(&b));
        theta[(j, j)] = t22;
        for (a, &i) in idx.iter().enumerate() {
            theta[(i, j)] = -b[a] * t22;
        }
    }
    (&theta + theta.transpose()) * 0.5
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Minimizer of a convex function on `[lo, hi]` by golden-section search.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..300 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
        if hi - lo < 1e-14 * (1.0 + lo.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Nuclear-norm proximal point of a 3 x 3 matrix by gradient descent on the
/// factorized objective `1/2 |A B' - M|^2 + t/2 (|A|^2 + |B|^2)`, whose
/// minimum value equals that of `1/2 |X - M|^2 + t |X|_*`.
pub fn nuclear_prox_descent(m: &DMatrix<f64>, t: f64, seed: u64) -> DMatrix<f64> {
    assert_eq!(m.shape(), (3, 3));
    let m = Matrix3::from_iterator(m.iter().copied());
    let mut rng = rng(seed);
    let mut a = Matrix3::from_fn(|_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let mut b = Matrix3::from_fn(|_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let scale = m.norm().max(t).max(1.0);
    let mut step = 0.5 / scale;
    let value = |a: &Matrix3<f64>, b: &Matrix3<f64>| 0.5 * (a * b.transpose() - m).norm_squared() + 0.5 * t * (a.norm_squared() + b.norm_squared());
    let mut f = value(&a, &b);
    for _ in 0..5_000_000 {
        let res = a * b.transpose() - m;
        let ga = res * b + a * t;
        let gb = res.transpose() * a + b * t;
        let g2 = ga.norm_squared() + gb.norm_squared();
        if g2.sqrt() < 1e-12 * scale {
            break;
        }
        loop {
            let (na, nb) = (a - ga * step, b - gb * step);
            let nf = value(&na, &nb);
            if nf <= f - 0.25 * step * g2 || step < 1e-12 {
                a = na;
                b = nb;
                f = nf;
                step *= 1.2;
                break;
            }
            step *= 0.5;
        }
    }
    let x = a * b.transpose();
    DMatrix::from_iterator(3, 3, x.iter().copied())
}

/// Ising pseudo-likelihood loss per sample, with every node-conditional
/// normalizer summed explicitly over `x_i = -1, +1`. The joint exponent is
/// `sum_i (alpha_i + L_ik) x_i - sum_{i<j} theta_ij x_i x_j`.
pub fn ising_pseudo_by_enumeration(alpha: &DVector<f64>, theta: &DMatrix<f64>, latent: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let (d, n) = x.shape();
    let exponent = |v: &[f64], k: usize| {
        let mut e = 0.0;
        for i in 0..d {
            e += (alpha[i] + latent[(i, k)]) * v[i];
            for j in (i + 1)..d {
                e -= theta[(i, j)] * v[i] * v[j];
            }
        }
        e
    };
    let mut total = 0.0;
    for k in 0..n {
        let obs: Vec<f64> = x.column(k).iter().copied().collect();
        for i in 0..d {
            let mut terms = Vec::new();
            for s in [-1.0, 1.0] {
                let mut v = obs.clone();
                v[i] = s;
                terms.push(exponent(&v, k));
            }
            let top = terms[0].max(terms[1]);
            let log_norm = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
            total += log_norm - exponent(&obs, k);
        }
    }
    total / n as f64
}

/// Exact distribution of a pairwise Ising model over `{-1, +1}^d`, indexed
/// by the bit pattern (bit `i` set means `x_i = +1`).
pub fn ising_distribution(alpha: &DVector<f64>, theta: &DMatrix<f64>) -> Vec<f64> {
    let d = alpha.len();
    let states = 1usize << d;
    let mut w: Vec<f64> = (0..states)
        .map(|s| {
            let v: Vec<f64> = (0..d).map(|i| if s >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let mut e = 0.0;
            for i in 0..d {
                e += alpha[i] * v[i];
                for j in (i + 1)..d {
                    e -= theta[(i, j)] * v[i] * v[j];
                }
            }
            e.exp()
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|p| *p /= z);
    w
}
