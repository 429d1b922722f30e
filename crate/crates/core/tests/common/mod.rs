#![allow(dead_code)]

use lvgm_core::{DataMatrix, FamilyKind};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

/// Independent draws in the family's domain, with a shared rank-one shift so
/// that latent terms have something to pick up.
pub fn random_data(kind: FamilyKind, d: usize, n: usize, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = match kind {
        FamilyKind::Gaussian => {
            let b: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let mut m = DMatrix::zeros(d, n);
            for k in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                for i in 0..d {
                    let e: f64 = rng.sample(StandardNormal);
                    m[(i, k)] = e + 0.8 * b[i] * z;
                }
            }
            m
        }
        FamilyKind::Ising => {
            DMatrix::from_fn(d, n, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        }
        FamilyKind::Poisson => {
            let p = Poisson::new(1.5).unwrap();
            DMatrix::from_fn(d, n, |_, _| p.sample(&mut rng))
        }
        FamilyKind::Exponential => {
            let e = Exp::new(1.0).unwrap();
            DMatrix::from_fn(d, n, |_, _| e.sample(&mut rng))
        }
    };
    DataMatrix::from_values(values)
}
