use lvgm_core::synth::{generate, make_truth, sample, GibbsConfig, GraphKind, LatentLaw, TruthSpec};
use lvgm_core::{linalg, FamilyKind};
use nalgebra::{DMatrix, DVector};

fn null_spec(kind: FamilyKind, d: usize) -> TruthSpec {
    let mut s = TruthSpec::standard(kind, d, 0, GraphKind::ErdosRenyi(0.0));
    s.singular_values.clear();
    s.coherence_target = None;
    s
}

#[test]
fn independent_ising_is_symmetric() {
    let (d, n) = (5, 4000);
    let s = null_spec(FamilyKind::Ising, d);
    let x = sample(&s, &DVector::zeros(d), &DMatrix::zeros(d, d), &DMatrix::zeros(d, 0), n, GibbsConfig::default_for(d), 1).unwrap();
    assert!(x.values().iter().all(|v| *v == 1.0 || *v == -1.0));
    let mean = x.values().sum() / (d * n) as f64;
    assert!(mean.abs() < 4.0 / ((n * d) as f64).sqrt());
}

#[test]
fn independent_poisson_has_unit_mean() {
    let (d, n) = (5, 4000);
    let s = null_spec(FamilyKind::Poisson, d);
    let x = sample(&s, &DVector::zeros(d), &DMatrix::zeros(d, d), &DMatrix::zeros(d, 0), n, GibbsConfig::default_for(d), 2).unwrap();
    assert!(x.values().iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
    let mean = x.values().sum() / (d * n) as f64;
    assert!((mean - 1.0).abs() < 4.0 / ((n * d) as f64).sqrt());
}

#[test]
fn standard_gaussian_covariance() {
    let (d, n) = (4, 20000);
    let s = null_spec(FamilyKind::Gaussian, d);
    let x = sample(&s, &DVector::zeros(d), &DMatrix::identity(d, d), &DMatrix::zeros(d, 0), n, GibbsConfig::default_for(d), 3).unwrap();
    let err = linalg::spectral_norm(&(x.gram() - DMatrix::identity(d, d)));
    assert!(err < 0.06, "{err}");
}

#[test]
fn exponential_samples_are_positive() {
    let s = TruthSpec::standard(FamilyKind::Exponential, 8, 1, GraphKind::Cycle);
    let (_, x) = generate(&s, 300, GibbsConfig::default_for(8), 4).unwrap();
    assert!(x.values().iter().all(|v| *v > 0.0));
}

#[test]
fn same_seed_same_bits_any_thread_count() {
    let s = TruthSpec::standard(FamilyKind::Poisson, 6, 1, GraphKind::Cycle);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate(&s, 300, GibbsConfig::default_for(6), 9).unwrap())
    };
    let (t1, x1) = run(1);
    let (t4, x4) = run(4);
    assert_eq!(t1, t4);
    assert_eq!(x1.values().as_slice(), x4.values().as_slice());
    let (_, other) = run(1);
    assert_eq!(x1, other);
}

#[test]
fn infeasible_truth_is_rejected() {
    let s = TruthSpec::standard(FamilyKind::Poisson, 4, 1, GraphKind::Cycle);
    let mut truth = make_truth(&s, 0).unwrap();
    truth.theta[(0, 1)] = -0.3;
    truth.theta[(1, 0)] = -0.3;
    let err = sample(&s, &truth.alpha, &truth.theta, &truth.loading, 10, GibbsConfig::default_for(4), 0);
    assert!(matches!(err, Err(lvgm_core::Error::InfeasibleTruth(_))));

    let mut s = TruthSpec::standard(FamilyKind::Exponential, 4, 1, GraphKind::Cycle);
    s.latent_law = LatentLaw::StandardNormal;
    let truth = make_truth(&s, 0).unwrap();
    let err = sample(&s, &truth.alpha, &truth.theta, &truth.loading, 10, GibbsConfig::default_for(4), 0);
    assert!(matches!(err, Err(lvgm_core::Error::InfeasibleTruth(_))));
}
