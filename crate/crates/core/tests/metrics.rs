mod common;

use common::random_data;
use lvgm_core::metrics::{holdout_nll, holdout_objective, recovery_success};
use lvgm_core::objective::objective_for;
use lvgm_core::synth::{sample, GibbsConfig, GraphKind, TruthSpec};
use lvgm_core::{fit, DataMatrix, FamilyKind, FamilySpec, ModelParams, PenaltyConfig, SolveOptions, StructureConstraints};
use nalgebra::{DMatrix, DVector};

#[test]
fn gaussian_holdout_approaches_entropy() {
    let sigma2: f64 = 4.0;
    let spec = {
        let mut s = TruthSpec::standard(FamilyKind::Gaussian, 2, 0, GraphKind::ErdosRenyi(0.0));
        s.coherence_target = None;
        s
    };
    let theta = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / sigma2, 1.0 / sigma2]));
    let draw = |n, seed| {
        let x = sample(&spec, &DVector::zeros(2), &theta, &DMatrix::zeros(2, 0), n, GibbsConfig::default_for(2), seed).unwrap();
        DataMatrix::from_values(x.values().rows(0, 1).into_owned())
    };
    let train = draw(50_000, 1);
    let test = draw(50_000, 2);
    let f = fit(&train, &FamilySpec::gaussian(), &PenaltyConfig::unpenalized(), &SolveOptions::default(), Some(&StructureConstraints::no_latent(1))).unwrap();
    let v = holdout_nll(&f, &test, &FamilySpec::gaussian(), &SolveOptions::default()).unwrap();
    let expected = 0.5 * (1.0 + (2.0 * std::f64::consts::PI * sigma2).ln());
    assert!((v - expected).abs() < 0.02, "{v} vs {expected}");
}

#[test]
fn no_latent_holdout_is_plain_evaluation() {
    for kind in FamilyKind::ALL {
        let fam = FamilySpec::new(kind);
        let train = random_data(kind, 4, 60, 1);
        let test = random_data(kind, 4, 30, 2);
        let f = fit(&train, &fam, &PenaltyConfig::new(0.05, 0.0).unwrap(), &SolveOptions::default(), Some(&StructureConstraints::no_latent(4))).unwrap();
        let v = holdout_objective(&f, &test, &fam, &SolveOptions::default()).unwrap();
        let x = match &f.center {
            Some(m) => test.subtract_mean(m),
            None => test.clone(),
        };
        let p = ModelParams {
            alpha: f.params.alpha.clone(),
            theta: f.params.theta.clone(),
            latent: DMatrix::zeros(4, 30),
        };
        let direct = objective_for(&x, &fam).unwrap().value(&p).unwrap();
        assert_eq!(v, direct, "{kind}");
    }
}

#[test]
fn wider_latent_space_never_hurts() {
    let mut checked = 0;
    for kind in FamilyKind::ALL {
        let fam = FamilySpec::new(kind);
        let train = random_data(kind, 5, 80, 3);
        let test = random_data(kind, 5, 40, 4);
        let opts = SolveOptions::default();
        let Some(f) = [0.02, 0.05, 0.1, 0.2, 0.4]
            .iter()
            .map(|&g| fit(&train, &fam, &PenaltyConfig::new(0.05, g).unwrap(), &opts, None).unwrap())
            .find(|f| f.latent_basis().ncols() < 5)
        else {
            continue;
        };
        let narrow = holdout_objective(&f, &test, &fam, &opts).unwrap();

        // Add e v' with v orthogonal to the row space of L and to the ones
        // vector: the column space grows by e and the mean shift is unchanged.
        let n = f.params.latent.ncols();
        let mut v = DVector::from_fn(n, |k, _| ((k * 7 + 3) % 11) as f64 - 5.0);
        let mut rows: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0)];
        rows.extend(f.params.latent.row_iter().map(|r| r.transpose()));
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for r in rows {
            let mut q = r;
            for b in &basis {
                q -= b * b.dot(&q);
            }
            if q.norm() > 1e-9 {
                basis.push(q.normalize());
            }
        }
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let e = DVector::from_fn(5, |i, _| 1e-3 * (i as f64 - 2.0));
        let mut wide = f.clone();
        wide.params.latent += &e * v.transpose();
        assert_eq!(wide.latent_basis().ncols(), f.latent_basis().ncols() + 1, "{kind}");

        let widened = holdout_objective(&wide, &test, &fam, &opts).unwrap();
        assert!(widened <= narrow + 1e-7 * narrow.abs().max(1.0), "{kind}: {widened} > {narrow}");
        checked += 1;
    }
    assert!(checked >= 3, "only {checked} families had room to widen");
}

#[test]
fn recovery_needs_exact_support_and_rank() {
    let spec = TruthSpec::standard(FamilyKind::Gaussian, 4, 1, GraphKind::Cycle);
    let theta = lvgm_core::synth::make_theta(&spec, 0).unwrap();
    let mut f = fit(&random_data(FamilyKind::Gaussian, 4, 20, 0), &FamilySpec::gaussian(), &PenaltyConfig::new(0.1, 0.1).unwrap(), &SolveOptions::default(), None).unwrap();
    f.support = lvgm_core::support_of(&theta, 1e-8);
    f.rank = 1;
    assert!(recovery_success(&f, &theta, 1));
    assert!(!recovery_success(&f, &theta, 2));
    f.support.insert(lvgm_core::Edge::new(0, 2));
    assert!(!recovery_success(&f, &theta, 1));
}
