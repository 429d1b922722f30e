//! Stability-based choice of `(lambda, gamma)` and of the final structure.
//!
//! 1. Refit on many half-size subsamples and measure how unstable the
//!    selected edges and latent column spaces are; pick the least-regularized
//!    grid point whose variability stays under a threshold.
//! 2. Keep edges selected in at least a `delta_graph` fraction of subsamples
//!    and the eigen-directions of the averaged latent projection with
//!    eigenvalue at least `delta_latent`.
//! 3. Refit without penalties under those structural constraints.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{DataMatrix, Edge, EdgeSet};
use crate::error::{Error, Result};
use crate::family::{FamilySpec, ModelParams};
use crate::linalg;
use crate::prox::PenaltyConfig;
use crate::solver::{fit, fit_warm, FitResult, SolveOptions, StructureConstraints};

pub const DEFAULT_THRESHOLD: f64 = 0.025;
pub const DEFAULT_DELTA: f64 = 0.7;
pub const DEFAULT_SUBSAMPLES: usize = 50;
const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Selection frequency of every edge picked at least once.
    pub edge_freq: BTreeMap<Edge, f64>,
    /// Mean projection onto the fitted latent column spaces.
    pub avg_projection: DMatrix<f64>,
    pub pi_graph: f64,
    pub pi_latent: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub num_subsamples: usize,
    pub failed: usize,
    pub nonconverged: usize,
}

impl StabilityReport {
    pub fn frequency(&self, e: &Edge) -> f64 {
        self.edge_freq.get(e).copied().unwrap_or(0.0)
    }

    /// Eigenvalues of `avg_projection`, descending.
    pub fn latent_spectrum(&self) -> Vec<f64> {
        linalg::sym_eigen_desc(&self.avg_projection).0.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedStructure {
    pub edges: EdgeSet,
    pub colspace: DMatrix<f64>,
    pub delta_graph: f64,
    pub delta_latent: f64,
}

/// Index sets of the subsamples: `count` draws of `floor(n/2)` distinct
/// columns, each from its own stream of `seed`.
pub fn subsample_indices(n: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..count)
        .map(|l| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(l as u64 + 1);
            let mut idx = rand::seq::index::sample(&mut rng, n, n / 2).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

/// Variability `sum p (1 - p) / C(d, 2)` of edge selection frequencies.
pub fn pi_graph(edge_freq: &BTreeMap<Edge, f64>, d: usize) -> f64 {
    let pairs = (d * d.saturating_sub(1) / 2).max(1) as f64;
    edge_freq.values().map(|p| p * (1.0 - p)).sum::<f64>() / pairs
}

/// Variability `sum mu (1 - mu) / d` over eigenvalues of the mean projection.
pub fn pi_latent(avg_projection: &DMatrix<f64>) -> f64 {
    let d = avg_projection.nrows().max(1) as f64;
    let (eig, _) = linalg::sym_eigen_desc(avg_projection);
    eig.iter().map(|m| m.clamp(0.0, 1.0)).map(|m| m * (1.0 - m)).sum::<f64>() / d
}

/// Aggregates subsample fits into a report.
pub fn aggregate(fits: &[&FitResult], d: usize, lambda: f64, gamma: f64, failed: usize) -> StabilityReport {
    let m = fits.len().max(1) as f64;
    let mut counts: BTreeMap<Edge, usize> = BTreeMap::new();
    let mut proj = DMatrix::zeros(d, d);
    for f in fits {
        for e in &f.support {
            *counts.entry(*e).or_default() += 1;
        }
        let basis = f.latent_basis();
        if basis.ncols() > 0 {
            proj += linalg::projector(&basis);
        }
    }
    let edge_freq: BTreeMap<Edge, f64> = counts.into_iter().map(|(e, c)| (e, c as f64 / m)).collect();
    let avg_projection = linalg::symmetrize(&(proj / m));
    StabilityReport {
        pi_graph: pi_graph(&edge_freq, d),
        pi_latent: pi_latent(&avg_projection),
        edge_freq,
        avg_projection,
        lambda,
        gamma,
        num_subsamples: fits.len() + failed,
        failed,
        nonconverged: fits.iter().filter(|f| !f.converged).count(),
    }
}

/// Shared settings for subsample fits.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleConfig {
    pub num_subsamples: usize,
    pub seed: u64,
    pub opts: SolveOptions,
    /// Force `L = 0` in every fit (model without latent variables).
    pub no_latent: bool,
}

impl SubsampleConfig {
    pub fn new(num_subsamples: usize, seed: u64) -> Self {
        SubsampleConfig {
            num_subsamples,
            seed,
            opts: SolveOptions::default(),
            no_latent: false,
        }
    }
}

/// Fits every subsample at `(lambda, gamma)`, optionally warm-started from
/// the fits of a previous grid point. Returns the report and the fits
/// (`None` for failed fits), ordered by subsample index.
pub fn subsample_fit_warm(
    x: &DataMatrix,
    family: &FamilySpec,
    cfg: &PenaltyConfig,
    sc: &SubsampleConfig,
    warm: Option<&[Option<ModelParams>]>,
) -> Result<(StabilityReport, Vec<Option<FitResult>>)> {
    let n = x.n_samples();
    if n < 4 {
        return Err(Error::InvalidInput("stability selection needs at least 4 samples".into()));
    }
    if sc.num_subsamples == 0 {
        return Err(Error::InvalidInput("at least one subsample is required".into()));
    }
    let d = x.dim();
    let cons = sc.no_latent.then(|| StructureConstraints::no_latent(d));
    let sets = subsample_indices(n, sc.num_subsamples, sc.seed);
    let results: Vec<Result<FitResult>> = sets
        .par_iter()
        .enumerate()
        .map(|(l, idx)| {
            let sub = x.select_samples(idx);
            let init = warm.and_then(|w| w.get(l)).and_then(|p| p.as_ref());
            match fit_warm(&sub, family, cfg, &sc.opts, cons.as_ref(), init) {
                Err(Error::InfeasibleStart(_)) if init.is_some() => fit(&sub, family, cfg, &sc.opts, cons.as_ref()),
                other => other,
            }
        })
        .collect();

    let total = results.len();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    let fits: Vec<Option<FitResult>> = results.into_iter().map(|r| r.ok()).collect();
    let ok: Vec<&FitResult> = fits.iter().flatten().collect();
    let report = aggregate(&ok, d, cfg.lambda, cfg.gamma, failed);
    Ok((report, fits))
}

pub fn subsample_fit(x: &DataMatrix, family: &FamilySpec, cfg: &PenaltyConfig, sc: &SubsampleConfig) -> Result<StabilityReport> {
    Ok(subsample_fit_warm(x, family, cfg, sc, None)?.0)
}

/// Outcome of the regularization scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Result {
    pub lambda: f64,
    pub gamma: f64,
    /// Set when a threshold was never exceeded, so the smallest grid value
    /// was returned.
    pub warning: bool,
    /// Report at the selected pair.
    pub report: StabilityReport,
    /// Every evaluated grid point in scan order.
    pub path: Vec<StabilityReport>,
}

/// Scan grids (sorted descending) for the least-regularized stable pair.
///
/// First `gamma` is decreased with `lambda` at its largest value until the
/// latent variability exceeds `t_latent`, keeping the previous `gamma`; then
/// `lambda` is decreased the same way until the graph variability exceeds
/// `t_graph` or the latent one exceeds `t_latent`. With `no_latent`
/// set, only the `lambda` scan runs and `gamma` is reported as 0.
pub fn stage1_select(
    x: &DataMatrix,
    family: &FamilySpec,
    lambdas: &[f64],
    gammas: &[f64],
    thresholds: (f64, f64),
    sc: &SubsampleConfig,
) -> Result<Stage1Result> {
    let descending = |g: &[f64]| g.windows(2).all(|w| w[0] >= w[1]);
    if lambdas.is_empty() || (!sc.no_latent && gammas.is_empty()) {
        return Err(Error::InvalidInput("regularization grids must be nonempty".into()));
    }
    if !descending(lambdas) || !descending(gammas) {
        return Err(Error::InvalidInput("regularization grids must be sorted in descending order".into()));
    }
    let (t_graph, t_latent) = thresholds;
    let mut path = Vec::new();
    let mut warning = false;
    let mut warm: Option<Vec<Option<ModelParams>>> = None;

    let mut run = |lambda: f64, gamma: f64, warm: &mut Option<Vec<Option<ModelParams>>>| -> Result<StabilityReport> {
        let cfg = PenaltyConfig::new(lambda, gamma)?;
        let (report, fits) = subsample_fit_warm(x, family, &cfg, sc, warm.as_deref())?;
        *warm = Some(fits.into_iter().map(|f| f.map(|f| f.params)).collect());
        path.push(report.clone());
        Ok(report)
    };

    let lambda0 = lambdas[0];
    let gamma = if sc.no_latent {
        0.0
    } else {
        let mut chosen = None;
        for (k, &g) in gammas.iter().enumerate() {
            let rep = run(lambda0, g, &mut warm)?;
            if rep.pi_latent > t_latent {
                chosen = Some(gammas[k.saturating_sub(1)]);
                break;
            }
        }
        chosen.unwrap_or_else(|| {
            warning = true;
            *gammas.last().expect("nonempty grid")
        })
    };

    let mut chosen = None;
    for (k, &l) in lambdas.iter().enumerate() {
        let rep = run(l, gamma, &mut warm)?;
        // Lowering lambda can also destabilize the latent part.
        if rep.pi_graph > t_graph || (!sc.no_latent && rep.pi_latent > t_latent) {
            chosen = Some(lambdas[k.saturating_sub(1)]);
            break;
        }
    }
    let lambda = chosen.unwrap_or_else(|| {
        warning = true;
        *lambdas.last().expect("nonempty grid")
    });

    let report = path
        .iter()
        .rev()
        .find(|r| r.lambda == lambda && r.gamma == gamma)
        .cloned()
        .expect("selected pair was evaluated");
    Ok(Stage1Result {
        lambda,
        gamma,
        warning,
        report,
        path,
    })
}

/// Edges with frequency at least `delta_graph` and the span of eigenvectors
/// of the mean projection with eigenvalue at least `delta_latent`.
pub fn stage2_structure(report: &StabilityReport, delta_graph: f64, delta_latent: f64) -> Result<SelectedStructure> {
    let ok = |v: f64| v > 0.0 && v <= 1.0;
    if !ok(delta_graph) || !ok(delta_latent) {
        return Err(Error::InvalidInput("stability thresholds must lie in (0, 1]".into()));
    }
    let edges = report
        .edge_freq
        .iter()
        .filter(|(_, &p)| p >= delta_graph)
        .map(|(e, _)| *e)
        .collect();
    let (eig, vecs) = linalg::sym_eigen_desc(&report.avg_projection);
    let keep: Vec<usize> = (0..eig.len()).filter(|&i| eig[i] >= delta_latent).collect();
    Ok(SelectedStructure {
        edges,
        colspace: vecs.select_columns(&keep),
        delta_graph,
        delta_latent,
    })
}

/// Unpenalized refit with the selected edges and latent column space as hard
/// constraints.
pub fn stage3_refit(x: &DataMatrix, family: &FamilySpec, structure: &SelectedStructure, opts: &SolveOptions) -> Result<FitResult> {
    let cons = StructureConstraints {
        support: Some(structure.edges.clone()),
        colspace: Some(structure.colspace.clone()),
        ..Default::default()
    };
    fit(x, family, &PenaltyConfig::unpenalized(), opts, Some(&cons))
}

/// `k` log-spaced values from `hi` down to `hi * lo_ratio`.
pub fn log_grid(hi: f64, lo_ratio: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..k)
            .map(|i| hi * lo_ratio.powf(i as f64 / (k - 1) as f64))
            .collect(),
    }
}
