//! CSV data files and JSON documents.
//!
//! CSV files hold one sample per row under a header of variable names. JSON
//! floats are written with 17 significant digits so that every value reads
//! back to the same bits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use lvgm_core::solver::SUPPORT_TOL;
use lvgm_core::stability::{SelectedStructure, Stage1Result, StabilityReport};
use lvgm_core::synth::{Truth, TruthSpec};
use lvgm_core::{support_of, DataMatrix, Edge, FamilyKind, FamilySpec, FitResult, ModelParams};

use crate::error::{CliError, CliResult};

/// Reads a CSV data file. With `family`, every entry must lie in its domain.
pub fn read_csv(path: &Path, family: Option<&FamilySpec>) -> CliResult<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let d = names.len();
    if d == 0 {
        return Err(CliError::Data(format!("{}: no columns", path.display())));
    }
    let mut values: Vec<f64> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        for (j, field) in rec.iter().enumerate() {
            let at = || format!("{}: line {line}, column {} (`{}`)", path.display(), j + 1, names[j]);
            let v: f64 = field
                .parse()
                .map_err(|_| CliError::Data(format!("{}: `{field}` is not a number", at())))?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("{}: non-finite value `{field}`", at())));
            }
            if let Some(fam) = family {
                if !fam.value_in_domain(v) {
                    return Err(CliError::Data(format!("{}: {v} is outside the {} domain {}", at(), fam.kind, fam.kind.domain())));
                }
            }
            values.push(v);
        }
    }
    let n = values.len() / d;
    if n == 0 {
        return Err(CliError::Data(format!("{}: no samples", path.display())));
    }
    // Rows of the file are samples, i.e. columns of the d x n matrix.
    let m = DMatrix::from_column_slice(d, n, &values);
    Ok(DataMatrix::new(m, names)?)
}

pub fn write_csv(path: &Path, x: &DataMatrix) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(x.names()).map_err(csv_err)?;
    for col in x.values().column_iter() {
        w.write_record(col.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// JSON formatter writing every float with 17 significant digits.
struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> CliResult<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Data(format!("cannot serialize: {e}")))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = to_json_string(value)?;
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Families are stored by name.
mod family_name {
    use lvgm_core::FamilyKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(kind: &FamilyKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(kind.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FamilyKind, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Dense {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self) -> CliResult<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(CliError::Data(format!("matrix data has {} entries for {}x{}", self.data.len(), self.rows, self.cols)));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Symmetric matrix as `(i, j, value)` triplets with `i <= j`; entries not
/// listed are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymTriplets {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymTriplets {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let d = m.nrows();
        let mut entries = Vec::new();
        for i in 0..d {
            for j in i..d {
                if m[(i, j)] != 0.0 {
                    entries.push((i, j, m[(i, j)]));
                }
            }
        }
        SymTriplets { dim: d, entries }
    }

    pub fn to_matrix(&self) -> CliResult<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            if i > j || j >= self.dim {
                return Err(CliError::Data(format!("bad triplet ({i}, {j}) for dimension {}", self.dim)));
            }
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub lambda: f64,
    pub gamma: f64,
    pub penalize_diagonal: bool,
}

/// `L = basis * coords` with an orthonormal `basis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub basis: Dense,
    pub coords: Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub support_size: usize,
    pub rank: usize,
}

pub const MODEL_KIND: &str = "lvgm-model";
pub const TRUTH_KIND: &str = "lvgm-truth";
pub const REPORT_KIND: &str = "lvgm-stability";
pub const METRICS_KIND: &str = "lvgm-metrics";

/// Fitted model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: String,
    #[serde(with = "family_name")]
    pub family: FamilyKind,
    pub names: Vec<String>,
    pub n: usize,
    pub reduced: bool,
    pub no_latent: bool,
    pub penalty: Penalty,
    pub alpha: Vec<f64>,
    pub theta: SymTriplets,
    pub latent: Latent,
    /// Training mean subtracted from Gaussian data.
    pub center: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl ModelFile {
    pub fn from_fit(fit: &FitResult, family: &FamilySpec, names: &[String], penalty: Penalty, reduced: bool, no_latent: bool) -> Self {
        let basis = fit.latent_basis();
        let coords = basis.transpose() * &fit.params.latent;
        ModelFile {
            kind: MODEL_KIND.to_string(),
            family: family.kind,
            names: names.to_vec(),
            n: fit.params.n_samples(),
            reduced,
            no_latent,
            penalty,
            alpha: fit.params.alpha.iter().copied().collect(),
            theta: SymTriplets::from_matrix(&fit.params.theta),
            latent: Latent {
                basis: Dense::from_matrix(&basis),
                coords: Dense::from_matrix(&coords),
            },
            center: fit.center.as_ref().map(|c| c.iter().copied().collect()),
            diagnostics: Diagnostics {
                objective: fit.objective(),
                iterations: fit.iterations,
                converged: fit.converged,
                residual: fit.residual,
                support_size: fit.support.len(),
                rank: fit.rank,
            },
        }
    }

    pub fn family_spec(&self) -> FamilySpec {
        FamilySpec::new(self.family)
    }

    /// Rebuilds the fit; `L` is recomputed as `basis * coords`.
    pub fn to_fit(&self) -> CliResult<FitResult> {
        if self.kind != MODEL_KIND {
            return Err(CliError::Data(format!("expected a `{MODEL_KIND}` document, found `{}`", self.kind)));
        }
        let theta = self.theta.to_matrix()?;
        let basis = self.latent.basis.to_matrix()?;
        let coords = self.latent.coords.to_matrix()?;
        let d = theta.nrows();
        if self.alpha.len() != d || basis.nrows() != d || basis.ncols() != coords.nrows() || coords.ncols() != self.n {
            return Err(CliError::Data("model parts have inconsistent shapes".into()));
        }
        let params = ModelParams {
            alpha: DVector::from_vec(self.alpha.clone()),
            latent: &basis * &coords,
            theta,
        };
        Ok(FitResult {
            support: support_of(&params.theta, SUPPORT_TOL),
            rank: basis.ncols(),
            params,
            objective_trace: vec![self.diagnostics.objective],
            iterations: self.diagnostics.iterations,
            converged: self.diagnostics.converged,
            residual: self.diagnostics.residual,
            center: self.center.as_ref().map(|c| DVector::from_vec(c.clone())),
        })
    }
}

/// Ground truth written by `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub kind: String,
    #[serde(with = "family_name")]
    pub family: FamilyKind,
    pub seed: u64,
    pub n: usize,
    pub graph: String,
    pub edge_weight: f64,
    pub r: usize,
    pub singular_values: Vec<f64>,
    pub coherence_target: Option<f64>,
    /// Squared coherence of the loading column space actually drawn.
    pub coherence: f64,
    pub latent_law: String,
    pub burn_in: usize,
    pub thin: usize,
    pub alpha: Vec<f64>,
    pub theta: SymTriplets,
    pub loading: Dense,
}

impl TruthFile {
    pub fn new(spec: &TruthSpec, truth: &Truth, seed: u64, n: usize, burn_in: usize, thin: usize) -> Self {
        let basis = lvgm_core::linalg::column_space(&truth.loading, 1e-12);
        TruthFile {
            kind: TRUTH_KIND.to_string(),
            family: spec.family.kind,
            seed,
            n,
            graph: spec.graph.to_string(),
            edge_weight: spec.edge_weight,
            r: spec.r,
            singular_values: spec.singular_values.clone(),
            coherence_target: spec.coherence_target,
            coherence: lvgm_core::synth::squared_coherence(&basis),
            latent_law: spec.latent_law.to_string(),
            burn_in,
            thin,
            alpha: truth.alpha.iter().copied().collect(),
            theta: SymTriplets::from_matrix(&truth.theta),
            loading: Dense::from_matrix(&truth.loading),
        }
    }

    pub fn theta(&self) -> CliResult<DMatrix<f64>> {
        if self.kind != TRUTH_KIND {
            return Err(CliError::Data(format!("expected a `{TRUTH_KIND}` document, found `{}`", self.kind)));
        }
        self.theta.to_matrix()
    }

    pub fn rank(&self) -> CliResult<usize> {
        let b = self.loading.to_matrix()?;
        Ok(lvgm_core::linalg::numerical_rank(&b, 1e-12))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub gamma: f64,
    pub pi_graph: f64,
    pub pi_latent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFile {
    pub edges: Vec<(usize, usize)>,
    pub colspace: Dense,
    pub delta_graph: f64,
    pub delta_latent: f64,
}

impl StructureFile {
    pub fn new(s: &SelectedStructure) -> Self {
        StructureFile {
            edges: s.edges.iter().map(|e| (e.i(), e.j())).collect(),
            colspace: Dense::from_matrix(&s.colspace),
            delta_graph: s.delta_graph,
            delta_latent: s.delta_latent,
        }
    }

    pub fn to_structure(&self) -> CliResult<SelectedStructure> {
        Ok(SelectedStructure {
            edges: self.edges.iter().map(|&(i, j)| Edge::new(i, j)).collect(),
            colspace: self.colspace.to_matrix()?,
            delta_graph: self.delta_graph,
            delta_latent: self.delta_latent,
        })
    }
}

/// Stability selection output: the report at the chosen pair, the scan path
/// and the selected structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub kind: String,
    #[serde(with = "family_name")]
    pub family: FamilyKind,
    pub lambda: f64,
    pub gamma: f64,
    pub warning: bool,
    pub t_graph: f64,
    pub t_latent: f64,
    pub num_subsamples: usize,
    pub failed: usize,
    pub nonconverged: usize,
    pub pi_graph: f64,
    pub pi_latent: f64,
    pub edge_freq: Vec<(usize, usize, f64)>,
    pub avg_projection: Dense,
    pub path: Vec<PathPoint>,
    pub structure: StructureFile,
}

impl ReportFile {
    pub fn new(family: &FamilySpec, s1: &Stage1Result, thresholds: (f64, f64), structure: &SelectedStructure) -> Self {
        let r: &StabilityReport = &s1.report;
        ReportFile {
            kind: REPORT_KIND.to_string(),
            family: family.kind,
            lambda: s1.lambda,
            gamma: s1.gamma,
            warning: s1.warning,
            t_graph: thresholds.0,
            t_latent: thresholds.1,
            num_subsamples: r.num_subsamples,
            failed: r.failed,
            nonconverged: r.nonconverged,
            pi_graph: r.pi_graph,
            pi_latent: r.pi_latent,
            edge_freq: r.edge_freq.iter().map(|(e, &p)| (e.i(), e.j(), p)).collect(),
            avg_projection: Dense::from_matrix(&r.avg_projection),
            path: s1
                .path
                .iter()
                .map(|p| PathPoint {
                    lambda: p.lambda,
                    gamma: p.gamma,
                    pi_graph: p.pi_graph,
                    pi_latent: p.pi_latent,
                })
                .collect(),
            structure: StructureFile::new(structure),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutValues {
    pub latent: f64,
    pub no_latent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureMetrics {
    pub fdr: f64,
    pub pwr: f64,
    pub recovery_success: bool,
    pub estimated_edges: usize,
    pub true_edges: usize,
    pub rank: usize,
    pub true_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub kind: String,
    #[serde(with = "family_name")]
    pub family: FamilyKind,
    pub n_test: usize,
    pub holdout_nll: HoldoutValues,
    pub structure: Option<StructureMetrics>,
}
