//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key a command
//! does not read is rejected, and paths are checked before any work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lvgm_core::synth::{GraphKind, LatentLaw};
use lvgm_core::{FamilyKind, FamilySpec, SolveOptions};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(k.to_string(), (no + 1, v.to_string())).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
        }
        Ok(RawConfig {
            entries,
            used: Default::default(),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("line {line}: invalid value for `{key}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<T>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| CliError::Config(format!("line {line}: invalid list for `{key}`: {e}"))),
        }
    }

    /// Errors on any key that was never read.
    pub fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .entries
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, (line, _))| format!("`{k}` (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }
}

/// Path that must exist as a file.
pub fn input_path(cfg: &RawConfig, key: &str) -> CliResult<PathBuf> {
    let p: PathBuf = cfg.require(key)?;
    if !p.is_file() {
        return Err(CliError::Config(format!("`{key}`: {} is not a readable file", p.display())));
    }
    Ok(p)
}

pub fn optional_input_path(cfg: &RawConfig, key: &str) -> CliResult<Option<PathBuf>> {
    match cfg.get::<PathBuf>(key)? {
        None => Ok(None),
        Some(p) if p.is_file() => Ok(Some(p)),
        Some(p) => Err(CliError::Config(format!("`{key}`: {} is not a readable file", p.display()))),
    }
}

/// Path to be written: its directory must exist and it must not be a directory.
pub fn output_path(cfg: &RawConfig, key: &str) -> CliResult<PathBuf> {
    let p: PathBuf = cfg.require(key)?;
    if p.is_dir() {
        return Err(CliError::Config(format!("`{key}`: {} is a directory", p.display())));
    }
    let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(CliError::Config(format!("`{key}`: directory {} does not exist", parent.display())));
    }
    Ok(p)
}

/// Keys shared by every command.
#[derive(Debug, Clone)]
pub struct Common {
    pub family: FamilySpec,
    pub seed: u64,
    /// 0 means one thread per available core.
    pub threads: usize,
    pub opts: SolveOptions,
    pub penalize_diagonal: bool,
}

impl Common {
    pub fn read(cfg: &RawConfig) -> CliResult<Self> {
        let kind: FamilyKind = cfg.get_or("family", FamilyKind::Gaussian)?;
        let seed = cfg.get_or("seed", 0u64)?;
        let defaults = SolveOptions::default();
        let opts = SolveOptions {
            max_iter: cfg.get_or("max_iter", defaults.max_iter)?,
            tol_rel_obj: cfg.get_or("tol", defaults.tol_rel_obj)?,
            backtrack_factor: cfg.get_or("backtrack_factor", defaults.backtrack_factor)?,
            init_step: cfg.get_or("init_step", defaults.init_step)?,
            acceleration: cfg.get_or("acceleration", defaults.acceleration)?,
            seed,
            ..defaults
        };
        opts.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Common {
            family: FamilySpec::new(kind),
            seed,
            threads: cfg.get_or("threads", 0usize)?,
            opts,
            penalize_diagonal: cfg.get_or("penalize_diagonal", false)?,
        })
    }
}

/// Penalty weights, given directly or through the sample-size scaling
/// `lambda = c1 sqrt(d/n)`, `gamma = c2 sqrt(d)/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltySpec {
    Direct { lambda: f64, gamma: f64 },
    Scaled { c1: f64, c2: f64 },
}

impl PenaltySpec {
    pub fn read(cfg: &RawConfig) -> CliResult<Self> {
        let (lambda, gamma) = (cfg.get::<f64>("lambda")?, cfg.get::<f64>("gamma")?);
        let (c1, c2) = (cfg.get::<f64>("c1")?, cfg.get::<f64>("c2")?);
        match (lambda, gamma, c1, c2) {
            (Some(lambda), Some(gamma), None, None) => Ok(PenaltySpec::Direct { lambda, gamma }),
            (None, None, c1, c2) => Ok(PenaltySpec::Scaled {
                c1: c1.unwrap_or(1.0),
                c2: c2.unwrap_or(1.0),
            }),
            _ => Err(CliError::Config("give both `lambda` and `gamma`, or the scaling constants `c1`/`c2`".into())),
        }
    }

    pub fn weights(&self, d: usize, n: usize) -> (f64, f64) {
        match *self {
            PenaltySpec::Direct { lambda, gamma } => (lambda, gamma),
            PenaltySpec::Scaled { c1, c2 } => scaled_weights(c1, c2, d, n),
        }
    }
}

pub fn scaled_weights(c1: f64, c2: f64, d: usize, n: usize) -> (f64, f64) {
    let (d, n) = (d as f64, n.max(1) as f64);
    (c1 * (d / n).sqrt(), c2 * d.sqrt() / n)
}

pub fn parse_graph(cfg: &RawConfig) -> CliResult<GraphKind> {
    cfg.get_or("graph", GraphKind::Cycle)
}

pub fn parse_latent_law(cfg: &RawConfig) -> CliResult<Option<LatentLaw>> {
    cfg.get("latent_law")
}
