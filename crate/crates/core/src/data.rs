//! Observation matrices and edge sets.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// d x n observation matrix; each column is one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    names: Vec<String>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != values.nrows() {
            return Err(Error::Shape(format!(
                "{} variable names for {} rows",
                names.len(),
                values.nrows()
            )));
        }
        Ok(DataMatrix { values, names })
    }

    /// Wraps `values` with default names `x1..xd`.
    pub fn from_values(values: DMatrix<f64>) -> Self {
        let names = (1..=values.nrows()).map(|i| format!("x{i}")).collect();
        DataMatrix { values, names }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_means(&self) -> DVector<f64> {
        let n = self.n_samples().max(1) as f64;
        self.values.column_sum() / n
    }

    pub fn subtract_mean(&self, mean: &DVector<f64>) -> DataMatrix {
        let mut values = self.values.clone();
        for mut col in values.column_iter_mut() {
            col -= mean;
        }
        DataMatrix {
            values,
            names: self.names.clone(),
        }
    }

    /// Returns the column-centered data together with the removed mean.
    pub fn centered(&self) -> (DataMatrix, DVector<f64>) {
        let mean = self.column_means();
        (self.subtract_mean(&mean), mean)
    }

    pub fn select_samples(&self, idx: &[usize]) -> DataMatrix {
        DataMatrix {
            values: self.values.select_columns(idx),
            names: self.names.clone(),
        }
    }

    /// Relabels variables: row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_variables(&self, perm: &[usize]) -> DataMatrix {
        DataMatrix {
            values: self.values.select_rows(perm),
            names: perm.iter().map(|&i| self.names[i].clone()).collect(),
        }
    }

    pub fn concat(&self, other: &DataMatrix) -> Result<DataMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::Shape("concatenating data of different dimension".into()));
        }
        let d = self.dim();
        let (n1, n2) = (self.n_samples(), other.n_samples());
        let mut values = DMatrix::zeros(d, n1 + n2);
        values.columns_mut(0, n1).copy_from(&self.values);
        values.columns_mut(n1, n2).copy_from(&other.values);
        Ok(DataMatrix {
            values,
            names: self.names.clone(),
        })
    }

    /// Second-moment matrix X X' / n.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.n_samples().max(1) as f64;
        &self.values * self.values.transpose() / n
    }
}

/// Undirected edge stored with `0 <= i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge(usize, usize);

impl Edge {
    pub fn new(a: usize, b: usize) -> Self {
        assert_ne!(a, b, "self-loops are not edges");
        if a < b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    pub fn i(&self) -> usize {
        self.0
    }

    pub fn j(&self) -> usize {
        self.1
    }
}

pub type EdgeSet = BTreeSet<Edge>;

pub fn all_edges(d: usize) -> EdgeSet {
    (0..d)
        .flat_map(|i| ((i + 1)..d).map(move |j| Edge(i, j)))
        .collect()
}

/// Off-diagonal support `|theta_ij| > tol`.
pub fn support_of(theta: &DMatrix<f64>, tol: f64) -> EdgeSet {
    let d = theta.nrows();
    let mut out = EdgeSet::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if theta[(i, j)].abs() > tol || theta[(j, i)].abs() > tol {
                out.insert(Edge(i, j));
            }
        }
    }
    out
}

/// Symmetric 0/1 mask of an edge set (zero diagonal).
pub fn edge_mask(edges: &EdgeSet, d: usize) -> DMatrix<f64> {
    let mut mask = DMatrix::zeros(d, d);
    for e in edges {
        mask[(e.i(), e.j())] = 1.0;
        mask[(e.j(), e.i())] = 1.0;
    }
    mask
}
