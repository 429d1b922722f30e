//! Dense linear-algebra helpers shared across the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite)
}

/// `true` when the smallest eigenvalue of `m` exceeds `margin`.
pub fn min_eig_exceeds(m: &DMatrix<f64>, margin: f64) -> bool {
    let mut shifted = m.clone();
    for i in 0..m.nrows() {
        shifted[(i, i)] -= margin;
    }
    cholesky(&shifted).is_ok()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order (columns of the returned matrix match).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Positive-semidefinite square root; negative eigenvalues (float noise on a
/// PSD input) are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_desc(m);
    let roots = values.map(|v| v.max(0.0).sqrt());
    &vectors * DMatrix::from_diagonal(&roots) * vectors.transpose()
}

/// Thin SVD with singular values in descending order.
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return ThinSvd {
            u: DMatrix::zeros(r, 0),
            s: DVector::zeros(0),
            v_t: DMatrix::zeros(0, c),
        };
    }
    // nalgebra's SVD loses accuracy on some rank-deficient inputs; faer's
    // does not.
    let svd = to_faer(m).thin_svd().expect("SVD of a finite matrix");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    ThinSvd {
        u: DMatrix::from_fn(r, k, |i, j| u[(i, j)]),
        s: DVector::from_fn(k, |i, _| s[i]),
        v_t: DMatrix::from_fn(k, c, |i, j| v[(j, i)]),
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return DVector::zeros(0);
    }
    let s = to_faer(m).singular_values().expect("SVD of a finite matrix");
    DVector::from_vec(s)
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).sum()
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let top = s.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Orthonormal basis (d x rank) for the column space of `m`.
pub fn column_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let d = m.nrows();
    let svd = thin_svd(m);
    let top = svd.s.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return DMatrix::zeros(d, 0);
    }
    let keep: Vec<usize> = (0..svd.s.len()).filter(|&i| svd.s[i] > rel_tol * top).collect();
    let mut basis = DMatrix::zeros(d, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        basis.set_column(dst, &svd.u.column(src));
    }
    basis
}

pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

/// Largest entrywise deviation of `basis' basis` from the identity.
pub fn orthonormality_error(basis: &DMatrix<f64>) -> f64 {
    let gram = basis.transpose() * basis;
    let k = gram.nrows();
    (&gram - DMatrix::<f64>::identity(k, k)).amax()
}

/// Haar-distributed d x r matrix with orthonormal columns (QR of a Gaussian
/// matrix with the sign ambiguity of R fixed).
pub fn haar_orthonormal<R: Rng + ?Sized>(d: usize, r: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let rmat = qr.r();
    for j in 0..r {
        if rmat[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}
