//! Small dense linear-algebra helpers shared by the analysis and simulation code.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Column-major vectorization, so that `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.
pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &DVector<f64>, rows: usize) -> DMatrix<f64> {
    assert_eq!(v.len() % rows, 0, "vector length not a multiple of rows");
    DMatrix::from_column_slice(rows, v.len() / rows, v.as_slice())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a general real square matrix via a real Schur decomposition.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Analysis("matrix has non-finite entries".into()));
    }
    // The QR iteration occasionally stalls on highly repeated spectra; the
    // transpose has the same eigenvalues and usually takes another path.
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 100_000)
        .or_else(|| m.transpose().try_schur(f64::EPSILON, 100_000))
        .ok_or_else(|| Error::Analysis("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    match eigenvalues(m) {
        Ok(eig) => Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max)),
        Err(Error::Analysis(_)) if all_finite(m) => Ok(gelfand_radius(m)),
        Err(e) => Err(e),
    }
}

/// `ρ(M) = lim ‖M^k‖^(1/k)`, evaluated at `k = 2⁶⁰` by normalized squaring.
fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut b = m / norm;
    let mut log_norm = norm.ln();
    let mut k = 1.0;
    for _ in 0..60 {
        b = &b * &b;
        let s = b.norm();
        if s == 0.0 {
            return 0.0;
        }
        b /= s;
        log_norm = 2.0 * log_norm + s.ln();
        k *= 2.0;
    }
    (log_norm / k).exp()
}

/// Extreme eigenvalues `(min, max)` of the symmetric part of `m`.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = symmetrize(m).symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}

pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if !is_symmetric(m, tol) {
        return false;
    }
    if m.nrows() == 0 {
        return true;
    }
    let (min, _) = sym_eig_range(m);
    min >= -tol * m.amax().max(1.0)
}

/// Factor `L` with `L Lᵀ = S` for a symmetric PSD `S`.
///
/// Uses the symmetric eigendecomposition so singular covariances (e.g. noise
/// only on some states) are handled; tiny negative eigenvalues from rounding
/// are clamped to zero.
pub fn psd_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(s).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Builds a matrix from row vectors, checking that every row has the same length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
