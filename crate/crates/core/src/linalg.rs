//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest eigenpair of a symmetric matrix.
///
/// The matrix is symmetrized before the solve (Householder tridiagonalization
/// followed by implicit QR, via nalgebra). The eigenvector is normalized and
/// its sign fixed so that the largest-magnitude entry is positive.
pub fn smallest_eigenpair(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigensolve("matrix has non-finite entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::linalg::SymmetricEigen::try_new(sym, 1e-14, 10_000)
        .ok_or_else(|| Error::Eigensolve("symmetric QR iteration did not converge".into()))?;
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let mut v = eig.eigenvectors.column(k).into_owned();
    let nv = v.norm();
    if nv > 0.0 {
        v /= nv;
    }
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v = -v;
    }
    Ok((lambda, v))
}

/// Least-squares line fit `y = a + b x`; returns `(slope, intercept, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}
