//! MMSE filter solve shared by the equalizers and the analytic predictor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::channel::ToeplitzChannel;
use crate::{Error, Result};

/// Unit-gain MMSE solution for one variance profile over the window.
pub(crate) struct MmseSolution {
    /// `f = Σ⁻¹ h0 / ξ`.
    pub f: DVector<Complex64>,
    /// `ξ = h0ᴴ Σ⁻¹ h0`.
    pub xi: f64,
    /// `Hᴴ f`, length `N + L - 1`.
    pub g: DVector<Complex64>,
}

/// `Σ = σ_w² I + H Diag(v) Hᴴ`.
pub(crate) fn covariance(t: &ToeplitzChannel, sigma_w2: f64, variances: &[f64]) -> DMatrix<Complex64> {
    let mut hd = t.h.clone();
    for (mut col, &v) in hd.column_iter_mut().zip(variances) {
        col *= Complex64::new(v, 0.0);
    }
    let mut sigma = hd * t.h.adjoint();
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += sigma_w2;
    }
    sigma
}

fn factor(mut sigma: DMatrix<Complex64>) -> Result<Cholesky<Complex64, Dyn>> {
    if let Some(c) = Cholesky::new(sigma.clone()) {
        return Ok(c);
    }
    let n = sigma.nrows();
    let trace: f64 = (0..n).map(|i| sigma[(i, i)].re).sum();
    let eps = 1e-12 * trace / n as f64;
    for i in 0..n {
        sigma[(i, i)] += eps;
    }
    Cholesky::new(sigma).ok_or(Error::NotPositiveDefinite)
}

pub(crate) fn solve_mmse(t: &ToeplitzChannel, sigma_w2: f64, variances: &[f64]) -> Result<MmseSolution> {
    debug_assert_eq!(variances.len(), t.window.span());
    let chol = factor(covariance(t, sigma_w2, variances))?;
    let z = chol.solve(&t.h0);
    let xi = t.h0.dotc(&z).re;
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    let f = z / Complex64::new(xi, 0.0);
    let g = t.h.adjoint() * &f;
    Ok(MmseSolution { f, xi, g })
}
