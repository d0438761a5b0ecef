use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{argument, Error, Result};

/// Eigenvalues below `-EIG_TOL * max(1, largest)` are an error; others
/// below zero are clipped.
const EIG_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return argument(format!("mean of length {d} with {}x{} covariance", cov.nrows(), cov.ncols()));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite Gaussian statistics".into()));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-9 * cov.abs().max().max(1.0) {
            return Err(Error::Numeric(format!("covariance asymmetric by {asym:e}")));
        }
        let low = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if low < -1e-9 * cov.abs().max().max(1.0) {
            return Err(Error::Numeric(format!("covariance has eigenvalue {low:e}")));
        }
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
        })
    }

    /// Sample mean and unbiased covariance of the rows.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        let d = samples.first().map_or(0, Vec::len);
        if n == 0 || d == 0 || samples.iter().any(|s| s.len() != d) {
            return argument("need a non-empty set of equal-length vectors");
        }
        let x = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let mut cov = centered.transpose() * &centered / denom;
        cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean.iter().copied().collect(), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn sym_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.abs().max().max(1.0);
    let low = eig.eigenvalues.min();
    if low < -EIG_TOL * scale {
        return Err(Error::Numeric(format!("matrix is not positive semidefinite (eigenvalue {low:e})")));
    }
    Ok(eig)
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// `tr (S_a S_b)^(1/2)` is taken as the trace of the square root of the
/// symmetric matrix `S_a^(1/2) S_b S_a^(1/2)`, which has the same spectrum.
pub fn frechet(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return argument(format!("dimensions differ: {} vs {}", a.dim(), b.dim()));
    }
    let diff = &a.mean - &b.mean;
    let root_a = psd_sqrt(&a.cov)?;
    let inner = &root_a * &b.cov * &root_a;
    let cross: f64 = sym_eigen(&inner)?.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: Vec<f64>, cov: &[f64]) -> GaussianStats {
        let d = mean.len();
        GaussianStats::new(mean, DMatrix::from_row_slice(d, d, cov)).unwrap()
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = stats(vec![1.5], &[4.0]);
        let b = stats(vec![-0.5], &[0.25]);
        let expected = 2.0f64.powi(2) + (2.0f64 - 0.5).powi(2);
        assert!((frechet(&a, &b).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn equal_covariances_cancel() {
        let a = stats(vec![0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        let b = stats(vec![3.0, 4.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!((frechet(&a, &b).unwrap() - 25.0).abs() < 1e-8);
        assert!(frechet(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn rejects_indefinite_and_mismatched() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(GaussianStats::new(vec![0.0, 0.0], cov), Err(Error::Numeric(_))));
        let a = stats(vec![0.0], &[1.0]);
        let b = stats(vec![0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
        assert!(frechet(&a, &b).is_err());
    }

    #[test]
    fn fit_recovers_moments() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![2.0, 5.0]];
        let s = GaussianStats::fit(&rows).unwrap();
        assert_eq!(s.mean.as_slice(), &[2.0, 3.0]);
        assert!((s.cov[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((s.cov[(1, 1)] - 3.0).abs() < 1e-12);
        assert!((s.cov[(0, 1)] - 0.0).abs() < 1e-12);
    }
}
