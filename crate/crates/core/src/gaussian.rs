//! Zero-mean multivariate Gaussian building blocks.
//!
//! A [`GaussianFactor`] holds the lower Cholesky factor of a covariance and its
//! log-determinant. Multi-output data `Y` (one column per output) shares a
//! single factorization.

use ndarray::{Array2, ArrayView2};
use ndarray_linalg::{Cholesky, Diag, InverseC, SolveTriangular, UPLO};
use ndarray_linalg::cholesky::CholeskyFactorized;

use crate::error::{GprfError, Result};
use crate::scalar::Real;

/// Jitter multipliers (of the mean diagonal) tried when a plain factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];

#[derive(Debug, Clone)]
pub struct GaussianFactor<T> {
    chol: Array2<T>,
    logdet: T,
    jitter: T,
}

impl<T: Real> GaussianFactor<T> {
    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    /// Lower-triangular `L` with `L L^T = K` (plus any escalation jitter).
    pub fn chol(&self) -> &Array2<T> {
        &self.chol
    }

    pub fn logdet(&self) -> T {
        self.logdet
    }

    /// Jitter that had to be added to the diagonal; zero when the first attempt succeeded.
    pub fn jitter_added(&self) -> T {
        self.jitter
    }

    /// `L^{-1} B`.
    pub fn whiten(&self, b: &Array2<T>) -> Result<Array2<T>> {
        self.check_rows(b.nrows())?;
        self.chol
            .solve_triangular(UPLO::Lower, Diag::NonUnit, b)
            .map_err(|_| GprfError::NotPositiveDefinite { dim: self.dim() })
    }

    /// `K^{-1}`, exactly symmetric.
    pub fn inverse(&self) -> Result<Array2<T>> {
        let f = CholeskyFactorized {
            factor: self.chol.clone(),
            uplo: UPLO::Lower,
        };
        let mut inv = f
            .invc()
            .map_err(|_| GprfError::NotPositiveDefinite { dim: self.dim() })?;
        symmetrize(&mut inv);
        Ok(inv)
    }

    /// `K^{-1} B`.
    pub fn solve(&self, b: &Array2<T>) -> Result<Array2<T>> {
        let z = self.whiten(b)?;
        let upper = self.chol.t().as_standard_layout().into_owned();
        upper
            .solve_triangular(UPLO::Upper, Diag::NonUnit, &z)
            .map_err(|_| GprfError::NotPositiveDefinite { dim: self.dim() })
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.dim() {
            return Err(GprfError::DimensionMismatch(format!(
                "expected {} rows, got {rows}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Replaces `a` by `(a + a^T) / 2`.
pub(crate) fn symmetrize<T: Real>(a: &mut Array2<T>) {
    let n = a.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (a[(i, j)] + a[(j, i)]) * half;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

fn logdet_from_chol<T: Real>(l: &Array2<T>) -> T {
    let two = T::lit(2.0);
    l.diag().iter().fold(T::zero(), |acc, &v| acc + two * v.ln())
}

fn try_cholesky<T: Real>(k: &Array2<T>) -> Option<Array2<T>> {
    let l = k.cholesky(UPLO::Lower).ok()?;
    if l.diag().iter().all(|v| *v > T::zero() && v.finite()) {
        Some(l)
    } else {
        None
    }
}

/// Factorizes a symmetric covariance, escalating diagonal jitter through
/// [`JITTER_LADDER`] before giving up.
pub fn factorize<T: Real>(k: &Array2<T>) -> Result<GaussianFactor<T>> {
    let n = k.nrows();
    if k.ncols() != n {
        return Err(GprfError::DimensionMismatch(format!("covariance is {}x{}", n, k.ncols())));
    }
    if n == 0 {
        return Err(GprfError::InvalidInput("empty covariance".into()));
    }
    let scale = k.iter().fold(T::zero(), |m, v| m.fmax(v.abs()));
    let tol = T::lit(1e-8) * scale.fmax(T::one());
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (k[(i, j)], k[(j, i)]);
            if !a.finite() || (a - b).abs() > tol {
                return Err(GprfError::InvalidInput(format!(
                    "covariance not symmetric at ({i},{j}): {a} vs {b}"
                )));
            }
        }
    }
    if let Some(chol) = try_cholesky(k) {
        let logdet = logdet_from_chol(&chol);
        return Ok(GaussianFactor {
            chol,
            logdet,
            jitter: T::zero(),
        });
    }
    let mean_diag = k.diag().iter().fold(T::zero(), |a, &b| a + b) / T::from_count(n);
    for step in JITTER_LADDER {
        let jitter = T::lit(step) * mean_diag.abs().fmax(T::eps());
        let mut kj = k.clone();
        kj.diag_mut().mapv_inplace(|v| v + jitter);
        if let Some(chol) = try_cholesky(&kj) {
            log::debug!("factorization of dimension {n} needed jitter {jitter}");
            let logdet = logdet_from_chol(&chol);
            return Ok(GaussianFactor { chol, logdet, jitter });
        }
    }
    Err(GprfError::NotPositiveDefinite { dim: n })
}

/// Log-density of `n x D` data with i.i.d. columns `y_d ~ N(0, K)`, including
/// the normalizing constant.
pub fn mvn_logpdf<T: Real>(factor: &GaussianFactor<T>, y: ArrayView2<T>) -> Result<T> {
    let z = factor.whiten(&y.to_owned())?;
    let quad = z.iter().fold(T::zero(), |a, &v| a + v * v);
    Ok(logpdf_from_parts(factor, y.ncols(), quad))
}

fn logpdf_from_parts<T: Real>(factor: &GaussianFactor<T>, outputs: usize, quad: T) -> T {
    let half = T::lit(0.5);
    let d = T::from_count(outputs);
    let n = T::from_count(factor.dim());
    -half * d * factor.logdet() - half * quad - half * n * d * T::ln_2pi()
}

/// `G = 1/2 (sum_d a_d a_d^T - D K^{-1})` with `a_d = K^{-1} y_d`; the
/// derivative of [`mvn_logpdf`] with respect to `K` viewed as a symmetric matrix.
pub fn mvn_grad_wrt_cov<T: Real>(factor: &GaussianFactor<T>, y: ArrayView2<T>) -> Result<Array2<T>> {
    Ok(mvn_value_and_sensitivity(factor, y)?.1)
}

/// Log-density and its covariance sensitivity from one inverse.
pub(crate) fn mvn_value_and_sensitivity<T: Real>(
    factor: &GaussianFactor<T>,
    y: ArrayView2<T>,
) -> Result<(T, Array2<T>)> {
    factor.check_rows(y.nrows())?;
    let kinv = factor.inverse()?;
    let alpha = kinv.dot(&y);
    let quad = alpha
        .iter()
        .zip(y.iter())
        .fold(T::zero(), |a, (&p, &q)| a + p * q);
    let value = logpdf_from_parts(factor, y.ncols(), quad);
    let d = T::from_count(y.ncols());
    let half = T::lit(0.5);
    let mut g = alpha.dot(&alpha.t());
    g.zip_mut_with(&kinv, |gv, &ki| *gv = half * (*gv - d * ki));
    symmetrize(&mut g);
    Ok((value, g))
}

/// `KL[N(0, K_b) || N(0, K_p)]`.
pub fn gaussian_kl<T: Real>(factor_b: &GaussianFactor<T>, factor_p: &GaussianFactor<T>) -> Result<T> {
    let n = factor_b.dim();
    if factor_p.dim() != n {
        return Err(GprfError::DimensionMismatch(format!(
            "KL between dimensions {n} and {}",
            factor_p.dim()
        )));
    }
    // tr(K_p^{-1} K_b) = ||L_p^{-1} L_b||_F^2
    let w = factor_p.whiten(factor_b.chol())?;
    let tr = w.iter().fold(T::zero(), |a, &v| a + v * v);
    let half = T::lit(0.5);
    Ok(half * (tr - T::from_count(n) + factor_p.logdet() - factor_b.logdet()))
}

/// Sum of the per-column quadratic forms `y_d^T A y_d`.
pub(crate) fn quad_form_sum<T: Real>(a: &Array2<T>, y: ArrayView2<T>) -> T {
    let ay = a.dot(&y);
    ay.iter().zip(y.iter()).fold(T::zero(), |s, (&p, &q)| s + p * q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn scalar_factor() {
        let f = factorize(&array![[4.0]]).unwrap();
        assert_eq!(f.chol(), &array![[2.0]]);
        assert!((f.logdet() - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_factor() {
        let f = factorize(&Array2::<f64>::eye(3)).unwrap();
        assert_eq!(f.chol(), &Array2::<f64>::eye(3));
        assert_eq!(f.logdet(), 0.0);
    }

    #[test]
    fn logpdf_small_cases() {
        let f = factorize(&array![[1.0f64]]).unwrap();
        let v = mvn_logpdf(&f, array![[0.0]].view()).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);

        let f = factorize(&Array2::<f64>::eye(2)).unwrap();
        let v = mvn_logpdf(&f, array![[1.0], [1.0]].view()).unwrap();
        let expected = -1.0 - (2.0 * std::f64::consts::PI).ln();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_small_cases() {
        let f = factorize(&array![[1.0]]).unwrap();
        assert_eq!(mvn_grad_wrt_cov(&f, array![[0.0]].view()).unwrap(), array![[-0.5]]);
        assert_eq!(mvn_grad_wrt_cov(&f, array![[1.0]].view()).unwrap(), array![[0.0]]);
    }

    #[test]
    fn dimension_mismatch() {
        let f = factorize(&Array2::<f64>::eye(2)).unwrap();
        assert!(matches!(
            mvn_logpdf(&f, array![[1.0]].view()),
            Err(GprfError::DimensionMismatch(_))
        ));
        let g = factorize(&Array2::<f64>::eye(3)).unwrap();
        assert!(matches!(gaussian_kl(&f, &g), Err(GprfError::DimensionMismatch(_))));
    }

    #[test]
    fn kl_closed_forms() {
        let p = factorize(&array![[1.0]]).unwrap();
        let b = factorize(&array![[2.0]]).unwrap();
        let kl = gaussian_kl(&b, &p).unwrap();
        assert!((kl - 0.5 * (2.0 - 1.0 - 2.0f64.ln())).abs() < 1e-15);
        assert!((kl - 0.153426).abs() < 1e-6);
        let k = array![[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.0]];
        let f = factorize(&k).unwrap();
        assert_eq!(gaussian_kl(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn jitter_escalation_rescues_semidefinite() {
        // Rank-one matrix: singular but PSD.
        let k = array![[1.0, 1.0], [1.0, 1.0]];
        let f = factorize(&k).unwrap();
        assert!(f.jitter_added() > 0.0);
        let k = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(factorize(&k), Err(GprfError::NotPositiveDefinite { dim: 2 })));
    }

    #[test]
    fn asymmetric_rejected() {
        let k = array![[1.0, 0.5], [0.0, 1.0]];
        assert!(factorize(&k).is_err());
    }

    #[test]
    fn solve_and_inverse_agree() {
        let k = array![[2.0f64, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.0]];
        let f = factorize(&k).unwrap();
        let b = array![[1.0, 0.0], [2.0, 1.0], [-1.0, 3.0]];
        let x1 = f.solve(&b).unwrap();
        let x2 = f.inverse().unwrap().dot(&b);
        for (a, c) in x1.iter().zip(x2.iter()) {
            assert!((a - c).abs() < 1e-12);
        }
        let back = k.dot(&x1);
        for (a, c) in back.iter().zip(b.iter()) {
            assert!((a - c).abs() < 1e-12);
        }
    }
}
