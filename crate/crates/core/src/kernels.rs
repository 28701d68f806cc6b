//! Stationary covariance functions, their matrices, and analytic derivatives.
//!
//! Every family is written as a function of the scaled squared distance
//! `s = sum_c (dx_c / l_{g(c)})^2`, where `g(c)` maps a coordinate to its
//! lengthscale group. Isotropic kernels use a single group. Hyperparameter
//! derivatives are taken with respect to the logarithm of each parameter, in
//! the order `[log signal_variance, log lengthscale_0.., log noise_variance]`.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use crate::error::{GprfError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `sf2 * exp(-r^2 / (2 l^2))`
    SquaredExponentialHalf,
    /// `sf2 * exp(-(r / l)^2)`
    SquaredExponentialPlain,
    /// `sf2 * (1 + sqrt(3) r / l) * exp(-sqrt(3) r / l)`
    Matern32,
    /// `sf2 * exp(-r / l)`, the Ornstein-Uhlenbeck kernel. Its precision on
    /// sorted one-dimensional inputs is tridiagonal, which the chain fixtures
    /// rely on.
    Exponential,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponentialHalf => "se_half",
            KernelFamily::SquaredExponentialPlain => "se_plain",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Exponential => "exponential",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "se_half" => Some(KernelFamily::SquaredExponentialHalf),
            "se_plain" | "se" => Some(KernelFamily::SquaredExponentialPlain),
            "matern32" => Some(KernelFamily::Matern32),
            "exponential" | "ou" => Some(KernelFamily::Exponential),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams<T> {
    pub signal_variance: T,
    pub lengthscales: Vec<T>,
    /// Observation noise. Zero is accepted for noise-free fixtures, but such a
    /// kernel cannot have its hyperparameters optimized in log space.
    pub noise_variance: T,
}

impl<T: Real> Hyperparams<T> {
    pub fn isotropic(signal_variance: T, lengthscale: T, noise_variance: T) -> Self {
        Hyperparams {
            signal_variance,
            lengthscales: vec![lengthscale],
            noise_variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec<T> {
    pub family: KernelFamily,
    pub hyper: Hyperparams<T>,
    /// Added to the diagonal of square self-covariances.
    pub jitter: T,
    /// Lengthscale group per input coordinate; `None` means isotropic.
    pub coord_groups: Option<Vec<usize>>,
}

impl<T: Real> KernelSpec<T> {
    /// Builds a spec with the default jitter of `1e-8 * signal_variance`.
    pub fn new(family: KernelFamily, hyper: Hyperparams<T>) -> Result<Self> {
        let jitter = T::lit(1e-8) * hyper.signal_variance;
        let spec = KernelSpec {
            family,
            hyper,
            jitter,
            coord_groups: None,
        };
        spec.check_hyper()?;
        Ok(spec)
    }

    pub fn with_jitter(mut self, jitter: T) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn with_coord_groups(mut self, groups: Vec<usize>) -> Self {
        self.coord_groups = Some(groups);
        self
    }

    fn check_hyper(&self) -> Result<()> {
        let bad = |name: String, v: T| GprfError::InvalidHyperparameter {
            name,
            value: v.as_f64(),
        };
        let h = &self.hyper;
        if !(h.signal_variance > T::zero()) || !h.signal_variance.finite() {
            return Err(bad("signal_variance".into(), h.signal_variance));
        }
        if h.lengthscales.is_empty() {
            return Err(GprfError::InvalidHyperparameter {
                name: "lengthscales".into(),
                value: f64::NAN,
            });
        }
        for (g, &l) in h.lengthscales.iter().enumerate() {
            if !(l > T::zero()) || !l.finite() {
                return Err(bad(format!("lengthscale[{g}]"), l));
            }
        }
        if !(h.noise_variance >= T::zero()) || !h.noise_variance.finite() {
            return Err(bad("noise_variance".into(), h.noise_variance));
        }
        if !(self.jitter >= T::zero()) || !self.jitter.finite() {
            return Err(bad("jitter".into(), self.jitter));
        }
        Ok(())
    }

    /// Checks hyperparameters and the coordinate grouping against input dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        self.check_hyper()?;
        let n_ls = self.hyper.lengthscales.len();
        match &self.coord_groups {
            None => {
                if n_ls != 1 {
                    return Err(GprfError::DimensionMismatch(format!(
                        "{n_ls} lengthscales given but no coordinate groups declared"
                    )));
                }
            }
            Some(groups) => {
                if groups.len() != d {
                    return Err(GprfError::DimensionMismatch(format!(
                        "coordinate groups cover {} coordinates, inputs have {d}",
                        groups.len()
                    )));
                }
                let n_groups = groups.iter().max().map_or(0, |g| g + 1);
                if n_ls != 1 && n_ls != n_groups {
                    return Err(GprfError::DimensionMismatch(format!(
                        "{n_ls} lengthscales for {n_groups} coordinate groups"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of log-hyperparameters: signal variance, lengthscales, noise variance.
    pub fn n_hyper(&self) -> usize {
        self.hyper.lengthscales.len() + 2
    }

    pub fn log_params(&self) -> Vec<T> {
        let h = &self.hyper;
        let mut v = Vec::with_capacity(self.n_hyper());
        v.push(h.signal_variance.ln());
        v.extend(h.lengthscales.iter().map(|l| l.ln()));
        v.push(h.noise_variance.ln());
        v
    }

    /// Returns a copy with hyperparameters set from log values. Jitter is kept.
    pub fn with_log_params(&self, log_theta: &[T]) -> Result<Self> {
        if log_theta.len() != self.n_hyper() {
            return Err(GprfError::DimensionMismatch(format!(
                "expected {} log-hyperparameters, got {}",
                self.n_hyper(),
                log_theta.len()
            )));
        }
        let n_ls = self.hyper.lengthscales.len();
        let mut out = self.clone();
        out.hyper.signal_variance = log_theta[0].exp();
        for g in 0..n_ls {
            out.hyper.lengthscales[g] = log_theta[1 + g].exp();
        }
        out.hyper.noise_variance = log_theta[1 + n_ls].exp();
        out.check_hyper()?;
        Ok(out)
    }

    #[inline]
    fn group_of(&self, c: usize) -> usize {
        match &self.coord_groups {
            Some(g) if self.hyper.lengthscales.len() > 1 => g[c],
            _ => 0,
        }
    }

    /// Inverse squared lengthscale for each coordinate.
    fn inv_sq_ls(&self, d: usize) -> Vec<T> {
        (0..d)
            .map(|c| {
                let l = self.hyper.lengthscales[self.group_of(c)];
                T::one() / (l * l)
            })
            .collect()
    }

    /// Covariance as a function of the scaled squared distance.
    #[inline]
    pub fn k_of_s(&self, s: T) -> T {
        let sf2 = self.hyper.signal_variance;
        match self.family {
            KernelFamily::SquaredExponentialHalf => sf2 * (-T::lit(0.5) * s).exp(),
            KernelFamily::SquaredExponentialPlain => sf2 * (-s).exp(),
            KernelFamily::Matern32 => {
                let a = (T::lit(3.0) * s).sqrt();
                sf2 * (T::one() + a) * (-a).exp()
            }
            KernelFamily::Exponential => sf2 * (-s.sqrt()).exp(),
        }
    }

    /// `dk/ds`. For the exponential kernel the derivative diverges at `s = 0`;
    /// zero is returned there, which is the value every caller multiplies by a
    /// vanishing distance anyway.
    #[inline]
    pub fn dk_ds(&self, s: T) -> T {
        let sf2 = self.hyper.signal_variance;
        match self.family {
            KernelFamily::SquaredExponentialHalf => -T::lit(0.5) * sf2 * (-T::lit(0.5) * s).exp(),
            KernelFamily::SquaredExponentialPlain => -sf2 * (-s).exp(),
            KernelFamily::Matern32 => {
                let a = (T::lit(3.0) * s).sqrt();
                -T::lit(1.5) * sf2 * (-a).exp()
            }
            KernelFamily::Exponential => {
                if s > T::zero() {
                    let r = s.sqrt();
                    -sf2 * (-r).exp() / (T::lit(2.0) * r)
                } else {
                    T::zero()
                }
            }
        }
    }

    #[inline]
    fn scaled_sq_dist(&self, a: &[T], b: &[T], inv_sq: &[T]) -> T {
        let mut s = T::zero();
        for c in 0..a.len() {
            let dx = a[c] - b[c];
            s += dx * dx * inv_sq[c];
        }
        s
    }

    /// Kernel value between two points.
    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        let inv_sq = self.inv_sq_ls(a.len());
        self.k_of_s(self.scaled_sq_dist(a, b, &inv_sq))
    }
}

fn check_points<T: Real>(spec: &KernelSpec<T>, x: &ArrayView2<T>) -> Result<()> {
    spec.validate(x.ncols())
}

/// Cross-covariance `k(Xa_p, Xb_q)`. With `add_noise`, `noise_variance + jitter`
/// is added to the diagonal; this requires `xa` and `xb` to be the same point set.
pub fn cov_matrix<T: Real>(
    spec: &KernelSpec<T>,
    xa: ArrayView2<T>,
    xb: ArrayView2<T>,
    add_noise: bool,
) -> Result<Array2<T>> {
    check_points(spec, &xa)?;
    if xa.ncols() != xb.ncols() {
        return Err(GprfError::DimensionMismatch(format!(
            "point dimensions differ: {} vs {}",
            xa.ncols(),
            xb.ncols()
        )));
    }
    if add_noise {
        if xa != xb {
            return Err(GprfError::InvalidInput(
                "noise can only be added to the covariance of a point set with itself".into(),
            ));
        }
        let diag = vec![spec.hyper.noise_variance + spec.jitter; xa.nrows()];
        return Ok(self_cov_with_diag(spec, xa, &diag));
    }
    let inv_sq = spec.inv_sq_ls(xa.ncols());
    let mut k = Array2::zeros((xa.nrows(), xb.nrows()));
    let rows_b: Vec<Vec<T>> = xb.rows().into_iter().map(|r| r.to_vec()).collect();
    for (p, ra) in xa.rows().into_iter().enumerate() {
        let ra = ra.to_vec();
        for (q, rb) in rows_b.iter().enumerate() {
            k[(p, q)] = spec.k_of_s(spec.scaled_sq_dist(&ra, rb, &inv_sq));
        }
    }
    Ok(k)
}

/// Symmetric self-covariance with `diag_add[p]` added to entry `(p, p)`.
/// Fills the upper triangle and mirrors it, so the result is exactly symmetric.
/// The caller is responsible for having validated `spec` against `x`.
pub(crate) fn self_cov_with_diag<T: Real>(spec: &KernelSpec<T>, x: ArrayView2<T>, diag_add: &[T]) -> Array2<T> {
    let n = x.nrows();
    let d = x.ncols();
    let inv_sq = spec.inv_sq_ls(d);
    let rows: Vec<Vec<T>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut k = Array2::zeros((n, n));
    let k0 = spec.k_of_s(T::zero());
    for p in 0..n {
        k[(p, p)] = k0 + diag_add[p];
        for q in (p + 1)..n {
            let v = spec.k_of_s(spec.scaled_sq_dist(&rows[p], &rows[q], &inv_sq));
            k[(p, q)] = v;
            k[(q, p)] = v;
        }
    }
    k
}

/// Noise-free prior covariance of latent function values, with jitter only.
pub fn latent_cov<T: Real>(spec: &KernelSpec<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
    check_points(spec, &x)?;
    let diag = vec![spec.jitter; x.nrows()];
    Ok(self_cov_with_diag(spec, x, &diag))
}

/// `dK_y / d log(theta_h)` for every hyperparameter, `K_y` being the noisy self-covariance.
pub fn cov_grad_hyper<T: Real>(spec: &KernelSpec<T>, x: ArrayView2<T>) -> Result<Vec<Array2<T>>> {
    check_points(spec, &x)?;
    let n = x.nrows();
    if n == 0 {
        return Err(GprfError::InvalidInput("empty point set".into()));
    }
    let d = x.ncols();
    let n_ls = spec.hyper.lengthscales.len();
    let inv_sq = spec.inv_sq_ls(d);
    let rows: Vec<Vec<T>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut out: Vec<Array2<T>> = (0..spec.n_hyper()).map(|_| Array2::zeros((n, n))).collect();
    let mut s_group = vec![T::zero(); n_ls];
    for p in 0..n {
        for q in p..n {
            s_group.iter_mut().for_each(|v| *v = T::zero());
            for c in 0..d {
                let dx = rows[p][c] - rows[q][c];
                s_group[spec.group_of(c)] += dx * dx * inv_sq[c];
            }
            let s = s_group.iter().fold(T::zero(), |a, &b| a + b);
            let k = spec.k_of_s(s);
            let dk = spec.dk_ds(s);
            out[0][(p, q)] = k;
            out[0][(q, p)] = k;
            for g in 0..n_ls {
                let v = dk * (-T::lit(2.0) * s_group[g]);
                out[1 + g][(p, q)] = v;
                out[1 + g][(q, p)] = v;
            }
        }
        out[1 + n_ls][(p, p)] = spec.hyper.noise_variance;
    }
    Ok(out)
}

/// `dK_y / dx_{i,c}`: nonzero only in row and column `i`, zero on the diagonal.
pub fn cov_grad_input<T: Real>(spec: &KernelSpec<T>, x: ArrayView2<T>, i: usize, c: usize) -> Result<Array2<T>> {
    check_points(spec, &x)?;
    let n = x.nrows();
    let d = x.ncols();
    if i >= n || c >= d {
        return Err(GprfError::IndexOutOfRange(format!(
            "point {i} coordinate {c} for {n} points of dimension {d}"
        )));
    }
    let inv_sq = spec.inv_sq_ls(d);
    let xi = x.row(i).to_vec();
    let mut out = Array2::zeros((n, n));
    for q in 0..n {
        if q == i {
            continue;
        }
        let xq = x.row(q).to_vec();
        let s = spec.scaled_sq_dist(&xi, &xq, &inv_sq);
        let v = spec.dk_ds(s) * T::lit(2.0) * (xi[c] - xq[c]) * inv_sq[c];
        out[(i, q)] = v;
        out[(q, i)] = v;
    }
    Ok(out)
}

/// Chain rule from a symmetric sensitivity `G = dL/dK_y` to inputs and
/// log-hyperparameters, without materializing the per-coordinate matrices.
///
/// Adds `weight * dL/dx` into `grad_x` (same shape as `x`) and
/// `weight * dL/dlog(theta)` into `grad_theta`.
pub(crate) fn contract_sensitivity<T: Real>(
    spec: &KernelSpec<T>,
    x: ArrayView2<T>,
    g: &Array2<T>,
    weight: T,
    mut grad_x: ArrayViewMut2<T>,
    grad_theta: &mut [T],
) {
    let n = x.nrows();
    let d = x.ncols();
    let n_ls = spec.hyper.lengthscales.len();
    let inv_sq = spec.inv_sq_ls(d);
    let rows: Vec<Vec<T>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let two = T::lit(2.0);

    let mut th = vec![T::zero(); grad_theta.len()];
    let mut s_group = vec![T::zero(); n_ls];
    let mut gx = vec![T::zero(); n * d];
    let k0 = spec.k_of_s(T::zero());
    let mut trace = T::zero();
    for p in 0..n {
        let gpp = g[(p, p)];
        trace += gpp;
        th[0] += gpp * k0;
        for q in (p + 1)..n {
            // Off-diagonal pairs appear twice in the symmetric contraction.
            let gpq = two * g[(p, q)];
            s_group.iter_mut().for_each(|v| *v = T::zero());
            for c in 0..d {
                let dx = rows[p][c] - rows[q][c];
                s_group[spec.group_of(c)] += dx * dx * inv_sq[c];
            }
            let s = s_group.iter().fold(T::zero(), |a, &b| a + b);
            let k = spec.k_of_s(s);
            let dk = spec.dk_ds(s);
            th[0] += gpq * k;
            for gr in 0..n_ls {
                th[1 + gr] += gpq * dk * (-two * s_group[gr]);
            }
            let coef = gpq * dk * two;
            for c in 0..d {
                let v = coef * (rows[p][c] - rows[q][c]) * inv_sq[c];
                gx[p * d + c] += v;
                gx[q * d + c] -= v;
            }
        }
    }
    th[1 + n_ls] += trace * spec.hyper.noise_variance;
    for p in 0..n {
        for c in 0..d {
            grad_x[(p, c)] += weight * gx[p * d + c];
        }
    }
    for (dst, v) in grad_theta.iter_mut().zip(th) {
        *dst += weight * v;
    }
}
