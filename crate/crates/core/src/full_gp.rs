//! Exact dense GP: marginal likelihood, gradients, prediction, and the
//! Ornstein-Uhlenbeck chain fixture whose precision is block-tridiagonal.

use ndarray::{Array2, ArrayView2};

use crate::blocks::{EdgeSet, Partition};
use crate::datagen::StreamRng;
use crate::error::{GprfError, Result};
use crate::gaussian::{factorize, mvn_logpdf, symmetrize, GaussianFactor};
use crate::kernels::{cov_matrix, latent_cov, Hyperparams, KernelFamily, KernelSpec};
use crate::objective::{local_value_and_gradient, GprfModel, ObjectiveReport, TermCount};
use crate::scalar::Real;

/// Largest problem the dense routines accept.
pub const DENSE_LIMIT: usize = 20_000;

pub(crate) fn size_guard(n: usize) -> Result<()> {
    if n > DENSE_LIMIT {
        return Err(GprfError::SizeGuard { n, limit: DENSE_LIMIT });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FullGp<T> {
    kernel: KernelSpec<T>,
    x: Array2<T>,
    y: Array2<T>,
    factor: GaussianFactor<T>,
}

/// Posterior mean (one column per output) and covariance of noise-free
/// function values.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub mean: Array2<T>,
    pub cov: Array2<T>,
}

impl<T: Real> FullGp<T> {
    pub fn new(kernel: KernelSpec<T>, x: Array2<T>, y: Array2<T>) -> Result<Self> {
        size_guard(x.nrows())?;
        if y.nrows() != x.nrows() {
            return Err(GprfError::DimensionMismatch(format!(
                "X has {} rows, Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        let k = cov_matrix(&kernel, x.view(), x.view(), true)?;
        let factor = factorize(&k)?;
        Ok(FullGp { kernel, x, y, factor })
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    pub fn x(&self) -> &Array2<T> {
        &self.x
    }

    pub fn y(&self) -> &Array2<T> {
        &self.y
    }

    pub fn factor(&self) -> &GaussianFactor<T> {
        &self.factor
    }

    /// Exact log marginal likelihood including constants.
    pub fn full_loglik(&self) -> Result<T> {
        mvn_logpdf(&self.factor, self.y.view())
    }

    /// Exact gradients via `1/2 tr((a a^T - K^{-1}) dK)`.
    pub fn full_gradient(&self) -> Result<ObjectiveReport<T>> {
        let lg = local_value_and_gradient(&self.kernel, &self.factor, self.x.view(), self.y.view())?;
        Ok(ObjectiveReport {
            value: lg.value,
            grad_x: lg.grad_x,
            grad_theta: lg.grad_theta,
            term_count: TermCount { nodes: 1, edges: 0 },
        })
    }

    /// Posterior over `f(Xstar)`: mean `K*^T K_y^{-1} Y`, covariance
    /// `K** - K*^T K_y^{-1} K*`, where `K**` carries jitter but no noise.
    pub fn full_predict(&self, xstar: ArrayView2<T>) -> Result<Prediction<T>> {
        if xstar.ncols() != self.x.ncols() {
            return Err(GprfError::DimensionMismatch(format!(
                "test points have dimension {}, training {}",
                xstar.ncols(),
                self.x.ncols()
            )));
        }
        let kstar = cov_matrix(&self.kernel, self.x.view(), xstar, false)?;
        let alpha = self.factor.solve(&self.y)?;
        let mean = kstar.t().dot(&alpha);
        let v = self.factor.whiten(&kstar)?;
        let mut cov = latent_cov(&self.kernel, xstar)? - v.t().dot(&v);
        symmetrize(&mut cov);
        Ok(Prediction { mean, cov })
    }
}

/// Settings for [`ou_chain_fixture`].
#[derive(Debug, Clone, Copy)]
pub struct OuChainConfig {
    pub n: usize,
    pub block_size: usize,
    pub lengthscale: f64,
    pub noise_std: f64,
    pub outputs: usize,
    pub seed: u64,
}

impl Default for OuChainConfig {
    fn default() -> Self {
        OuChainConfig {
            n: 200,
            block_size: 20,
            lengthscale: 1.0,
            noise_std: 0.0,
            outputs: 1,
            seed: 0,
        }
    }
}

pub struct OuChain<T> {
    pub gp: FullGp<T>,
    pub partition: Partition,
    pub edges: EdgeSet,
}

impl<T: Real> OuChain<T> {
    /// The chain-structured surrogate over the same data.
    pub fn model(&self) -> Result<GprfModel<T>> {
        GprfModel::new(
            self.gp.kernel.clone(),
            self.partition.clone(),
            self.edges.clone(),
            self.gp.x.clone(),
            self.gp.y.clone(),
        )
    }
}

/// Exponential kernel used by the chain fixtures (jitter 1e-10).
pub fn ou_kernel<T: Real>(lengthscale: f64, noise_std: f64) -> Result<KernelSpec<T>> {
    Ok(KernelSpec::new(
        KernelFamily::Exponential,
        Hyperparams::isotropic(T::one(), T::lit(lengthscale), T::lit(noise_std * noise_std)),
    )?
    .with_jitter(T::lit(1e-10)))
}

/// Sorted 1-D inputs with roughly half-lengthscale spacing, contiguous blocks
/// and chain edges `(b, b+1)`; outputs are drawn from the GP itself.
pub fn ou_chain_fixture<T: Real>(cfg: OuChainConfig) -> Result<OuChain<T>> {
    if cfg.block_size == 0 || cfg.n % cfg.block_size != 0 {
        return Err(GprfError::InvalidInput(format!(
            "block size {} must divide n = {}",
            cfg.block_size, cfg.n
        )));
    }
    let mut rng = StreamRng::new(cfg.seed, 0);
    let spacing = 0.5 * cfg.lengthscale;
    let pts: Vec<f64> = (0..cfg.n)
        .map(|i| (i as f64 + 0.5 + 0.4 * (rng.uniform() - 0.5)) * spacing)
        .collect();
    ou_chain_at(&pts, cfg)
}

/// As [`ou_chain_fixture`] with explicit (sorted) input locations.
pub fn ou_chain_at<T: Real>(points: &[f64], cfg: OuChainConfig) -> Result<OuChain<T>> {
    let n = points.len();
    if points.windows(2).any(|w| w[1] < w[0]) {
        return Err(GprfError::InvalidInput("chain inputs must be sorted".into()));
    }
    let kernel = ou_kernel::<T>(cfg.lengthscale, cfg.noise_std)?;
    let x = Array2::from_shape_fn((n, 1), |(i, _)| T::lit(points[i]));
    let k = cov_matrix(&kernel, x.view(), x.view(), true)?;
    let factor = factorize(&k)?;
    let mut y = Array2::<T>::zeros((n, cfg.outputs));
    for col in 0..cfg.outputs {
        let mut rng = StreamRng::new(cfg.seed, 2 + col as u64);
        let z: Vec<T> = (0..n).map(|_| T::lit(rng.normal())).collect();
        let l = factor.chol();
        for i in 0..n {
            let mut acc = T::zero();
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            y[(i, col)] = acc;
        }
    }
    let block = cfg.block_size.min(n).max(1);
    let partition = Partition::contiguous(n, block)?;
    let edges = EdgeSet::chain(partition.n_blocks());
    Ok(OuChain {
        gp: FullGp { kernel, x, y, factor },
        partition,
        edges,
    })
}
