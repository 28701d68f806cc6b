//! The block-pairwise random-field surrogate for the GP marginal likelihood.
//!
//! ```text
//! log q(Y) = sum_i (1 - |E_i|) log p(y_i) + sum_{(i,j) in E} log p(y_i, y_j)
//! ```
//!
//! Every term is a local Gaussian log-density over one block or over the union
//! of two blocks, so terms are evaluated independently (in parallel when a
//! rayon pool has more than one thread) and then reduced in a fixed order:
//! nodes by ascending block id, then edges lexicographically.

use ndarray::{s, Array2, ArrayView2, Axis};
use ndarray_linalg::{Cholesky, UPLO};
use rayon::prelude::*;

use crate::blocks::{EdgeSet, Partition};
use crate::error::{GprfError, Result, Term};
use crate::gaussian::{factorize, gaussian_kl, mvn_logpdf, mvn_value_and_sensitivity, quad_form_sum, GaussianFactor};
use crate::kernels::{contract_sensitivity, self_cov_with_diag, KernelSpec};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct GprfModel<T> {
    kernel: KernelSpec<T>,
    partition: Partition,
    edges: EdgeSet,
    x: Array2<T>,
    y: Array2<T>,
}

impl<T: Real> GprfModel<T> {
    pub fn new(kernel: KernelSpec<T>, partition: Partition, edges: EdgeSet, x: Array2<T>, y: Array2<T>) -> Result<Self> {
        let model = GprfModel {
            kernel,
            partition,
            edges,
            x,
            y,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let n = self.partition.n_points();
        if self.x.nrows() != n || self.y.nrows() != n {
            return Err(GprfError::DimensionMismatch(format!(
                "partition covers {n} points, X has {} rows and Y has {}",
                self.x.nrows(),
                self.y.nrows()
            )));
        }
        if self.edges.n_blocks() != self.partition.n_blocks() {
            return Err(GprfError::DimensionMismatch(format!(
                "edge set over {} blocks, partition has {}",
                self.edges.n_blocks(),
                self.partition.n_blocks()
            )));
        }
        if self.y.ncols() == 0 {
            return Err(GprfError::InvalidInput("Y has no output columns".into()));
        }
        self.kernel.validate(self.x.ncols())
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn edges(&self) -> &EdgeSet {
        &self.edges
    }

    pub fn x(&self) -> &Array2<T> {
        &self.x
    }

    pub fn y(&self) -> &Array2<T> {
        &self.y
    }

    pub fn set_x(&mut self, x: Array2<T>) -> Result<()> {
        if x.dim() != self.x.dim() {
            return Err(GprfError::DimensionMismatch(format!(
                "new X is {:?}, expected {:?}",
                x.dim(),
                self.x.dim()
            )));
        }
        self.x = x;
        Ok(())
    }

    pub fn set_kernel(&mut self, kernel: KernelSpec<T>) -> Result<()> {
        kernel.validate(self.x.ncols())?;
        self.kernel = kernel;
        Ok(())
    }

    /// Same data and partition with a different edge set.
    pub fn with_edges(&self, edges: EdgeSet) -> Result<Self> {
        GprfModel::new(self.kernel.clone(), self.partition.clone(), edges, self.x.clone(), self.y.clone())
    }

    /// Same inputs and structure with different outputs.
    pub fn with_y(&self, y: Array2<T>) -> Result<Self> {
        GprfModel::new(self.kernel.clone(), self.partition.clone(), self.edges.clone(), self.x.clone(), y)
    }

    /// Terms in reduction order: nodes ascending, then edges lexicographically.
    pub fn terms(&self) -> Vec<Term> {
        (0..self.partition.n_blocks())
            .map(Term::Node)
            .chain(self.edges.edges().iter().map(|&(i, j)| Term::Edge(i, j)))
            .collect()
    }

    /// Weight of a term in the objective: `1 - |E_i|` for nodes, 1 for edges.
    pub fn term_weight(&self, term: Term) -> T {
        match term {
            Term::Node(i) => T::one() - T::from_count(self.edges.degree()[i]),
            Term::Edge(..) => T::one(),
        }
    }

    /// Point indices covered by a term; edge terms list block `i` then block `j`.
    pub fn term_indices(&self, term: Term) -> Vec<usize> {
        match term {
            Term::Node(i) => self.partition.block(i).to_vec(),
            Term::Edge(i, j) => {
                let mut v = self.partition.block(i).to_vec();
                v.extend_from_slice(self.partition.block(j));
                v
            }
        }
    }

    pub(crate) fn noisy_diag(&self, len: usize) -> Vec<T> {
        vec![self.kernel.hyper.noise_variance + self.kernel.jitter; len]
    }

    /// Noisy covariance over the points of a term.
    pub fn term_covariance(&self, term: Term) -> Array2<T> {
        let idx = self.term_indices(term);
        let xs = self.x.select(Axis(0), &idx);
        self_cov_with_diag(&self.kernel, xs.view(), &self.noisy_diag(idx.len()))
    }

    fn term_factor(&self, term: Term) -> Result<GaussianFactor<T>> {
        factorize(&self.term_covariance(term)).map_err(|e| GprfError::TermFailure {
            term,
            source: Box::new(e),
        })
    }

    /// Inverse of the joint covariance of blocks `i` and `j`, split into blocks.
    pub fn local_precision(&self, i: usize, j: usize) -> Result<LocalPrecision<T>> {
        let term = Term::Edge(i, j);
        let q = self.term_factor(term)?.inverse()?;
        let ni = self.partition.block(i).len();
        Ok(LocalPrecision {
            block_pair: (i, j),
            q11: q.slice(s![..ni, ..ni]).to_owned(),
            q12: q.slice(s![..ni, ni..]).to_owned(),
            q22: q.slice(s![ni.., ni..]).to_owned(),
        })
    }

    fn active_terms(&self) -> Vec<Term> {
        // Nodes of degree one carry weight zero and are skipped.
        self.terms()
            .into_iter()
            .filter(|&t| !matches!(t, Term::Node(i) if self.edges.degree()[i] == 1))
            .collect()
    }

    fn term_count(&self) -> TermCount {
        TermCount {
            nodes: self.partition.n_blocks(),
            edges: self.edges.len(),
        }
    }
}

/// Blocks of the inverse of `[K_ii K_ij; K_ji K_jj]`.
#[derive(Debug, Clone)]
pub struct LocalPrecision<T> {
    pub block_pair: (usize, usize),
    pub q11: Array2<T>,
    pub q12: Array2<T>,
    pub q22: Array2<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermCount {
    pub nodes: usize,
    pub edges: usize,
}

/// Objective value with gradients with respect to the flattened inputs and
/// the log-hyperparameters.
#[derive(Debug, Clone)]
pub struct ObjectiveReport<T> {
    pub value: T,
    pub grad_x: Array2<T>,
    pub grad_theta: Vec<T>,
    pub term_count: TermCount,
}

/// Value and local gradients of one Gaussian log-density term.
pub(crate) struct LocalGradient<T> {
    pub value: T,
    pub grad_x: Array2<T>,
    pub grad_theta: Vec<T>,
}

pub(crate) fn local_value_and_gradient<T: Real>(
    kernel: &KernelSpec<T>,
    factor: &GaussianFactor<T>,
    x: ArrayView2<T>,
    y: ArrayView2<T>,
) -> Result<LocalGradient<T>> {
    let (value, g) = mvn_value_and_sensitivity(factor, y)?;
    let mut grad_x = Array2::zeros(x.dim());
    let mut grad_theta = vec![T::zero(); kernel.n_hyper()];
    contract_sensitivity(kernel, x, &g, T::one(), grad_x.view_mut(), &mut grad_theta);
    Ok(LocalGradient {
        value,
        grad_x,
        grad_theta,
    })
}

/// `log q` for the model.
pub fn gprf_value<T: Real>(model: &GprfModel<T>) -> Result<T> {
    let terms = model.active_terms();
    let values: Vec<Result<T>> = terms
        .par_iter()
        .map(|&term| {
            let factor = model.term_factor(term)?;
            let idx = model.term_indices(term);
            mvn_logpdf(&factor, model.y.select(Axis(0), &idx).view())
        })
        .collect();
    let mut total = T::zero();
    for (&term, v) in terms.iter().zip(values) {
        total += model.term_weight(term) * v?;
    }
    Ok(total)
}

/// `log q` with gradients; each term contributes through its own points only.
pub fn gprf_gradient<T: Real>(model: &GprfModel<T>) -> Result<ObjectiveReport<T>> {
    let terms = model.active_terms();
    let locals: Vec<Result<(Vec<usize>, LocalGradient<T>)>> = terms
        .par_iter()
        .map(|&term| {
            let factor = model.term_factor(term)?;
            let idx = model.term_indices(term);
            let xs = model.x.select(Axis(0), &idx);
            let ys = model.y.select(Axis(0), &idx);
            let lg = local_value_and_gradient(&model.kernel, &factor, xs.view(), ys.view())?;
            Ok((idx, lg))
        })
        .collect();

    let mut value = T::zero();
    let mut grad_x = Array2::zeros(model.x.dim());
    let mut grad_theta = vec![T::zero(); model.kernel.n_hyper()];
    for (&term, local) in terms.iter().zip(locals) {
        let (idx, lg) = local?;
        let w = model.term_weight(term);
        value += w * lg.value;
        for (r, &p) in idx.iter().enumerate() {
            for c in 0..grad_x.ncols() {
                grad_x[(p, c)] += w * lg.grad_x[(r, c)];
            }
        }
        for (dst, v) in grad_theta.iter_mut().zip(lg.grad_theta) {
            *dst += w * v;
        }
    }
    Ok(ObjectiveReport {
        value,
        grad_x,
        grad_theta,
        term_count: model.term_count(),
    })
}

/// The implied Gaussian: `log q(Y) = -1/2 sum_d y_d^T J y_d + D * offset`.
#[derive(Debug, Clone)]
pub struct PrecisionAssembly<T> {
    /// Precision over all points, in original point order.
    pub precision: Array2<T>,
    /// `sum_i (1 - |E_i|) lognorm(K_ii) + sum_E lognorm(K_[ij])` with
    /// `lognorm(K) = -1/2 log|K| - dim/2 log(2 pi)`.
    pub offset: T,
    /// Whether a plain Cholesky factorization of `precision` succeeded.
    pub positive_definite: bool,
}

impl<T: Real> PrecisionAssembly<T> {
    /// Evaluates the implied log-density at `y` (rows in point order).
    pub fn log_density(&self, y: ArrayView2<T>) -> T {
        -T::lit(0.5) * quad_form_sum(&self.precision, y) + T::from_count(y.ncols()) * self.offset
    }
}

/// Deliberate corruption of the assembly, used to confirm that the
/// verification harness detects a wrong precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssemblyFault {
    #[default]
    None,
    FlipOffDiagonalSign,
}

/// Block layout over an arbitrary point set: which points form each block and
/// what is added to each point's diagonal (noise for observations, jitter
/// only for latent values).
pub(crate) struct BlockField<'a, T> {
    pub kernel: &'a KernelSpec<T>,
    pub x: ArrayView2<'a, T>,
    pub blocks: &'a [Vec<usize>],
    pub diag: &'a [T],
    pub edges: &'a EdgeSet,
}

impl<T: Real> BlockField<'_, T> {
    fn cov(&self, idx: &[usize]) -> Array2<T> {
        let xs = self.x.select(Axis(0), idx);
        let diag: Vec<T> = idx.iter().map(|&p| self.diag[p]).collect();
        self_cov_with_diag(self.kernel, xs.view(), &diag)
    }

    pub fn assemble(&self, fault: AssemblyFault) -> Result<PrecisionAssembly<T>> {
        let n = self.x.nrows();
        let m = self.blocks.len();
        let half = T::lit(0.5);
        let lognorm = |f: &GaussianFactor<T>| -half * f.logdet() - half * T::from_count(f.dim()) * T::ln_2pi();
        let mut j = Array2::<T>::zeros((n, n));
        let mut offset = T::zero();

        for b in 0..m {
            let idx = &self.blocks[b];
            let w = T::one() - T::from_count(self.edges.degree()[b]);
            if w == T::zero() {
                continue;
            }
            let f = factorize(&self.cov(idx)).map_err(|e| GprfError::TermFailure {
                term: Term::Node(b),
                source: Box::new(e),
            })?;
            offset += w * lognorm(&f);
            let kinv = f.inverse()?;
            for (r, &p) in idx.iter().enumerate() {
                for (c, &q) in idx.iter().enumerate() {
                    j[(p, q)] += w * kinv[(r, c)];
                }
            }
        }
        for &(bi, bj) in self.edges.edges() {
            let mut idx = self.blocks[bi].clone();
            idx.extend_from_slice(&self.blocks[bj]);
            let f = factorize(&self.cov(&idx)).map_err(|e| GprfError::TermFailure {
                term: Term::Edge(bi, bj),
                source: Box::new(e),
            })?;
            offset += lognorm(&f);
            let q = f.inverse()?;
            let ni = self.blocks[bi].len();
            for (r, &p) in idx.iter().enumerate() {
                for (c, &pq) in idx.iter().enumerate() {
                    let cross = (r < ni) != (c < ni);
                    let v = if cross && fault == AssemblyFault::FlipOffDiagonalSign {
                        -q[(r, c)]
                    } else {
                        q[(r, c)]
                    };
                    j[(p, pq)] += v;
                }
            }
        }
        let positive_definite = j.cholesky(UPLO::Lower).is_ok();
        Ok(PrecisionAssembly {
            precision: j,
            offset,
            positive_definite,
        })
    }
}

/// Assembles the precision matrix and normalizer implied by the model.
pub fn assemble_precision<T: Real>(model: &GprfModel<T>) -> Result<PrecisionAssembly<T>> {
    assemble_precision_with_fault(model, AssemblyFault::None)
}

#[doc(hidden)]
pub fn assemble_precision_with_fault<T: Real>(model: &GprfModel<T>, fault: AssemblyFault) -> Result<PrecisionAssembly<T>> {
    let diag = model.noisy_diag(model.x.nrows());
    BlockField {
        kernel: &model.kernel,
        x: model.x.view(),
        blocks: model.partition.blocks(),
        diag: &diag,
        edges: &model.edges,
    }
    .assemble(fault)
}

#[derive(Debug, Clone)]
pub struct BetheReport<T> {
    pub free_energy: T,
    pub kl_terms: Vec<(Term, T)>,
}

/// Bethe free energy `sum_V KL[b_i || p_i] + sum_E KL[b_ij || p_ij]` with the
/// pseudomarginals set to the true GP marginals.
pub fn bethe_check<T: Real>(model: &GprfModel<T>) -> Result<BetheReport<T>> {
    bethe_check_scaled(model, T::one())
}

/// As [`bethe_check`], with every node pseudomarginal covariance multiplied
/// by `node_scale`.
pub fn bethe_check_scaled<T: Real>(model: &GprfModel<T>, node_scale: T) -> Result<BetheReport<T>> {
    let mut kl_terms = Vec::new();
    let mut total = T::zero();
    for term in model.terms() {
        let p = model.term_factor(term)?;
        let kl = match term {
            Term::Node(_) if node_scale != T::one() => {
                let b = factorize(&model.term_covariance(term).mapv(|v| v * node_scale))?;
                gaussian_kl(&b, &p)?
            }
            _ => gaussian_kl(&p, &p)?,
        };
        total += kl;
        kl_terms.push((term, kl));
    }
    Ok(BetheReport {
        free_energy: total,
        kl_terms,
    })
}
