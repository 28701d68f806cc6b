//! Committee prediction from independent block experts, and the equivalent
//! conditional of the random field extended with a test block.

use ndarray::{s, Array2, ArrayView2, Axis};
use ndarray_linalg::{Cholesky, Eigh, UPLO};
use rayon::prelude::*;

use crate::blocks::EdgeSet;
use crate::error::{GprfError, Result};
use crate::full_gp::{FullGp, Prediction};
use crate::gaussian::{factorize, symmetrize};
use crate::kernels::latent_cov;
use crate::objective::{AssemblyFault, BlockField, GprfModel};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct BcmPrediction<T> {
    pub mean: Array2<T>,
    pub cov: Array2<T>,
    pub per_expert: Vec<Prediction<T>>,
}

fn check_test_points<T: Real>(model: &GprfModel<T>, xstar: ArrayView2<T>) -> Result<()> {
    if xstar.nrows() == 0 {
        return Err(GprfError::InvalidInput("no test points".into()));
    }
    if xstar.ncols() != model.x().ncols() {
        return Err(GprfError::DimensionMismatch(format!(
            "test points have dimension {}, training {}",
            xstar.ncols(),
            model.x().ncols()
        )));
    }
    Ok(())
}

/// Cholesky of a combined precision; failure reports the smallest eigenvalue.
fn invert_precision<T: Real>(lambda: &Array2<T>) -> Result<Array2<T>> {
    if lambda.cholesky(UPLO::Lower).is_err() {
        let min = lambda
            .eigh(UPLO::Lower)
            .map(|(ev, _)| ev.iter().fold(f64::INFINITY, |a, v| a.min(v.as_f64())))
            .unwrap_or(f64::NAN);
        return Err(GprfError::IndefinitePrecision { min_eigenvalue: min });
    }
    let mut inv = factorize(lambda)?.inverse()?;
    symmetrize(&mut inv);
    Ok(inv)
}

/// `p(f*)^(1-M) prod_i p(f* | y_i)`, combined in precision space.
pub fn bcm_predict<T: Real>(model: &GprfModel<T>, xstar: ArrayView2<T>) -> Result<BcmPrediction<T>> {
    check_test_points(model, xstar)?;
    let blocks = model.partition().blocks();
    let m = blocks.len();
    let per_expert: Vec<Prediction<T>> = blocks
        .par_iter()
        .map(|idx| {
            let gp = FullGp::new(
                model.kernel().clone(),
                model.x().select(Axis(0), idx),
                model.y().select(Axis(0), idx),
            )?;
            gp.full_predict(xstar)
        })
        .collect::<Result<_>>()?;

    let prior_prec = factorize(&latent_cov(model.kernel(), xstar)?)?.inverse()?;
    let mut lambda = prior_prec * (T::one() - T::from_count(m));
    let mut eta = Array2::<T>::zeros((xstar.nrows(), model.y().ncols()));
    for p in &per_expert {
        let li = factorize(&p.cov)?.inverse()?;
        eta = eta + li.dot(&p.mean);
        lambda = lambda + li;
    }
    symmetrize(&mut lambda);
    let cov = invert_precision(&lambda)?;
    let mean = cov.dot(&eta);
    Ok(BcmPrediction { mean, cov, per_expert })
}

/// Conditional of `f*` given `Y` when the test points form an extra block
/// joined by edges to every training block. Covariance is the inverse of the
/// test-block precision; the mean completes the square against the training rows.
pub fn gprf_conditional_predict<T: Real>(model: &GprfModel<T>, xstar: ArrayView2<T>) -> Result<Prediction<T>> {
    check_test_points(model, xstar)?;
    let n = model.x().nrows();
    let ns = xstar.nrows();
    let m = model.partition().n_blocks();
    let mut x = model.x().clone();
    x.append(Axis(0), xstar)
        .map_err(|e| GprfError::DimensionMismatch(e.to_string()))?;
    let mut blocks = model.partition().blocks().to_vec();
    blocks.push((n..n + ns).collect());
    let mut diag = model.noisy_diag(n);
    diag.extend(std::iter::repeat_n(model.kernel().jitter, ns));
    let edges = EdgeSet::from_pairs(
        m + 1,
        model.edges().edges().iter().copied().chain((0..m).map(|i| (i, m))),
    )?;
    let asm = BlockField {
        kernel: model.kernel(),
        x: x.view(),
        blocks: &blocks,
        diag: &diag,
        edges: &edges,
    }
    .assemble(AssemblyFault::None)?;
    let mut j_ss = asm.precision.slice(s![n.., n..]).to_owned();
    symmetrize(&mut j_ss);
    let j_st = asm.precision.slice(s![n.., ..n]);
    let cov = invert_precision(&j_ss)?;
    let mean = -cov.dot(&j_st.dot(model.y()));
    Ok(Prediction { mean, cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::Partition;
    use crate::datagen::StreamRng;
    use crate::kernels::{Hyperparams, KernelFamily, KernelSpec};
    use ndarray::array;

    fn model(n: usize, block: usize, seed: u64) -> GprfModel<f64> {
        let mut r = StreamRng::new(seed, 0);
        let x = Array2::from_shape_simple_fn((n, 2), || 4.0 * r.uniform());
        let y = Array2::from_shape_simple_fn((n, 2), || r.normal());
        let k = KernelSpec::new(KernelFamily::SquaredExponentialHalf, Hyperparams::isotropic(1.0, 1.0, 0.1)).unwrap();
        let p = Partition::contiguous(n, block).unwrap();
        let e = EdgeSet::empty(p.n_blocks());
        GprfModel::new(k, p, e, x, y).unwrap()
    }

    #[test]
    fn single_block_matches_exact_prediction() {
        let m = model(15, 15, 1);
        let xs = array![[1.0, 2.0], [3.0, 0.5]];
        let b = bcm_predict(&m, xs.view()).unwrap();
        let gp = FullGp::new(m.kernel().clone(), m.x().clone(), m.y().clone()).unwrap();
        let f = gp.full_predict(xs.view()).unwrap();
        for (a, c) in b.mean.iter().zip(f.mean.iter()) {
            assert!((a - c).abs() < 1e-10);
        }
        for (a, c) in b.cov.iter().zip(f.cov.iter()) {
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn far_test_point_gives_prior() {
        let m = model(30, 10, 2);
        let b = bcm_predict(&m, array![[500.0, 500.0]].view()).unwrap();
        assert!(b.mean.iter().all(|v| v.abs() < 1e-10));
        assert!((b.cov[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_field_conditional() {
        let m = model(60, 20, 3);
        let xs = array![[1.5, 2.5]];
        let b = bcm_predict(&m, xs.view()).unwrap();
        let c = gprf_conditional_predict(&m, xs.view()).unwrap();
        for (a, e) in b.mean.iter().zip(c.mean.iter()) {
            assert!((a - e).abs() <= 1e-8 * e.abs().max(1.0), "{a} vs {e}");
        }
        assert!((b.cov[(0, 0)] - c.cov[(0, 0)]).abs() <= 1e-8 * c.cov[(0, 0)].abs());
    }
}
