//! Self-contained numerical checks of the surrogate's exactness properties,
//! with measured residuals. Used by `gprf verify`.

use ndarray::{Array2, Axis};

use crate::bcm::{bcm_predict, gprf_conditional_predict};
use crate::blocks::{EdgeSet, Partition};
use crate::datagen::StreamRng;
use crate::error::Result;
use crate::full_gp::{ou_chain_fixture, FullGp, OuChainConfig};
use crate::gaussian::{factorize, mvn_logpdf};
use crate::kernels::{cov_matrix, Hyperparams, KernelFamily, KernelSpec};
use crate::objective::{assemble_precision_with_fault, bethe_check, gprf_gradient, gprf_value, AssemblyFault, GprfModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

/// Shape limits for [`random_model`].
#[derive(Debug, Clone, Copy)]
pub struct RandomShape {
    pub max_n: usize,
    pub max_blocks: usize,
    pub max_outputs: usize,
    /// Probability that each block pair is an edge.
    pub edge_prob: f64,
}

impl Default for RandomShape {
    fn default() -> Self {
        RandomShape {
            max_n: 120,
            max_blocks: 6,
            max_outputs: 3,
            edge_prob: 0.5,
        }
    }
}

fn pick(rng: &mut StreamRng, lo: usize, hi: usize) -> usize {
    lo + ((rng.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
}

/// A random model on 2-D inputs: random kernel family and hyperparameters,
/// random nonempty blocks and random edges. Fully determined by `seed`.
pub fn random_model(seed: u64, shape: RandomShape) -> Result<GprfModel<f64>> {
    let mut rng = StreamRng::new(seed, 0);
    let m = pick(&mut rng, 1, shape.max_blocks);
    let n = pick(&mut rng, (2 * m).max(8), shape.max_n.max(2 * m));
    let outputs = pick(&mut rng, 1, shape.max_outputs);
    let family = [
        KernelFamily::SquaredExponentialHalf,
        KernelFamily::SquaredExponentialPlain,
        KernelFamily::Matern32,
    ][pick(&mut rng, 0, 2)];
    let sf2 = 0.5 + 1.5 * rng.uniform();
    let ell = 0.5 + 1.5 * rng.uniform();
    let sn2 = 0.01 + 0.3 * rng.uniform();
    let kernel = KernelSpec::new(family, Hyperparams::isotropic(sf2, ell, sn2))?;
    let side = 1.0 + 3.0 * rng.uniform();
    let x = Array2::from_shape_simple_fn((n, 2), || side * rng.uniform());
    let mut blocks = vec![Vec::new(); m];
    for p in 0..n {
        let b = if p < m { p } else { pick(&mut rng, 0, m - 1) };
        blocks[b].push(p);
    }
    let partition = Partition::from_blocks(blocks, n)?;
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            if rng.uniform() < shape.edge_prob {
                pairs.push((i, j));
            }
        }
    }
    let edges = EdgeSet::from_pairs(m, pairs)?;
    let y = random_outputs(seed, n, outputs, 1);
    GprfModel::new(kernel, partition, edges, x, y)
}

/// Standard normal outputs from stream `1 + draw` of `seed`.
pub fn random_outputs(seed: u64, n: usize, outputs: usize, draw: u64) -> Array2<f64> {
    let mut rng = StreamRng::new(seed, 1 + draw);
    Array2::from_shape_simple_fn((n, outputs), || rng.normal())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn rel_inf(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn full_loglik(model: &GprfModel<f64>) -> Result<f64> {
    let k = cov_matrix(model.kernel(), model.x().view(), model.x().view(), true)?;
    mvn_logpdf(&factorize(&k)?, model.y().view())
}

/// Relative infinity-norm error of the analytic `X` and log-hyperparameter
/// gradients against central differences.
pub fn gradient_residuals(model: &GprfModel<f64>) -> Result<(f64, f64)> {
    let r = gprf_gradient(model)?;
    let mut m = model.clone();
    let x0 = model.x().clone();
    let mut fd_x = Array2::<f64>::zeros(x0.dim());
    for ((i, c), v) in x0.indexed_iter() {
        let h = 1e-5 * v.abs().max(1.0);
        let mut xp = x0.clone();
        xp[(i, c)] += h;
        m.set_x(xp)?;
        let fp = gprf_value(&m)?;
        let mut xm = x0.clone();
        xm[(i, c)] -= h;
        m.set_x(xm)?;
        let fm = gprf_value(&m)?;
        fd_x[(i, c)] = (fp - fm) / (2.0 * h);
    }
    m.set_x(x0)?;
    let lt = model.kernel().log_params();
    let mut fd_t = Array2::<f64>::zeros((1, lt.len()));
    for t in 0..lt.len() {
        let h = 1e-5;
        let mut p = lt.clone();
        p[t] += h;
        m.set_kernel(model.kernel().with_log_params(&p)?)?;
        let fp = gprf_value(&m)?;
        p[t] -= 2.0 * h;
        m.set_kernel(model.kernel().with_log_params(&p)?)?;
        let fm = gprf_value(&m)?;
        fd_t[(0, t)] = (fp - fm) / (2.0 * h);
    }
    let an_t = Array2::from_shape_vec((1, lt.len()), r.grad_theta).expect("length matches");
    Ok((rel_inf(&r.grad_x, &fd_x), rel_inf(&an_t, &fd_t)))
}

/// Runs every check. `fault` corrupts the precision assembly so the suite
/// can be shown to detect it.
pub fn run_suite(fault: AssemblyFault) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let shape = RandomShape::default();
    let seeds: Vec<u64> = (0..20).map(|s| 1000 + s).collect();

    let chain = ou_chain_fixture::<f64>(OuChainConfig::default())?;
    let tree = (gprf_value(&chain.model()?)? - chain.gp.full_loglik()?).abs();
    checks.push(Check {
        name: "tree_exactness",
        residual: tree,
        tolerance: 1e-6,
    });

    let mut quad = 0.0f64;
    let mut bethe = 0.0f64;
    let mut bethe_term = 0.0f64;
    for &s in &seeds {
        let model = random_model(s, shape)?;
        let asm = assemble_precision_with_fault(&model, fault)?;
        for draw in 0..10 {
            let y = random_outputs(s, model.x().nrows(), model.y().ncols(), 10 + draw);
            let my = model.with_y(y)?;
            let v = gprf_value(&my)?;
            quad = quad.max(rel(asm.log_density(my.y().view()), v));
        }
        let b = bethe_check(&model)?;
        bethe = bethe.max(b.free_energy.abs());
        for (_, kl) in b.kl_terms {
            bethe_term = bethe_term.max(kl.abs());
        }
    }
    checks.push(Check {
        name: "precision_quadratic_form",
        residual: quad,
        tolerance: 1e-8,
    });
    checks.push(Check {
        name: "bethe_free_energy_zero",
        residual: bethe,
        tolerance: 1e-9,
    });
    checks.push(Check {
        name: "bethe_kl_terms_zero",
        residual: bethe_term,
        tolerance: 1e-10,
    });

    let mut bcm = 0.0f64;
    for s in 0..10u64 {
        let model = random_model(
            2000 + s,
            RandomShape {
                max_n: 60,
                max_blocks: 4,
                ..shape
            },
        )?;
        let mut rng = StreamRng::new(2000 + s, 99);
        let ns = pick(&mut rng, 1, 3);
        let side = model.x().iter().fold(0.0f64, |m, v| m.max(*v));
        let xs = Array2::from_shape_simple_fn((ns, 2), || side * rng.uniform());
        let a = bcm_predict(&model, xs.view())?;
        let b = gprf_conditional_predict(&model, xs.view())?;
        bcm = bcm.max(rel_inf(&a.mean, &b.mean)).max(rel_inf(&a.cov, &b.cov));
    }
    checks.push(Check {
        name: "bcm_equivalence",
        residual: bcm,
        tolerance: 1e-8,
    });

    let mut single = 0.0f64;
    let mut locals = 0.0f64;
    let mut pair = 0.0f64;
    for &s in seeds.iter().take(5) {
        let model = random_model(s, shape)?;
        let n = model.x().nrows();
        let full = full_loglik(&model)?;
        let one = GprfModel::new(
            model.kernel().clone(),
            Partition::single(n)?,
            EdgeSet::empty(1),
            model.x().clone(),
            model.y().clone(),
        )?;
        single = single.max(rel(gprf_value(&one)?, full));

        let empty = model.with_edges(EdgeSet::empty(model.partition().n_blocks()))?;
        let mut sum = 0.0;
        for idx in model.partition().blocks() {
            let xs = model.x().select(Axis(0), idx);
            let gp = FullGp::new(model.kernel().clone(), xs, model.y().select(Axis(0), idx))?;
            sum += gp.full_loglik()?;
        }
        locals = locals.max((gprf_value(&empty)? - sum).abs());

        let half = n / 2;
        let two = GprfModel::new(
            model.kernel().clone(),
            Partition::from_blocks(vec![(0..half).collect(), (half..n).collect()], n)?,
            EdgeSet::complete(2),
            model.x().clone(),
            model.y().clone(),
        )?;
        pair = pair.max(rel(gprf_value(&two)?, full));
    }
    checks.push(Check {
        name: "single_block_equals_full",
        residual: single,
        tolerance: 1e-9,
    });
    checks.push(Check {
        name: "no_edges_equals_sum_of_locals",
        residual: locals,
        tolerance: 0.0,
    });
    checks.push(Check {
        name: "two_block_complete_equals_full",
        residual: pair,
        tolerance: 1e-9,
    });

    let mut gx = 0.0f64;
    let mut gt = 0.0f64;
    for s in 0..5u64 {
        let model = random_model(
            3000 + s,
            RandomShape {
                max_n: 30,
                max_blocks: 4,
                ..shape
            },
        )?;
        let (a, b) = gradient_residuals(&model)?;
        gx = gx.max(a);
        gt = gt.max(b);
    }
    checks.push(Check {
        name: "gradient_inputs",
        residual: gx,
        tolerance: 1e-4,
    });
    checks.push(Check {
        name: "gradient_log_hyperparameters",
        residual: gt,
        tolerance: 1e-4,
    });
    Ok(VerifyReport { checks })
}
