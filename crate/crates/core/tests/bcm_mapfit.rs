mod common;

use common::{fd_gradient, rel_inf};
use gprf::blocks::{EdgeSet, Partition};
use gprf::datagen::StreamRng;
use gprf::lbfgs::Termination;
use gprf::mapfit::ExactModel;
use gprf::verify::{random_model, RandomShape};
use gprf::{
    bcm_predict, fit, gprf_conditional_predict, map_objective, mean_location_error, FitConfig, FullGp, GprfModel,
    Hyperparams, KernelFamily, KernelSpec, LocationPrior,
};
use ndarray::{array, Array2};

fn small_shape() -> RandomShape {
    RandomShape {
        max_n: 60,
        max_blocks: 4,
        ..Default::default()
    }
}

#[test]
fn committee_equals_field_conditional() {
    for seed in 0..10u64 {
        let m = random_model(500 + seed, small_shape()).unwrap();
        let mut r = StreamRng::new(seed, 9);
        let xs = Array2::from_shape_simple_fn((1 + (seed as usize % 3), 2), || 2.0 * r.uniform());
        let a = bcm_predict(&m, xs.view()).unwrap();
        let b = gprf_conditional_predict(&m, xs.view()).unwrap();
        let flat = |x: &Array2<f64>| x.iter().copied().collect::<Vec<_>>();
        assert!(rel_inf(&flat(&a.mean), &flat(&b.mean)) < 1e-8, "seed {seed}");
        assert!(rel_inf(&flat(&a.cov), &flat(&b.cov)) < 1e-8, "seed {seed}");
        assert_eq!(a.per_expert.len(), m.partition().n_blocks());
        for i in 0..a.cov.nrows() {
            for j in 0..i {
                assert!((a.cov[(i, j)] - a.cov[(j, i)]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn committee_of_one_is_exact_prediction() {
    let m = random_model(42, small_shape()).unwrap();
    let n = m.x().nrows();
    let one = GprfModel::new(
        m.kernel().clone(),
        Partition::single(n).unwrap(),
        EdgeSet::empty(1),
        m.x().clone(),
        m.y().clone(),
    )
    .unwrap();
    let xs = array![[0.3, 0.9], [1.7, 0.2]];
    let a = bcm_predict(&one, xs.view()).unwrap();
    let b = FullGp::new(m.kernel().clone(), m.x().clone(), m.y().clone())
        .unwrap()
        .full_predict(xs.view())
        .unwrap();
    let flat = |x: &Array2<f64>| x.iter().copied().collect::<Vec<_>>();
    assert!(rel_inf(&flat(&a.mean), &flat(&b.mean)) < 1e-10);
    assert!(rel_inf(&flat(&a.cov), &flat(&b.cov)) < 1e-10);
}

#[test]
fn committee_far_away_is_prior() {
    let m = random_model(43, small_shape()).unwrap();
    let b = bcm_predict(&m, array![[1e3, 1e3], [2e3, -1e3]].view()).unwrap();
    let sf2 = m.kernel().hyper.signal_variance;
    assert!(b.mean.iter().all(|v| v.abs() < 1e-8));
    assert!((b.cov[(0, 0)] - sf2).abs() < 1e-6 * sf2);
    assert!(b.cov[(0, 1)].abs() < 1e-8);
}

fn map_problem(seed: u64, n: usize) -> (GprfModel<f64>, LocationPrior<f64>) {
    let mut m = random_model(
        seed,
        RandomShape {
            max_n: n,
            max_blocks: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let mut r = StreamRng::new(seed, 33);
    let x_obs = m.x().mapv(|v| v + 0.3 * r.normal());
    m.set_x(x_obs.clone()).unwrap();
    let mut x = x_obs.clone();
    x.mapv_inplace(|v| v + 0.1 * r.normal());
    m.set_x(x).unwrap();
    (m, LocationPrior::new(x_obs, vec![0.4, 0.6]).unwrap())
}

#[test]
fn map_gradient_matches_finite_differences() {
    for seed in 0..5u64 {
        let (m, prior) = map_problem(600 + seed, 30);
        let an: Vec<f64> = map_objective(&m, &prior).unwrap().grad_x.iter().copied().collect();
        let dim = m.x().dim();
        let x0: Vec<f64> = m.x().iter().copied().collect();
        let mut mm = m.clone();
        let mut f = |v: &[f64]| {
            mm.set_x(Array2::from_shape_vec(dim, v.to_vec()).unwrap()).unwrap();
            let (lp, _) = prior.log_density(mm.x()).unwrap();
            common::gprf_oracle(&mm) + lp
        };
        let fd = fd_gradient(&mut f, &x0, 1e-5);
        assert!(rel_inf(&an, &fd) < 1e-4, "seed {seed}");
    }
}

#[test]
fn prior_at_observations_and_flat_limit() {
    let (mut m, prior) = map_problem(700, 30);
    m.set_x(prior.x_obs().clone()).unwrap();
    let base = gprf::gprf_gradient(&m).unwrap();
    let r = map_objective(&m, &prior).unwrap();
    let n = m.x().nrows() as f64;
    let c: f64 = prior.sigma_obs().iter().map(|s| (s * (2.0 * std::f64::consts::PI).sqrt()).ln()).sum();
    assert!((r.value - base.value + n * c).abs() < 1e-9 * r.value.abs());
    assert_eq!(r.grad_x, base.grad_x);

    let flat = LocationPrior::new(prior.x_obs().mapv(|v| v + 1.0), vec![1e12]).unwrap();
    let r = map_objective(&m, &flat).unwrap();
    let (_, g) = flat.log_density(m.x()).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-20));
    assert!(rel_inf(
        &r.grad_x.iter().copied().collect::<Vec<_>>(),
        &base.grad_x.iter().copied().collect::<Vec<_>>()
    ) < 1e-12);
}

#[test]
fn stationary_start_returns_immediately() {
    let (m, prior) = map_problem(710, 30);
    let mut m = m;
    let cfg = FitConfig {
        grad_tol: 1e12,
        ..Default::default()
    };
    let r = fit(&mut m, &prior, &cfg, None).unwrap();
    assert_eq!(r.iterations, 0);
    assert_eq!(r.termination, Termination::GradientTolerance);
    assert_eq!(r.trajectory.records.len(), 1);
}

#[test]
fn prior_dominated_single_point_recovers_observation() {
    // Tiny lengthscale decouples the points, so the likelihood is flat in
    // each location and the optimum is the observed location.
    let mut r = StreamRng::new(5, 0);
    let x_obs = Array2::from_shape_simple_fn((8, 2), || 10.0 * r.uniform());
    let y = Array2::from_shape_simple_fn((8, 2), || r.normal());
    let k = KernelSpec::new(KernelFamily::SquaredExponentialHalf, Hyperparams::isotropic(1.0, 1e-3, 0.1)).unwrap();
    let mut start = x_obs.clone();
    start[(3, 0)] += 0.7;
    start[(3, 1)] -= 0.4;
    let mut m = ExactModel::new(k, start, y).unwrap();
    let prior = LocationPrior::new(x_obs.clone(), vec![1.0]).unwrap();
    let cfg = FitConfig {
        grad_tol: 1e-10,
        ..Default::default()
    };
    let res = fit(&mut m, &prior, &cfg, None).unwrap();
    assert!(mean_location_error(&res.x_hat, &x_obs).unwrap() < 1e-6);
    assert!(res.termination.converged());
}

#[test]
fn trajectory_ascends_and_drivers_are_shared() {
    let (m, prior) = map_problem(720, 60);
    for edges in [
        EdgeSet::empty(m.partition().n_blocks()),
        EdgeSet::chain(m.partition().n_blocks()),
        EdgeSet::complete(m.partition().n_blocks()),
    ] {
        let mut mm = m.with_edges(edges).unwrap();
        let cfg = FitConfig {
            max_iters: 40,
            ..Default::default()
        };
        let r = fit(&mut mm, &prior, &cfg, Some(m.x())).unwrap();
        let objs: Vec<f64> = r.trajectory.records.iter().map(|t| t.objective).collect();
        assert!(objs.windows(2).all(|w| w[1] >= w[0]));
        let times: Vec<f64> = r.trajectory.records.iter().map(|t| t.wall_time_s).collect();
        assert!(times.windows(2).all(|w| w[1] >= w[0]));
        assert!(r.termination.converged() || r.grad_norm > cfg.grad_tol);
        assert_eq!(mm.x(), &r.x_hat);
    }
}

#[test]
fn joint_hyperparameter_fit_increases_objective() {
    let (mut m, prior) = map_problem(730, 40);
    let before = map_objective(&m, &prior).unwrap().value;
    let cfg = FitConfig {
        optimize_theta: true,
        max_iters: 30,
        ..Default::default()
    };
    let r = fit(&mut m, &prior, &cfg, None).unwrap();
    assert!(r.objective > before);
    assert_ne!(r.kernel.log_params(), m_before_theta(730));
}

fn m_before_theta(seed: u64) -> Vec<f64> {
    map_problem(seed, 40).0.kernel().log_params()
}

#[test]
fn log_space_fit_rejects_zero_noise() {
    let (m, prior) = map_problem(740, 30);
    let mut k = m.kernel().clone();
    k.hyper.noise_variance = 0.0;
    let mut m = m;
    m.set_kernel(k).unwrap();
    let cfg = FitConfig {
        optimize_theta: true,
        ..Default::default()
    };
    assert!(fit(&mut m, &prior, &cfg, None).is_err());
}

#[test]
fn nonnegative_coordinates_stay_nonnegative() {
    let (m, prior) = map_problem(750, 40);
    let shift = m.x().column(1).fold(f64::INFINITY, |a, v| a.min(*v)) - 0.01;
    let x = m.x().clone();
    let mut x_obs = prior.x_obs().clone();
    let mut xs = x.clone();
    xs.column_mut(1).mapv_inplace(|v| (v - shift).max(0.0));
    x_obs.column_mut(1).mapv_inplace(|v| v - shift - 0.5);
    let mut m = m;
    m.set_x(xs).unwrap();
    let prior = LocationPrior::new(x_obs, vec![0.4]).unwrap();
    let cfg = FitConfig {
        nonneg_coords: vec![1],
        max_iters: 50,
        ..Default::default()
    };
    let r = fit(&mut m, &prior, &cfg, None).unwrap();
    assert!(r.x_hat.column(1).iter().all(|v| *v >= 0.0));
}
