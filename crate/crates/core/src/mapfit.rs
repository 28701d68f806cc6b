//! MAP estimation of latent input locations (and optionally log-hyperparameters)
//! under a Gaussian prior centred on noisy observed locations.
//!
//! Optimization variables are `X` flattened row-major followed by the
//! log-hyperparameters. Coordinates listed in `nonneg_coords` are optimized
//! through a softplus so they stay positive.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;

use crate::error::{GprfError, Result};
use crate::full_gp::{size_guard, FullGp};
use crate::kernels::KernelSpec;
use crate::lbfgs::{inf_norm, minimize, LbfgsSettings, Termination};
use crate::objective::{gprf_gradient, GprfModel, ObjectiveReport};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct LocationPrior<T> {
    x_obs: Array2<T>,
    sigma_obs: Vec<T>,
}

impl<T: Real> LocationPrior<T> {
    /// `sigma_obs` holds one entry per coordinate, or a single shared entry.
    pub fn new(x_obs: Array2<T>, sigma_obs: Vec<T>) -> Result<Self> {
        let d = x_obs.ncols();
        let sigma_obs = if sigma_obs.len() == 1 { vec![sigma_obs[0]; d] } else { sigma_obs };
        if sigma_obs.len() != d {
            return Err(GprfError::DimensionMismatch(format!(
                "sigma_obs has {} entries for dimension {d}",
                sigma_obs.len()
            )));
        }
        if sigma_obs.iter().any(|s| !(*s > T::zero()) || !s.finite()) {
            return Err(GprfError::InvalidInput("sigma_obs must be positive and finite".into()));
        }
        Ok(LocationPrior { x_obs, sigma_obs })
    }

    pub fn x_obs(&self) -> &Array2<T> {
        &self.x_obs
    }

    pub fn sigma_obs(&self) -> &[T] {
        &self.sigma_obs
    }

    /// Log prior density and its gradient at `x`.
    pub fn log_density(&self, x: &Array2<T>) -> Result<(T, Array2<T>)> {
        if x.dim() != self.x_obs.dim() {
            return Err(GprfError::DimensionMismatch(format!(
                "X is {:?}, X_obs is {:?}",
                x.dim(),
                self.x_obs.dim()
            )));
        }
        let half = T::lit(0.5);
        let mut value = T::zero();
        let mut grad = Array2::zeros(x.dim());
        let norm: Vec<T> = self.sigma_obs.iter().map(|&s| s.ln() + half * T::ln_2pi()).collect();
        for ((i, c), &xi) in x.indexed_iter() {
            let s2 = self.sigma_obs[c] * self.sigma_obs[c];
            let r = xi - self.x_obs[(i, c)];
            value += -half * r * r / s2 - norm[c];
            grad[(i, c)] = -r / s2;
        }
        Ok((value, grad))
    }
}

/// A likelihood over latent inputs that the fitting driver can evaluate.
pub trait LatentModel<T: Real> {
    fn x(&self) -> &Array2<T>;
    fn kernel(&self) -> &KernelSpec<T>;
    fn set_state(&mut self, x: Array2<T>, kernel: KernelSpec<T>) -> Result<()>;
    fn value_and_gradient(&self) -> Result<ObjectiveReport<T>>;
}

impl<T: Real> LatentModel<T> for GprfModel<T> {
    fn x(&self) -> &Array2<T> {
        GprfModel::x(self)
    }

    fn kernel(&self) -> &KernelSpec<T> {
        GprfModel::kernel(self)
    }

    fn set_state(&mut self, x: Array2<T>, kernel: KernelSpec<T>) -> Result<()> {
        self.set_kernel(kernel)?;
        self.set_x(x)
    }

    fn value_and_gradient(&self) -> Result<ObjectiveReport<T>> {
        gprf_gradient(self)
    }
}

/// Exact GP likelihood as a [`LatentModel`]; refactorized at every evaluation.
#[derive(Debug, Clone)]
pub struct ExactModel<T> {
    kernel: KernelSpec<T>,
    x: Array2<T>,
    y: Array2<T>,
}

impl<T: Real> ExactModel<T> {
    pub fn new(kernel: KernelSpec<T>, x: Array2<T>, y: Array2<T>) -> Result<Self> {
        size_guard(x.nrows())?;
        kernel.validate(x.ncols())?;
        if x.nrows() != y.nrows() {
            return Err(GprfError::DimensionMismatch("X and Y row counts differ".into()));
        }
        Ok(ExactModel { kernel, x, y })
    }
}

impl<T: Real> LatentModel<T> for ExactModel<T> {
    fn x(&self) -> &Array2<T> {
        &self.x
    }

    fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    fn set_state(&mut self, x: Array2<T>, kernel: KernelSpec<T>) -> Result<()> {
        if x.dim() != self.x.dim() {
            return Err(GprfError::DimensionMismatch("X shape changed".into()));
        }
        kernel.validate(x.ncols())?;
        self.x = x;
        self.kernel = kernel;
        Ok(())
    }

    fn value_and_gradient(&self) -> Result<ObjectiveReport<T>> {
        FullGp::new(self.kernel.clone(), self.x.clone(), self.y.clone())?.full_gradient()
    }
}

/// Surrogate log-likelihood plus log prior, with gradients.
pub fn map_objective<T: Real, M: LatentModel<T>>(model: &M, prior: &LocationPrior<T>) -> Result<ObjectiveReport<T>> {
    let mut r = model.value_and_gradient()?;
    let (lp, gp) = prior.log_density(model.x())?;
    r.value += lp;
    r.grad_x = r.grad_x + gp;
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub optimize_x: bool,
    pub optimize_theta: bool,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub wall_clock_budget_s: Option<f64>,
    pub trajectory_stride: usize,
    /// Coordinates constrained to be non-negative.
    pub nonneg_coords: Vec<usize>,
    /// Time origin for trajectory timestamps; defaults to the start of the fit.
    pub clock_origin: Option<Instant>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            optimize_x: true,
            optimize_theta: false,
            max_iters: 200,
            grad_tol: 1e-3,
            wall_clock_budget_s: None,
            trajectory_stride: 1,
            nonneg_coords: Vec::new(),
            clock_origin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub wall_time_s: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub mean_location_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["step", "wall_time_s", "objective", "grad_norm", "mean_location_error"])?;
        for r in &self.records {
            wr.write_record([
                r.step.to_string(),
                format!("{:.6}", r.wall_time_s),
                r.objective.to_string(),
                r.grad_norm.to_string(),
                r.mean_location_error.map(|e| e.to_string()).unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub x_hat: Array2<T>,
    pub kernel: KernelSpec<T>,
    pub trajectory: Trajectory,
    pub objective: f64,
    /// Infinity norm of the gradient in optimization variables.
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// `(1/n) sum_i ||x_hat_i - x_i||`.
pub fn mean_location_error<T: Real>(x_hat: &Array2<T>, x_true: &Array2<T>) -> Result<f64> {
    if x_hat.dim() != x_true.dim() {
        return Err(GprfError::DimensionMismatch(format!(
            "X_hat is {:?}, X_true is {:?}",
            x_hat.dim(),
            x_true.dim()
        )));
    }
    if x_hat.nrows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = x_hat
        .outer_iter()
        .zip(x_true.outer_iter())
        .map(|(a, b)| {
            a.iter()
                .zip(b.iter())
                .map(|(u, v)| (u.as_f64() - v.as_f64()).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / x_hat.nrows() as f64)
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

fn softplus_inv(x: f64) -> f64 {
    let x = x.max(1e-8);
    if x > 30.0 {
        x
    } else {
        x.exp_m1().ln()
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Maps between optimization variables and model state.
struct Layout<'a, T> {
    n: usize,
    d: usize,
    optimize_x: bool,
    optimize_theta: bool,
    nonneg: Vec<bool>,
    x_fixed: &'a Array2<T>,
    kernel0: &'a KernelSpec<T>,
}

impl<T: Real> Layout<'_, T> {
    fn pack(&self) -> Vec<f64> {
        let mut v = Vec::new();
        if self.optimize_x {
            for ((_, c), &x) in self.x_fixed.indexed_iter() {
                let x = x.as_f64();
                v.push(if self.nonneg[c] { softplus_inv(x) } else { x });
            }
        }
        if self.optimize_theta {
            v.extend(self.kernel0.log_params().iter().map(|t| t.as_f64()));
        }
        v
    }

    fn unpack(&self, v: &[f64]) -> Result<(Array2<T>, KernelSpec<T>)> {
        let mut off = 0;
        let x = if self.optimize_x {
            off = self.n * self.d;
            Array2::from_shape_fn((self.n, self.d), |(i, c)| {
                let u = v[i * self.d + c];
                T::lit(if self.nonneg[c] { softplus(u) } else { u })
            })
        } else {
            self.x_fixed.clone()
        };
        let kernel = if self.optimize_theta {
            let lt: Vec<T> = v[off..].iter().map(|&t| T::lit(t)).collect();
            self.kernel0.with_log_params(&lt)?
        } else {
            self.kernel0.clone()
        };
        Ok((x, kernel))
    }

    /// Gradient of the objective in optimization variables.
    fn grad(&self, v: &[f64], r: &ObjectiveReport<T>) -> Vec<f64> {
        let mut g = Vec::with_capacity(v.len());
        if self.optimize_x {
            for ((i, c), &gx) in r.grad_x.indexed_iter() {
                let chain = if self.nonneg[c] { sigmoid(v[i * self.d + c]) } else { 1.0 };
                g.push(gx.as_f64() * chain);
            }
        }
        if self.optimize_theta {
            g.extend(r.grad_theta.iter().map(|t| t.as_f64()));
        }
        g
    }
}

/// Maximizes the MAP objective with L-BFGS. `truth`, when given, adds the
/// mean location error to trajectory records.
pub fn fit<T: Real, M: LatentModel<T>>(
    model: &mut M,
    prior: &LocationPrior<T>,
    config: &FitConfig,
    truth: Option<&Array2<T>>,
) -> Result<FitResult<T>> {
    fit_from_step(model, prior, config, truth, 0)
}

fn fit_from_step<T: Real, M: LatentModel<T>>(
    model: &mut M,
    prior: &LocationPrior<T>,
    config: &FitConfig,
    truth: Option<&Array2<T>>,
    step_offset: usize,
) -> Result<FitResult<T>> {
    if config.max_iters == 0 {
        return Err(GprfError::Config("max_iters must be at least 1".into()));
    }
    if !config.optimize_x && !config.optimize_theta {
        return Err(GprfError::Config("nothing to optimize".into()));
    }
    let (n, d) = model.x().dim();
    if prior.x_obs().dim() != (n, d) {
        return Err(GprfError::DimensionMismatch("prior and model disagree on X shape".into()));
    }
    if let Some(c) = config.nonneg_coords.iter().find(|&&c| c >= d) {
        return Err(GprfError::Config(format!("nonneg coordinate {c} out of range for dimension {d}")));
    }
    if config.optimize_theta && !(model.kernel().hyper.noise_variance > T::zero()) {
        return Err(GprfError::InvalidHyperparameter {
            name: "noise_variance (log-space optimization needs a positive value)".into(),
            value: model.kernel().hyper.noise_variance.as_f64(),
        });
    }
    let start = Instant::now();
    let origin = config.clock_origin.unwrap_or(start);
    let deadline = config
        .wall_clock_budget_s
        .map(|b| origin + std::time::Duration::from_secs_f64(b.max(0.0)));
    let stride = config.trajectory_stride.max(1);

    let mut nonneg = vec![false; d];
    for &c in &config.nonneg_coords {
        nonneg[c] = true;
    }
    let x0 = model.x().clone();
    let k0 = model.kernel().clone();
    let layout = Layout {
        n,
        d,
        optimize_x: config.optimize_x,
        optimize_theta: config.optimize_theta,
        nonneg,
        x_fixed: &x0,
        kernel0: &k0,
    };
    let v0 = layout.pack();

    let mut last_error: Option<GprfError> = None;
    let mut eval = |v: &[f64]| -> Option<(f64, Vec<f64>)> {
        let attempt = (|| {
            let (x, k) = layout.unpack(v)?;
            model.set_state(x, k)?;
            map_objective(&*model, prior)
        })();
        match attempt {
            Ok(r) => {
                let g = layout.grad(v, &r);
                Some((-r.value.as_f64(), g.into_iter().map(|x| -x).collect()))
            }
            Err(e) => {
                last_error = Some(e);
                None
            }
        }
    };

    let settings = LbfgsSettings {
        max_iters: config.max_iters,
        grad_tol: config.grad_tol,
        deadline,
        ..Default::default()
    };
    let mut trajectory = Trajectory::default();
    let mut last_recorded = None;
    let record = |k: usize, v: &[f64], f: f64, g: &[f64], traj: &mut Trajectory| -> Result<()> {
        let mle = match truth {
            Some(t) => Some(mean_location_error(&layout.unpack(v)?.0, t)?),
            None => None,
        };
        traj.records.push(TrajectoryRecord {
            step: step_offset + k,
            wall_time_s: origin.elapsed().as_secs_f64(),
            objective: -f,
            grad_norm: inf_norm(g),
            mean_location_error: mle,
        });
        Ok(())
    };
    let mut record_err = None;
    let result = minimize(&mut eval, v0, &settings, |k, v, f, g| {
        if k % stride == 0 {
            if let Err(e) = record(k, v, f, g, &mut trajectory) {
                record_err = Some(e);
            }
            last_recorded = Some(k);
        }
    });
    if let Some(e) = record_err {
        return Err(e);
    }
    let Some(res) = result else {
        return Err(last_error.unwrap_or_else(|| GprfError::InvalidInput("objective is not finite at the start point".into())));
    };
    if last_recorded != Some(res.iterations) {
        record(res.iterations, &res.x, res.f, &res.g, &mut trajectory)?;
    }
    if res.termination == Termination::EvaluationFailures {
        if let Some(e) = &last_error {
            log::warn!("fit stopped after repeated evaluation failures: {e}");
        }
    }
    let (x_hat, kernel) = layout.unpack(&res.x)?;
    model.set_state(x_hat.clone(), kernel.clone())?;
    Ok(FitResult {
        x_hat,
        kernel,
        trajectory,
        objective: -res.f,
        grad_norm: inf_norm(&res.g),
        iterations: res.iterations,
        evaluations: res.evaluations,
        termination: res.termination,
    })
}

/// Two-stage schedule: independent blocks (no edges) for at most
/// `stage1_iters` iterations, then up to `max_iters` more with the model's own
/// edge set, starting from the stage-one solution.
/// The trajectory is continuous in step count and time.
pub fn fit_hybrid<T: Real>(
    model: &mut GprfModel<T>,
    prior: &LocationPrior<T>,
    config: &FitConfig,
    stage1_iters: usize,
    truth: Option<&Array2<T>>,
) -> Result<FitResult<T>> {
    let origin = config.clock_origin.unwrap_or_else(Instant::now);
    let mut local = model.with_edges(crate::blocks::EdgeSet::empty(model.partition().n_blocks()))?;
    let c1 = FitConfig {
        max_iters: stage1_iters.max(1),
        clock_origin: Some(origin),
        ..config.clone()
    };
    let r1 = fit(&mut local, prior, &c1, truth)?;
    model.set_state(r1.x_hat.clone(), r1.kernel.clone())?;
    let c2 = FitConfig {
        clock_origin: Some(origin),
        ..config.clone()
    };
    let r2 = fit_from_step(model, prior, &c2, truth, r1.iterations)?;
    let mut records = r1.trajectory.records;
    records.extend(r2.trajectory.records);
    Ok(FitResult {
        trajectory: Trajectory { records },
        iterations: r1.iterations + r2.iterations,
        evaluations: r1.evaluations + r2.evaluations,
        ..r2
    })
}
