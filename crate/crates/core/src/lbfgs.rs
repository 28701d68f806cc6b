//! Limited-memory BFGS minimizer with a strong Wolfe line search.
//!
//! Works in `f64` regardless of the model scalar. An evaluation that fails
//! (returns `None`) is treated as an overlong step and the trial step is
//! halved; five consecutive failures end the run at the last good iterate.

use std::collections::VecDeque;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct LbfgsSettings {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the infinity norm of the gradient is at most this.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    pub max_consecutive_failures: usize,
    /// Deadline for starting a new iteration.
    pub deadline: Option<Instant>,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        LbfgsSettings {
            memory: 10,
            max_iters: 100,
            grad_tol: 1e-5,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            max_consecutive_failures: 5,
            deadline: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    WallClock,
    /// No acceptable step along steepest descent.
    LineSearchFailed,
    EvaluationFailures,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::GradientTolerance => "converged",
            Termination::MaxIterations => "max_iters",
            Termination::WallClock => "wall_clock_budget",
            Termination::LineSearchFailed => "line_search_failed",
            Termination::EvaluationFailures => "evaluation_failures",
        }
    }

    /// True when the gradient tolerance was met.
    pub fn converged(self) -> bool {
        self == Termination::GradientTolerance
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], a: f64, p: &[f64]) -> Vec<f64> {
    x.iter().zip(p).map(|(xi, pi)| xi + a * pi).collect()
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    d: f64,
}

enum Search {
    Found(Point),
    /// Only sufficient decrease was achieved.
    Armijo(Point),
    Failed,
    Aborted,
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, safeguarded
/// to the middle 80% of the interval.
fn cubic_step(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let width = hi - lo;
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let mut t = f64::NAN;
    if disc >= 0.0 {
        let d2 = (b - a).signum() * disc.sqrt();
        t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    }
    if !t.is_finite() {
        t = 0.5 * (a + b);
    }
    t.clamp(lo + 0.1 * width, hi - 0.1 * width)
}

struct LineSearch<'a, F> {
    eval: &'a mut F,
    x: &'a [f64],
    p: &'a [f64],
    f0: f64,
    d0: f64,
    s: &'a LbfgsSettings,
    failures: usize,
    evaluations: usize,
    best: Option<Point>,
}

impl<F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>> LineSearch<'_, F> {
    fn try_step(&mut self, alpha: f64) -> Result<Option<Point>, ()> {
        self.evaluations += 1;
        let trial = axpy(self.x, alpha, self.p);
        match (self.eval)(&trial) {
            Some((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                self.failures = 0;
                let d = dot(&g, self.p);
                let pt = Point { alpha, f, g, d };
                if pt.f <= self.f0 + self.s.c1 * alpha * self.d0 && self.best.as_ref().is_none_or(|b| pt.f < b.f) {
                    self.best = Some(Point {
                        alpha,
                        f: pt.f,
                        g: pt.g.clone(),
                        d: pt.d,
                    });
                }
                Ok(Some(pt))
            }
            _ => {
                self.failures += 1;
                log::debug!("objective evaluation failed at step {alpha:e}");
                if self.failures >= self.s.max_consecutive_failures {
                    Err(())
                } else {
                    Ok(None)
                }
            }
        }
    }

    fn armijo(&self, pt: &Point) -> bool {
        pt.f <= self.f0 + self.s.c1 * pt.alpha * self.d0
    }

    fn curvature(&self, pt: &Point) -> bool {
        pt.d.abs() <= -self.s.c2 * self.d0
    }

    fn fallback(&mut self) -> Search {
        match self.best.take() {
            Some(b) => Search::Armijo(b),
            None => Search::Failed,
        }
    }

    fn run(&mut self, alpha0: f64) -> Search {
        let mut prev = Point {
            alpha: 0.0,
            f: self.f0,
            g: Vec::new(),
            d: self.d0,
        };
        let mut alpha = alpha0;
        for i in 0..self.s.max_line_search {
            let pt = match self.try_step(alpha) {
                Err(()) => return Search::Aborted,
                Ok(None) => {
                    alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
                    continue;
                }
                Ok(Some(pt)) => pt,
            };
            if !self.armijo(&pt) || (i > 0 && pt.f >= prev.f) {
                return self.zoom(prev, pt);
            }
            if self.curvature(&pt) {
                return Search::Found(pt);
            }
            if pt.d >= 0.0 {
                return self.zoom(pt, prev);
            }
            alpha = 2.0 * pt.alpha;
            prev = pt;
        }
        self.fallback()
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Search {
        for _ in 0..self.s.max_line_search {
            if (hi.alpha - lo.alpha).abs() <= 1e-14 * lo.alpha.abs().max(1e-300) {
                break;
            }
            let alpha = cubic_step(lo.alpha, lo.f, lo.d, hi.alpha, hi.f, hi.d);
            let pt = match self.try_step(alpha) {
                Err(()) => return Search::Aborted,
                Ok(None) => {
                    hi = Point {
                        alpha,
                        f: f64::INFINITY,
                        g: Vec::new(),
                        d: f64::NAN,
                    };
                    continue;
                }
                Ok(Some(pt)) => pt,
            };
            if !self.armijo(&pt) || pt.f >= lo.f {
                hi = pt;
            } else {
                if self.curvature(&pt) {
                    return Search::Found(pt);
                }
                if pt.d * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = pt;
            }
        }
        self.fallback()
    }
}

/// Minimizes `eval` from `x0`. `on_iter(k, x, f, g)` runs after the initial
/// evaluation (`k = 0`) and after every accepted step.
pub fn minimize<F, C>(mut eval: F, x0: Vec<f64>, s: &LbfgsSettings, mut on_iter: C) -> Option<LbfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    C: FnMut(usize, &[f64], f64, &[f64]),
{
    let (mut f, mut g) = eval(&x0)?;
    if !f.is_finite() {
        return None;
    }
    let mut x = x0;
    let mut evaluations = 1;
    on_iter(0, &x, f, &g);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(s.memory);
    let mut k = 0;
    let termination = loop {
        if inf_norm(&g) <= s.grad_tol {
            break Termination::GradientTolerance;
        }
        if k >= s.max_iters {
            break Termination::MaxIterations;
        }
        if s.deadline.is_some_and(|d| Instant::now() >= d) {
            break Termination::WallClock;
        }

        let mut p = two_loop(&hist, &g);
        let mut d0 = dot(&p, &g);
        if !(d0 < 0.0) {
            hist.clear();
            p = g.iter().map(|v| -v).collect();
            d0 = dot(&p, &g);
        }
        let mut alpha0 = if hist.is_empty() { 1.0_f64.min(1.0 / inf_norm(&g)) } else { 1.0 };

        let outcome = loop {
            let mut ls = LineSearch {
                eval: &mut eval,
                x: &x,
                p: &p,
                f0: f,
                d0,
                s,
                failures: 0,
                evaluations: 0,
                best: None,
            };
            let r = ls.run(alpha0);
            evaluations += ls.evaluations;
            match r {
                Search::Failed if !hist.is_empty() => {
                    log::debug!("line search failed on quasi-Newton direction; restarting from steepest descent");
                    hist.clear();
                    p = g.iter().map(|v| -v).collect();
                    d0 = dot(&p, &g);
                    alpha0 = 1.0_f64.min(1.0 / inf_norm(&g));
                }
                other => break other,
            }
        };
        let pt = match outcome {
            Search::Found(pt) | Search::Armijo(pt) => pt,
            Search::Failed => break Termination::LineSearchFailed,
            Search::Aborted => break Termination::EvaluationFailures,
        };

        let x_new = axpy(&x, pt.alpha, &p);
        let sv: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = pt.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&sv, &sv).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            if hist.len() == s.memory {
                hist.pop_front();
            }
            hist.push_back((sv, yv, 1.0 / sy));
        }
        x = x_new;
        f = pt.f;
        g = pt.g;
        k += 1;
        on_iter(k, &x, f, &g);
    };
    Some(LbfgsResult {
        x,
        f,
        g,
        iterations: k,
        evaluations,
        termination,
    })
}

fn two_loop(hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, g: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = vec![0.0; hist.len()];
    for (i, (sv, yv, rho)) in hist.iter().enumerate().rev() {
        let a = rho * dot(sv, &q);
        alphas[i] = a;
        for (qj, yj) in q.iter_mut().zip(yv) {
            *qj -= a * yj;
        }
    }
    if let Some((sv, yv, _)) = hist.back() {
        let gamma = dot(sv, yv) / dot(yv, yv);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (i, (sv, yv, rho)) in hist.iter().enumerate() {
        let b = rho * dot(yv, &q);
        for (qj, sj) in q.iter_mut().zip(sv) {
            *qj += (alphas[i] - b) * sj;
        }
    }
    q.iter().map(|v| -v).collect()
}
