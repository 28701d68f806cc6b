//! Independent reference implementations for integration tests. Nothing here
//! calls the library's kernels or linear algebra.
#![allow(dead_code)]

use gprf::{GprfModel, KernelFamily, KernelSpec};
use ndarray::Array2;

/// Kernel value written out from the closed forms.
pub fn kernel(spec: &KernelSpec<f64>, a: &[f64], b: &[f64]) -> f64 {
    let sf2 = spec.hyper.signal_variance;
    let mut s = 0.0;
    for c in 0..a.len() {
        let g = spec.coord_groups.as_ref().map_or(0, |gs| gs[c]);
        let l = spec.hyper.lengthscales[g.min(spec.hyper.lengthscales.len() - 1)];
        s += ((a[c] - b[c]) / l).powi(2);
    }
    match spec.family {
        KernelFamily::SquaredExponentialHalf => sf2 * (-0.5 * s).exp(),
        KernelFamily::SquaredExponentialPlain => sf2 * (-s).exp(),
        KernelFamily::Matern32 => {
            let r = (3.0 * s).sqrt();
            sf2 * (1.0 + r) * (-r).exp()
        }
        KernelFamily::Exponential => sf2 * (-s.sqrt()).exp(),
    }
}

pub fn rows(x: &Array2<f64>, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| x.row(i).to_vec()).collect()
}

/// Noisy covariance (kernel + noise + jitter on the diagonal).
pub fn noisy_cov(spec: &KernelSpec<f64>, pts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = pts.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = kernel(spec, &pts[i], &pts[j]);
        }
        k[i][i] += spec.hyper.noise_variance + spec.jitter;
    }
    k
}

pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(s > 0.0, "oracle cholesky: not positive definite");
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    l
}

/// Explicit inverse by Gauss-Jordan elimination with partial pivoting.
pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| m[x][c].abs().partial_cmp(&m[y][c].abs()).unwrap())
            .unwrap();
        m.swap(c, p);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Zero-mean Gaussian log-density summed over the columns of `y`.
pub fn loglik(k: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = k.len();
    let l = cholesky(k);
    let logdet: f64 = 2.0 * (0..n).map(|i| l[i][i].ln()).sum::<f64>();
    let outputs = y.first().map_or(0, |r| r.len());
    let mut total = 0.0;
    for d in 0..outputs {
        // Forward substitution L z = y_d.
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut s = y[i][d];
            for k in 0..i {
                s -= l[i][k] * z[k];
            }
            z[i] = s / l[i][i];
        }
        let quad: f64 = z.iter().map(|v| v * v).sum();
        total += -0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    }
    total
}

pub fn loglik_at(spec: &KernelSpec<f64>, x: &Array2<f64>, y: &Array2<f64>, idx: &[usize]) -> f64 {
    let k = noisy_cov(spec, &rows(x, idx));
    loglik(&k, &rows(y, idx))
}

/// The surrogate computed straight from its definition.
pub fn gprf_oracle(model: &GprfModel<f64>) -> f64 {
    let spec = model.kernel();
    let p = model.partition();
    let e = model.edges();
    let mut total = 0.0;
    for b in 0..p.n_blocks() {
        let w = 1.0 - e.degree()[b] as f64;
        if w != 0.0 {
            total += w * loglik_at(spec, model.x(), model.y(), p.block(b));
        }
    }
    for &(i, j) in e.edges() {
        let mut idx = p.block(i).to_vec();
        idx.extend_from_slice(p.block(j));
        total += loglik_at(spec, model.x(), model.y(), &idx);
    }
    total
}

pub fn full_oracle(spec: &KernelSpec<f64>, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let idx: Vec<usize> = (0..x.nrows()).collect();
    loglik_at(spec, x, y, &idx)
}

/// Central differences of `f` at `x0` with step `h * max(1, |x_i|)`.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x0.len()];
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        let step = h * x0[i].abs().max(1.0);
        x[i] = x0[i] + step;
        let fp = f(&x);
        x[i] = x0[i] - step;
        let fm = f(&x);
        x[i] = x0[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// `max |a - b| / max(1e-12, max |b|)`.
pub fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Posterior mean and covariance at `xs` via an explicit inverse.
pub fn predict_oracle(spec: &KernelSpec<f64>, x: &Array2<f64>, y: &Array2<f64>, xs: &Array2<f64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let idx: Vec<usize> = (0..x.nrows()).collect();
    let tr = rows(x, &idx);
    let te: Vec<Vec<f64>> = xs.outer_iter().map(|r| r.to_vec()).collect();
    let kinv = inverse(&noisy_cov(spec, &tr));
    let n = tr.len();
    let ks: Vec<Vec<f64>> = tr.iter().map(|a| te.iter().map(|b| kernel(spec, a, b)).collect()).collect();
    let yv = rows(y, &idx);
    let outputs = y.ncols();
    let ns = te.len();
    // W = K^{-1} K*.
    let mut w = vec![vec![0.0; ns]; n];
    for i in 0..n {
        for s in 0..ns {
            w[i][s] = (0..n).map(|k| kinv[i][k] * ks[k][s]).sum();
        }
    }
    let mut mean = vec![vec![0.0; outputs]; ns];
    for s in 0..ns {
        for d in 0..outputs {
            mean[s][d] = (0..n).map(|i| w[i][s] * yv[i][d]).sum();
        }
    }
    let mut cov = vec![vec![0.0; ns]; ns];
    for a in 0..ns {
        for b in 0..ns {
            let mut v = kernel(spec, &te[a], &te[b]) - (0..n).map(|i| ks[i][a] * w[i][b]).sum::<f64>();
            if a == b {
                v += spec.jitter;
            }
            cov[a][b] = v;
        }
    }
    (mean, cov)
}
