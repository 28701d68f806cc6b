use gprf::datagen::{gen_events, gen_events_at, gen_uniform, gen_uniform_locations, Dataset, EventGeometry, SyntheticSpec};
use gprf::kernels::cov_matrix;
use gprf::mean_location_error;
use ndarray::{array, Array2};

fn pearson(y: &Array2<f64>, i: usize, j: usize) -> f64 {
    let a = y.row(i);
    let b = y.row(j);
    let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, z) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (z - mb);
        saa += (x - ma).powi(2);
        sbb += (z - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn dist(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn uniform_marginals_and_location_noise() {
    let spec = SyntheticSpec::uniform_default(2000, 11);
    let ds = gen_uniform(&spec).unwrap();
    assert_eq!(ds.y.dim(), (2000, 50));
    // One column of a field with lengthscale 6 over a side of 45 has only
    // a few dozen independent regions, so the per-column spread is near 20%.
    // The second moment is pooled over the 50 columns.
    let target = 1.0 + 0.01;
    let v = ds.y.mapv(|v| v * v).mean().unwrap();
    assert!((v - target).abs() < 0.1 * target, "variance {v}");
    // The spread of a column's second moment is known exactly: its
    // variance is 2 * ||K_y||_F^2 / n^2.
    let k = cov_matrix(&spec.kernel, ds.x_true.view(), ds.x_true.view(), true).unwrap();
    let n = ds.n() as f64;
    let sd_col = (2.0 * k.mapv(|v| v * v).sum()).sqrt() / n;
    let m2: Vec<f64> = ds.y.columns().into_iter().map(|c| c.mapv(|v| v * v).mean().unwrap()).collect();
    let mean = m2.iter().sum::<f64>() / m2.len() as f64;
    let spread = (m2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m2.len() - 1) as f64).sqrt();
    assert!((spread / sd_col - 1.0).abs() < 0.35, "spread {spread} expected {sd_col}");
    assert!((v - target).abs() < 4.0 * sd_col / (m2.len() as f64).sqrt());
    let side = 2000f64.sqrt();
    assert!(ds.x_true.iter().all(|v| (0.0..=side).contains(v)));
    let rayleigh = 2.0 * (std::f64::consts::PI / 2.0).sqrt();
    let err = mean_location_error(&ds.x_obs, &ds.x_true).unwrap();
    assert!((err - rayleigh).abs() < 0.05 * rayleigh, "error {err}");
}

#[test]
fn initial_error_at_large_n() {
    let (x, x_obs) = gen_uniform_locations(&SyntheticSpec::uniform_default(10000, 1));
    let err = mean_location_error(&x_obs, &x).unwrap();
    assert!((err - 2.51).abs() < 0.1, "error {err}");
}

#[test]
fn single_point_dataset() {
    let ds = gen_uniform(&SyntheticSpec::uniform_default(1, 3)).unwrap();
    assert!(ds.x_true.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(ds.y.dim(), (1, 50));
}

#[test]
fn size_guard_refuses_large_draws() {
    assert!(gen_uniform(&SyntheticSpec::uniform_default(20001, 0)).is_err());
}

#[test]
fn short_range_rows_are_correlated() {
    let ds = gen_uniform(&SyntheticSpec::uniform_default(600, 4)).unwrap();
    let mut checked = 0;
    for i in 0..ds.n() {
        for j in (i + 1)..ds.n() {
            if dist(&ds.x_true, i, j) < 3.0 {
                assert!(pearson(&ds.y, i, j) > 0.5);
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn events_depth_and_correlation_structure() {
    let spec = SyntheticSpec::events_default(800, 5);
    let ds = gen_events(&spec, &EventGeometry::default()).unwrap();
    assert!(ds.x_true.column(2).iter().all(|v| *v >= 0.0));
    assert!(ds.x_obs.column(2).iter().all(|v| *v >= 0.0));

    let mut near = Vec::new();
    for i in 0..ds.n() {
        for j in (i + 1)..ds.n() {
            if dist(&ds.x_true, i, j) < 20.0 {
                near.push(pearson(&ds.y, i, j));
            }
        }
    }
    assert!(near.len() > 100);
    assert!(near.iter().all(|r| *r > 0.5));

    // A single pair's sample correlation over 50 columns has spread near
    // 0.14, so the tail is checked on the kernel and on the mean over
    // independent two-event draws.
    let two = array![[0.0, 0.0, 10.0], [400.0, 0.0, 10.0]];
    let draws = 3000u64;
    let mut sum = 0.0;
    for s in 0..draws {
        let pair = gen_events_at(&SyntheticSpec::events_default(2, s), two.clone()).unwrap();
        sum += pearson(&pair.y, 0, 1);
    }
    let mean_far = sum / draws as f64;
    assert!(mean_far.abs() < 0.01, "mean far correlation {mean_far}");
    let k = cov_matrix(&spec.kernel, two.view(), two.view(), true).unwrap();
    assert!(k[(0, 1)] / k[(0, 0)] < 0.01);
}

#[test]
fn same_seed_same_bits() {
    let a = gen_uniform(&SyntheticSpec::uniform_default(300, 9)).unwrap();
    let b = gen_uniform(&SyntheticSpec::uniform_default(300, 9)).unwrap();
    assert_eq!(a, b);
    let c = gen_uniform(&SyntheticSpec::uniform_default(300, 10)).unwrap();
    assert_ne!(a.x_true, c.x_true);
    let g = EventGeometry::default();
    let e1 = gen_events(&SyntheticSpec::events_default(200, 9), &g).unwrap();
    let e2 = gen_events(&SyntheticSpec::events_default(200, 9), &g).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn csv_round_trip_is_exact() {
    let ds = gen_uniform(&SyntheticSpec::uniform_default(50, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    ds.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back.x_true, ds.x_true);
    assert_eq!(back.x_obs, ds.x_obs);
    assert_eq!(back.y, ds.y);
    assert!(back.meta_value("generator").is_some());
}
