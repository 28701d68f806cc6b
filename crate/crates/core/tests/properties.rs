use gprf::blocks::{EdgeSet, Partition, Rect};
use gprf::kernels::{cov_matrix, Hyperparams, KernelFamily, KernelSpec};
use gprf::objective::bethe_check_scaled;
use gprf::verify::{random_model, RandomShape};
use gprf::{factorize, gaussian_kl, gprf_value, grid_partition, mvn_logpdf, pa_tree_partition};
use ndarray::{Array2, Axis};
use ndarray_linalg::{Eigh, UPLO};
use proptest::prelude::*;

fn points(n: usize, seed: u64) -> Array2<f64> {
    let mut r = gprf::datagen::StreamRng::new(seed, 0);
    Array2::from_shape_simple_fn((n, 2), || 10.0 * r.uniform())
}

fn family(i: usize) -> KernelFamily {
    [
        KernelFamily::SquaredExponentialHalf,
        KernelFamily::SquaredExponentialPlain,
        KernelFamily::Matern32,
        KernelFamily::Exponential,
    ][i % 4]
}

fn check_cover(p: &Partition, n: usize) {
    let mut seen = vec![false; n];
    for (b, idx) in p.blocks().iter().enumerate() {
        assert!(!idx.is_empty());
        for &i in idx {
            assert!(!seen[i]);
            seen[i] = true;
            assert_eq!(p.assignment()[i], b);
        }
    }
    assert!(seen.into_iter().all(|s| s));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partitions_cover_disjointly(n in 1usize..300, cells in 1usize..8, max in 1usize..80, seed in any::<u64>()) {
        let x = points(n, seed);
        let g = grid_partition(x.view(), cells, Rect::bounding(x.view())).unwrap();
        check_cover(&g, n);
        prop_assert_eq!(&g, &grid_partition(x.view(), cells, Rect::bounding(x.view())).unwrap());
        let t = pa_tree_partition(x.view(), max).unwrap();
        check_cover(&t, n);
        prop_assert!(t.max_block_size() <= max);
        prop_assert_eq!(&t, &pa_tree_partition(x.view(), max).unwrap());
        check_cover(&Partition::contiguous(n, max).unwrap(), n);
    }

    #[test]
    fn edge_sets_are_normalized(m in 2usize..12, raw in prop::collection::vec((0usize..12, 0usize..12), 0..40)) {
        let pairs: Vec<_> = raw.into_iter().filter(|(a, b)| a != b && *a < m && *b < m).collect();
        let e = EdgeSet::from_pairs(m, pairs.clone()).unwrap();
        let mut flipped: Vec<_> = pairs.iter().map(|(a, b)| (*b, *a)).collect();
        flipped.extend(pairs.iter().copied());
        prop_assert_eq!(&e, &EdgeSet::from_pairs(m, flipped).unwrap());
        prop_assert!(e.edges().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(e.edges().iter().all(|(i, j)| i < j));
        prop_assert_eq!(e.degree().iter().sum::<usize>(), 2 * e.len());
        prop_assert!(e.is_subset_of(&EdgeSet::complete(m)));
        prop_assert!(EdgeSet::from_pairs(m, [(0, 0)]).is_err());
    }

    #[test]
    fn grid_neighbors_within_complete(n in 20usize..300, cells in 1usize..7, seed in any::<u64>()) {
        let x = points(n, seed);
        let p = grid_partition(x.view(), cells, Rect::bounding(x.view())).unwrap();
        let g = EdgeSet::grid_neighbors(&p).unwrap();
        prop_assert!(g.is_subset_of(&EdgeSet::complete(p.n_blocks())));
        let d = EdgeSet::distance_threshold(&p, x.view(), f64::INFINITY).unwrap();
        prop_assert_eq!(d, EdgeSet::complete(p.n_blocks()));
    }

    #[test]
    fn covariances_symmetric_psd_monotone(n in 1usize..60, fam in 0usize..4, ell in 0.2f64..5.0, sf2 in 0.1f64..3.0, seed in any::<u64>()) {
        let k = KernelSpec::new(family(fam), Hyperparams::isotropic(sf2, ell, 0.01)).unwrap();
        let x = points(n, seed);
        let c = cov_matrix(&k, x.view(), x.view(), true).unwrap();
        prop_assert_eq!(&c, &c.t().to_owned());
        let (ev, _) = c.eigh(UPLO::Lower).unwrap();
        prop_assert!(ev.iter().all(|v| *v >= -1e-10 * sf2));
        let origin = Array2::<f64>::zeros((1, 2));
        let line = Array2::from_shape_fn((40, 2), |(i, c)| if c == 0 { 0.25 * i as f64 } else { 0.0 });
        let row = cov_matrix(&k, origin.view(), line.view(), false).unwrap();
        prop_assert!(row.row(0).windows(2).into_iter().all(|w| w[1] <= w[0]));
    }

    #[test]
    fn kl_nonnegative_and_zero_on_self(seed in any::<u64>(), n in 1usize..20, scale in 0.3f64..3.0) {
        let k = KernelSpec::new(KernelFamily::Matern32, Hyperparams::isotropic(1.0, 1.5, 0.05)).unwrap();
        let x = points(n, seed);
        let c = cov_matrix(&k, x.view(), x.view(), true).unwrap();
        let p = factorize(&c).unwrap();
        prop_assert_eq!(gaussian_kl(&p, &p).unwrap(), 0.0);
        let b = factorize(&c.mapv(|v| v * scale)).unwrap();
        prop_assert!(gaussian_kl(&b, &p).unwrap() >= -1e-10);
    }

    #[test]
    fn block_diagonal_density_splits(seed in any::<u64>(), n in 2usize..40) {
        let k = KernelSpec::new(KernelFamily::SquaredExponentialHalf, Hyperparams::isotropic(1.0, 1.0, 0.1)).unwrap();
        let x = points(n, seed);
        let y = gprf::verify::random_outputs(seed, n, 2, 0);
        let h = n / 2;
        let mut c = cov_matrix(&k, x.view(), x.view(), true).unwrap();
        for i in 0..n {
            for j in 0..n {
                if (i < h) != (j < h) {
                    c[(i, j)] = 0.0;
                }
            }
        }
        let whole = mvn_logpdf(&factorize(&c).unwrap(), y.view()).unwrap();
        let mut parts = 0.0;
        for idx in [(0..h).collect::<Vec<_>>(), (h..n).collect()] {
            if idx.is_empty() {
                continue;
            }
            let sub = c.select(Axis(0), &idx).select(Axis(1), &idx);
            parts += mvn_logpdf(&factorize(&sub).unwrap(), y.select(Axis(0), &idx).view()).unwrap();
        }
        prop_assert!((whole - parts).abs() <= 1e-9 * whole.abs().max(1.0));
    }

    #[test]
    fn perturbed_pseudomarginals_raise_free_energy(seed in 0u64..10_000) {
        let m = random_model(seed, RandomShape { max_n: 50, max_blocks: 4, ..Default::default() }).unwrap();
        prop_assert!(bethe_check_scaled(&m, 1.1).unwrap().free_energy > 0.0);
    }

    #[test]
    fn evaluation_is_deterministic(seed in 0u64..10_000) {
        let m = random_model(seed, RandomShape { max_n: 60, ..Default::default() }).unwrap();
        prop_assert_eq!(gprf_value(&m).unwrap().to_bits(), gprf_value(&m).unwrap().to_bits());
    }
}
