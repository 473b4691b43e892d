mod common;

use common::*;
use ntklab_core::entropy::{
    construct_cover, cover_equivalence_check, cover_report, coverage_audit, effective_rank, effective_rank_sweep,
    ellipsoid_cover_bounds, fim, gram_over_n_eigenvalues, linearized_covering_bound, Ellipsoid, FisherRepr,
    DEFAULT_REJECTION_LIMIT,
};
use ntklab_core::linalg::norm;
use ntklab_core::spectral::eigh;
use ntklab_core::{Activation, Matrix, Network, NetworkSpec, Rng};
use proptest::prelude::*;

const LN12: f64 = 2.484_906_649_788_000_3;

#[test]
fn effective_rank_examples() {
    let l = [3.0, 1.0, 0.5, 0.1];
    assert_eq!(effective_rank(&l, 0.4), 3);
    assert_eq!(effective_rank(&l, 3.0), 0);
    assert_eq!(effective_rank(&l, 0.5), 2);
    let sweep = effective_rank_sweep(&l, &[0.05, 0.2, 2.0]);
    assert_eq!(sweep.iter().map(|s| s.1).collect::<Vec<_>>(), vec![4, 3, 1]);
}

#[test]
fn cover_bound_examples() {
    let r = ellipsoid_cover_bounds(&Ellipsoid::new(vec![0.5, 0.5]).unwrap(), 0.25).unwrap();
    assert_eq!(r.k_lower, 0.0);
    let r = ellipsoid_cover_bounds(&Ellipsoid::new(vec![4.0, 2.0, 0.5]).unwrap(), 0.25).unwrap();
    assert!((r.k_lower - 8f64.ln()).abs() < 1e-14);
    assert_eq!(r.mu_gamma, 2);
    assert!((r.upper - (8f64.ln() + 2.0 * LN12)).abs() < 1e-13);
    let r = ellipsoid_cover_bounds(&Ellipsoid::new(vec![2.0, 2.0]).unwrap(), 0.25).unwrap();
    assert!((r.k_lower - 4f64.ln()).abs() < 1e-14);
    assert!((r.upper - (4f64.ln() + 2.0 * LN12)).abs() < 1e-13);
    for gamma in [0.0, 0.5, -0.1] {
        assert!(ellipsoid_cover_bounds(&Ellipsoid::new(vec![1.0]).unwrap(), gamma).is_err());
    }
    assert!(Ellipsoid::new(vec![1.0, -0.5]).is_err());
}

#[test]
fn small_ellipsoid_needs_only_the_origin() {
    let e = Ellipsoid::new(vec![0.5, 0.5]).unwrap();
    let mut rng = Rng::new(3);
    for gamma in [0.1, 0.3, 0.45] {
        let cover = construct_cover(&e, gamma, 1000, &mut rng).unwrap();
        assert_eq!(cover.centers, vec![vec![0.0, 0.0]]);
        assert_eq!(coverage_audit(&e, &cover.centers, 1.0, 10_000, &mut rng).violations, 0);
    }
}

#[test]
fn constructed_cover_respects_sandwich_and_audit() {
    let e = Ellipsoid::new(vec![3.0, 2.0]).unwrap();
    let rep = cover_report(&e, 0.25, DEFAULT_REJECTION_LIMIT, 10_000, true, &mut Rng::new(5)).unwrap();
    assert_eq!(rep.sandwich_holds(), Some(true), "{rep:?}");
    assert_eq!(rep.audit.as_ref().unwrap().violations, 0);
    let centers = rep.centers.unwrap();
    assert_eq!(centers.len(), rep.constructed_count.unwrap());
    // packing: pairwise separation above gamma
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[..i] {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            assert!(norm(&d) > 0.25);
        }
    }
    assert!(construct_cover(&Ellipsoid::new(vec![1.0; 4]).unwrap(), 0.25, 10, &mut Rng::new(0)).is_err());
}

#[test]
fn zero_axes_are_projected_out() {
    let e = Ellipsoid::new(vec![2.5, 0.0, 0.9]).unwrap();
    let cover = construct_cover(&e, 0.25, 2000, &mut Rng::new(8)).unwrap();
    assert_eq!(cover.kept_axes, vec![0, 2]);
    assert!(cover.centers.iter().all(|c| c[1] == 0.0));
    assert_eq!(coverage_audit(&e, &cover.centers, 1.0, 10_000, &mut Rng::new(9)).violations, 0);
}

#[test]
fn fisher_single_sample_is_rank_one() {
    let net = Network::new(NetworkSpec::fully_connected(3, &[10], Activation::Tanh)).unwrap();
    let mut rng = Rng::new(1);
    let p = net.init_params(&mut rng);
    let x = rng.normal_vec(3);
    let g = net.grad(&p, &x).unwrap();
    let g2: f64 = g.iter().map(|v| v * v).sum();
    let f = fim(&net, &p, std::slice::from_ref(&x), true).unwrap();
    assert!((f.trace() - g2).abs() < 1e-10 * g2);
    let eig = f.eigenvalues().unwrap();
    assert!((eig[0] - g2).abs() < 1e-10 * g2);
    assert!(eig[1..].iter().all(|l| l.abs() < 1e-10 * g2));
}

#[test]
fn fisher_and_gram_share_nonzero_spectrum() {
    let net = Network::new(NetworkSpec::fully_connected(4, &[12], Activation::Softplus)).unwrap();
    let mut rng = Rng::new(2);
    let p = net.init_params(&mut rng);
    let xs = random_points(&mut rng, 7, 4);
    let gram_eigs = gram_over_n_eigenvalues(&net, &p, &xs).unwrap();
    let explicit = fim(&net, &p, &xs, true).unwrap();
    let factor = fim(&net, &p, &xs, false).unwrap();
    assert!(matches!(factor.representation, FisherRepr::Factor(_)));
    let e1 = explicit.eigenvalues().unwrap();
    let e2 = factor.eigenvalues().unwrap();
    for i in 0..7 {
        assert!((e1[i] - gram_eigs[i]).abs() <= 1e-8 * gram_eigs[i]);
        assert!((e2[i] - gram_eigs[i]).abs() <= 1e-8 * gram_eigs[i]);
    }
    assert!(e1[7..].iter().all(|l| l.abs() < 1e-10 * e1[0]));

    // traces against the mean squared gradient and its sup bound
    let sq: Vec<f64> = xs
        .iter()
        .map(|x| net.grad(&p, x).unwrap().iter().map(|v| v * v).sum())
        .collect();
    let mean = sq.iter().sum::<f64>() / 7.0;
    let b2 = sq.iter().cloned().fold(0.0, f64::max);
    for f in [&explicit, &factor] {
        assert!((f.trace() - mean).abs() <= 1e-10 * mean);
        assert!(f.trace() <= b2);
    }
    assert!(fim(&net, &p, &[], false).is_err());
}

#[test]
fn jtj_and_jjt_share_nonzero_eigenvalues_on_random_factors() {
    let mut rng = Rng::new(3);
    for _ in 0..5 {
        let j = Matrix::from_vec(3, 5, rng.normal_vec(15)).unwrap();
        let small = eigh(&j.row_gram()).unwrap().eigenvalues;
        let big = eigh(&j.transpose().matmul(&j)).unwrap().eigenvalues;
        for i in 0..3 {
            assert!((small[i] - big[i]).abs() <= 1e-8 * small[i]);
        }
        assert!(big[3..].iter().all(|l| l.abs() < 1e-10 * big[0]));
    }
}

#[test]
fn spectral_skew_of_a_wide_net() {
    let net = Network::new(NetworkSpec::fully_connected(3, &[512], Activation::Softplus)).unwrap();
    let mut rng = Rng::new(4);
    let p = net.init_params(&mut rng);
    let xs = sphere_points(&mut rng, 256, 3);
    let eig = gram_over_n_eigenvalues(&net, &p, &xs).unwrap();
    let singular: Vec<f64> = eig.iter().map(|l| l.max(0.0).sqrt()).collect();
    let rank = effective_rank(&singular, 0.1 * singular[0]);
    assert!(rank * 20 < p.len(), "effective rank {rank} of p = {}", p.len());
}

#[test]
fn linearized_bound_examples() {
    let b = linearized_covering_bound(&[1.0, 0.25], 2.0, 1.0, 0.25).unwrap();
    assert!((b.lower - 2f64.ln()).abs() < 1e-14);
    assert_eq!(b.mu_gamma, 2);
    assert!((b.upper - (2f64.ln() + 2.0 * LN12)).abs() < 1e-13);
    let tiny = linearized_covering_bound(&[1e-4, 1e-6], 1.0, 0.5, 0.25).unwrap();
    assert_eq!(tiny.lower, 0.0);
    assert!(linearized_covering_bound(&[1.0], 0.5, 1.0, 0.25).is_err());
    assert!(linearized_covering_bound(&[1.0], 1.0, 0.0, 0.25).is_err());
}

#[test]
fn cover_equivalence_examples() {
    let mut rng = Rng::new(6);
    let id = cover_equivalence_check(&Matrix::identity(2), 1.0, 1.0, 0.25, 2000, &mut rng).unwrap();
    assert_eq!(id.centers.len(), 1);
    assert_eq!(id.violations, 0);

    let flat = cover_equivalence_check(&Matrix::diagonal(&[4.0, 0.0]), 1.0, 1.0, 0.25, 10_000, &mut rng).unwrap();
    assert_eq!(flat.violations, 0);
    assert!(flat.centers.iter().all(|c| c[1] == 0.0));

    for _ in 0..3 {
        let a = Matrix::from_vec(2, 2, rng.normal_vec(4)).unwrap();
        let m = a.transpose().matmul(&a);
        let rep = cover_equivalence_check(&m, 1.5, 1.0, 0.25, 10_000, &mut rng).unwrap();
        assert_eq!(rep.violations, 0, "{rep:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sandwich_in_low_dimension(seed in any::<u64>(), dim in 1usize..=3, gamma in 0.05f64..0.49) {
        let mut rng = Rng::new(seed);
        let axes: Vec<f64> = (0..dim).map(|_| rng.uniform_range(0.2, 2.2)).collect();
        let e = Ellipsoid::new(axes).unwrap();
        let rep = cover_report(&e, gamma, 2000, 500, false, &mut rng).unwrap();
        prop_assert!(rep.k_lower <= rep.upper);
        prop_assert_eq!(rep.sandwich_holds(), Some(true));
    }

    #[test]
    fn effective_rank_is_monotone_and_trace_bounded(
        mut l in prop::collection::vec(0.0f64..10.0, 1..30),
        a in 1e-3f64..5.0,
        b in 1e-3f64..5.0,
    ) {
        l.sort_by(|x, y| y.total_cmp(x));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(effective_rank(&l, hi) <= effective_rank(&l, lo));
        let trace: f64 = l.iter().sum();
        prop_assert!(effective_rank(&l, lo) as f64 <= trace / lo);
    }

    #[test]
    fn linearized_bound_depends_on_ratio_only(
        mut l in prop::collection::vec(0.0f64..4.0, 1..12),
        r in 1.0f64..5.0,
        eps in 0.05f64..2.0,
        c in 1.0f64..8.0,
        gamma in 0.05f64..0.49,
    ) {
        l.sort_by(|x, y| y.total_cmp(x));
        let b1 = linearized_covering_bound(&l, r, eps, gamma).unwrap();
        let b2 = linearized_covering_bound(&l, c * r, c * eps, gamma).unwrap();
        prop_assert!(b1.lower <= b1.upper);
        prop_assert!((b1.lower - b2.lower).abs() <= 1e-9 * (1.0 + b1.lower));
        prop_assert!((b1.upper - b2.upper).abs() <= 1e-9 * (1.0 + b1.upper));
        prop_assert_eq!(b1.mu_gamma, b2.mu_gamma);
    }

    #[test]
    fn doubling_radius_adds_log_two_per_large_axis(mut l in prop::collection::vec(1.5f64..9.0, 1..8)) {
        l.sort_by(|x, y| y.total_cmp(x));
        let b1 = linearized_covering_bound(&l, 1.0, 1.0, 0.25).unwrap();
        let b2 = linearized_covering_bound(&l, 2.0, 1.0, 0.25).unwrap();
        prop_assert!((b2.lower - b1.lower - l.len() as f64 * 2f64.ln()).abs() < 1e-10);
    }
}
