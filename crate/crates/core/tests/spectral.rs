mod common;

use common::*;
use ntklab_core::linalg::{dot, norm, Matrix};
use ntklab_core::ntk::FactorCache;
use ntklab_core::spectral::{eigh, eigh_gram_over_n, nystrom_eval, spectrum_report, NystromBasis, SIGN_THRESHOLD};
use ntklab_core::{Activation, Error, Network, NetworkSpec, Rng};
use proptest::prelude::*;

fn random_symmetric(rng: &mut Rng, n: usize) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.normal();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Characteristic polynomial coefficients `c` with
/// `det(lambda I - A) = sum_k c[k] lambda^(n-k)`, by Faddeev-LeVerrier.
fn characteristic_polynomial(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut c = vec![1.0];
    let mut m = Matrix::zeros(n, n);
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I
        let mut next = a.matmul(&m);
        for i in 0..n {
            next[(i, i)] += c[k - 1];
        }
        m = next;
        let am = a.matmul(&m);
        c.push(-am.trace() / k as f64);
    }
    c
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().fold(0.0, |acc, ck| acc * x + ck)
}

/// Real roots of a polynomial with only real, simple roots inside `[-r, r]`,
/// by scanning for sign changes and bisecting.
fn real_roots(c: &[f64], r: f64) -> Vec<f64> {
    let steps = 200_000;
    let mut roots = Vec::new();
    let mut prev_x = -r;
    let mut prev = poly_eval(c, prev_x);
    for s in 1..=steps {
        let x = -r + 2.0 * r * s as f64 / steps as f64;
        let v = poly_eval(c, x);
        if prev == 0.0 {
            roots.push(prev_x);
        } else if prev * v < 0.0 {
            let (mut lo, mut hi) = (prev_x, x);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if poly_eval(c, lo) * poly_eval(c, mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_x = x;
        prev = v;
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    roots
}

#[test]
fn matches_characteristic_polynomial_roots() {
    let mut rng = Rng::new(55);
    for _ in 0..5 {
        let a = random_symmetric(&mut rng, 5);
        let bound = (0..5)
            .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
            + 1.0;
        let roots = real_roots(&characteristic_polynomial(&a), bound);
        assert_eq!(roots.len(), 5);
        let es = eigh(&a).unwrap();
        for (l, r) in es.eigenvalues.iter().zip(&roots) {
            assert!((l - r).abs() < 1e-8, "{l} vs {r}");
        }
    }
}

#[test]
fn nystrom_reproduces_training_values_and_orthonormality() {
    let net = Network::new(NetworkSpec::fully_connected(3, &[128], Activation::Softplus)).unwrap();
    let mut rng = Rng::new(9);
    let p = net.init_params(&mut rng);
    let xs = sphere_points(&mut rng, 40, 3);
    let cache = FactorCache::new(&net, &p, &xs).unwrap();
    let basis = NystromBasis::from_gram(&cache.gram(), 6).unwrap();
    let n = xs.len() as f64;
    let values: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| basis.eval_row(&cache.row(x).unwrap()))
        .collect();
    for (j, row) in values.iter().enumerate() {
        for (i, f) in basis.functions.iter().enumerate() {
            let expected = n.sqrt() * f.coefficients[j];
            assert!((row[i] - expected).abs() < 1e-8, "phi_{i}(x_{j})");
            assert_eq!(nystrom_eval(f, &cache.row(&xs[j]).unwrap()), row[i]);
        }
    }
    for i in 0..6 {
        for k in 0..6 {
            let ip: f64 = values.iter().map(|r| r[i] * r[k]).sum::<f64>() / n;
            let target = if i == k { 1.0 } else { 0.0 };
            assert!((ip - target).abs() < 1e-8);
        }
    }
}

#[test]
fn training_operator_reproduces_extension_on_fresh_samples() {
    // Left side: T_n applied to phi_i, with phi_i itself assembled from kernel
    // rows at the training points. Right side: sigma_i phi_i evaluated at the
    // fresh points through their cross-kernel rows.
    let net = Network::new(NetworkSpec::fully_connected(3, &[512], Activation::Softplus)).unwrap();
    let mut rng = Rng::new(31);
    let p = net.init_params(&mut rng);
    let train = sphere_points(&mut rng, 256, 3);
    let fresh = sphere_points(&mut rng, 256, 3);
    let cache = FactorCache::new(&net, &p, &train).unwrap();
    let basis = NystromBasis::from_gram(&cache.gram(), 3).unwrap();
    let cross = cache.cross(&fresh).unwrap();
    let on_fresh = basis.eval_matrix(&cross).unwrap();
    let on_train: Vec<Vec<f64>> = train
        .iter()
        .map(|x| basis.eval_row(&cache.row(x).unwrap()))
        .collect();
    let n = train.len() as f64;
    for i in 0..3 {
        let phi_train: Vec<f64> = on_train.iter().map(|r| r[i]).collect();
        let lhs: Vec<f64> = cross.matvec(&phi_train).iter().map(|v| v / n).collect();
        let sigma = basis.functions[i].eigenvalue;
        let rhs: Vec<f64> = on_fresh.column(i).iter().map(|v| sigma * v).collect();
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&rhs);
        assert!(rel < 0.05, "eigenpair {i}: relative mismatch {rel}");
    }
}

#[test]
fn asi_gram_spectrum_equals_base_spectrum() {
    let spec = NetworkSpec::fully_connected(4, &[64, 64], Activation::Softplus);
    let base = Network::new(spec.clone()).unwrap();
    let asi = Network::new(spec.with_asi(true)).unwrap();
    let mut rng = Rng::new(2);
    let pa = asi.init_params(&mut rng);
    let pb = base.params_from(pa.data[..pa.layout.base_len].to_vec()).unwrap();
    let xs = random_points(&mut rng, 32, 4);
    let ea = eigh_gram_over_n(&FactorCache::new(&asi, &pa, &xs).unwrap().gram(), "asi").unwrap();
    let eb = eigh_gram_over_n(&FactorCache::new(&base, &pb, &xs).unwrap().gram(), "base").unwrap();
    for (a, b) in ea.eigenvalues.iter().zip(&eb.eigenvalues) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn spectrum_is_normalized_and_nonincreasing() {
    let mut rng = Rng::new(4);
    let a = random_symmetric(&mut rng, 20);
    let gram = a.transpose().matmul(&a);
    let es = eigh(&gram).unwrap();
    let rep = spectrum_report(&es, None).unwrap();
    assert_eq!(rep.len(), 10);
    assert_eq!(rep[0].lambda_normalized, 1.0);
    assert!(rep.windows(2).all(|w| w[1].lambda_normalized <= w[0].lambda_normalized));
}

#[test]
fn nonconvergence_is_not_silently_accepted() {
    let bad = Matrix::from_rows(&[vec![1.0, f64::NAN], vec![f64::NAN, 1.0]]).unwrap();
    assert!(eigh(&bad).is_err());
    let wide = Matrix::zeros(2, 3);
    assert!(matches!(eigh(&wide), Err(Error::DimensionMismatch { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn eigh_invariants(seed in any::<u64>(), n in 1usize..=64) {
        let mut rng = Rng::new(seed);
        let a = random_symmetric(&mut rng, n);
        let es = eigh(&a).unwrap();
        let top = es.eigenvalues[0].abs();
        prop_assert!(es.reconstruction_error(&a) <= 1e-8 * (1.0 + top));
        prop_assert!(es.orthonormality_error() <= 1e-10);
        prop_assert!(es.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..n {
            let v = es.vector(i);
            let first = v.iter().find(|x| x.abs() > SIGN_THRESHOLD).unwrap();
            prop_assert!(*first > 0.0);
            prop_assert!((dot(&v, &v) - 1.0).abs() < 1e-12);
        }
    }
}
