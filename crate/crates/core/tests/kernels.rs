mod common;

use common::*;
use ntklab_core::linalg::dot;
use ntklab_core::ntk::{
    analytic_ntk_mc, gram, kernel_deviation_check, kernel_l2_distance, ntk_value, FactorCache, MonteCarloKernel,
};
use ntklab_core::spectral::eigh;
use ntklab_core::{Activation, InputScaling, Network, NetworkSpec, Rng};
use proptest::prelude::*;

fn shallow_linear(m: usize, d: usize) -> Network {
    Network::new(NetworkSpec::fully_connected(d, &[m], Activation::Linear).with_input_scaling(InputScaling::Unit))
        .unwrap()
}

#[test]
fn mc_limit_of_linear_net_is_twice_the_inner_product() {
    let net = shallow_linear(8, 3);
    let x = [0.6, -0.3, 1.1];
    let y = [0.2, 0.9, -0.4];
    let est = analytic_ntk_mc(&net, &x, &y, 10_000, &Rng::new(77)).unwrap();
    let exact = 2.0 * dot(&x, &y);
    assert!((est.value - exact).abs() < 5.0 * est.stderr, "{est:?} vs {exact}");
    assert_eq!(est.n_init, 10_000);

    let orth = analytic_ntk_mc(&net, &[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0], 10_000, &Rng::new(78)).unwrap();
    assert!(orth.value.abs() < 5.0 * orth.stderr, "{orth:?}");
}

#[test]
fn mc_stderr_scales_like_inverse_root_of_inits() {
    let net = Network::new(NetworkSpec::fully_connected(3, &[16], Activation::Softplus)).unwrap();
    let x = [0.3, 0.4, -0.5];
    let y = [-0.2, 0.8, 0.1];
    let small = analytic_ntk_mc(&net, &x, &y, 1000, &Rng::new(1)).unwrap();
    let large = analytic_ntk_mc(&net, &x, &y, 4000, &Rng::new(2)).unwrap();
    let ratio = large.stderr / small.stderr;
    assert!((0.4..=0.6).contains(&ratio), "ratio {ratio}");
}

#[test]
fn mc_estimates_are_reproducible() {
    let net = Network::new(NetworkSpec::fully_connected(2, &[8], Activation::Tanh)).unwrap();
    let a = analytic_ntk_mc(&net, &[1.0, 0.5], &[0.2, -1.0], 50, &Rng::new(4)).unwrap();
    let b = analytic_ntk_mc(&net, &[1.0, 0.5], &[0.2, -1.0], 50, &Rng::new(4)).unwrap();
    assert_eq!(a, b);
    let mc = MonteCarloKernel::new(&net, 50, &Rng::new(4)).unwrap();
    let v = mc.value(&[1.0, 0.5], &[0.2, -1.0]).unwrap();
    assert!((v - a.value).abs() < 1e-12 * a.value.abs());
}

#[test]
fn kernel_distance_to_the_limit_shrinks_with_width() {
    // For a single hidden layer the expected kernel does not depend on the width,
    // so the Monte-Carlo limit can be averaged at any width.
    let reference = Network::new(NetworkSpec::fully_connected(3, &[64], Activation::Softplus)).unwrap();
    let limit = MonteCarloKernel::new(&reference, 1000, &Rng::new(10)).unwrap();
    let mut distances = Vec::new();
    for m in [512, 2048] {
        let net = Network::new(NetworkSpec::fully_connected(3, &[m], Activation::Softplus)).unwrap();
        let p = net.init_params(&mut Rng::new(20 + m as u64));
        let k0 = |x: &[f64], y: &[f64]| ntk_value(&net, &p, x, y);
        let kinf = |x: &[f64], y: &[f64]| limit.value(x, y);
        let est = kernel_l2_distance(k0, kinf, |r: &mut Rng| r.unit_vector(3), 200, &mut Rng::new(30)).unwrap();
        distances.push(est.value);
    }
    assert!(distances[1] < distances[0], "{distances:?}");
}

#[test]
fn kernel_deviation_stays_within_measured_bound() {
    let net = Network::new(fc(2, 128, 4, Activation::Softplus)).unwrap();
    let mut rng = Rng::new(6);
    let theta0 = net.init_params(&mut rng);
    let probes = sphere_points(&mut rng, 4, 4);
    for radius in [0.5, 2.0] {
        let dir = rng.unit_vector(theta0.len());
        let theta = theta0.with_data(theta0.data.iter().zip(&dir).map(|(a, d)| a + radius * d).collect());
        let rep = kernel_deviation_check(&net, &theta0, &theta, &probes, 3, 40, &mut rng).unwrap();
        assert!(rep.holds, "{rep:?}");
        assert!((rep.radius - radius).abs() < 1e-12);
    }
}

#[test]
fn gram_rejects_empty_sample() {
    let net = Network::new(fc(1, 4, 2, Activation::Tanh)).unwrap();
    let p = net.init_params(&mut Rng::new(0));
    assert!(gram(&net, &p, &[], "theta0").is_err());
}

#[test]
fn linear_gram_matches_closed_form_entrywise() {
    let (m, d) = (5, 3);
    let net = shallow_linear(m, d);
    let mut rng = Rng::new(14);
    let p = net.init_params(&mut rng);
    let xs = random_points(&mut rng, 3, d);
    let g = gram(&net, &p, &xs, "theta").unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let mut expected = 0.0;
            for k in 0..m {
                let w = &p.data[k * d..(k + 1) * d];
                let a = p.data[m * d + k];
                expected += dot(w, &xs[i]) * dot(w, &xs[j]) + a * a * dot(&xs[i], &xs[j]);
            }
            expected /= m as f64;
            assert!((g.entries[(i, j)] - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gram_is_symmetric_psd(seed in any::<u64>(), arch in 0usize..4, n in 1usize..12) {
        let (_, spec) = all_architectures(6, Activation::Softplus).swap_remove(arch);
        let net = Network::new(spec).unwrap();
        let mut rng = Rng::new(seed);
        let p = net.init_params(&mut rng);
        let xs = random_points(&mut rng, n, net.input_dim());
        let g = gram(&net, &p, &xs, "theta").unwrap();
        prop_assert_eq!(g.entries.asymmetry().0, 0.0);
        let es = eigh(&g.entries).unwrap();
        let top = es.eigenvalues[0];
        prop_assert!(*es.eigenvalues.last().unwrap() >= -1e-10 * top);
        // spot-check the evaluator itself for symmetry
        let cache = FactorCache::new(&net, &p, &xs).unwrap();
        let row = cache.row(&xs[0]).unwrap();
        prop_assert!((row[n - 1] - ntk_value(&net, &p, &xs[n - 1], &xs[0]).unwrap()).abs() <= 1e-12 * top);
    }

    #[test]
    fn kernel_satisfies_cauchy_schwarz(seed in any::<u64>(), arch in 0usize..4) {
        let (_, spec) = all_architectures(6, Activation::Tanh).swap_remove(arch);
        let net = Network::new(spec).unwrap();
        let mut rng = Rng::new(seed);
        let p = net.init_params(&mut rng);
        let x = rng.normal_vec(net.input_dim());
        let y = rng.normal_vec(net.input_dim());
        let kxy = ntk_value(&net, &p, &x, &y).unwrap();
        let kxx = ntk_value(&net, &p, &x, &x).unwrap();
        let kyy = ntk_value(&net, &p, &y, &y).unwrap();
        prop_assert!(kxx >= 0.0);
        prop_assert!(kxy * kxy <= kxx * kyy * (1.0 + 1e-12));
    }
}
