mod common;

use common::*;
use ntklab_core::linalg::{dot, norm, norm_inf};
use ntklab_core::ntk::{ntk_value, FactorCache};
use ntklab_core::{Activation, InputScaling, Network, NetworkSpec, Rng};
use proptest::prelude::*;

/// Components smaller than this fraction of the largest gradient entry are
/// compared on that scale: central differences carry ~1e-11 absolute round-off.
const FD_FLOOR: f64 = 1e-4;

fn check_fd(spec: NetworkSpec, seed: u64, samples: usize) -> f64 {
    let net = Network::new(spec).unwrap();
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p = net.init_params(&mut rng);
        let x = rng.normal_vec(net.input_dim());
        let g = net.grad(&p, &x).unwrap();
        let fd = central_difference_grad(&net, &p, &x, 1e-5);
        worst = worst.max(max_relative_error(&g, &fd, FD_FLOOR * norm_inf(&g)));
    }
    worst
}

#[test]
fn gradients_match_central_differences_every_layer_form() {
    for act in [Activation::Softplus, Activation::Tanh, Activation::Sigmoid] {
        for m in [8, 32] {
            for (name, spec) in all_architectures(m, act) {
                let err = check_fd(spec, 17, 3);
                assert!(err < 1e-5, "{name} {act:?} m={m}: {err:e}");
            }
        }
    }
}

#[test]
fn asi_gradients_match_central_differences() {
    for (name, spec) in all_architectures(8, Activation::Softplus) {
        let net = Network::new(spec.with_asi(true)).unwrap();
        let mut rng = Rng::new(5);
        let mut p = net.init_params(&mut rng);
        // move away from the symmetric point so both halves differ
        for v in p.data.iter_mut() {
            *v += 0.1 * rng.normal();
        }
        let x = rng.normal_vec(net.input_dim());
        let g = net.grad(&p, &x).unwrap();
        let fd = central_difference_grad(&net, &p, &x, 1e-5);
        let err = max_relative_error(&g, &fd, FD_FLOOR * norm_inf(&g));
        assert!(err < 1e-5, "{name}: {err:e}");
    }
}

#[test]
fn asi_is_exactly_zero_with_mirrored_gradient_at_init() {
    for (name, spec) in all_architectures(16, Activation::Tanh) {
        let net = Network::new(spec.clone().with_asi(true)).unwrap();
        let base = Network::new(spec).unwrap();
        let mut rng = Rng::new(99);
        let p = net.init_params(&mut rng);
        let half = p.layout.base_len;
        assert_eq!(p.data[..half], p.data[half..], "{name}");
        let base_p = base.params_from(p.data[..half].to_vec()).unwrap();
        for _ in 0..20 {
            let x = rng.normal_vec(net.input_dim());
            assert_eq!(net.forward(&p, &x).unwrap().to_bits(), 0f64.to_bits(), "{name}");
            let g = net.grad(&p, &x).unwrap();
            let gb = base.grad(&base_p, &x).unwrap();
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let scale = norm_inf(&gb);
            for i in 0..half {
                assert_eq!(g[half + i], -g[i], "{name}");
                assert!((g[i] - gb[i] * s).abs() <= 1e-14 * scale, "{name}");
            }
        }
    }
}

#[test]
fn asi_kernel_equals_base_kernel_at_init() {
    for (name, spec) in all_architectures(16, Activation::Softplus) {
        let net = Network::new(spec.clone().with_asi(true)).unwrap();
        let base = Network::new(spec).unwrap();
        let mut rng = Rng::new(3);
        let p = net.init_params(&mut rng);
        let bp = base.params_from(p.data[..p.layout.base_len].to_vec()).unwrap();
        let xs = random_points(&mut rng, 12, net.input_dim());
        let ga = FactorCache::new(&net, &p, &xs).unwrap().gram();
        let gb = FactorCache::new(&base, &bp, &xs).unwrap().gram();
        assert!(ga.sub(&gb).max_abs() < 1e-10, "{name}");
    }
}

#[test]
fn factored_and_explicit_kernels_agree() {
    for (name, spec) in all_architectures(8, Activation::Sigmoid) {
        for asi in [false, true] {
            let net = Network::new(spec.clone().with_asi(asi)).unwrap();
            let mut rng = Rng::new(21);
            let p = net.init_params(&mut rng);
            let x = rng.normal_vec(net.input_dim());
            let y = rng.normal_vec(net.input_dim());
            let explicit = ntk_value(&net, &p, &x, &y).unwrap();
            let fx = net.grad_factors(&p, &x).unwrap();
            let fy = net.grad_factors(&p, &y).unwrap();
            let factored = fx.inner(&fy);
            assert!((explicit - factored).abs() <= 1e-12 * explicit.abs().max(1.0), "{name}");
            let dense = fx.to_dense();
            let g = net.grad(&p, &x).unwrap();
            assert!(dense.iter().zip(&g).all(|(a, b)| (a - b).abs() <= 1e-14 * b.abs().max(1.0)));
        }
    }
}

#[test]
fn init_is_deterministic_and_standard_normal() {
    let net = Network::new(fc(1, 1000, 1000, Activation::Softplus)).unwrap();
    let a = net.init_params(&mut Rng::new(2718));
    let b = net.init_params(&mut Rng::new(2718));
    assert_eq!(a, b);
    let n = a.len() as f64;
    assert!(n >= 1e6);
    let mean = a.data.iter().sum::<f64>() / n;
    let var = a.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 5.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() < 5.0 * (2.0 / n).sqrt(), "variance {var}");
}

#[test]
fn shallow_linear_hessian_norm_is_closed_form() {
    // Only a_i <-> w_i couplings with value x / sqrt(m), so H^2 = (|x|^2 / m) on its range.
    for m in [3, 16] {
        let net = Network::new(
            NetworkSpec::fully_connected(4, &[m], Activation::Linear).with_input_scaling(InputScaling::Unit),
        )
        .unwrap();
        let mut rng = Rng::new(m as u64);
        let p = net.init_params(&mut rng);
        let x = rng.normal_vec(4);
        let est = net.hessian_opnorm_estimate(&p, &x, 50, &mut rng).unwrap();
        let expected = norm(&x) / (m as f64).sqrt();
        assert!((est.value - expected).abs() < 1e-6 * expected, "{} vs {expected}", est.value);
    }
}

#[test]
fn hessian_norm_rejects_short_budgets() {
    let net = Network::new(fc(1, 4, 2, Activation::Tanh)).unwrap();
    let p = net.init_params(&mut Rng::new(0));
    assert!(net.hessian_opnorm_estimate(&p, &[1.0, 0.0], 9, &mut Rng::new(0)).is_err());
}

#[test]
fn exact_and_difference_hvp_agree() {
    for (name, spec) in all_architectures(8, Activation::Softplus) {
        let net = Network::new(spec).unwrap();
        let mut rng = Rng::new(8);
        let p = net.init_params(&mut rng);
        let x = rng.normal_vec(net.input_dim());
        let v = rng.normal_vec(p.len());
        let exact = net.hvp(&p, &x, &v).unwrap();
        let fd = net.hvp_central_difference(&p, &x, &v).unwrap();
        let scale = norm_inf(&exact);
        let err = exact.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        assert!(err < 1e-5, "{name}: {err:e}");
        let zero = net.hvp(&p, &x, &vec![0.0; p.len()]).unwrap();
        assert!(zero.iter().all(|&z| z == 0.0));
    }
}

#[test]
fn weight_norms_at_init_stay_below_bound() {
    for m in [64, 128] {
        let net = Network::new(fc(3, m, 8, Activation::Softplus)).unwrap();
        let mut failures = 0;
        for seed in 0..20 {
            let p = net.init_params(&mut Rng::new(seed));
            failures += net
                .weight_norm_report(&p)
                .unwrap()
                .iter()
                .filter(|c| !c.holds)
                .count();
        }
        assert_eq!(failures, 0, "m = {m}");
    }
}

#[test]
fn gradient_norm_stays_bounded_as_width_doubles() {
    let mut rng = Rng::new(12);
    let probes = sphere_points(&mut rng, 8, 4);
    let mut maxima = Vec::new();
    for m in [64, 128, 256, 512] {
        let net = Network::new(fc(2, m, 4, Activation::Softplus)).unwrap();
        let p = net.init_params(&mut Rng::new(m as u64));
        let worst = probes
            .iter()
            .map(|x| net.gradient_norm(&p, x).unwrap())
            .fold(0.0, f64::max);
        maxima.push(worst);
    }
    for w in maxima.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.5..=2.0).contains(&ratio), "ratio {ratio} in {maxima:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hvp_is_symmetric(seed in any::<u64>(), arch in 0usize..4) {
        let (_, spec) = all_architectures(6, Activation::Tanh).swap_remove(arch);
        let net = Network::new(spec).unwrap();
        let mut rng = Rng::new(seed);
        let p = net.init_params(&mut rng);
        let x = rng.normal_vec(net.input_dim());
        let u = rng.normal_vec(p.len());
        let v = rng.normal_vec(p.len());
        let uhv = dot(&u, &net.hvp(&p, &x, &v).unwrap());
        let vhu = dot(&v, &net.hvp(&p, &x, &u).unwrap());
        prop_assert!((uhv - vhu).abs() < 1e-8, "{} vs {}", uhv, vhu);
    }

    #[test]
    fn shallow_linear_gradient_closed_form(seed in any::<u64>(), m in 1usize..6, d in 1usize..5) {
        let net = Network::new(
            NetworkSpec::fully_connected(d, &[m], Activation::Linear).with_input_scaling(InputScaling::Unit),
        ).unwrap();
        let mut rng = Rng::new(seed);
        let p = net.init_params(&mut rng);
        let x = rng.normal_vec(d);
        let g = net.grad(&p, &x).unwrap();
        let s = 1.0 / (m as f64).sqrt();
        for i in 0..m {
            let w = &p.data[i * d..(i + 1) * d];
            let a = p.data[m * d + i];
            prop_assert!((g[m * d + i] - s * dot(w, &x)).abs() < 1e-12);
            for j in 0..d {
                prop_assert!((g[i * d + j] - s * a * x[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_length_matches_layout(seed in any::<u64>(), arch in 0usize..4, asi in any::<bool>()) {
        let (_, spec) = all_architectures(5, Activation::Softplus).swap_remove(arch);
        let net = Network::new(spec.with_asi(asi)).unwrap();
        let p = net.init_params(&mut Rng::new(seed));
        let total: usize = p.layout.entries.iter().map(|e| e.len()).sum();
        prop_assert_eq!(total, p.layout.base_len);
        prop_assert_eq!(p.len(), if asi { 2 * total } else { total });
        let x = vec![0.5; net.input_dim()];
        prop_assert_eq!(net.grad(&p, &x).unwrap().len(), p.len());
    }
}
