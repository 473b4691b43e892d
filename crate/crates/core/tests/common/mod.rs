#![allow(dead_code)]

use ntklab_core::{Activation, InputScaling, LayerSpec, Network, NetworkSpec, ParamVector, Rng};

pub fn fc(depth: usize, m: usize, d: usize, act: Activation) -> NetworkSpec {
    NetworkSpec::fully_connected(d, &vec![m; depth], act)
}

/// Two convolutions (filter 3) over an 8-pixel, single-channel input.
pub fn conv(m: usize, act: Activation) -> NetworkSpec {
    NetworkSpec {
        input_dim: 8,
        layers: vec![
            LayerSpec::Convolutional {
                filter: 3,
                channels: m,
                pixels: 8,
            },
            LayerSpec::Convolutional {
                filter: 3,
                channels: m,
                pixels: 8,
            },
        ],
        activation: act,
        asi: false,
        input_scaling: InputScaling::FanIn,
    }
}

/// A fully connected stem followed by three residual blocks.
pub fn residual(m: usize, d: usize, act: Activation) -> NetworkSpec {
    NetworkSpec {
        input_dim: d,
        layers: vec![
            LayerSpec::FullyConnected { width: m },
            LayerSpec::Residual { width: m },
            LayerSpec::Residual { width: m },
            LayerSpec::Residual { width: m },
        ],
        activation: act,
        asi: false,
        input_scaling: InputScaling::FanIn,
    }
}

/// Convolution feeding a dense layer.
pub fn mixed(m: usize, act: Activation) -> NetworkSpec {
    NetworkSpec {
        input_dim: 8,
        layers: vec![
            LayerSpec::Convolutional {
                filter: 3,
                channels: 2,
                pixels: 4,
            },
            LayerSpec::FullyConnected { width: m },
            LayerSpec::Residual { width: m },
        ],
        activation: act,
        asi: false,
        input_scaling: InputScaling::FanIn,
    }
}

pub fn all_architectures(m: usize, act: Activation) -> Vec<(&'static str, NetworkSpec)> {
    vec![
        ("fully-connected", fc(3, m, 4, act)),
        ("convolutional", conv(m, act)),
        ("residual", residual(m, 4, act)),
        ("conv-dense-residual", mixed(m, act)),
    ]
}

pub fn central_difference_grad(net: &Network, p: &ParamVector, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.len());
    let mut work = p.clone();
    for i in 0..p.len() {
        let orig = work.data[i];
        work.data[i] = orig + h;
        let up = net.forward(&work, x).unwrap();
        work.data[i] = orig - h;
        let down = net.forward(&work, x).unwrap();
        work.data[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Componentwise relative error `|a - b| / max(|a|, |b|, floor)` maximised over
/// components.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn random_points(rng: &mut Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| rng.normal_vec(d)).collect()
}

pub fn sphere_points(rng: &mut Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| rng.unit_vector(d)).collect()
}
