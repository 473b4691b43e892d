use serde::{Deserialize, Serialize};

/// Pointwise nonlinearity with its first and second derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Tanh,
    Sigmoid,
    /// Identity map. Only meant for closed-form test oracles.
    Linear,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }

    pub fn is_test_only(self) -> bool {
        matches!(self, Activation::Linear)
    }

    pub fn value(self, x: f64) -> f64 {
        match self {
            // ln(1 + e^x) = max(x, 0) + ln(1 + e^{-|x|})
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => logistic(x),
            Activation::Linear => x,
        }
    }

    pub fn d1(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => logistic(x),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = logistic(x);
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn d2(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                let s = logistic(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = logistic(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Linear => 0.0,
        }
    }
}
