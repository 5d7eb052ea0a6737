use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.05;
pub const DEFAULT_SWISH_BETA: f64 = 1.0;

/// Element-wise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Swish { beta: f64 },
    Gelu,
    Identity,
}

impl Activation {
    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu {
            alpha: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn swish() -> Self {
        Activation::Swish {
            beta: DEFAULT_SWISH_BETA,
        }
    }

    /// Parses names such as `relu`, `leaky_relu`, `swish`, `gelu`, `identity`.
    /// `param` overrides the slope / beta where one applies.
    pub fn from_name(name: &str, param: Option<f64>) -> Option<Self> {
        Some(match name {
            "relu" => Activation::Relu,
            "leaky_relu" => Activation::LeakyRelu {
                alpha: param.unwrap_or(DEFAULT_LEAKY_SLOPE),
            },
            "swish" => Activation::Swish {
                beta: param.unwrap_or(DEFAULT_SWISH_BETA),
            },
            "gelu" => Activation::Gelu,
            "identity" => Activation::Identity,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Swish { .. } => "swish",
            Activation::Gelu => "gelu",
            Activation::Identity => "identity",
        }
    }

    pub fn param(&self) -> f64 {
        match *self {
            Activation::LeakyRelu { alpha } => alpha,
            Activation::Swish { beta } => beta,
            _ => 0.0,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Swish { beta } => x * sigmoid(beta * x),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2)),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation. ReLU-type kinks take the
    /// left derivative at 0.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Swish { beta } => {
                let s = sigmoid(beta * x);
                s + beta * x * s * (1.0 - s)
            }
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
                cdf + x * pdf
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let out: Vec<f64> = [-1.0, 0.0, 2.0].iter().map(|&x| Activation::Relu.apply(x)).collect();
        assert_eq!(out, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn defaults() {
        assert_eq!(Activation::leaky_relu(), Activation::LeakyRelu { alpha: 0.05 });
        assert_eq!(Activation::swish(), Activation::Swish { beta: 1.0 });
        assert_eq!(Activation::from_name("leaky_relu", None), Some(Activation::leaky_relu()));
        assert_eq!(Activation::from_name("tanh", None), None);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let kinds = [
            Activation::Relu,
            Activation::leaky_relu(),
            Activation::swish(),
            Activation::Gelu,
            Activation::Identity,
        ];
        let h = 1e-6;
        for act in kinds {
            for &x in &[-2.3, -0.7, 0.4, 1.9] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }
}
