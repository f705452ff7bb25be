use serde::{Deserialize, Serialize};

/// Nonlinearity applied to every hidden layer. The output layer is always the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sin,
    /// Piecewise linear; only first-order input derivatives are meaningful.
    Relu,
}

/// Number of closed-form derivatives evaluated per pre-activation entry: σ, σ', …, σ⁽⁵⁾.
/// Order-4 jets need σ⁽⁴⁾ forward and σ⁽⁵⁾ for their parameter gradients.
pub const DERIV_SLOTS: usize = 6;

impl Activation {
    /// Highest derivative order this activation supports in closed form.
    pub fn max_order(self) -> usize {
        match self {
            Activation::Tanh | Activation::Sin => DERIV_SLOTS - 1,
            Activation::Relu => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sin => "sin",
            Activation::Relu => "relu",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Activation::Tanh),
            "sin" => Some(Activation::Sin),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sin => z.sin(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// σ(z) and its first five derivatives.
    #[inline]
    pub fn derivatives(self, z: f64) -> [f64; DERIV_SLOTS] {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let t2 = t * t;
                let s = 1.0 - t2;
                [
                    t,
                    s,
                    -2.0 * t * s,
                    s * (6.0 * t2 - 2.0),
                    8.0 * s * t * (2.0 - 3.0 * t2),
                    8.0 * s * (2.0 - 15.0 * t2 + 15.0 * t2 * t2),
                ]
            }
            Activation::Sin => {
                let (s, c) = z.sin_cos();
                [s, c, -s, -c, s, c]
            }
            Activation::Relu => {
                let step = if z > 0.0 { 1.0 } else { 0.0 };
                [z.max(0.0), step, 0.0, 0.0, 0.0, 0.0]
            }
        }
    }
}
