use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => relu_scalar(x),
            Activation::Sigmoid => sigmoid_scalar(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output `y = apply(z)`.
    #[inline]
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => relu_derivative(z),
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn apply_in_place(self, xs: &mut [f64]) {
        if self != Activation::Identity {
            for x in xs {
                *x = self.apply(*x);
            }
        }
    }
}

#[inline]
pub fn relu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Subgradient convention: 0 at exactly zero.
#[inline]
pub fn relu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Logistic function, evaluated without overflow for either sign.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().copied().map(relu_scalar).collect()
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().copied().map(sigmoid_scalar).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        let x = [-3.0, 0.5, 7.0, -0.0];
        assert_eq!(relu(&relu(&x)), relu(&x));
        assert_eq!(relu_derivative(1.5), 1.0);
        assert_eq!(relu_derivative(-1.5), 0.0);
        assert_eq!(relu_derivative(0.0), 0.0);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        for x in [-30.0, -2.5, -1e-3, 0.7, 12.0, 40.0] {
            assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() <= 1e-12);
        }
        // e^-800 is below the smallest subnormal, so the stable branch returns
        // exactly 0 rather than NaN.
        let tiny = sigmoid_scalar(-800.0);
        assert!(tiny.is_finite() && (0.0..=1e-300).contains(&tiny));
        assert_eq!(sigmoid_scalar(800.0), 1.0);
        // Closest representable case stays strictly positive.
        assert!(sigmoid_scalar(-700.0) > 0.0);
    }

    #[test]
    fn derivatives_from_outputs() {
        let z = 0.3;
        let s = Activation::Sigmoid;
        let y = s.apply(z);
        let fd = (s.apply(z + 1e-6) - s.apply(z - 1e-6)) / 2e-6;
        assert!((s.derivative(z, y) - fd).abs() < 1e-9);
        let t = Activation::Tanh;
        let y = t.apply(z);
        let fd = (t.apply(z + 1e-6) - t.apply(z - 1e-6)) / 2e-6;
        assert!((t.derivative(z, y) - fd).abs() < 1e-9);
    }
}
