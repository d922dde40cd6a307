//! Closed-form test functions with exact partial derivatives of any order.

use crate::lattice::Point;
use crate::multiindex::MultiIndex;

#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    /// `sin(freq · t + phase)`
    Sin { freq: f64, phase: f64 },
    /// `exp(rate · t)`
    Exp { rate: f64 },
    /// `Σ c_k t^k`
    Poly(Vec<f64>),
}

impl Factor {
    pub fn derivative(&self, k: u32, t: f64) -> f64 {
        match self {
            Factor::Sin { freq, phase } => {
                freq.powi(k as i32) * (freq * t + phase + k as f64 * std::f64::consts::FRAC_PI_2).sin()
            }
            Factor::Exp { rate } => rate.powi(k as i32) * (rate * t).exp(),
            Factor::Poly(c) => {
                let mut acc = 0.0;
                for (p, &ck) in c.iter().enumerate().skip(k as usize) {
                    let falling: f64 = (0..k).map(|j| (p as u32 - j) as f64).product();
                    acc += ck * falling * t.powi((p as u32 - k) as i32);
                }
                acc
            }
        }
    }
}

/// `u(x) = Π_i g_i(x_i)`; `∂^α u = Π_i g_i^{(α_i)}(x_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Separable {
    pub factors: Vec<Factor>,
}

impl Separable {
    pub fn new(factors: Vec<Factor>) -> Self {
        Separable { factors }
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.factors
            .iter()
            .enumerate()
            .map(|(i, f)| f.derivative(0, x[i]))
            .product()
    }

    pub fn derivative(&self, alpha: &MultiIndex, x: &Point) -> f64 {
        assert_eq!(alpha.dim(), self.dim());
        self.factors
            .iter()
            .enumerate()
            .map(|(i, f)| f.derivative(alpha.get(i), x[i]))
            .product()
    }
}
