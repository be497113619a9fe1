//! Zero-mean Gaussian convolved with a unit-width uniform.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::density::IntervalMass;
use crate::tensor::Scalar;

/// Standard normal cumulative.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal upper tail `1 − Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Φ((½ − |y|)/σ) − Φ((−½ − |y|)/σ)`, evaluated on the lower side of the
/// distribution where it does not cancel.
pub fn noisy_likelihood<T: Scalar>(value: T, scale: T) -> T {
    let (y, s) = (value.f64().abs(), scale.f64());
    T::of(normal_cdf((0.5 - y) / s) - normal_cdf((-0.5 - y) / s))
}

/// Likelihood and its partial derivatives with respect to value and scale.
pub fn noisy_likelihood_grad<T: Scalar>(value: T, scale: T) -> (T, T, T) {
    let (v, s) = (value.f64(), scale.f64());
    let y = v.abs();
    let (u, l) = ((0.5 - y) / s, (-0.5 - y) / s);
    let lik = normal_cdf(u) - normal_cdf(l);
    let (pu, pl) = (normal_pdf(u), normal_pdf(l));
    let d_abs = (pl - pu) / s;
    let d_value = if v < 0.0 { -d_abs } else { d_abs };
    let d_scale = (-pu * u + pl * l) / s;
    (T::of(lik), T::of(d_value), T::of(d_scale))
}

/// Zero-mean Gaussian base density with standard deviation `scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub scale: f64,
}

impl IntervalMass for Gaussian {
    fn mass(&self, a: f64, b: f64) -> f64 {
        if a >= b {
            return 0.0;
        }
        let (za, zb) = (a / self.scale, b / self.scale);
        if za + zb > 0.0 {
            (normal_sf(za) - normal_sf(zb)).max(0.0)
        } else {
            (normal_cdf(zb) - normal_cdf(za)).max(0.0)
        }
    }
}
