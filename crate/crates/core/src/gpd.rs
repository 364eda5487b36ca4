//! Generalized Pareto density for threshold excesses, with analytic first
//! and second derivatives in `(σ, ξ)`.

use crate::error::{Error, Result};

/// Below this `|ξ|` the log-density uses its series about the exponential limit.
pub const XI_TOL: f64 = 1e-6;

/// Below this `|ξ y / σ|` the ξ-derivatives use power series.
const SERIES_SWITCH: f64 = 0.05;
const SERIES_TERMS: usize = 30;

/// Log-density of GPD(σ, ξ) at excess `y > 0`; `−∞` outside the support.
pub fn gpd_logpdf(y: f64, sigma: f64, xi: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("GPD scale must be positive, got {sigma}")));
    }
    Ok(logpdf(y, sigma, xi))
}

/// Unchecked log-density; `sigma` must be positive.
#[inline]
pub fn logpdf(y: f64, sigma: f64, xi: f64) -> f64 {
    let t = y / sigma;
    if xi.abs() < XI_TOL {
        return -sigma.ln() - t + xi * (0.5 * t * t - t) + xi * xi * (0.5 * t * t - t * t * t / 3.0);
    }
    let x = xi * t;
    if x <= -1.0 {
        return f64::NEG_INFINITY;
    }
    -sigma.ln() - (1.0 + 1.0 / xi) * x.ln_1p()
}

/// `g(x)/x²` with `g(x) = log(1+x) − x/(1+x)`.
fn g_over_x2(x: f64) -> f64 {
    if x.abs() < SERIES_SWITCH {
        let mut sum = 0.0;
        let mut pow = 1.0;
        for k in 0..SERIES_TERMS {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (k as f64 + 1.0) / (k as f64 + 2.0) * pow;
            pow *= x;
        }
        sum
    } else {
        (x.ln_1p() - x / (1.0 + x)) / (x * x)
    }
}

/// `h(x) = −2 log(1+x)/x³ + 2/(x²(1+x)) + 1/(x(1+x)²)`.
fn h(x: f64) -> f64 {
    if x.abs() < SERIES_SWITCH {
        let mut sum = 0.0;
        let mut pow = 1.0;
        for k in 0..SERIES_TERMS {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let kf = k as f64;
            sum += sign * (-2.0 / (kf + 3.0) - kf) * pow;
            pow *= x;
        }
        sum
    } else {
        let l = x.ln_1p();
        let x1 = 1.0 + x;
        -2.0 * l / (x * x * x) + 2.0 / (x * x * x1) + 1.0 / (x * x1 * x1)
    }
}

/// Log-density, gradient and Hessian at one excess. Returns `None` outside
/// the support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

pub fn derivatives(y: f64, sigma: f64, xi: f64) -> Option<Derivatives> {
    let t = y / sigma;
    let x = xi * t;
    if x <= -1.0 {
        return None;
    }
    let a = sigma + xi * y;
    let value = logpdf(y, sigma, xi);
    let d_sigma = (y - sigma) / (sigma * a);
    let d_xi = t * t * g_over_x2(x) - t / (1.0 + x);
    let d_ss = (-sigma * a - (y - sigma) * (a + sigma)) / (sigma * a).powi(2);
    let d_sx = -(y - sigma) * y / (sigma * a * a);
    let d_xx = t * t * t * h(x) + t * t / ((1.0 + x) * (1.0 + x));
    Some(Derivatives { value, grad: [d_sigma, d_xi], hess: [[d_ss, d_sx], [d_sx, d_xx]] })
}

/// Survival function `P(Y > y)`.
pub fn sf(y: f64, sigma: f64, xi: f64) -> f64 {
    if y <= 0.0 {
        return 1.0;
    }
    let t = y / sigma;
    if xi.abs() < XI_TOL {
        return (-t).exp();
    }
    let base = 1.0 + xi * t;
    if base <= 0.0 {
        0.0
    } else {
        (-(1.0 / xi) * base.ln()).exp()
    }
}

pub fn cdf(y: f64, sigma: f64, xi: f64) -> f64 {
    1.0 - sf(y, sigma, xi)
}

/// Inverse CDF: `y = σ((1 − p)^{−ξ} − 1)/ξ`, `−σ log(1 − p)` when `ξ = 0`.
pub fn quantile(p: f64, sigma: f64, xi: f64) -> f64 {
    from_uniform(1.0 - p, sigma, xi)
}

/// Draw from a uniform on `(0, 1)` through the inverse CDF written in terms
/// of the upper tail `U`: `y = σ(U^{−ξ} − 1)/ξ`.
pub fn from_uniform(s: f64, sigma: f64, xi: f64) -> f64 {
    if xi.abs() < XI_TOL {
        -sigma * s.ln()
    } else {
        sigma * (-xi * s.ln()).exp_m1() / xi
    }
}

/// Sum of log-densities over `values`; `−∞` if any point is off the support.
#[inline]
pub fn loglik(values: impl IntoIterator<Item = f64>, sigma: f64, xi: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut ll = 0.0;
    for y in values {
        ll += logpdf(y, sigma, xi);
    }
    if ll.is_nan() {
        f64::NEG_INFINITY
    } else {
        ll
    }
}
