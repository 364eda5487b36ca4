//! Prior densities and conjugate hyperparameter updates.
//!
//! Gamma and exponential distributions use rates, inverse-gamma uses
//! `(shape, scale)`, and the second argument of every normal or lognormal is
//! a variance.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use statrs::function::gamma::ln_gamma;

use crate::data::{ClusterState, Hyperparameters};

/// Fixed constants of the prior hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    /// `κ ~ Gamma(kappa_shape, kappa_rate)`.
    pub kappa_shape: f64,
    pub kappa_rate: f64,
    /// `μ^σ ~ N(0, mu_sigma_var)`.
    pub mu_sigma_var: f64,
    /// `μ^ξ ~ N(0, mu_xi_var)`.
    pub mu_xi_var: f64,
    /// `θ^σ, θ^ξ ~ InvGamma(ig_shape, ig_scale)`.
    pub ig_shape: f64,
    pub ig_scale: f64,
    /// `θ^ε ~ Gamma(eps_shape, eps_rate)`.
    pub eps_shape: f64,
    pub eps_rate: f64,
    /// `γ_0 ~ Exp(gamma0_rate)`.
    pub gamma0_rate: f64,
    /// `β ~ Exp(beta_rate)`.
    pub beta_rate: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            kappa_shape: 1.0,
            kappa_rate: 0.001,
            mu_sigma_var: 1.0,
            mu_xi_var: 0.2,
            ig_shape: 1.0,
            ig_scale: 0.1,
            eps_shape: 5.0,
            eps_rate: 2.0,
            gamma0_rate: 0.001,
            beta_rate: 0.01,
        }
    }
}

#[inline]
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

#[inline]
pub fn lognormal_logpdf(x: f64, m: f64, var: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    normal_logpdf(x.ln(), m, var) - x.ln()
}

#[inline]
pub fn exp_logpdf(x: f64, rate: f64) -> f64 {
    if !(x >= 0.0) || x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    rate.ln() - rate * x
}

#[inline]
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if !(x > 0.0) || x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

#[inline]
pub fn inv_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    if !(x > 0.0) || x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Log-probability of an ordered set of `j` distinct centres among `k` sites.
pub fn log_centre_prior(k: usize, j: usize) -> f64 {
    if j == 0 || j > k {
        return f64::NEG_INFINITY;
    }
    ln_gamma((k - j) as f64 + 1.0) - ln_gamma(k as f64 + 1.0)
}

impl PriorSpec {
    pub fn log_sigma(&self, sigma: f64, h: &Hyperparameters) -> f64 {
        lognormal_logpdf(sigma, h.mu_sigma, h.theta_sigma)
    }

    pub fn log_xi(&self, xi: f64, h: &Hyperparameters) -> f64 {
        if !xi.is_finite() {
            return f64::NEG_INFINITY;
        }
        normal_logpdf(xi, h.mu_xi, h.theta_xi)
    }

    pub fn log_epsilon(&self, eps: f64, h: &Hyperparameters) -> f64 {
        exp_logpdf(eps, h.theta_epsilon)
    }

    pub fn log_gamma0(&self, gamma0: f64) -> f64 {
        if gamma0 == 0.0 {
            return f64::NEG_INFINITY;
        }
        exp_logpdf(gamma0, self.gamma0_rate)
    }

    pub fn log_beta(&self, beta: f64) -> f64 {
        if beta == 0.0 {
            return f64::NEG_INFINITY;
        }
        exp_logpdf(beta, self.beta_rate)
    }

    /// Hyperprior density of the hyperparameters.
    pub fn log_hyper(&self, h: &Hyperparameters) -> f64 {
        gamma_logpdf(h.kappa, self.kappa_shape, self.kappa_rate)
            + normal_logpdf(h.mu_sigma, 0.0, self.mu_sigma_var)
            + normal_logpdf(h.mu_xi, 0.0, self.mu_xi_var)
            + inv_gamma_logpdf(h.theta_sigma, self.ig_shape, self.ig_scale)
            + inv_gamma_logpdf(h.theta_xi, self.ig_shape, self.ig_scale)
            + gamma_logpdf(h.theta_epsilon, self.eps_shape, self.eps_rate)
    }

    /// `log P(J)` given `κ`: Poisson pmf of `J − 1`, truncated jointly with
    /// `κ` at `J ≤ K` so that `κ | J` stays conjugate.
    pub fn log_n_clusters(&self, j: usize, k: usize, kappa: f64) -> f64 {
        if j == 0 || j > k || !(kappa > 0.0) {
            return f64::NEG_INFINITY;
        }
        (j - 1) as f64 * kappa.ln() - kappa - ln_gamma(j as f64)
    }

    /// Full log prior of `state` for `k` sites. With one cluster only `γ_0`
    /// is present and no `ε` term enters.
    pub fn log_prior(&self, state: &ClusterState, k: usize) -> f64 {
        let j = state.n_clusters();
        let h = &state.hyper;
        if j == 0 || state.sigma.len() != j || state.xi.len() != j || state.epsilon.len() != j {
            return f64::NEG_INFINITY;
        }
        let mut lp = self.log_n_clusters(j, k, h.kappa) + log_centre_prior(k, j) + self.log_hyper(h);
        for c in 0..j {
            lp += self.log_sigma(state.sigma[c], h) + self.log_xi(state.xi[c], h);
        }
        if j > 1 {
            lp += state.epsilon.iter().map(|&e| self.log_epsilon(e, h)).sum::<f64>();
        } else if state.epsilon[0] != 0.0 {
            return f64::NEG_INFINITY;
        }
        lp += self.log_gamma0(state.gamma0) + self.log_beta(state.beta);
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    /// Normal full conditional `(mean, variance)` of a location parameter
    /// with prior `N(0, prior_var)` and observations `x_j ~ N(μ, theta)`.
    pub fn location_conditional(x: &[f64], theta: f64, prior_var: f64) -> (f64, f64) {
        let precision = 1.0 / prior_var + x.len() as f64 / theta;
        let mean = x.iter().sum::<f64>() / theta / precision;
        (mean, 1.0 / precision)
    }

    /// Inverse-gamma full conditional `(shape, scale)` of a variance.
    pub fn variance_conditional(&self, x: &[f64], mu: f64) -> (f64, f64) {
        let ss: f64 = x.iter().map(|v| (v - mu).powi(2)).sum();
        (self.ig_shape + x.len() as f64 / 2.0, self.ig_scale + ss / 2.0)
    }

    /// Conjugate draw of every hyperparameter, in the order κ, μ^σ, θ^σ,
    /// μ^ξ, θ^ξ, θ^ε.
    pub fn gibbs_hyper<R: Rng + ?Sized>(&self, state: &ClusterState, rng: &mut R) -> Hyperparameters {
        let j = state.n_clusters();
        let mut h = state.hyper;
        h.kappa = draw_gamma(rng, self.kappa_shape + (j - 1) as f64, self.kappa_rate + 1.0);

        let log_sigma: Vec<f64> = state.sigma.iter().map(|s| s.ln()).collect();
        let (m, v) = Self::location_conditional(&log_sigma, h.theta_sigma, self.mu_sigma_var);
        h.mu_sigma = draw_normal(rng, m, v);
        let (a, b) = self.variance_conditional(&log_sigma, h.mu_sigma);
        h.theta_sigma = 1.0 / draw_gamma(rng, a, b);

        let (m, v) = Self::location_conditional(&state.xi, h.theta_xi, self.mu_xi_var);
        h.mu_xi = draw_normal(rng, m, v);
        let (a, b) = self.variance_conditional(&state.xi, h.mu_xi);
        h.theta_xi = 1.0 / draw_gamma(rng, a, b);

        let (n_eps, sum_eps) = if j > 1 { (j as f64, state.epsilon.iter().sum::<f64>()) } else { (0.0, 0.0) };
        h.theta_epsilon = draw_gamma(rng, self.eps_shape + n_eps, self.eps_rate + sum_eps);
        h
    }

    pub fn draw_sigma<R: Rng + ?Sized>(&self, h: &Hyperparameters, rng: &mut R) -> f64 {
        draw_normal(rng, h.mu_sigma, h.theta_sigma).exp()
    }

    pub fn draw_xi<R: Rng + ?Sized>(&self, h: &Hyperparameters, rng: &mut R) -> f64 {
        draw_normal(rng, h.mu_xi, h.theta_xi)
    }

    pub fn draw_epsilon<R: Rng + ?Sized>(&self, h: &Hyperparameters, rng: &mut R) -> f64 {
        draw_exp(rng, h.theta_epsilon)
    }

    pub fn draw_gamma0<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        draw_exp(rng, self.gamma0_rate)
    }

    pub fn draw_beta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        draw_exp(rng, self.beta_rate)
    }
}

/// `log_prior` under the default prior constants.
pub fn log_prior(state: &ClusterState, k: usize) -> f64 {
    PriorSpec::default().log_prior(state, k)
}

/// Conjugate hyperparameter draw under the default prior constants.
pub fn gibbs_hyper<R: Rng + ?Sized>(state: &ClusterState, rng: &mut R) -> Hyperparameters {
    PriorSpec::default().gibbs_hyper(state, rng)
}

pub(crate) fn draw_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters").sample(rng)
}

pub(crate) fn draw_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    Normal::new(mean, var.sqrt()).expect("valid normal parameters").sample(rng)
}

pub(crate) fn draw_exp<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    Exp::new(rate).expect("valid exponential rate").sample(rng)
}
