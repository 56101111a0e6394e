//! Closed-form references: Black–Scholes call, lognormal density, heat
//! kernel. Independent of the finite-difference path; used heavily for
//! cross-validation.

use libm::{erfc, exp, log, sqrt};

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    exp(-0.5 * x * x) / sqrt(TWO_PI)
}

/// Black–Scholes call price with continuous rate `r` and dividend yield `q`.
pub fn black_scholes_call(spot: f64, strike: f64, r: f64, q: f64, sigma: f64, t: f64) -> f64 {
    if t <= 0.0 || sigma <= 0.0 {
        return (spot - strike).max(0.0);
    }
    if strike <= 0.0 {
        return spot * exp(-q * t);
    }
    let sig_sqrt = sigma * sqrt(t);
    let d1 = (log(spot / strike) + (r - q + 0.5 * sigma * sigma) * t) / sig_sqrt;
    let d2 = d1 - sig_sqrt;
    spot * exp(-q * t) * norm_cdf(d1) - strike * exp(-r * t) * norm_cdf(d2)
}

/// Density in `k` of the terminal price of a geometric Brownian motion,
/// discounted as in the strike-space density of call prices: the second
/// strike derivative of the Black–Scholes call equals
/// `exp(-r t) * lognormal(k)`.
pub fn lognormal_density(k: f64, spot: f64, r: f64, q: f64, sigma: f64, t: f64) -> f64 {
    if k <= 0.0 {
        return 0.0;
    }
    let sig_sqrt = sigma * sqrt(t);
    let mu = log(spot) + (r - q - 0.5 * sigma * sigma) * t;
    let z = (log(k) - mu) / sig_sqrt;
    norm_pdf(z) / (k * sig_sqrt)
}

/// Fundamental solution of `u_tau = a u_yy` with pole at the origin.
pub fn heat_kernel(y: f64, tau: f64, a: f64) -> f64 {
    exp(-y * y / (4.0 * a * tau)) / sqrt(2.0 * TWO_PI * a * tau)
}
