//! KL divergence between a zero-mean Gaussian prior `p` (standard deviation
//! sigma) and a Gumbel density `q` with scale beta:
//!
//! ```text
//! p(x) = exp(-x^2 / 2 sigma^2) / sqrt(2 pi sigma^2)
//! q(x) = exp(-x/beta - exp(-x/beta)) / beta
//! KL(p || q) = -ln(2 pi sigma^2)/2 + ln beta - 1/2 + exp(sigma^2 / 2 beta^2)
//! ```
//!
//! The closed form takes no data argument: the divergence depends only on the
//! two scales. The numeric routines evaluate `E_p[ln p - ln q]` directly.

use std::f64::consts::PI;

use crate::diffnum::Rng;
use crate::error::{Error, Result};

/// Half-width of the quadrature window, in units of sigma.
pub const QUAD_HALF_WIDTH: f64 = 12.0;
const QUAD_PANELS: usize = 96;
const QUAD_TOL: f64 = 1e-13;
const MAX_DEPTH: u32 = 40;
pub const MIN_MC_SAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlParams {
    sigma: f64,
    beta: f64,
}

impl KlParams {
    pub fn new(sigma: f64, beta: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma and beta must be positive and finite, got sigma={sigma}, beta={beta}"
            )));
        }
        Ok(KlParams { sigma, beta })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ln_p(&self, x: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        -0.5 * (2.0 * PI * s2).ln() - x * x / (2.0 * s2)
    }

    pub fn ln_q(&self, x: f64) -> f64 {
        let t = x / self.beta;
        -self.beta.ln() - t - (-t).exp()
    }

    pub fn p(&self, x: f64) -> f64 {
        self.ln_p(x).exp()
    }
}

pub fn kl_closed_form(p: &KlParams) -> f64 {
    let (s, b) = (p.sigma, p.beta);
    -0.5 * (2.0 * PI * s * s).ln() + b.ln() - 0.5 + (s * s / (2.0 * b * b)).exp()
}

/// `E_p[e^{-x/beta}] = exp(sigma^2 / 2 beta^2)`, the Gaussian moment generating
/// function at `-1/beta`.
pub fn gumbel_tail_moment(p: &KlParams) -> f64 {
    (p.sigma * p.sigma / (2.0 * p.beta * p.beta)).exp()
}

fn simpson_rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`, started from `panels`
/// equal sub-intervals so narrow peaks are not stepped over.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == panels { b } else { lo + h };
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_rec(f, lo, hi, fa, fm, fb, whole, tol / panels as f64, MAX_DEPTH)
        })
        .sum()
}

/// `E_p[g(x)]` by quadrature over `[-12 sigma, 12 sigma]`.
pub fn gaussian_expectation(p: &KlParams, g: &dyn Fn(f64) -> f64) -> f64 {
    let w = QUAD_HALF_WIDTH * p.sigma;
    adaptive_simpson(&|x| p.p(x) * g(x), -w, w, QUAD_PANELS, QUAD_TOL)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KlMethod {
    Quadrature,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    /// Standard error of a Monte Carlo estimate.
    pub std_error: Option<f64>,
}

pub fn kl_numeric(p: &KlParams, method: KlMethod) -> Result<KlEstimate> {
    let log_ratio = |x: f64| p.ln_p(x) - p.ln_q(x);
    match method {
        KlMethod::Quadrature => Ok(KlEstimate { value: gaussian_expectation(p, &log_ratio), std_error: None }),
        KlMethod::MonteCarlo { samples, seed } => {
            if samples < MIN_MC_SAMPLES {
                return Err(Error::InvalidArgument(format!(
                    "Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {samples}"
                )));
            }
            let mut rng = Rng::new(seed);
            // Welford running mean and variance
            let (mut mean, mut m2) = (0.0, 0.0);
            for i in 0..samples {
                let v = log_ratio(p.sigma * rng.normal());
                let d = v - mean;
                mean += d / (i + 1) as f64;
                m2 += d * (v - mean);
            }
            let var = m2 / (samples - 1) as f64;
            Ok(KlEstimate { value: mean, std_error: Some((var / samples as f64).sqrt()) })
        }
    }
}

#[cfg(test)]
mod tests;
