//! Gamma and Beta variates, plus the Beta density and distribution function.
//!
//! Gamma draws use the Marsaglia-Tsang squeeze method. Shapes below one are
//! boosted: `G(a) = G(a + 1) * U^(1/a)`. The boosted branch is carried out in
//! log space because `U^(1/a)` underflows for the small shapes produced by
//! clamping.

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

/// Natural log of a Gamma(`shape`, 1) variate.
pub fn ln_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let boosted = ln_gamma_variate(rng, shape + 1.0);
        let u: f64 = rng.sample(Open01);
        return boosted + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x: f64 = rng.sample(StandardNormal);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u: f64 = rng.sample(Open01);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

pub fn gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    ln_gamma_variate(rng, shape).exp()
}

/// Smallest and largest values a Beta draw may return.
pub const T_MIN: f64 = f64::EPSILON;
pub const T_MAX: f64 = 1.0 - f64::EPSILON;

/// One Beta(`alpha`, `beta`) draw as `g1 / (g1 + g2)`, strictly inside (0, 1).
pub fn beta_variate<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64) -> f64 {
    let lg1 = ln_gamma_variate(rng, alpha);
    let lg2 = ln_gamma_variate(rng, beta);
    // g1 / (g1 + g2) = 1 / (1 + exp(lg2 - lg1))
    let t = 1.0 / (1.0 + (lg2 - lg1).exp());
    if t.is_nan() {
        // both variates underflowed to zero in log space; the ratio is 1/2 in the limit
        return 0.5;
    }
    t.clamp(T_MIN, T_MAX)
}

pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Beta density; `t` outside (0, 1) has density zero.
pub fn beta_pdf(t: f64, a: f64, b: f64) -> f64 {
    if !(t > 0.0 && t < 1.0) {
        return 0.0;
    }
    ((a - 1.0) * t.ln() + (b - 1.0) * (-t).ln_1p() - ln_beta_fn(a, b)).exp()
}

/// Regularized incomplete beta function `I_t(a, b)`.
pub fn beta_cdf(t: f64, a: f64, b: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else if t > 0.5 {
        // statrs snaps arguments within a few ulps of 1 to exactly 1, which
        // erases the mass a small second shape puts in [T_MAX, 1); `1 - t`
        // is exact here
        1.0 - beta_reg(b, a, 1.0 - t)
    } else {
        beta_reg(a, b, t)
    }
}
