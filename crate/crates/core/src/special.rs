//! Special functions.
//!
//! `erf` is backed by the `libm` port of the FreeBSD msun implementation,
//! whose documented error is below one ulp. In double precision that is an
//! absolute error under `1.2e-16` for `|erf(x)| <= 1`.

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}
