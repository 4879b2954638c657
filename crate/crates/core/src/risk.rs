//! Prediction risk of the sign classifier `x -> sign(w'x)` and the excess-risk
//! gap that separates hypotheses with the wrong effective vector.
//!
//! Under the law of `h*`, `y w'x ~ N(w'w*, s2 w'(I - M_d)^{-1} w)`, so
//! `R(w) = P[y w'x <= 0] = (1 - erf(w'w* / sqrt(2 s2 w'(I - M_d)^{-1} w))) / 2`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{check_sigma2, scale_power_sum, structured_covariance_diagonal, ChainParams, ChainSampler};
use crate::error::{Error, Result};
use crate::hypothesis::{check_budget, hypothesis_at, ClassParams, Hypothesis};
use crate::info::{monte_carlo_mean, McEstimate};
use crate::special::erf;

/// Slack allowed when comparing an excess risk against the gap.
pub const RISK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskGapConstants {
    pub c0: f64,
    pub c1: f64,
    pub gap: f64,
    pub p: usize,
    pub d: usize,
    pub r: usize,
    pub c: f64,
    pub sigma: f64,
}

/// `w*'(I - M_d)^{-1} w*` on the class:
/// `(d+1)(1 - 2^-r) + ((1 - c^{2(d+1)})/(1 - c^2)) c^{2d} 2^-r`.
pub fn variance_term(class: ClassParams, c: f64) -> f64 {
    let tail = (-(class.r as f64)).exp2();
    let c2d = c.powi(2 * class.d as i32);
    let geometric = (1.0 - c.powi(2 * (class.d as i32 + 1))) / (1.0 - c * c);
    (class.d as f64 + 1.0) * (1.0 - tail) + geometric * c2d * tail
}

pub fn risk_gap_constants(class: ClassParams, sigma2: f64) -> Result<RiskGapConstants> {
    class.validate()?;
    check_sigma2(sigma2)?;
    let c = class.scale();
    let sigma = sigma2.sqrt();
    let tail = (-(class.r as f64)).exp2();
    let c2d = c.powi(2 * class.d as i32);
    let denom = sigma * (2.0 * variance_term(class, c)).sqrt();
    let c1 = (1.0 - tail + c2d * tail) / denom;
    let c0 = (1.0 - tail + c2d * (tail - (-(class.p as f64 - 2.0)).exp2())) / denom;
    Ok(RiskGapConstants { c0, c1, gap: (erf(c1) - erf(c0)) / 2.0, p: class.p, d: class.d, r: class.r, c, sigma })
}

/// `(erf(c1) - erf(c0)) / 2`.
pub fn excess_risk_lower_bound(class: ClassParams, sigma2: f64) -> Result<f64> {
    Ok(risk_gap_constants(class, sigma2)?.gap)
}

/// Risk of direction `w` when data follow `N(y w_star, cov)`.
pub fn exact_risk_general(w: &DVector<f64>, w_star: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if w.len() != w_star.len() || cov.shape() != (w.len(), w.len()) {
        return Err(Error::DimensionMismatch("risk inputs have inconsistent shapes".into()));
    }
    if w.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidParams("risk of the zero direction is undefined".into()));
    }
    let spread = (w.transpose() * cov * w)[0];
    Ok(0.5 * (1.0 - erf(w.dot(w_star) / (2.0 * spread).sqrt())))
}

/// Risk of a general network's effective direction under another network's law.
pub fn exact_risk_network(w: &DVector<f64>, truth: &ChainParams) -> Result<f64> {
    let cov = crate::chain::marginal_covariance(truth)?;
    exact_risk_general(w, &truth.network().effective_vector(), &cov)
}

fn check_same_class(h: &Hypothesis, g: &Hypothesis) -> Result<()> {
    if h.params() != g.params() || h.scale() != g.scale() {
        return Err(Error::ClassMismatch(format!("{} vs {}", h.params(), g.params())));
    }
    Ok(())
}

/// `R(h)` under the law of `h_star`, using the diagonal covariance of the class.
pub fn exact_risk(h: &Hypothesis, h_star: &Hypothesis, sigma2: f64) -> Result<f64> {
    check_same_class(h, h_star)?;
    check_sigma2(sigma2)?;
    let cov = structured_covariance_diagonal(h_star.params(), h_star.scale(), sigma2);
    let w = h.effective_vector();
    let w_star = h_star.effective_vector();
    let spread: f64 = cov.iter().zip(w.iter()).map(|(s, v)| s * v * v).sum();
    Ok(0.5 * (1.0 - erf(w.dot(&w_star) / (2.0 * spread).sqrt())))
}

/// `R(h) - R(h_star)`, exactly zero when the effective vectors coincide.
pub fn excess_risk(h: &Hypothesis, h_star: &Hypothesis, sigma2: f64) -> Result<f64> {
    check_same_class(h, h_star)?;
    if h.effective_pattern() == h_star.effective_pattern() {
        return Ok(0.0);
    }
    Ok(exact_risk(h, h_star, sigma2)? - exact_risk(h_star, h_star, sigma2)?)
}

/// Hypotheses other than `h_star` with the same effective vector. All of them
/// share `w0` with `h_star`, so only its sign block is scanned.
pub fn identifiability_set(h_star: &Hypothesis, budget: u128) -> Result<Vec<Hypothesis>> {
    let class = h_star.params();
    check_budget(class, budget)?;
    let layers = class.perms_per_layer().expect("within budget").pow(class.d as u32);
    let base = h_star.w0().mask() * layers;
    let target = h_star.effective_pattern();
    (base..base + layers)
        .map(|k| hypothesis_at(class, k))
        .filter(|h| h.as_ref().map_or(true, |h| h != h_star && h.effective_pattern() == target))
        .collect()
}

/// Which branch of the exhaustive case split a pair `(h, h*)` falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairCase {
    /// `h = h*`.
    Truth,
    /// Sign vectors differ, layers identical.
    SignsOnly,
    /// Sign vectors and layers differ, layer product identical.
    SignsAndLayers,
    /// Sign vectors and layer product differ.
    SignsAndProduct,
    /// Same sign vector and product, different layers: same effective vector.
    Unidentifiable,
    /// Same sign vector, different product.
    ProductOnly,
}

impl PairCase {
    pub fn number(self) -> u8 {
        match self {
            PairCase::Truth => 0,
            PairCase::SignsOnly => 1,
            PairCase::SignsAndLayers => 2,
            PairCase::SignsAndProduct => 3,
            PairCase::Unidentifiable => 4,
            PairCase::ProductOnly => 5,
        }
    }
}

pub fn classify_case(h: &Hypothesis, h_star: &Hypothesis) -> Result<PairCase> {
    check_same_class(h, h_star)?;
    let same_w0 = h.w0() == h_star.w0();
    let same_layers = h.layers() == h_star.layers();
    let same_product = h.composed_permutation() == h_star.composed_permutation();
    Ok(match (same_w0, same_layers, same_product) {
        (true, true, _) => PairCase::Truth,
        (false, true, _) => PairCase::SignsOnly,
        (false, false, true) => PairCase::SignsAndLayers,
        (false, false, false) => PairCase::SignsAndProduct,
        (true, false, true) => PairCase::Unidentifiable,
        (true, false, false) => PairCase::ProductOnly,
    })
}

/// `c0` numerator minus the largest inner product `w'w*` reachable with the
/// same signs and a different layer product (swapping the two smallest top
/// coordinates): `(3 - 2 sqrt 2) 2^-r - c^{2d} 2^-(p-2)`.
///
/// A negative value means some hypothesis of that kind has excess risk below
/// the gap. Returns `None` when `r = 1`, where no such hypothesis exists.
pub fn case5_margin(class: ClassParams) -> Option<f64> {
    if class.r < 2 {
        return None;
    }
    let c2d = class.scale().powi(2 * class.d as i32);
    let swap_drop = (3.0 - 2.0 * 2f64.sqrt()) * (-(class.r as f64)).exp2();
    Some(swap_drop - c2d * (-(class.p as f64 - 2.0)).exp2())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearApprox {
    /// First-order expansion of the gap, `(c1 - c0) / sqrt(pi)`.
    pub linearized: f64,
    /// The further weakened closed form
    /// `2^-(p-2) p^-2d / (sqrt(2 pi) s sqrt(d + 7/5))`.
    pub weak_bound: f64,
    /// Whether `r <= p/2 + 1`, the range where `weak_bound` was derived.
    pub weak_bound_valid: bool,
}

pub fn linear_approx_bound(class: ClassParams, sigma2: f64) -> Result<LinearApprox> {
    let k = risk_gap_constants(class, sigma2)?;
    let (p, d) = (class.p as f64, class.d as f64);
    let weak_bound =
        (-(p - 2.0)).exp2() * p.powi(-2 * class.d as i32) / ((2.0 * PI).sqrt() * k.sigma * (d + 1.4).sqrt());
    Ok(LinearApprox { linearized: (k.c1 - k.c0) / PI.sqrt(), weak_bound, weak_bound_valid: 2 * class.r <= class.p + 2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessRow {
    pub idx: u128,
    pub case: u8,
    pub excess_risk: f64,
    pub at_or_above_gap: bool,
}

/// Excess risk of every hypothesis of the class relative to `h_star`.
pub fn excess_risk_table(h_star: &Hypothesis, sigma2: f64, budget: u128) -> Result<Vec<ExcessRow>> {
    let class = h_star.params();
    let card = check_budget(class, budget)?;
    let gap = excess_risk_lower_bound(class, sigma2)?;
    let card = usize::try_from(card).map_err(|_| Error::InvalidParams("class too large".into()))?;
    (0..card)
        .into_par_iter()
        .map(|k| {
            let h = hypothesis_at(class, k as u128)?;
            let excess = excess_risk(&h, h_star, sigma2)?;
            Ok(ExcessRow {
                idx: k as u128,
                case: classify_case(&h, h_star)?.number(),
                excess_risk: excess,
                at_or_above_gap: excess >= gap - RISK_TOL,
            })
        })
        .collect()
}

pub const EXCESS_CSV_HEADER: &str = "idx,case,excess_risk,at_or_above_gap";

pub fn excess_rows_csv(rows: &[ExcessRow]) -> String {
    let mut out = String::from(EXCESS_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.idx,
            row.case,
            crate::format::fmt17(row.excess_risk),
            row.at_or_above_gap
        ));
    }
    out
}

/// Monte Carlo estimate of `P[y w'x <= 0]` with `(x, y)` drawn from `h_star`.
pub fn mc_risk_estimate(
    h: &Hypothesis,
    h_star: &Hypothesis,
    sigma2: f64,
    n_samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    check_same_class(h, h_star)?;
    let params = ChainParams::from_hypothesis(h_star, sigma2)?;
    let sampler = ChainSampler::new(&params);
    let w = h.effective_vector();
    monte_carlo_mean(n_samples, seed, 3, |rng| {
        let s = sampler.draw(rng);
        let margin: f64 = s.y.sign() * s.x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
        if margin <= 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

/// Sum of the geometric factor `sum_{j=0}^{d} c^{2j}`, exposed for checks of
/// the denominator's closed form.
pub fn lower_block_variance(c: f64, d: usize) -> f64 {
    1.0 + scale_power_sum(c, d)
}
