//! KL divergences between chain laws, the KL-to-prior bound, the pairwise
//! mutual-information cap, and Monte Carlo estimators used to check them.
//!
//! All joint laws of `(x, y)` put mass 1/2 on each label, so a KL between two
//! of them is the average of the two conditional KLs. When the laws share a
//! covariance the two halves coincide.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{
    check_sigma2, marginal_covariance, scale_power_sum, ChainParams, ChainSampler, GaussianDist, Label, MarginalLaw,
};
use crate::error::{Error, Result};
use crate::hypothesis::{check_budget, enumerate_class, ClassParams, GeneralNetwork, Hypothesis};
use crate::rng::{self, Domain};

/// Above this many ordered pairs the MI cap falls back to `2n / s2`.
pub const MAX_MI_PAIRS: u128 = 1_000_000;

/// Minimum Monte Carlo sample count.
pub const MIN_MC_SAMPLES: u64 = 1000;

const MC_CHUNK: u64 = 8192;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub exact: f64,
    pub bound: f64,
    pub mc_estimate: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub n_samples: Option<u64>,
    pub seed: Option<u64>,
}

impl KlReport {
    fn new(exact: f64, bound: f64) -> Self {
        assert!(exact >= 0.0, "negative KL {exact}");
        assert!(exact <= bound + 1e-12, "KL {exact} exceeds its cap {bound}");
        Self { exact, bound, mc_estimate: None, mc_stderr: None, n_samples: None, seed: None }
    }

    pub fn with_monte_carlo(mut self, mc: McEstimate, seed: u64) -> Self {
        self.mc_estimate = Some(mc.estimate);
        self.mc_stderr = Some(mc.stderr);
        self.n_samples = Some(mc.n_samples);
        self.seed = Some(seed);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: u64,
}

impl McEstimate {
    /// Number of standard errors separating the estimate from `value`.
    pub fn z_score(&self, value: f64) -> f64 {
        if self.stderr == 0.0 {
            if self.estimate == value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.estimate - value).abs() / self.stderr
        }
    }
}

/// `KL(P || Q)` for multivariate normals.
pub fn kl_gaussian(p: &GaussianDist, q: &GaussianDist) -> Result<f64> {
    let k = p.dim();
    if q.dim() != k {
        return Err(Error::DimensionMismatch(format!("KL between dimensions {k} and {}", q.dim())));
    }
    let lq = q.cholesky_factor();
    // tr(Sq^{-1} Sp) = |Lq^{-1} Lp|_F^2, mean term = |Lq^{-1} (mq - mp)|^2.
    let x = lq
        .solve_lower_triangular(p.cholesky_factor())
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let delta = q.mean() - p.mean();
    let u = lq
        .solve_lower_triangular(&delta)
        .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let kl = 0.5 * (x.norm_squared() + u.norm_squared() + q.log_det() - p.log_det() - k as f64);
    Ok(kl.max(0.0))
}

fn check_same_class(h: &Hypothesis, g: &Hypothesis) -> Result<()> {
    if h.params() != g.params() || h.scale() != g.scale() {
        return Err(Error::ClassMismatch(format!(
            "{} (c = {}) vs {} (c = {})",
            h.params(),
            h.scale(),
            g.params(),
            g.scale()
        )));
    }
    Ok(())
}

/// Diagonal of `I - M_d` on the structured class.
pub(crate) fn structured_precision_diagonal(class: ClassParams, c: f64) -> DVector<f64> {
    let top = 1.0 / (class.d as f64 + 1.0);
    let bottom = 1.0 / (1.0 + scale_power_sum(c, class.d));
    DVector::from_iterator(class.p, (0..class.p).map(|i| if i < class.r { top } else { bottom }))
}

/// `(1/(2 s2)) (w - w')' (I - M_d) (w - w')`.
pub fn kl_pair_exact(h: &Hypothesis, g: &Hypothesis, sigma2: f64) -> Result<f64> {
    check_same_class(h, g)?;
    check_sigma2(sigma2)?;
    let diag = structured_precision_diagonal(h.params(), h.scale());
    let delta = h.effective_vector() - g.effective_vector();
    Ok(quadratic_diag(&diag, &delta) / (2.0 * sigma2))
}

fn quadratic_diag(diag: &DVector<f64>, v: &DVector<f64>) -> f64 {
    diag.iter().zip(v.iter()).map(|(a, x)| a * x * x).sum()
}

pub fn kl_pair_in_class(h: &Hypothesis, g: &Hypothesis, sigma2: f64) -> Result<KlReport> {
    let exact = kl_pair_exact(h, g, sigma2)?;
    Ok(KlReport::new(exact, 2.0 / sigma2))
}

/// KL between the joint laws of two arbitrary networks, via the generic
/// Gaussian formula averaged over the label.
pub fn kl_networks(a: &ChainParams, b: &ChainParams) -> Result<f64> {
    let la = MarginalLaw::new(a)?;
    let lb = MarginalLaw::new(b)?;
    let pos = kl_gaussian(&la.conditional(Label::Pos), &lb.conditional(Label::Pos))?;
    let neg = kl_gaussian(&la.conditional(Label::Neg), &lb.conditional(Label::Neg))?;
    Ok(0.5 * (pos + neg))
}

/// Singular values of each layer, largest first.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularProfile {
    layers: Vec<Vec<f64>>,
}

impl SingularProfile {
    pub fn new(layers: Vec<Vec<f64>>) -> Result<Self> {
        if layers.is_empty() || layers.iter().any(Vec::is_empty) {
            return Err(Error::InvalidParams("singular profile must have non-empty layers".into()));
        }
        for (l, values) in layers.iter().enumerate() {
            if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidParams(format!(
                    "layer {} has a negative or non-finite singular value",
                    l + 1
                )));
            }
            if values.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::InvalidParams(format!("layer {} singular values are not non-increasing", l + 1)));
            }
        }
        Ok(Self { layers })
    }

    pub fn from_network(net: &GeneralNetwork) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|w| {
                let mut sv: Vec<f64> = w.clone().svd(false, false).singular_values.iter().copied().collect();
                sv.sort_by(|a, b| b.total_cmp(a));
                sv
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }
}

/// `m_{1,i} = d_{1,i}^2`, `m_{l,i} = d_{l,i}^2 (m_{l-1,1} + 1)`; returns `m_{d,.}`.
pub fn m_recursion(profile: &SingularProfile) -> Vec<f64> {
    let mut layers = profile.layers.iter();
    let first = layers.next().expect("profile is non-empty");
    let mut m: Vec<f64> = first.iter().map(|d| d * d).collect();
    for values in layers {
        let lead = m[0] + 1.0;
        m = values.iter().map(|d| d * d * lead).collect();
    }
    m
}

/// Upper bound on `KL(P_(x,y) || N(0, t2 I) x Uniform{+-1})`.
pub fn kl_to_prior_bound(net: &GeneralNetwork, sigma2: f64, tau2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    check_sigma2(tau2)?;
    let p = net.output_dim() as f64;
    let m_sum: f64 = m_recursion(&SingularProfile::from_network(net)).iter().sum();
    let w = net.effective_vector();
    Ok(0.5 * ((sigma2 / tau2) * (p + m_sum) + w.norm_squared() / tau2 + p * (tau2 / sigma2).ln() - p))
}

/// Exact `KL(P_(x,y) || N(0, t2 I) x Uniform{+-1})`.
pub fn kl_to_prior_exact(params: &ChainParams, tau2: f64) -> Result<f64> {
    check_sigma2(tau2)?;
    let cov = marginal_covariance(params)?;
    let k = cov.nrows();
    let w = params.network().effective_vector();
    let prior = GaussianDist::new(DVector::zeros(k), DMatrix::identity(k, k) * tau2)?;
    // Both label halves give the same value because the prior is centred.
    kl_gaussian(&GaussianDist::new(w, cov)?, &prior)
}

/// Mean pairwise KL over the class, or `None` above [`MAX_MI_PAIRS`].
pub fn mean_pairwise_kl(class: ClassParams, sigma2: f64) -> Result<Option<f64>> {
    check_sigma2(sigma2)?;
    let card = match check_budget(class, MAX_MI_PAIRS) {
        Ok(card) if card.checked_mul(card).is_some_and(|pairs| pairs <= MAX_MI_PAIRS) => card,
        Ok(_) | Err(Error::BudgetExceeded { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let diag = structured_precision_diagonal(class, class.scale());
    let vectors: Vec<DVector<f64>> = enumerate_class(class, card)?.map(|h| h.effective_vector()).collect();
    let rows: Vec<f64> = vectors
        .par_iter()
        .map(|a| pairwise_sum(&vectors.iter().map(|b| quadratic_diag(&diag, &(a - b))).collect::<Vec<_>>()))
        .collect();
    let total = pairwise_sum(&rows) / (2.0 * sigma2);
    Ok(Some(total / (card * card) as f64))
}

/// Upper bound on `I(h; S)` for `n` samples under the uniform prior.
pub fn mi_upper_bound_pairwise(class: ClassParams, sigma2: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParams("n must be at least 1".into()));
    }
    let cap = 2.0 * n as f64 / sigma2;
    Ok(match mean_pairwise_kl(class, sigma2)? {
        Some(mean) => (n as f64 * mean).min(cap),
        None => cap,
    })
}

/// Recursive pairwise summation; the result depends only on the order of
/// `values`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        values.iter().sum()
    } else {
        let (a, b) = values.split_at(values.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Self) -> Self {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Self {
            n,
            mean: self.mean + delta * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64,
        }
    }
}

/// Averages `f` over `n_samples` draws. Chunks of a fixed size use their own
/// stream and are merged in chunk order, so the result does not depend on the
/// number of worker threads.
pub fn monte_carlo_mean<F>(n_samples: u64, seed: u64, tag: u64, f: F) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::InvalidParams(format!(
            "Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {n_samples}"
        )));
    }
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(seed, Domain::MonteCarlo, tag, k);
            let len = MC_CHUNK.min(n_samples - k * MC_CHUNK);
            let mut m = Moments::default();
            for _ in 0..len {
                m.push(f(&mut rng));
            }
            m
        })
        .collect();
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    let var = total.m2 / (total.n - 1) as f64;
    Ok(McEstimate { estimate: total.mean, stderr: (var / total.n as f64).sqrt(), n_samples })
}

/// `E_P[ln p(x) - ln q(x)]` with `x ~ P`.
pub fn mc_kl_gaussian(p: &GaussianDist, q: &GaussianDist, n_samples: u64, seed: u64) -> Result<McEstimate> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch("KL between different dimensions".into()));
    }
    monte_carlo_mean(n_samples, seed, 1, |rng| {
        let x = p.sample(rng);
        p.log_density(x.as_slice()) - q.log_density(x.as_slice())
    })
}

/// Monte Carlo KL between the joint laws of two hypotheses, drawing `(x, y)`
/// by running the first hypothesis' chain.
pub fn mc_kl_estimate(h: &Hypothesis, g: &Hypothesis, sigma2: f64, n_samples: u64, seed: u64) -> Result<McEstimate> {
    check_same_class(h, g)?;
    let params = ChainParams::from_hypothesis(h, sigma2)?;
    let sampler = ChainSampler::new(&params);
    let lh = MarginalLaw::for_hypothesis(h, sigma2)?;
    let lg = MarginalLaw::for_hypothesis(g, sigma2)?;
    monte_carlo_mean(n_samples, seed, 2, |rng| {
        let s = sampler.draw(rng);
        lh.log_density(&s.x, s.y) - lg.log_density(&s.x, s.y)
    })
}

pub fn kl_pair_with_mc(h: &Hypothesis, g: &Hypothesis, sigma2: f64, n_samples: u64, seed: u64) -> Result<KlReport> {
    let report = kl_pair_in_class(h, g, sigma2)?;
    let mc = mc_kl_estimate(h, g, sigma2, n_samples, seed)?;
    Ok(report.with_monte_carlo(mc, seed))
}
