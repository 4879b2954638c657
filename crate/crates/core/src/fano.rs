//! Fano and distance-based Fano lower bounds on decoder failure, the `rho`
//! metric on the class, and the sample-size thresholds they imply.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::check_sigma2;
use crate::error::{Error, Result};
use crate::hypothesis::{enumerate_class, ln_factorial, ClassParams, Hypothesis};

const LN_2: f64 = std::f64::consts::LN_2;

/// `max(0, 1 - (mi + ln 2) / ln|F|)`.
pub fn fano_failure_lower_bound(mi_upper: f64, log_cardinality: f64) -> f64 {
    fano_raw(mi_upper, log_cardinality).max(0.0)
}

/// The unclipped Fano expression, negative when the inequality is vacuous.
pub fn fano_raw(mi_upper: f64, log_cardinality: f64) -> f64 {
    assert!(log_cardinality > 0.0, "log cardinality must be positive");
    1.0 - (mi_upper + LN_2) / log_cardinality
}

/// Largest `n` for which Fano with the `2n/s2` cap still gives failure >= 1/2:
/// `s2 [d sum ln i + p ln 2 - ln 4] / 4`.
pub fn threshold_exact_recovery(class: ClassParams, sigma2: f64) -> f64 {
    sigma2 * (class.d as f64 * ln_factorial(class.r) + class.p as f64 * LN_2 - 4f64.ln()) / 4.0
}

/// Same threshold for the positive-excess-risk event: one factor of
/// `sum ln i` instead of `d`.
pub fn threshold_excess_risk(p: usize, r: usize, sigma2: f64) -> Result<f64> {
    ClassParams::new(p, 1, r)?;
    Ok(sigma2 * (ln_factorial(r) + p as f64 * LN_2 - 4f64.ln()) / 4.0)
}

/// `1{layers differ} + 1{effective vectors differ}`, compared symbolically.
pub fn rho_distance(h: &Hypothesis, g: &Hypothesis) -> Result<u8> {
    if h.params() != g.params() || h.scale() != g.scale() {
        return Err(Error::ClassMismatch(format!("{} vs {}", h.params(), g.params())));
    }
    let structural = h != g;
    let effective = h.effective_pattern() != g.effective_pattern();
    Ok(u8::from(structural) + u8::from(effective))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighborhoods {
    pub max: u128,
    pub min: u128,
}

/// Largest and smallest `|{g : rho(h, g) <= t}|` over all centres `h`.
pub fn neighborhood_sizes(class: ClassParams, t: u8, budget: u128) -> Result<Neighborhoods> {
    let all: Vec<Hypothesis> = enumerate_class(class, budget)?.collect();
    let patterns: Vec<_> = all.iter().map(Hypothesis::effective_pattern).collect();
    let counts: Vec<u128> = (0..all.len())
        .into_par_iter()
        .map(|i| {
            (0..all.len())
                .filter(|&j| {
                    let rho = u8::from(i != j) + u8::from(patterns[i] != patterns[j]);
                    rho <= t
                })
                .count() as u128
        })
        .collect();
    Ok(Neighborhoods { max: counts.iter().copied().max().unwrap_or(0), min: counts.iter().copied().min().unwrap_or(0) })
}

/// `max(0, 1 - (mi + ln 2) / ln(|V| / N_max))`, valid when
/// `|V| - N_min > N_max`.
pub fn distance_fano_bound(mi_upper: f64, cardinality: f64, nbhd: Neighborhoods) -> Result<f64> {
    Ok(distance_fano_raw(mi_upper, cardinality, nbhd)?.max(0.0))
}

pub fn distance_fano_raw(mi_upper: f64, cardinality: f64, nbhd: Neighborhoods) -> Result<f64> {
    let (max, min) = (nbhd.max as f64, nbhd.min as f64);
    if cardinality.is_nan() || cardinality - min <= max {
        return Err(Error::Inapplicable(format!(
            "distance Fano needs |V| - N_min > N_max, got |V| = {cardinality}, N_min = {min}, N_max = {max}"
        )));
    }
    Ok(1.0 - (mi_upper + LN_2) / (cardinality / max).ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    ExactRecovery,
    ExcessRisk,
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundKind::ExactRecovery => "exact-recovery",
            BoundKind::ExcessRisk => "excess-risk",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub p: usize,
    pub d: usize,
    pub r: usize,
    pub sigma2: f64,
    pub n: u64,
    pub mi_upper: f64,
    /// `ln |G|` for exact recovery, `ln(|G| / N_1)` for excess risk.
    pub log_cardinality: f64,
    pub failure_lower_bound: f64,
    pub raw_bound: f64,
    pub threshold_n: f64,
}

impl BoundReport {
    pub const ROW_HEADER: &'static str =
        "kind,p,d,r,sigma2,n,mi_upper,log_cardinality,failure_lower_bound,raw_bound,threshold_n";

    pub fn row(&self) -> String {
        use crate::format::fmt17;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.kind,
            self.p,
            self.d,
            self.r,
            fmt17(self.sigma2),
            self.n,
            fmt17(self.mi_upper),
            fmt17(self.log_cardinality),
            fmt17(self.failure_lower_bound),
            fmt17(self.raw_bound),
            fmt17(self.threshold_n)
        )
    }
}

/// Bound report at sample size `n` using the `2n/s2` information cap.
///
/// The excess-risk variant uses `N_1 = (r!)^(d-1)`, the neighbourhood size at
/// radius 1 (identical for every centre).
pub fn bound_report(class: ClassParams, sigma2: f64, n: u64, kind: BoundKind) -> Result<BoundReport> {
    class.validate()?;
    check_sigma2(sigma2)?;
    let mi_upper = 2.0 * n as f64 / sigma2;
    let (log_cardinality, threshold_n) = match kind {
        BoundKind::ExactRecovery => (class.log_cardinality(), threshold_exact_recovery(class, sigma2)),
        BoundKind::ExcessRisk => {
            let ln_n1 = (class.d - 1) as f64 * ln_factorial(class.r);
            (class.log_cardinality() - ln_n1, threshold_excess_risk(class.p, class.r, sigma2)?)
        }
    };
    let raw_bound = fano_raw(mi_upper, log_cardinality);
    Ok(BoundReport {
        kind,
        p: class.p,
        d: class.d,
        r: class.r,
        sigma2,
        n,
        mi_upper,
        log_cardinality,
        failure_lower_bound: raw_bound.max(0.0),
        raw_bound,
        threshold_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::{hypothesis_at, Permutation, SignVector, DEFAULT_BUDGET};
    use proptest::prelude::*;

    fn class(p: usize, d: usize, r: usize) -> ClassParams {
        ClassParams::new(p, d, r).unwrap()
    }

    #[test]
    fn fano_examples() {
        assert!((fano_failure_lower_bound(0.0, 4f64.ln()) - 0.5).abs() < 1e-15);
        assert_eq!(fano_failure_lower_bound(5.0, 4.0), 0.0);
        assert!(fano_raw(5.0, 4.0) < 0.0);
    }

    #[test]
    fn threshold_examples() {
        assert!((threshold_exact_recovery(class(4, 2, 2), 1.0) - LN_2).abs() < 1e-15);
        let t = threshold_exact_recovery(class(6, 2, 3), 25.0);
        assert!((t - 39.7266).abs() < 1e-3, "{t}");
        assert!((threshold_excess_risk(4, 2, 1.0).unwrap() - 0.75 * LN_2).abs() < 1e-15);
        assert!((threshold_excess_risk(5, 1, 2.0).unwrap() - (5.0 * LN_2 - 4f64.ln()) * 0.5).abs() < 1e-15);
        let e = threshold_excess_risk(6, 3, 25.0).unwrap();
        let expected = 25.0 * (6f64.ln() + 6.0 * LN_2 - 4f64.ln()) / 4.0;
        assert!((e - expected).abs() < 1e-12);
        assert!((e - 28.5276).abs() < 1e-3, "{e}");
    }

    #[test]
    fn threshold_gives_half_exactly() {
        for (p, d, r, s2) in [(4, 2, 2, 1.0), (6, 2, 3, 25.0), (7, 3, 4, 3.0)] {
            let c = class(p, d, r);
            let n = threshold_exact_recovery(c, s2);
            let bound = fano_failure_lower_bound(2.0 * n / s2, c.log_cardinality());
            assert!((bound - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rho_examples() {
        let c = class(4, 2, 2);
        let h = hypothesis_at(c, 5).unwrap();
        assert_eq!(rho_distance(&h, &h).unwrap(), 0);
        // (swap, swap) and (id, id) both compose to the identity.
        let swap = Permutation::new(vec![1, 0]).unwrap();
        let id = Permutation::identity(2);
        let w0 = SignVector::all_positive(4).unwrap();
        let a = Hypothesis::new(c, w0.clone(), vec![swap.clone(), swap.clone()]).unwrap();
        let b = Hypothesis::new(c, w0.clone(), vec![id.clone(), id.clone()]).unwrap();
        assert_eq!(rho_distance(&a, &b).unwrap(), 1);
        let flipped = SignVector::new(vec![1, -1, 1, 1]).unwrap();
        let e = Hypothesis::new(c, flipped, vec![id.clone(), id]).unwrap();
        assert_eq!(rho_distance(&b, &e).unwrap(), 2);
        let other = hypothesis_at(class(4, 1, 2), 0).unwrap();
        assert!(rho_distance(&other, &b).is_err());
    }

    #[test]
    fn rho_metric_axioms() {
        for c in [class(3, 2, 2), class(4, 1, 2)] {
            let all: Vec<Hypothesis> = enumerate_class(c, DEFAULT_BUDGET).unwrap().collect();
            let n = all.len();
            let rho: Vec<Vec<u8>> =
                all.iter().map(|a| all.iter().map(|b| rho_distance(a, b).unwrap()).collect()).collect();
            for i in 0..n {
                assert_eq!(rho[i][i], 0);
                for j in 0..n {
                    assert_eq!(rho[i][j], rho[j][i]);
                    assert_eq!(rho[i][j] == 0, i == j);
                    for k in 0..n {
                        assert!(rho[i][k] <= rho[i][j] + rho[j][k]);
                    }
                }
            }
        }
    }

    #[test]
    fn neighborhood_examples() {
        for (p, d, r) in [(3, 1, 2), (4, 2, 2), (4, 3, 2), (5, 2, 3), (4, 3, 3)] {
            let c = class(p, d, r);
            let n1 = c.identifiable_class_size().unwrap();
            assert_eq!(neighborhood_sizes(c, 1, DEFAULT_BUDGET).unwrap(), Neighborhoods { max: n1, min: n1 });
            assert_eq!(neighborhood_sizes(c, 0, DEFAULT_BUDGET).unwrap(), Neighborhoods { max: 1, min: 1 });
            let card = c.cardinality().unwrap();
            assert_eq!(neighborhood_sizes(c, 2, DEFAULT_BUDGET).unwrap(), Neighborhoods { max: card, min: card });
        }
        assert!(neighborhood_sizes(class(6, 2, 3), 1, 100).is_err());
    }

    #[test]
    fn distance_fano_examples() {
        let n = Neighborhoods { max: 1, min: 1 };
        assert!((distance_fano_bound(0.0, 4.0, n).unwrap() - 0.5).abs() < 1e-15);
        let n = Neighborhoods { max: 6, min: 6 };
        let b = distance_fano_bound(40.0 / 25.0, 2304.0, n).unwrap();
        assert!(b >= 0.5, "{b}");
        assert!(matches!(
            distance_fano_bound(0.0, 10.0, Neighborhoods { max: 5, min: 5 }),
            Err(Error::Inapplicable(_))
        ));
    }

    #[test]
    fn threshold_difference_identity() {
        for p in 3..8 {
            for r in 1..p {
                for d in 1..5 {
                    let c = class(p, d, r);
                    let diff = threshold_exact_recovery(c, 2.0) - threshold_excess_risk(p, r, 2.0).unwrap();
                    let expected = 2.0 * (d - 1) as f64 * ln_factorial(r) / 4.0;
                    assert!((diff - expected).abs() < 1e-12);
                    assert!(diff >= 0.0);
                }
            }
        }
    }

    #[test]
    fn report_fields() {
        let c = class(6, 2, 3);
        let r = bound_report(c, 25.0, 20, BoundKind::ExactRecovery).unwrap();
        assert_eq!(r.mi_upper, 1.6);
        assert!((r.failure_lower_bound - fano_failure_lower_bound(1.6, c.log_cardinality())).abs() == 0.0);
        let e = bound_report(c, 25.0, 20, BoundKind::ExcessRisk).unwrap();
        assert!((e.log_cardinality - 384f64.ln()).abs() < 1e-12);
        let json = serde_json::to_value(&e).unwrap();
        assert_eq!(json["kind"], "excess-risk");
        assert_eq!(BoundReport::ROW_HEADER.split(',').count(), e.row().split(',').count());
    }

    proptest! {
        #[test]
        fn fano_monotonicity(mi in 0.0f64..20.0, dmi in 0.0f64..5.0, lc in 0.1f64..20.0, dlc in 0.0f64..5.0) {
            prop_assert!(fano_failure_lower_bound(mi + dmi, lc) <= fano_failure_lower_bound(mi, lc));
            prop_assert!(fano_failure_lower_bound(mi, lc + dlc) >= fano_failure_lower_bound(mi, lc));
            let b = fano_failure_lower_bound(mi, lc);
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn thresholds_scale_linearly(p in 3usize..10, d in 1usize..5, r_frac in 0.0f64..1.0, s2 in 0.1f64..10.0) {
            let r = 1 + ((p - 2) as f64 * r_frac) as usize;
            let c = class(p, d, r);
            let a = threshold_exact_recovery(c, 4.0 * s2);
            let b = 4.0 * threshold_exact_recovery(c, s2);
            prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
            prop_assert!(threshold_excess_risk(p, r, s2).unwrap() <= threshold_exact_recovery(c, s2) + 1e-12);
        }
    }
}
