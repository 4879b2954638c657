//! The finite hypothesis class `G_{p,d,r}`.
//!
//! A hypothesis is a sign vector `w0` over fixed dyadic magnitudes followed by
//! `d` structured layers. Each layer permutes the first `r` coordinates and
//! scales the remaining `p - r` by `c = 1/(p - r + 1)`.
//!
//! Hypotheses are indexed in mixed radix: the Lehmer ranks of the layer
//! permutations are the low digits (layer 1 varies fastest) and the sign mask
//! sits above them, read big-endian with bit 1 meaning a negative sign.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Default limit on how many hypotheses may be materialised.
pub const DEFAULT_BUDGET: u128 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassParams {
    pub p: usize,
    pub d: usize,
    pub r: usize,
}

impl ClassParams {
    pub fn new(p: usize, d: usize, r: usize) -> Result<Self> {
        if p < 3 {
            return Err(Error::InvalidParams(format!("p must be at least 3, got {p}")));
        }
        if r == 0 || r >= p {
            return Err(Error::InvalidParams(format!("r must satisfy 1 <= r <= p - 1, got r = {r}, p = {p}")));
        }
        if d == 0 {
            return Err(Error::InvalidParams("d must be at least 1".into()));
        }
        Ok(Self { p, d, r })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.p, self.d, self.r).map(|_| ())
    }

    /// The scale `c = 1/(p - r + 1)` applied to the untouched coordinates.
    pub fn scale(&self) -> f64 {
        1.0 / (self.p - self.r + 1) as f64
    }

    /// Number of permutations per layer, `r!`, if it fits in a `u128`.
    pub fn perms_per_layer(&self) -> Option<u128> {
        factorial(self.r)
    }

    /// `|G| = (r!)^d * 2^p`, or `None` on overflow.
    pub fn cardinality(&self) -> Option<u128> {
        let f = self.perms_per_layer()?;
        let mut total: u128 = 1;
        for _ in 0..self.d {
            total = total.checked_mul(f)?;
        }
        let signs = 1u128.checked_shl(u32::try_from(self.p).ok()?)?;
        total.checked_mul(signs)
    }

    /// `ln |G| = d * sum_{i<=r} ln i + p ln 2`, exact even when `|G|` overflows.
    pub fn log_cardinality(&self) -> f64 {
        self.d as f64 * ln_factorial(self.r) + self.p as f64 * std::f64::consts::LN_2
    }

    /// Size of the set of hypotheses sharing `w0` and the effective vector
    /// with a given one (itself included): `(r!)^(d-1)`.
    pub fn identifiable_class_size(&self) -> Option<u128> {
        let f = self.perms_per_layer()?;
        let mut total: u128 = 1;
        for _ in 1..self.d {
            total = total.checked_mul(f)?;
        }
        Some(total)
    }
}

impl fmt::Display for ClassParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G(p={}, d={}, r={})", self.p, self.d, self.r)
    }
}

/// `c = 1/(p - r + 1)`.
pub fn scale_constant(p: usize, r: usize) -> Result<f64> {
    if r == 0 || p <= r {
        return Err(Error::InvalidParams(format!("scale needs 1 <= r < p, got p = {p}, r = {r}")));
    }
    Ok(1.0 / (p - r + 1) as f64)
}

pub fn class_log_cardinality(p: usize, d: usize, r: usize) -> Result<f64> {
    Ok(ClassParams::new(p, d, r)?.log_cardinality())
}

pub fn factorial(n: usize) -> Option<u128> {
    (1..=n as u128).try_fold(1u128, |acc, k| acc.checked_mul(k))
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Magnitude of coordinate `k` (0-based) of `w0`: `2^{-(k+1)/2}` for
/// `k < p - 1`, with the last coordinate repeating `2^{-(p-1)/2}`.
pub fn dyadic_magnitude(p: usize, k: usize) -> f64 {
    assert!(k < p, "coordinate {k} out of range for p = {p}");
    let exponent = if k + 1 == p { p - 1 } else { k + 1 };
    (-(exponent as f64) / 2.0).exp2()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SignVector {
    signs: Vec<i8>,
}

impl SignVector {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.len() < 3 {
            return Err(Error::InvalidParams(format!("sign vector needs p >= 3 entries, got {}", signs.len())));
        }
        if let Some(bad) = signs.iter().find(|s| **s != 1 && **s != -1) {
            return Err(Error::InvalidParams(format!("sign entries must be +1 or -1, got {bad}")));
        }
        Ok(Self { signs })
    }

    pub fn all_positive(p: usize) -> Result<Self> {
        Self::new(vec![1; p])
    }

    /// Decodes a big-endian sign mask (bit for coordinate 1 most significant).
    pub fn from_mask(p: usize, mask: u128) -> Result<Self> {
        let signs = (0..p).map(|k| if (mask >> (p - 1 - k)) & 1 == 1 { -1 } else { 1 }).collect();
        Self::new(signs)
    }

    pub fn mask(&self) -> u128 {
        let p = self.signs.len();
        self.signs.iter().enumerate().filter(|(_, s)| **s < 0).fold(0u128, |m, (k, _)| m | (1u128 << (p - 1 - k)))
    }

    pub fn p(&self) -> usize {
        self.signs.len()
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn values(&self) -> DVector<f64> {
        let p = self.p();
        DVector::from_iterator(p, self.signs.iter().enumerate().map(|(k, s)| f64::from(*s) * dyadic_magnitude(p, k)))
    }
}

/// A permutation of `0..r`, stored as its image sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; images.len()];
        for &i in &images {
            if i >= images.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidParams(format!("{images:?} is not a permutation")));
            }
        }
        Ok(Self(images))
    }

    pub fn identity(r: usize) -> Self {
        Self((0..r).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn images(&self) -> &[usize] {
        &self.0
    }

    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    /// Lexicographic rank in `0..r!`.
    pub fn lehmer_rank(&self) -> u128 {
        let r = self.0.len();
        let mut rank: u128 = 0;
        for i in 0..r {
            let smaller = self.0[i + 1..].iter().filter(|&&v| v < self.0[i]).count() as u128;
            rank = rank * (r - i) as u128 + smaller;
        }
        rank
    }

    pub fn from_lehmer_rank(r: usize, mut rank: u128) -> Result<Self> {
        let total = factorial(r).ok_or_else(|| Error::InvalidParams(format!("{r}! overflows")))?;
        if rank >= total {
            return Err(Error::IndexOutOfRange { index: rank, cardinality: total });
        }
        let mut digits = vec![0usize; r];
        for i in (0..r).rev() {
            let base = (r - i) as u128;
            digits[i] = (rank % base) as usize;
            rank /= base;
        }
        let mut pool: Vec<usize> = (0..r).collect();
        Ok(Self(digits.into_iter().map(|digit| pool.remove(digit)).collect()))
    }
}

/// One layer `[[R, 0], [0, c I]]` where `R` moves coordinate `perm(i)` to `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredLayer {
    pub perm: Permutation,
    pub p: usize,
    pub c: f64,
}

impl StructuredLayer {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let r = self.perm.len();
        DVector::from_iterator(self.p, (0..self.p).map(|i| if i < r { v[self.perm.apply(i)] } else { self.c * v[i] }))
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let r = self.perm.len();
        let mut m = DMatrix::zeros(self.p, self.p);
        for i in 0..self.p {
            if i < r {
                m[(i, self.perm.apply(i))] = 1.0;
            } else {
                m[(i, i)] = self.c;
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HypothesisRepr", into = "HypothesisRepr")]
pub struct Hypothesis {
    params: ClassParams,
    w0: SignVector,
    layers: Vec<StructuredLayer>,
}

impl Hypothesis {
    pub fn new(params: ClassParams, w0: SignVector, perms: Vec<Permutation>) -> Result<Self> {
        Self::with_scale(params, params.scale(), w0, perms)
    }

    /// Builds a hypothesis with an arbitrary scale `c in (0, 1)` on the
    /// untouched block.
    pub fn with_scale(params: ClassParams, c: f64, w0: SignVector, perms: Vec<Permutation>) -> Result<Self> {
        params.validate()?;
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::InvalidParams(format!("scale must lie in (0, 1), got {c}")));
        }
        if w0.p() != params.p {
            return Err(Error::DimensionMismatch(format!(
                "sign vector has {} entries, class has p = {}",
                w0.p(),
                params.p
            )));
        }
        if perms.len() != params.d {
            return Err(Error::DimensionMismatch(format!(
                "{} layer permutations given, class has d = {}",
                perms.len(),
                params.d
            )));
        }
        if let Some(bad) = perms.iter().find(|pi| pi.len() != params.r) {
            return Err(Error::DimensionMismatch(format!(
                "layer permutation of length {} in class with r = {}",
                bad.len(),
                params.r
            )));
        }
        let layers = perms.into_iter().map(|perm| StructuredLayer { perm, p: params.p, c }).collect();
        Ok(Self { params, w0, layers })
    }

    pub fn params(&self) -> ClassParams {
        self.params
    }

    pub fn scale(&self) -> f64 {
        self.layers[0].c
    }

    pub fn w0(&self) -> &SignVector {
        &self.w0
    }

    pub fn layers(&self) -> &[StructuredLayer] {
        &self.layers
    }

    pub fn layer_matrices(&self) -> Vec<DMatrix<f64>> {
        self.layers.iter().map(StructuredLayer::matrix).collect()
    }

    /// `w~ = W_d ... W_1 w0`.
    pub fn effective_vector(&self) -> DVector<f64> {
        self.layers.iter().fold(self.w0.values(), |v, layer| layer.apply(&v))
    }

    /// The permutation `s` with `w~_i = w0_{s(i)}` on the top block.
    pub fn composed_permutation(&self) -> Permutation {
        let r = self.params.r;
        let images = (0..r).map(|i| self.layers.iter().rev().fold(i, |idx, layer| layer.perm.apply(idx))).collect();
        Permutation(images)
    }

    /// Exact symbolic description of the effective vector: for each top
    /// coordinate the source coordinate of `w0` and its sign, followed by the
    /// signs of the bottom block (whose magnitudes are fixed by the class).
    pub fn effective_pattern(&self) -> EffectivePattern {
        let s = self.composed_permutation();
        let signs = self.w0.signs();
        let top = (0..self.params.r).map(|i| (s.apply(i), signs[s.apply(i)])).collect();
        let bottom = signs[self.params.r..].to_vec();
        EffectivePattern { top, bottom }
    }

    pub fn index(&self) -> Result<u128> {
        index_of(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EffectivePattern {
    pub top: Vec<(usize, i8)>,
    pub bottom: Vec<i8>,
}

#[derive(Serialize, Deserialize)]
struct HypothesisRepr {
    p: usize,
    d: usize,
    r: usize,
    c: f64,
    signs: Vec<i8>,
    perms: Vec<Vec<usize>>,
}

impl From<Hypothesis> for HypothesisRepr {
    fn from(h: Hypothesis) -> Self {
        Self {
            p: h.params.p,
            d: h.params.d,
            r: h.params.r,
            c: h.scale(),
            signs: h.w0.signs.clone(),
            perms: h.layers.iter().map(|l| l.perm.images().iter().map(|i| i + 1).collect()).collect(),
        }
    }
}

impl TryFrom<HypothesisRepr> for Hypothesis {
    type Error = Error;

    fn try_from(repr: HypothesisRepr) -> Result<Self> {
        let params = ClassParams::new(repr.p, repr.d, repr.r)?;
        let perms = repr
            .perms
            .into_iter()
            .map(|images| {
                if images.contains(&0) {
                    return Err(Error::InvalidParams("permutation entries are 1-based".into()));
                }
                Permutation::new(images.into_iter().map(|i| i - 1).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Hypothesis::with_scale(params, repr.c, SignVector::new(repr.signs)?, perms)
    }
}

pub fn index_of(h: &Hypothesis) -> Result<u128> {
    let params = h.params;
    let card = params.cardinality().ok_or_else(|| Error::InvalidParams(format!("{params} is too large to index")))?;
    let f = params.perms_per_layer().expect("cardinality fits");
    let mut index = h.w0.mask();
    for layer in h.layers.iter().rev() {
        index = index * f + layer.perm.lehmer_rank();
    }
    debug_assert!(index < card);
    Ok(index)
}

pub fn hypothesis_at(params: ClassParams, index: u128) -> Result<Hypothesis> {
    params.validate()?;
    let card = params.cardinality().ok_or_else(|| Error::InvalidParams(format!("{params} is too large to index")))?;
    if index >= card {
        return Err(Error::IndexOutOfRange { index, cardinality: card });
    }
    let f = params.perms_per_layer().expect("cardinality fits");
    let mut rest = index;
    let mut perms = Vec::with_capacity(params.d);
    for _ in 0..params.d {
        perms.push(Permutation::from_lehmer_rank(params.r, rest % f)?);
        rest /= f;
    }
    Hypothesis::new(params, SignVector::from_mask(params.p, rest)?, perms)
}

/// Iterates a class in canonical index order.
#[derive(Clone, Debug)]
pub struct ClassIter {
    params: ClassParams,
    next: u128,
    end: u128,
}

impl Iterator for ClassIter {
    type Item = Hypothesis;

    fn next(&mut self) -> Option<Hypothesis> {
        if self.next >= self.end {
            return None;
        }
        let h = hypothesis_at(self.params, self.next).expect("index within class");
        self.next += 1;
        Some(h)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.end - self.next).unwrap_or(usize::MAX);
        (n, Some(n))
    }
}

impl ExactSizeIterator for ClassIter {}

/// Enumerates every hypothesis of the class, refusing classes larger than
/// `budget`.
pub fn enumerate_class(params: ClassParams, budget: u128) -> Result<ClassIter> {
    let card = check_budget(params, budget)?;
    Ok(ClassIter { params, next: 0, end: card })
}

/// Returns `|G|` if it does not exceed `budget`.
pub fn check_budget(params: ClassParams, budget: u128) -> Result<u128> {
    params.validate()?;
    match params.cardinality() {
        Some(card) if card <= budget => Ok(card),
        card => Err(Error::BudgetExceeded { cardinality: card.unwrap_or(u128::MAX), budget }),
    }
}

/// A general linear network `w0 -> W_1 -> ... -> W_d` with arbitrary widths.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralNetwork {
    w0: DVector<f64>,
    layers: Vec<DMatrix<f64>>,
}

impl GeneralNetwork {
    pub fn new(w0: DVector<f64>, layers: Vec<DMatrix<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParams("network needs at least one layer".into()));
        }
        let mut width = w0.len();
        if width == 0 {
            return Err(Error::InvalidParams("w0 must be non-empty".into()));
        }
        for (k, w) in layers.iter().enumerate() {
            if w.ncols() != width || w.nrows() == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} is {}x{} but receives a vector of width {width}",
                    k + 1,
                    w.nrows(),
                    w.ncols()
                )));
            }
            width = w.nrows();
        }
        if w0.iter().chain(layers.iter().flat_map(|w| w.iter())).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("network entries must be finite".into()));
        }
        Ok(Self { w0, layers })
    }

    /// A network with i.i.d. standard normal entries scaled by `scale`.
    pub fn standard_normal(dims: &[usize], scale: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidParams("need at least two widths".into()));
        }
        let mut rng = rng::stream(seed, Domain::Network, dims.len() as u64, 0);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect::<Vec<f64>>()
        };
        let w0 = DVector::from_vec(draw(dims[0]));
        let layers = dims.windows(2).map(|w| DMatrix::from_vec(w[1], w[0], draw(w[0] * w[1]))).collect();
        Self::new(w0, layers)
    }

    pub fn w0(&self) -> &DVector<f64> {
        &self.w0
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Widths `p_0, ..., p_d`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.w0.len()).chain(self.layers.iter().map(|w| w.nrows())).collect()
    }

    /// Output width `p_d`.
    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").nrows()
    }

    pub fn effective_vector(&self) -> DVector<f64> {
        self.layers.iter().fold(self.w0.clone(), |v, w| w * v)
    }
}

impl From<&Hypothesis> for GeneralNetwork {
    fn from(h: &Hypothesis) -> Self {
        Self { w0: h.w0.values(), layers: h.layer_matrices() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn class(p: usize, d: usize, r: usize) -> ClassParams {
        ClassParams::new(p, d, r).unwrap()
    }

    #[test]
    fn cardinality_examples() {
        assert_eq!(class(4, 1, 2).cardinality(), Some(32));
        assert_eq!(class(4, 2, 2).cardinality(), Some(64));
        assert_eq!(class(5, 2, 2).cardinality(), Some(128));
        assert_eq!(class(6, 2, 3).cardinality(), Some(2304));
        assert_eq!(class(3, 1, 1).cardinality(), Some(8));
    }

    #[test]
    fn log_cardinality_example() {
        let expected = 2.0 * 6f64.ln() + 6.0 * 2f64.ln();
        assert!((class_log_cardinality(6, 2, 3).unwrap() - expected).abs() < 1e-12);
        assert!((class(6, 2, 3).log_cardinality() - 2304f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ClassParams::new(2, 1, 1).is_err());
        assert!(ClassParams::new(4, 1, 0).is_err());
        assert!(ClassParams::new(4, 1, 4).is_err());
        assert!(ClassParams::new(4, 0, 2).is_err());
        assert!(scale_constant(3, 3).is_err());
        assert!(scale_constant(3, 0).is_err());
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale_constant(4, 2).unwrap(), 1.0 / 3.0);
        assert_eq!(scale_constant(6, 3).unwrap(), 0.25);
        assert_eq!(scale_constant(3, 2).unwrap(), 0.5);
        assert!(scale_constant(2, 2).is_err());
    }

    #[test]
    fn w0_magnitudes() {
        let w = SignVector::all_positive(4).unwrap().values();
        let expected = [0.5f64.sqrt(), 0.5, 0.125f64.sqrt(), 0.125f64.sqrt()];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn index_zero_is_all_plus_identity() {
        let params = class(5, 2, 3);
        let h = hypothesis_at(params, 0).unwrap();
        assert!(h.w0().signs().iter().all(|s| *s == 1));
        assert!(h.layers().iter().all(|l| l.perm == Permutation::identity(3)));
    }

    #[test]
    fn index_ordering_low_digits_are_layer_one() {
        let params = class(4, 2, 2);
        let h = hypothesis_at(params, 1).unwrap();
        assert_eq!(h.layers()[0].perm.images(), &[1, 0]);
        assert_eq!(h.layers()[1].perm.images(), &[0, 1]);
        let h = hypothesis_at(params, 2).unwrap();
        assert_eq!(h.layers()[0].perm.images(), &[0, 1]);
        assert_eq!(h.layers()[1].perm.images(), &[1, 0]);
        // Sign mask sits above the 4 permutation digits; mask 1 flips the
        // last coordinate, mask 8 flips the first.
        let h = hypothesis_at(params, 4).unwrap();
        assert_eq!(h.w0().signs(), &[1, 1, 1, -1]);
        let h = hypothesis_at(params, 32).unwrap();
        assert_eq!(h.w0().signs(), &[-1, 1, 1, 1]);
    }

    #[test]
    fn out_of_range_index() {
        assert!(matches!(
            hypothesis_at(class(4, 1, 2), 32),
            Err(Error::IndexOutOfRange { index: 32, cardinality: 32 })
        ));
    }

    #[test]
    fn lehmer_ranks_enumerate_in_lexicographic_order() {
        let all: Vec<Vec<usize>> =
            (0..24).map(|k| Permutation::from_lehmer_rank(4, k).unwrap().images().to_vec()).collect();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(all, sorted);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 24);
    }

    #[test]
    fn enumeration_is_exhaustive_and_unique() {
        for (p, d, r) in [(4, 1, 2), (4, 2, 2), (5, 2, 2), (6, 2, 3)] {
            let params = class(p, d, r);
            let all: Vec<Hypothesis> = enumerate_class(params, DEFAULT_BUDGET).unwrap().collect();
            assert_eq!(all.len() as u128, params.cardinality().unwrap());
            let encoded: HashSet<String> = all.iter().map(|h| serde_json::to_string(h).unwrap()).collect();
            assert_eq!(encoded.len(), all.len());
            for (k, h) in all.iter().enumerate() {
                assert_eq!(index_of(h).unwrap(), k as u128);
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let err = enumerate_class(class(6, 2, 3), 1000).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { cardinality: 2304, budget: 1000 }));
        let huge = class(20, 4, 12);
        assert!(matches!(enumerate_class(huge, DEFAULT_BUDGET), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn json_format() {
        let h = hypothesis_at(class(4, 1, 2), 1).unwrap();
        let v: serde_json::Value = serde_json::to_value(&h).unwrap();
        assert_eq!(v["p"], 4);
        assert_eq!(v["perms"], serde_json::json!([[2, 1]]));
        assert_eq!(v["signs"], serde_json::json!([1, 1, 1, 1]));
        let back: Hypothesis = serde_json::from_value(v).unwrap();
        assert_eq!(back, h);

        let bad = serde_json::json!({"p":4,"d":1,"r":2,"c":0.5,"signs":[1,1,1,2],"perms":[[1,2]]});
        assert!(serde_json::from_value::<Hypothesis>(bad).is_err());
        let bad = serde_json::json!({"p":4,"d":1,"r":2,"c":0.5,"signs":[1,1,1,1],"perms":[[0,1]]});
        assert!(serde_json::from_value::<Hypothesis>(bad).is_err());
    }

    #[test]
    fn effective_vector_matches_matrix_product() {
        let params = class(6, 2, 3);
        for h in enumerate_class(params, DEFAULT_BUDGET).unwrap().step_by(37) {
            let dense = GeneralNetwork::from(&h).effective_vector();
            assert!((dense - h.effective_vector()).amax() < 1e-15);
        }
    }

    #[test]
    fn patterns_agree_with_numeric_effective_vectors() {
        let params = class(5, 2, 3);
        let all: Vec<Hypothesis> = enumerate_class(params, DEFAULT_BUDGET).unwrap().collect();
        for a in all.iter().step_by(7) {
            for b in &all {
                let same_pattern = a.effective_pattern() == b.effective_pattern();
                let same_vector = (a.effective_vector() - b.effective_vector()).amax() < 1e-12;
                assert_eq!(same_pattern, same_vector);
            }
        }
    }

    #[test]
    fn general_network_rejects_bad_shapes() {
        let w0 = DVector::from_element(3, 1.0);
        assert!(GeneralNetwork::new(w0.clone(), vec![]).is_err());
        assert!(GeneralNetwork::new(w0, vec![DMatrix::identity(4, 4)]).is_err());
        let net = GeneralNetwork::standard_normal(&[3, 5, 2], 1.0, 1).unwrap();
        assert_eq!(net.dims(), vec![3, 5, 2]);
        assert_eq!(net.output_dim(), 2);
    }

    fn arb_class() -> impl Strategy<Value = ClassParams> {
        (3usize..8, 1usize..4)
            .prop_flat_map(|(p, d)| (Just(p), Just(d), 1..p))
            .prop_map(|(p, d, r)| ClassParams::new(p, d, r).unwrap())
    }

    fn arb_hypothesis() -> impl Strategy<Value = Hypothesis> {
        arb_class().prop_flat_map(|params| {
            let card = params.cardinality().unwrap();
            (Just(params), 0..card).prop_map(|(params, k)| hypothesis_at(params, k).unwrap())
        })
    }

    proptest! {
        #[test]
        fn w0_has_unit_norm(p in 3usize..40) {
            let w = SignVector::all_positive(p).unwrap().values();
            prop_assert!((w.norm_squared() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn index_round_trips(h in arb_hypothesis()) {
            let k = index_of(&h).unwrap();
            prop_assert_eq!(hypothesis_at(h.params(), k).unwrap(), h);
        }

        #[test]
        fn json_round_trips(h in arb_hypothesis()) {
            let s = serde_json::to_string(&h).unwrap();
            let back: Hypothesis = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back, h);
        }

        #[test]
        fn effective_norm_closed_form(h in arb_hypothesis()) {
            let ClassParams { p, d, r } = h.params();
            let w0 = h.w0().values();
            let c2d = h.scale().powi(2 * d as i32);
            let expected: f64 = (0..r).map(|i| w0[i] * w0[i]).sum::<f64>()
                + c2d * (r..p).map(|i| w0[i] * w0[i]).sum::<f64>();
            prop_assert!((h.effective_vector().norm_squared() - expected).abs() < 1e-12);
        }

        #[test]
        fn layer_matrix_structure(h in arb_hypothesis()) {
            let ClassParams { p, r, .. } = h.params();
            let c = h.scale();
            for m in h.layer_matrices() {
                let gram = m.transpose() * &m;
                for i in 0..p {
                    for j in 0..p {
                        let expected = if i != j { 0.0 } else if i < r { 1.0 } else { c * c };
                        prop_assert!((gram[(i, j)] - expected).abs() < 1e-15);
                    }
                }
            }
        }
    }
}
