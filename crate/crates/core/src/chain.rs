//! The Gaussian chain `y -> z_0 -> ... -> z_d = x` and its marginal law.
//!
//! Given `y`, `z_0 ~ N(y w0, s2 I)` and `z_k ~ N(W_k z_{k-1}, s2 I)`. The joint
//! precision of `(z_0, ..., z_d)` is block tri-diagonal, and eliminating the
//! hidden layers one at a time gives `Cov(x | y) = s2 (I - M_d)^{-1}` with
//! `M_1 = W_1 (I + W_1'W_1)^{-1} W_1'` and
//! `M_k = W_k (I + W_k'W_k - M_{k-1})^{-1} W_k'`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::hypothesis::{ClassParams, GeneralNetwork, Hypothesis};
use crate::rng::{self, Domain};

/// Inner matrices above this condition number are treated as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

/// Pairs per independently seeded shard in [`sample_dataset`].
pub const SHARD_SIZE: usize = 1024;

#[derive(Clone, Debug)]
pub struct ChainParams {
    network: GeneralNetwork,
    sigma2: f64,
    source: Option<Hypothesis>,
}

impl ChainParams {
    pub fn new(network: GeneralNetwork, sigma2: f64) -> Result<Self> {
        check_sigma2(sigma2)?;
        Ok(Self { network, sigma2, source: None })
    }

    pub fn from_hypothesis(h: &Hypothesis, sigma2: f64) -> Result<Self> {
        check_sigma2(sigma2)?;
        Ok(Self { network: GeneralNetwork::from(h), sigma2, source: Some(h.clone()) })
    }

    pub fn network(&self) -> &GeneralNetwork {
        &self.network
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn source(&self) -> Option<&Hypothesis> {
        self.source.as_ref()
    }
}

pub(crate) fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("noise variance must be positive and finite, got {sigma2}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn from_i8(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Label::Pos),
            -1 => Ok(Label::Neg),
            other => Err(Error::Parse(format!("label must be 1 or -1, got {other}"))),
        }
    }

    pub fn value(self) -> i8 {
        match self {
            Label::Pos => 1,
            Label::Neg => -1,
        }
    }

    pub fn sign(self) -> f64 {
        f64::from(self.value())
    }
}

/// The joint precision of all layers, stored densely with block offsets.
#[derive(Clone, Debug)]
pub struct PrecisionMatrix {
    pub dims: Vec<usize>,
    pub offsets: Vec<usize>,
    pub dense: DMatrix<f64>,
}

impl PrecisionMatrix {
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.dense.view((self.offsets[i], self.offsets[j]), (self.dims[i], self.dims[j])).into_owned()
    }
}

pub fn precision_matrix(params: &ChainParams) -> PrecisionMatrix {
    let net = params.network();
    let dims = net.dims();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &n| {
            let start = *acc;
            *acc += n;
            Some(start)
        })
        .collect();
    let total: usize = dims.iter().sum();
    let inv = 1.0 / params.sigma2();
    let mut dense = DMatrix::zeros(total, total);
    for (i, &n) in dims.iter().enumerate() {
        let mut diag = DMatrix::identity(n, n);
        if let Some(w) = net.layers().get(i) {
            diag += w.transpose() * w;
        }
        dense.view_mut((offsets[i], offsets[i]), (n, n)).copy_from(&(diag * inv));
    }
    for (i, w) in net.layers().iter().enumerate() {
        let off = -w * inv;
        dense.view_mut((offsets[i + 1], offsets[i]), w.shape()).copy_from(&off);
        dense.view_mut((offsets[i], offsets[i + 1]), (w.ncols(), w.nrows())).copy_from(&off.transpose());
    }
    PrecisionMatrix { dims, offsets, dense }
}

/// Inverts a symmetric positive definite matrix, reporting degeneracy at
/// `layer` with its condition number.
fn spd_inverse(a: &DMatrix<f64>, layer: usize) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(Error::Degenerate { layer, condition, min_eigenvalue: min });
    }
    let chol = a.clone().cholesky().ok_or(Error::Degenerate { layer, condition, min_eigenvalue: min })?;
    Ok(symmetrize(chol.inverse()))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `M_1, ..., M_d`.
pub fn m_recursion_matrices(params: &ChainParams) -> Result<Vec<DMatrix<f64>>> {
    let net = params.network();
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(net.depth());
    for (k, w) in net.layers().iter().enumerate() {
        let n = w.ncols();
        let mut inner = DMatrix::identity(n, n) + w.transpose() * w;
        if let Some(prev) = out.last() {
            inner -= prev;
        }
        let inv = spd_inverse(&inner, k + 1)?;
        out.push(symmetrize(w * inv * w.transpose()));
    }
    Ok(out)
}

/// `M_d`.
pub fn marginal_m(params: &ChainParams) -> Result<DMatrix<f64>> {
    Ok(m_recursion_matrices(params)?.pop().expect("network has at least one layer"))
}

/// `Cov(x | y) = s2 (I - M_d)^{-1}`, identical for both labels.
pub fn marginal_covariance(params: &ChainParams) -> Result<DMatrix<f64>> {
    let m = marginal_m(params)?;
    let n = m.nrows();
    let depth = params.network().depth();
    Ok(spd_inverse(&(DMatrix::identity(n, n) - m), depth + 1)? * params.sigma2())
}

/// Diagonal of `M_d` on `G_{p,d,r}` with scale `c`:
/// `d/(d+1)` on the top block and `S/(1+S)` below, `S = sum_{j<=d} c^{2j}`.
pub fn structured_m_diagonal(class: ClassParams, c: f64) -> DVector<f64> {
    let d = class.d as f64;
    let s = scale_power_sum(c, class.d);
    DVector::from_iterator(class.p, (0..class.p).map(|i| if i < class.r { d / (d + 1.0) } else { s / (1.0 + s) }))
}

/// Diagonal of `Cov(x | y)` on `G_{p,d,r}`: `s2 (d+1)` on the top block and
/// `s2 (1 + S)` below.
pub fn structured_covariance_diagonal(class: ClassParams, c: f64, sigma2: f64) -> DVector<f64> {
    let s = scale_power_sum(c, class.d);
    let top = sigma2 * (class.d as f64 + 1.0);
    let bottom = sigma2 * (1.0 + s);
    DVector::from_iterator(class.p, (0..class.p).map(|i| if i < class.r { top } else { bottom }))
}

pub fn structured_marginal_covariance(class: ClassParams, c: f64, sigma2: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&structured_covariance_diagonal(class, c, sigma2))
}

/// `S = sum_{j=1}^{d} c^{2j}`.
pub fn scale_power_sum(c: f64, d: usize) -> f64 {
    let c2 = c * c;
    (1..=d).fold((0.0, 1.0), |(sum, pow), _| (sum + pow * c2, pow * c2)).0
}

pub fn conditional_mean(params: &ChainParams, y: Label) -> DVector<f64> {
    params.network().effective_vector() * y.sign()
}

/// A multivariate normal with a cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl GaussianDist {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if cov.shape() != (k, k) {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {k} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite("covariance is not symmetric".into()));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorisation failed".into()))?
            .l();
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { mean, cov, chol, log_det })
    }

    /// Builds the distribution and checks that `precision` inverts `cov`.
    pub fn with_precision(mean: DVector<f64>, cov: DMatrix<f64>, precision: &DMatrix<f64>) -> Result<Self> {
        let dist = Self::new(mean, cov)?;
        let k = dist.dim();
        if precision.shape() != (k, k) {
            return Err(Error::DimensionMismatch("precision shape differs from covariance".into()));
        }
        let residual = (&dist.cov * precision - DMatrix::<f64>::identity(k, k)).amax();
        if residual > 1e-8 {
            return Err(Error::NotPositiveDefinite(format!(
                "precision does not invert covariance (residual {residual:.3e})"
            )));
        }
        Ok(dist)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor `L` with `L L' = cov`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let k = self.dim();
        let linv = self
            .chol
            .solve_lower_triangular(&DMatrix::identity(k, k))
            .expect("Cholesky factor has a positive diagonal");
        symmetrize(linv.transpose() * linv)
    }

    /// Solves `L u = x - mean` and returns `|u|^2`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let k = self.dim();
        assert_eq!(x.len(), k, "point has wrong dimension");
        let mut u = vec![0.0; k];
        let mut total = 0.0;
        for i in 0..k {
            let mut acc = x[i] - self.mean[i];
            for (j, uj) in u.iter().enumerate().take(i) {
                acc -= self.chol[(i, j)] * uj;
            }
            u[i] = acc / self.chol[(i, i)];
            total += u[i] * u[i];
        }
        total
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let k = self.dim() as f64;
        -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + self.log_det + self.mahalanobis_sq(x))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let k = self.dim();
        let z = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(&mut *rng)));
        &self.mean + &self.chol * z
    }
}

/// The law of `(x, y)`: `y` uniform on `{-1, +1}` and `x | y ~ N(y w~, Sigma)`.
#[derive(Clone, Debug)]
pub struct MarginalLaw {
    noise: GaussianDist,
    effective: DVector<f64>,
}

impl MarginalLaw {
    pub fn new(params: &ChainParams) -> Result<Self> {
        let cov = marginal_covariance(params)?;
        let effective = params.network().effective_vector();
        let noise = GaussianDist::new(DVector::zeros(effective.len()), cov)?;
        Ok(Self { noise, effective })
    }

    /// Uses the closed-form covariance of the structured class.
    pub fn for_hypothesis(h: &Hypothesis, sigma2: f64) -> Result<Self> {
        check_sigma2(sigma2)?;
        let cov = structured_marginal_covariance(h.params(), h.scale(), sigma2);
        let effective = h.effective_vector();
        let noise = GaussianDist::new(DVector::zeros(effective.len()), cov)?;
        Ok(Self { noise, effective })
    }

    pub fn effective(&self) -> &DVector<f64> {
        &self.effective
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        self.noise.cov()
    }

    pub fn conditional(&self, y: Label) -> GaussianDist {
        GaussianDist { mean: &self.effective * y.sign(), ..self.noise.clone() }
    }

    /// `ln p(x, y) = ln(1/2) + ln N(x; y w~, Sigma)`.
    pub fn log_density(&self, x: &[f64], y: Label) -> f64 {
        let s = y.sign();
        let centered: Vec<f64> = x.iter().zip(self.effective.iter()).map(|(a, m)| a - s * m).collect();
        -std::f64::consts::LN_2 + self.noise.log_density(&centered)
    }
}

pub fn marginal_log_density(x: &[f64], y: Label, params: &ChainParams) -> Result<f64> {
    let law = MarginalLaw::new(params)?;
    if x.len() != law.effective.len() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} coordinates, network outputs {}",
            x.len(),
            law.effective.len()
        )));
    }
    Ok(law.log_density(x, y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n: usize,
    pub sigma2: f64,
    pub hypothesis: Option<Hypothesis>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<Sample>,
    pub seed: u64,
    pub sigma2: f64,
    pub source: Option<Hypothesis>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta { seed: self.seed, n: self.n(), sigma2: self.sigma2, hypothesis: self.source.clone() }
    }

    /// Writes `y,x1,...,xp` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let p = self.pairs.first().map_or_else(|| self.source.as_ref().map_or(0, |h| h.params().p), |s| s.x.len());
        write!(out, "y")?;
        for i in 1..=p {
            write!(out, ",x{i}")?;
        }
        writeln!(out)?;
        for s in &self.pairs {
            write!(out, "{}", s.y.value())?;
            for v in &s.x {
                write!(out, ",{}", fmt17(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<Sample>> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("missing header".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let p = cols.len() - 1;
        let expected = std::iter::once("y".to_string()).chain((1..=p).map(|i| format!("x{i}"))).collect::<Vec<_>>();
        if cols != expected {
            return Err(Error::Parse(format!("unexpected header {header:?}")));
        }
        let mut pairs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != p + 1 {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    p + 1
                )));
            }
            let y: i8 = fields[0].parse().map_err(|e| Error::Parse(format!("row {}: bad label: {e}", lineno + 2)))?;
            let x = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 2))))
                .collect::<Result<Vec<_>>>()?;
            pairs.push(Sample { x, y: Label::from_i8(y)? });
        }
        Ok(pairs)
    }

    /// Location of the JSON sidecar for a CSV path.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    pub fn save(&self, csv: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(csv)?);
        self.write_csv(&mut out)?;
        out.flush()?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(Self::sidecar_path(csv), meta + "\n")?;
        Ok(())
    }

    pub fn load(csv: &Path) -> Result<Self> {
        let pairs = Self::read_csv(BufReader::new(File::open(csv)?))?;
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(csv))?)?;
        if meta.n != pairs.len() {
            return Err(Error::Parse(format!(
                "sidecar records n = {} but the file holds {} rows",
                meta.n,
                pairs.len()
            )));
        }
        Ok(Self { pairs, seed: meta.seed, sigma2: meta.sigma2, source: meta.hypothesis })
    }
}

/// Draws `(x, y)` by running the chain layer by layer.
#[derive(Clone, Debug)]
pub struct ChainSampler<'a> {
    net: &'a GeneralNetwork,
    sigma: f64,
}

impl<'a> ChainSampler<'a> {
    pub fn new(params: &'a ChainParams) -> Self {
        Self { net: params.network(), sigma: params.sigma2().sqrt() }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let y = if rng.random::<bool>() { Label::Pos } else { Label::Neg };
        let sign = y.sign();
        let mut z = DVector::from_iterator(
            self.net.w0().len(),
            self.net.w0().iter().map(|w| sign * w + self.sigma * noise(rng)),
        );
        for w in self.net.layers() {
            let mut next = DVector::from_iterator(w.nrows(), (0..w.nrows()).map(|_| noise(rng)));
            next.gemv(1.0, w, &z, self.sigma);
            z = next;
        }
        Sample { x: z.as_slice().to_vec(), y }
    }
}

fn noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Samples `n` i.i.d. pairs. Shard `k` of [`SHARD_SIZE`] pairs uses its own
/// stream, so the output does not depend on the number of worker threads.
pub fn sample_dataset(params: &ChainParams, n: usize, seed: u64) -> Result<Dataset> {
    let sampler = ChainSampler::new(params);
    let shards = n.div_ceil(SHARD_SIZE);
    let pairs: Vec<Sample> = (0..shards)
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut rng = rng::stream(seed, Domain::Dataset, k as u64, 0);
            let len = SHARD_SIZE.min(n - k * SHARD_SIZE);
            let sampler = &sampler;
            (0..len).map(move |_| sampler.draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect();
    Ok(Dataset { pairs, seed, sigma2: params.sigma2(), source: params.source().cloned() })
}
