//! Exact MAP decoding over the class and empirical failure rates versus
//! sample size.
//!
//! Every member of a class shares the marginal covariance, so the data enter
//! the log-likelihood only through `n` and `s = sum_i y_i x_i`:
//! `sum_i ln p_h(x_i, y_i) = const + w'P s - (n/2) w'P w` with `P` the shared
//! precision. The decoder scores all hypotheses from these statistics.
//!
//! Failure frequencies are Bayes quantities under the uniform prior on the
//! class, which lower-bound the minimax failure probability.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{check_sigma2, sample_dataset, structured_covariance_diagonal, ChainParams, Dataset};
use crate::error::{Error, Result};
use crate::fano::{distance_fano_bound, fano_failure_lower_bound, rho_distance, Neighborhoods};
use crate::format::fmt17;
use crate::hypothesis::{check_budget, enumerate_class, hypothesis_at, ClassParams, Hypothesis, DEFAULT_BUDGET};
use crate::risk::{excess_risk, excess_risk_lower_bound, RISK_TOL};
use crate::rng::{self, Domain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p: usize,
    pub d: usize,
    pub r: usize,
    pub sigma2: f64,
    pub n_grid: Vec<u64>,
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub output_path: String,
    /// Overrides the default enumeration budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

impl ExperimentConfig {
    pub fn class(&self) -> Result<ClassParams> {
        ClassParams::new(self.p, self.d, self.r)
    }

    pub fn budget(&self) -> u128 {
        self.budget.map_or(DEFAULT_BUDGET, u128::from)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if let Err(e) = self.class() {
            return bad(e.to_string());
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n_grid.is_empty() {
            return bad("n_grid must not be empty".into());
        }
        if self.n_grid[0] == 0 {
            return bad("sample sizes must be at least 1".into());
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("n_grid must be strictly increasing".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub n: u64,
    pub xi1_hat: f64,
    pub xi1_stderr: f64,
    pub xi2_hat: f64,
    pub xi2_stderr: f64,
    pub fano_bound: f64,
    pub trials: u64,
    /// Trials where `excess >= gap` and `rho > 1` disagreed.
    pub event_mismatches: u64,
}

/// Exact posterior maximiser over a class under the uniform prior.
#[derive(Clone, Debug)]
pub struct MapDecoder {
    class: ClassParams,
    sigma2: f64,
    precision: Vec<f64>,
    log_norm: f64,
    /// Row-major `|G| x p` matrix of `P w`.
    weighted: Vec<f64>,
    /// `w'P w` per hypothesis.
    quad: Vec<f64>,
}

impl MapDecoder {
    pub fn new(class: ClassParams, sigma2: f64, budget: u128) -> Result<Self> {
        check_sigma2(sigma2)?;
        check_budget(class, budget)?;
        let cov = structured_covariance_diagonal(class, class.scale(), sigma2);
        let precision: Vec<f64> = cov.iter().map(|v| 1.0 / v).collect();
        let p = class.p;
        let log_norm = -0.5 * (p as f64 * (2.0 * std::f64::consts::PI).ln() + cov.iter().map(|v| v.ln()).sum::<f64>())
            - std::f64::consts::LN_2;
        let mut weighted = Vec::new();
        let mut quad = Vec::new();
        for h in enumerate_class(class, budget)? {
            let w = h.effective_vector();
            let mut terms: Vec<f64> = (0..p).map(|i| precision[i] * w[i] * w[i]).collect();
            // Sorting first makes the sum invariant under permuting
            // coordinates, so hypotheses with equal values tie exactly.
            terms.sort_by(f64::total_cmp);
            quad.push(terms.iter().sum());
            weighted.extend((0..p).map(|i| precision[i] * w[i]));
        }
        Ok(Self { class, sigma2, precision, log_norm, weighted, quad })
    }

    pub fn class(&self) -> ClassParams {
        self.class
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn len(&self) -> usize {
        self.quad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quad.is_empty()
    }

    fn statistic(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.pairs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let p = self.class.p;
        let mut s = vec![0.0; p];
        for pair in &data.pairs {
            if pair.x.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "sample has {} coordinates, class has p = {p}",
                    pair.x.len()
                )));
            }
            let y = pair.y.sign();
            for (acc, v) in s.iter_mut().zip(&pair.x) {
                *acc += y * v;
            }
        }
        Ok(s)
    }

    /// Data-dependent part of the log-likelihood of each hypothesis.
    fn scores(&self, data: &Dataset) -> Result<Vec<f64>> {
        let s = self.statistic(data)?;
        let half_n = 0.5 * data.n() as f64;
        let p = self.class.p;
        Ok(self
            .weighted
            .chunks_exact(p)
            .zip(&self.quad)
            .map(|(pw, q)| pw.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() - half_n * q)
            .collect())
    }

    /// Full `sum_i ln p_h(x_i, y_i)` for every hypothesis, in index order.
    pub fn log_likelihoods(&self, data: &Dataset) -> Result<Vec<f64>> {
        let scores = self.scores(data)?;
        let common: f64 = data
            .pairs
            .iter()
            .map(|pair| {
                self.log_norm - 0.5 * pair.x.iter().zip(&self.precision).map(|(x, prec)| prec * x * x).sum::<f64>()
            })
            .sum();
        Ok(scores.into_iter().map(|s| s + common).collect())
    }

    /// Index of the maximiser; ties go to the lowest index.
    pub fn decode_index(&self, data: &Dataset) -> Result<u128> {
        let scores = self.scores(data)?;
        let mut best = 0;
        for (k, s) in scores.iter().enumerate().skip(1) {
            if *s > scores[best] {
                best = k;
            }
        }
        Ok(best as u128)
    }

    pub fn decode(&self, data: &Dataset) -> Result<Hypothesis> {
        hypothesis_at(self.class, self.decode_index(data)?)
    }
}

/// MAP estimate of the generating hypothesis.
pub fn map_decoder(data: &Dataset, class: ClassParams, sigma2: f64) -> Result<Hypothesis> {
    MapDecoder::new(class, sigma2, DEFAULT_BUDGET)?.decode(data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub truth: u128,
    pub decoded: u128,
    pub exact_failure: bool,
    /// `excess_risk(decoded, truth) >= gap`.
    pub excess_event: bool,
    /// `rho(decoded, truth) > 1`.
    pub rho_event: bool,
}

/// Runs `cfg.trials` independent trials at sample size `n`. Trial `t` draws
/// everything from the stream keyed by `(seed, n, t)`.
pub fn run_trials(cfg: &ExperimentConfig, decoder: &MapDecoder, n: u64) -> Result<Vec<TrialOutcome>> {
    let class = decoder.class();
    let card = class.cardinality().expect("decoder class fits in memory");
    let gap = excess_risk_lower_bound(class, cfg.sigma2)?;
    let n_usize = usize::try_from(n).map_err(|_| Error::InvalidConfig(format!("n = {n} too large")))?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(cfg.seed, Domain::Trial, n, t);
            let truth = rng.random_range(0..card);
            let data_seed: u64 = rng.random();
            let h_star = hypothesis_at(class, truth)?;
            let params = ChainParams::from_hypothesis(&h_star, cfg.sigma2)?;
            let data = sample_dataset(&params, n_usize, data_seed)?;
            let decoded = decoder.decode_index(&data)?;
            let h_hat = hypothesis_at(class, decoded)?;
            let excess = excess_risk(&h_hat, &h_star, cfg.sigma2)?;
            Ok(TrialOutcome {
                truth,
                decoded,
                exact_failure: decoded != truth,
                excess_event: excess >= gap - RISK_TOL,
                rho_event: rho_distance(&h_hat, &h_star)? > 1,
            })
        })
        .collect()
}

fn frequency(hits: u64, trials: u64) -> (f64, f64) {
    let f = hits as f64 / trials as f64;
    (f, (f * (1.0 - f) / trials as f64).sqrt())
}

fn summarize(n: u64, outcomes: &[TrialOutcome], fano_bound: f64) -> ExperimentRow {
    let trials = outcomes.len() as u64;
    let count = |pred: fn(&TrialOutcome) -> bool| outcomes.iter().filter(|o| pred(o)).count() as u64;
    let (xi1_hat, xi1_stderr) = frequency(count(|o| o.exact_failure), trials);
    let (xi2_hat, xi2_stderr) = frequency(count(|o| o.excess_event), trials);
    ExperimentRow {
        n,
        xi1_hat,
        xi1_stderr,
        xi2_hat,
        xi2_stderr,
        fano_bound,
        trials,
        event_mismatches: count(|o| o.excess_event != o.rho_event),
    }
}

fn run_experiment<F>(cfg: &ExperimentConfig, bound: F) -> Result<Vec<ExperimentRow>>
where
    F: Fn(ClassParams, u64) -> Result<f64>,
{
    cfg.validate()?;
    let class = cfg.class()?;
    let decoder = MapDecoder::new(class, cfg.sigma2, cfg.budget())?;
    cfg.n_grid
        .iter()
        .map(|&n| {
            let outcomes = run_trials(cfg, &decoder, n)?;
            Ok(summarize(n, &outcomes, bound(class, n)?))
        })
        .collect()
}

/// Empirical exact-recovery failure with the Fano bound at each `n`.
pub fn run_recovery_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    let sigma2 = cfg.sigma2;
    run_experiment(cfg, |class, n| Ok(fano_failure_lower_bound(2.0 * n as f64 / sigma2, class.log_cardinality())))
}

/// Empirical positive-excess-risk frequency with the distance-based Fano
/// bound at radius 1.
pub fn run_excess_risk_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    let sigma2 = cfg.sigma2;
    run_experiment(cfg, |class, n| {
        let n1 = class.identifiable_class_size().expect("class fits in memory");
        let card = class.cardinality().expect("class fits in memory") as f64;
        distance_fano_bound(2.0 * n as f64 / sigma2, card, Neighborhoods { max: n1, min: n1 })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

pub const REPORT_CSV_HEADER: &str = "n,xi1,xi1_stderr,xi2,xi2_stderr,fano_bound";

pub fn render_report(rows: &[ExperimentRow], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(REPORT_CSV_HEADER);
            out.push('\n');
            for row in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.n,
                    fmt17(row.xi1_hat),
                    fmt17(row.xi1_stderr),
                    fmt17(row.xi2_hat),
                    fmt17(row.xi2_stderr),
                    fmt17(row.fano_bound)
                ));
            }
            Ok(out)
        }
        ReportFormat::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
    }
}

/// Writes the report to `cfg.output_path`.
pub fn emit_report(rows: &[ExperimentRow], cfg: &ExperimentConfig, format: ReportFormat) -> Result<()> {
    if cfg.output_path.is_empty() {
        return Err(Error::InvalidConfig("output_path is empty".into()));
    }
    write_report(rows, Path::new(&cfg.output_path), format)
}

pub fn write_report(rows: &[ExperimentRow], path: &Path, format: ReportFormat) -> Result<()> {
    std::fs::write(path, render_report(rows, format)?)?;
    Ok(())
}
