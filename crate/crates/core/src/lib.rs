//! Backwards generative Gaussian networks and the information-theoretic
//! machinery used to lower-bound their sample complexity.
//!
//! The label `y` is drawn first and the input `x` is produced by a linear
//! Gaussian chain `z_0 -> z_1 -> ... -> z_d = x`. Restricting the layer
//! matrices to permutation blocks yields a finite hypothesis class whose
//! pairwise KL divergences and risks have closed forms. These give Fano-type
//! lower bounds, which the [`experiment`] module checks against an exact MAP
//! decoder.
//!
//! Module map:
//!
//! - [`hypothesis`]: the finite class `G_{p,d,r}`, indexing and enumeration.
//! - [`chain`]: joint precision, marginal law of `x | y`, dataset sampling.
//! - [`info`]: KL divergences, mutual-information caps, Monte Carlo oracles.
//! - [`fano`]: Fano and distance-based Fano bounds, the `rho` metric.
//! - [`risk`]: exact prediction risk, excess-risk gap constants.
//! - [`experiment`]: MAP decoding and empirical failure-rate experiments.

pub mod chain;
pub mod error;
pub mod experiment;
pub mod fano;
pub mod format;
pub mod hypothesis;
pub mod info;
pub mod risk;
pub mod rng;
pub mod special;

pub use chain::{ChainParams, Dataset, GaussianDist, Label, MarginalLaw, Sample};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentRow, MapDecoder, ReportFormat};
pub use fano::{BoundKind, BoundReport, Neighborhoods};
pub use hypothesis::{
    ClassParams, GeneralNetwork, Hypothesis, Permutation, SignVector, StructuredLayer, DEFAULT_BUDGET,
};
pub use info::{KlReport, McEstimate, SingularProfile};
pub use risk::{LinearApprox, PairCase, RiskGapConstants};
