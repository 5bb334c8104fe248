//! Shared gamma frailty proportional-hazards models and cross-validatory
//! Z-residual diagnostics for clustered, right-censored survival data.
//!
//! The crate is organised bottom-up:
//!
//! - [`survdata`]: the clustered survival data model, CSV ingestion and the
//!   embedded kidney infection dataset.
//! - [`frailty`]: penalized partial likelihood fitting of the shared gamma
//!   frailty Cox model, the Breslow baseline hazard and survival prediction.
//! - [`residuals`]: randomized survival probabilities, Z-residuals and
//!   Cox-Snell residuals.
//! - [`crossval`]: constrained K-fold / leave-one-out plans and the
//!   cross-validatory residual pipeline.
//! - [`diagnostics`]: Shapiro-Wilk, tail probabilities, AUC, QQ and CHF
//!   coordinates.
//! - [`simulate`]: Weibull frailty generators and the Monte Carlo experiment
//!   harness.

pub mod config;
pub mod crossval;
pub mod diagnostics;
mod error;
pub mod frailty;
pub mod manifest;
pub mod normal;
pub mod residuals;
pub mod rng;
pub mod simulate;
pub mod survdata;
pub mod svg;

pub use error::{Error, Result};
pub use frailty::{breslow_chf, fit, FitOptions, FrailtyFit, StepChf, ThetaMode};
pub use residuals::{Regime, ResidualSet};
pub use survdata::{CovariateKind, CovariateSchema, SurvivalDataset};

/// Library version embedded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
