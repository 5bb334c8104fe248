//! TOML experiment configuration.
//!
//! ```toml
//! seed = 1
//! replicates = 200
//! regimes = ["nocv", "kfold:10", "loocv"]
//! theta = "profile"
//!
//! [[scenario]]
//! kind = "nonlinear"
//! m = [10, 30, 50]
//! beta2 = -2.0
//!
//! [[scenario]]
//! kind = "outlier"
//! m = [20]
//! contamination = "fixed:10"
//! ```
//!
//! Every scenario field other than `kind` is optional and falls back to the
//! scenario's default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::frailty::ThetaMode;
use crate::residuals::Regime;
use crate::rng;
use crate::simulate::{Contamination, Scenario, ScenarioConfig};
use crate::{Error, Result};

fn default_seed() -> u64 {
    1
}

fn default_replicates() -> usize {
    200
}

fn default_regimes() -> Vec<String> {
    vec!["nocv".into(), "kfold:10".into(), "loocv".into()]
}

fn default_theta() -> String {
    "profile".into()
}

fn default_g() -> usize {
    10
}

fn default_m() -> Vec<usize> {
    vec![10, 30, 50]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<String>,
    #[serde(default = "default_theta")]
    pub theta: String,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<ScenarioEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub kind: Scenario,
    #[serde(default = "default_g")]
    pub g: usize,
    #[serde(default = "default_m")]
    pub m: Vec<usize>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub beta: Option<[f64; 2]>,
    pub beta2: Option<f64>,
    pub frailty_var: Option<f64>,
    pub target_censoring: Option<f64>,
    pub contamination: Option<Contamination>,
    pub jitter_floor: Option<f64>,
    pub replicates: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn regimes(&self) -> Result<Vec<Regime>> {
        self.regimes.iter().map(|r| r.parse()).collect()
    }

    pub fn theta_mode(&self) -> Result<ThetaMode> {
        self.theta.parse()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("no [[scenario]] entries".into()));
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("no regimes listed".into()));
        }
        self.regimes()?;
        self.theta_mode()?;
        for cell in self.cells()? {
            cell.validate()?;
        }
        Ok(())
    }

    /// One scenario configuration per (entry, m). Each cell gets its own
    /// seed derived from the top-level seed, its entry index and `m`.
    pub fn cells(&self) -> Result<Vec<ScenarioConfig>> {
        let mut out = Vec::new();
        for (idx, e) in self.scenarios.iter().enumerate() {
            if e.m.is_empty() {
                return Err(Error::Config(format!("scenario {} lists no cluster sizes", idx + 1)));
            }
            for &m in &e.m {
                let mut c = match e.kind {
                    Scenario::Nonlinear => ScenarioConfig::nonlinear(e.g, m),
                    Scenario::Outlier => ScenarioConfig::outlier(e.g, m),
                };
                c.alpha = e.alpha.unwrap_or(c.alpha);
                c.lambda = e.lambda.unwrap_or(c.lambda);
                c.beta = e.beta.unwrap_or(c.beta);
                c.beta2 = e.beta2.unwrap_or(c.beta2);
                c.frailty_var = e.frailty_var.unwrap_or(c.frailty_var);
                c.target_censoring = e.target_censoring.unwrap_or(c.target_censoring);
                c.contamination = e.contamination.unwrap_or(c.contamination);
                c.jitter_floor = e.jitter_floor.unwrap_or(c.jitter_floor);
                c.replicates = e.replicates.unwrap_or(self.replicates);
                c.seed = rng::derive(self.seed, idx as u64, m as u64);
                out.push(c);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml("[[scenario]]\nkind = \"outlier\"\n").unwrap();
        assert_eq!(cfg.replicates, 200);
        assert_eq!(cfg.regimes().unwrap(), vec![Regime::NoCV, Regime::KFold(10), Regime::LOOCV]);
        let cells = cfg.cells().unwrap();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[0].contamination, Contamination::Fixed(10));
        assert_eq!(cells.iter().map(|c| c.m).collect::<Vec<_>>(), vec![10, 30, 50]);
    }

    #[test]
    fn overrides_and_round_trip() {
        let text = r#"
seed = 9
replicates = 5
regimes = ["nocv", "loocv"]
theta = "fixed:0.5"

[[scenario]]
kind = "nonlinear"
m = [20]
beta2 = -1.0

[[scenario]]
kind = "outlier"
g = 5
m = [10, 40]
contamination = "fraction:0.1"
jitter_floor = 2.0
replicates = 3
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.theta_mode().unwrap(), ThetaMode::Fixed(0.5));
        let cells = cfg.cells().unwrap();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[0].beta2, -1.0);
        assert_eq!(cells[0].replicates, 5);
        assert_eq!(cells[2].g, 5);
        assert_eq!(cells[2].contamination, Contamination::Fraction(0.1));
        assert_eq!(cells[2].replicates, 3);
        assert_ne!(cells[1].seed, cells[2].seed);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("seed = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[[scenario]]\nkind = \"other\"\n").is_err());
        assert!(ExperimentConfig::from_toml("regimes = [\"kfold:x\"]\n[[scenario]]\nkind = \"outlier\"\n").is_err());
        assert!(ExperimentConfig::from_toml("[[scenario]]\nkind = \"outlier\"\nm = []\n").is_err());
        assert!(ExperimentConfig::from_toml("[[scenario]]\nkind = \"outlier\"\ntarget_censoring = 1.5\n").is_err());
        assert!(ExperimentConfig::from_toml("[[scenario]]\nkind = \"outlier\"\nbogus = 1\n").is_err());
    }
}
