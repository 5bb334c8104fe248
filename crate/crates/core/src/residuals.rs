//! Randomized survival probabilities, Z-residuals and Cox-Snell residuals.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::frailty::{expand_row, FrailtyFit};
use crate::survdata::{format_float, SurvivalDataset};
use crate::{normal, rng, Error, Result};

/// Lower and upper clamp applied to randomized survival probabilities.
pub const RSP_FLOOR: f64 = 1e-15;
pub const RSP_CEIL: f64 = 1.0 - 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    NoCV,
    KFold(usize),
    LOOCV,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::NoCV => write!(f, "nocv"),
            Regime::KFold(k) => write!(f, "kfold:{k}"),
            Regime::LOOCV => write!(f, "loocv"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "none" | "nocv" | "no-cv" => Ok(Regime::NoCV),
            "loocv" => Ok(Regime::LOOCV),
            _ => {
                let k = s
                    .strip_prefix("kfold:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::invalid(format!("unknown cross-validation regime '{s}'")))?;
                Ok(Regime::KFold(k))
            }
        }
    }
}

/// Randomized survival probability: `s` for events, `u * s` for censored
/// observations.
pub fn rsp(surv_prob_at_y: f64, status: bool, u: f64) -> Result<f64> {
    if !(surv_prob_at_y > 0.0 && surv_prob_at_y <= 1.0) {
        return Err(Error::invalid(format!("survival probability {surv_prob_at_y} outside (0, 1]")));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("uniform draw {u} outside (0, 1)")));
    }
    Ok(if status { surv_prob_at_y } else { u * surv_prob_at_y })
}

fn check_open_unit(rsp: f64) -> Result<()> {
    if rsp > 0.0 && rsp < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("randomized survival probability {rsp} outside (0, 1)")))
    }
}

pub fn z_residual(rsp: f64) -> Result<f64> {
    check_open_unit(rsp)?;
    Ok(-normal::quantile(rsp))
}

pub fn cs_residual(rsp: f64) -> Result<f64> {
    check_open_unit(rsp)?;
    Ok(-rsp.ln())
}

/// Predicted survival probabilities at the observed times, before
/// randomization. Computing these is the expensive part of every regime;
/// [`SurvivalPrediction::randomize`] turns them into residuals for any seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalPrediction {
    pub row_ids: Vec<usize>,
    pub time: Vec<f64>,
    pub status: Vec<bool>,
    pub cluster: Vec<String>,
    /// `None` marks observations without a residual.
    pub surv: Vec<Option<f64>>,
    pub regime: Regime,
    /// Folds whose training fit failed.
    pub failed_folds: usize,
}

impl SurvivalPrediction {
    pub(crate) fn empty(data: &SurvivalDataset, regime: Regime) -> Self {
        let obs = data.observations();
        Self {
            row_ids: obs.iter().map(|o| o.row_id).collect(),
            time: obs.iter().map(|o| o.time).collect(),
            status: obs.iter().map(|o| o.status).collect(),
            cluster: obs.iter().map(|o| data.cluster_labels()[o.cluster].clone()).collect(),
            surv: vec![None; obs.len()],
            regime,
            failed_folds: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    /// Draw one uniform per observation from the row-keyed stream and form
    /// RSP, Z and Cox-Snell residuals.
    pub fn randomize(&self, seed: u64) -> ResidualSet {
        let n = self.len();
        let mut out = ResidualSet {
            row_ids: self.row_ids.clone(),
            time: self.time.clone(),
            status: self.status.clone(),
            cluster: self.cluster.clone(),
            surv: self.surv.clone(),
            rsp: vec![None; n],
            z: vec![None; n],
            cs: vec![None; n],
            regime: self.regime,
            seed,
            failed_folds: self.failed_folds,
        };
        for i in 0..n {
            let Some(s) = self.surv[i] else { continue };
            let raw = if self.status[i] { s } else { rng::row_uniform(seed, self.row_ids[i]) * s };
            let r = raw.clamp(RSP_FLOOR, RSP_CEIL);
            out.rsp[i] = Some(r);
            out.z[i] = Some(-normal::quantile(r));
            out.cs[i] = Some(-r.ln());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub row_ids: Vec<usize>,
    pub time: Vec<f64>,
    pub status: Vec<bool>,
    pub cluster: Vec<String>,
    /// Model survival probability at the observed time.
    pub surv: Vec<Option<f64>>,
    pub rsp: Vec<Option<f64>>,
    pub z: Vec<Option<f64>>,
    pub cs: Vec<Option<f64>>,
    pub regime: Regime,
    pub seed: u64,
    pub failed_folds: usize,
}

impl ResidualSet {
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn n_used(&self) -> usize {
        self.z.iter().flatten().count()
    }

    /// Non-NA Z-residuals in row order.
    pub fn z_values(&self) -> Vec<f64> {
        self.z.iter().flatten().copied().collect()
    }

    /// Non-NA Cox-Snell residuals paired with their event flags.
    pub fn cs_with_status(&self) -> Vec<(f64, bool)> {
        self.cs.iter().zip(&self.status).filter_map(|(c, &s)| c.map(|c| (c, s))).collect()
    }

    /// Row ids whose |z| exceeds `threshold`.
    pub fn outlier_rows(&self, threshold: f64) -> Vec<usize> {
        self.z.iter().zip(&self.row_ids).filter_map(|(z, &r)| z.filter(|z| z.abs() > threshold).map(|_| r)).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row_id", "time", "status", "cluster", "rsp", "z", "cs", "regime", "seed"])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), format_float);
        for i in 0..self.len() {
            w.write_record([
                self.row_ids[i].to_string(),
                format_float(self.time[i]),
                (self.status[i] as u8).to_string(),
                self.cluster[i].clone(),
                opt(self.rsp[i]),
                opt(self.z[i]),
                opt(self.cs[i]),
                self.regime.to_string(),
                self.seed.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<residuals>", e))?;
        Ok(())
    }
}

/// Survival probabilities of every observation under a fit to the full data.
pub fn predict_nocv(fit: &FrailtyFit, data: &SurvivalDataset) -> Result<SurvivalPrediction> {
    if fit.n != data.n() || fit.cluster_labels != data.cluster_labels() {
        return Err(Error::invalid("fit was not produced from this dataset"));
    }
    let mut pred = SurvivalPrediction::empty(data, Regime::NoCV);
    for (i, o) in data.observations().iter().enumerate() {
        let x = expand_row(data, &o.covariates);
        let s = fit.predict_survival(&x, &data.cluster_labels()[o.cluster], o.time)?;
        pred.surv[i] = Some(s);
    }
    Ok(pred)
}

/// Residuals from the full-data fit.
pub fn residuals_nocv(fit: &FrailtyFit, data: &SurvivalDataset, seed: u64) -> Result<ResidualSet> {
    Ok(predict_nocv(fit, data)?.randomize(seed))
}
