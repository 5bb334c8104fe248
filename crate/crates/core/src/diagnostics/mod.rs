//! Goodness-of-fit and outlier statistics computed from residual sets.

mod swilk;

pub use swilk::shapiro_wilk;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::residuals::{Regime, ResidualSet, SurvivalPrediction};
use crate::{normal, Error, Result};

/// Default outlier threshold on |z|.
pub const OUTLIER_THRESHOLD: f64 = 3.0;

/// `P(|Z| > 3)` for a standard normal `Z`.
pub fn normal_tail(threshold: f64) -> f64 {
    2.0 * normal::sf(threshold)
}

/// Fraction of non-missing residuals with |z| above `threshold`.
pub fn tail_probability(z: &[Option<f64>], threshold: f64) -> Result<f64> {
    let used: Vec<f64> = z.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::invalid("no residuals available"));
    }
    Ok(used.iter().filter(|v| v.abs() > threshold).count() as f64 / used.len() as f64)
}

/// Mann-Whitney AUC `P(a < b) + P(a = b) / 2`. With `a` the p-values of the
/// misspecified or contaminated condition, 1 means perfect separation.
pub fn auc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("AUC needs two non-empty groups"));
    }
    let mut sorted_b = b.to_vec();
    sorted_b.sort_by(f64::total_cmp);
    let mut score = 0.0;
    for &x in a {
        let above = sorted_b.len() - sorted_b.partition_point(|&v| v <= x);
        let ties = sorted_b.partition_point(|&v| v <= x) - sorted_b.partition_point(|&v| v < x);
        score += above as f64 + 0.5 * ties as f64;
    }
    Ok(score / (a.len() * b.len()) as f64)
}

/// Confusion counts of outlier flags against known contamination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn sensitivity(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        let neg = self.fp + self.tn;
        (neg > 0).then(|| self.fp as f64 / neg as f64)
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.fp += other.fp;
        self.tn += other.tn;
    }
}

/// Cross-tabulate flags (`None` for missing residuals, which are skipped)
/// against the truth.
pub fn sensitivity_fpr(flags: &[Option<bool>], truth: &[bool]) -> Result<Confusion> {
    if flags.len() != truth.len() {
        return Err(Error::invalid("flags and truth differ in length"));
    }
    let mut c = Confusion::default();
    for (f, &t) in flags.iter().zip(truth) {
        match (f, t) {
            (None, _) => {}
            (Some(true), true) => c.tp += 1,
            (Some(false), true) => c.fn_ += 1,
            (Some(true), false) => c.fp += 1,
            (Some(false), false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Squared Pearson correlation between fitted and true survival
/// probabilities.
pub fn r_squared(fitted: &[f64], truth: &[f64]) -> Result<f64> {
    if fitted.len() != truth.len() || fitted.len() < 2 {
        return Err(Error::invalid("R-squared needs two equal-length samples of size >= 2"));
    }
    let n = fitted.len() as f64;
    let mf = fitted.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sff, mut stt, mut sft) = (0.0, 0.0, 0.0);
    for (f, t) in fitted.iter().zip(truth) {
        sff += (f - mf) * (f - mf);
        stt += (t - mt) * (t - mt);
        sft += (f - mf) * (t - mt);
    }
    if stt <= 0.0 {
        return Err(Error::invalid("true survival probabilities are constant"));
    }
    if sff <= 0.0 {
        return Ok(0.0);
    }
    Ok(sft * sft / (sff * stt))
}

/// Normal QQ coordinates `(Φ⁻¹((i - 0.5)/m), z_(i))` of the non-missing
/// residuals.
pub fn qq_coordinates(z: &[Option<f64>]) -> Result<Vec<(f64, f64)>> {
    let mut used: Vec<f64> = z.iter().flatten().copied().collect();
    if used.len() < 2 {
        return Err(Error::invalid("QQ coordinates need at least two residuals"));
    }
    used.sort_by(f64::total_cmp);
    let m = used.len() as f64;
    Ok(used.into_iter().enumerate().map(|(i, v)| (normal::quantile((i as f64 + 0.5) / m), v)).collect())
}

/// Nelson-Aalen cumulative hazard of Cox-Snell residuals treated as
/// right-censored data, evaluated at each distinct event residual.
pub fn cs_chf_coordinates(cs: &[(f64, bool)]) -> Result<Vec<(f64, f64)>> {
    if !cs.iter().any(|c| c.1) {
        return Err(Error::invalid("Cox-Snell CHF needs at least one event"));
    }
    let mut sorted = cs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let mut out = Vec::new();
    let mut h = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        let mut d = 0usize;
        while j < n && sorted[j].0 == sorted[i].0 {
            d += sorted[j].1 as usize;
            j += 1;
        }
        if d > 0 {
            h += d as f64 / (n - i) as f64;
            out.push((sorted[i].0, h));
        }
        i = j;
    }
    Ok(out)
}

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1) using the
/// asymptotic distribution with Stephens' small-sample correction.
pub fn ks_uniform(sample: &[f64]) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x.iter().enumerate().map(|(i, &v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n)).fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    Ok((d, kolmogorov_sf(lambda)))
}

fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Shapiro-Wilk p-values of the Z-residuals for each seed, with the
/// predicted survival probabilities held fixed. `None` where the test could
/// not be computed.
pub fn replicated_sw(pred: &SurvivalPrediction, seeds: &[u64]) -> Vec<Option<f64>> {
    seeds.par_iter().map(|&s| shapiro_wilk(&pred.randomize(s).z_values()).ok().map(|r| r.1)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub regime: Regime,
    pub seed: u64,
    pub n_used: usize,
    pub sw_stat: Option<f64>,
    pub sw_p: Option<f64>,
    pub tail_prob: Option<f64>,
    pub threshold: f64,
    pub outlier_rows: Vec<usize>,
    pub failed_folds: usize,
    pub qq: Vec<(f64, f64)>,
    pub cs_chf: Vec<(f64, f64)>,
    /// Replicated Shapiro-Wilk p-values over seeds, if requested.
    pub replicated_sw: Vec<Option<f64>>,
}

impl DiagnosticsReport {
    pub fn new(set: &ResidualSet, threshold: f64) -> Self {
        let sw = shapiro_wilk(&set.z_values()).ok();
        Self {
            regime: set.regime,
            seed: set.seed,
            n_used: set.n_used(),
            sw_stat: sw.map(|s| s.0),
            sw_p: sw.map(|s| s.1),
            tail_prob: tail_probability(&set.z, threshold).ok(),
            threshold,
            outlier_rows: set.outlier_rows(threshold),
            failed_folds: set.failed_folds,
            qq: qq_coordinates(&set.z).unwrap_or_default(),
            cs_chf: cs_chf_coordinates(&set.cs_with_status()).unwrap_or_default(),
            replicated_sw: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
