//! Weibull shared-frailty data generators and the Monte Carlo experiment
//! harness.
//!
//! Event times follow `S(t | x, z) = exp(-lambda * z * exp(eta) * t^alpha)`
//! with gamma frailties of mean one. Two linear predictors are provided:
//!
//! - non-linear: `eta = b1 x1 + beta2 log(x2) + b3 x3`, `x2` half-normal;
//! - outlier: `eta = b1 x1 + beta2 x2 + b3 x3`, `x2` standard normal, with a
//!   subset of event times pushed later by `max(w, e)`, `e ~ Exp(1)`.
//!
//! In both, `x1 ~ U(0, 1)`, `x3 ~ Bernoulli(0.25)` and censoring times are
//! exponential per observation with a rate calibrated to a target
//! censoring fraction.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossval::{cv_predict_from, make_kfold, make_loocv};
use crate::diagnostics::{auc, sensitivity_fpr, shapiro_wilk, tail_probability, Confusion, OUTLIER_THRESHOLD};
use crate::frailty::{fit_with, FitOptions, FrailtyFit, ThetaMode};
use crate::residuals::{predict_nocv, Regime, SurvivalPrediction};
use crate::survdata::{format_float, CovariateSchema, CovariateValue, Record, SurvivalDataset};
use crate::{diagnostics, rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Nonlinear,
    Outlier,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Nonlinear => "nonlinear",
            Scenario::Outlier => "outlier",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Contamination {
    None,
    /// A fixed number of event times.
    Fixed(usize),
    /// A fraction of the event times, rounded to the nearest count.
    Fraction(f64),
}

impl Contamination {
    pub fn count(&self, events: usize) -> usize {
        match *self {
            Contamination::None => 0,
            Contamination::Fixed(k) => k,
            Contamination::Fraction(f) => (f * events as f64).round() as usize,
        }
    }
}

impl fmt::Display for Contamination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contamination::None => write!(f, "none"),
            Contamination::Fixed(k) => write!(f, "fixed:{k}"),
            Contamination::Fraction(x) => write!(f, "fraction:{x}"),
        }
    }
}

impl FromStr for Contamination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown contamination '{s}'"));
        match s.split_once(':') {
            None if s == "none" => Ok(Contamination::None),
            Some(("fixed", k)) => k.parse().map(Contamination::Fixed).map_err(|_| bad()),
            Some(("fraction", x)) => {
                let x: f64 = x.parse().map_err(|_| bad())?;
                if (0.0..=1.0).contains(&x) {
                    Ok(Contamination::Fraction(x))
                } else {
                    Err(bad())
                }
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Contamination {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Contamination> for String {
    fn from(c: Contamination) -> String {
        c.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub g: usize,
    pub m: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// Coefficients of `x1` and `x3`.
    pub beta: [f64; 2],
    /// Coefficient of `log(x2)` (non-linear) or `x2` (outlier).
    pub beta2: f64,
    pub frailty_var: f64,
    pub target_censoring: f64,
    pub contamination: Contamination,
    pub jitter_floor: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Non-linear covariate scenario with a strong effect and 50% censoring.
    pub fn nonlinear(g: usize, m: usize) -> Self {
        Self {
            scenario: Scenario::Nonlinear,
            g,
            m,
            alpha: 3.0,
            lambda: 0.007,
            beta: [1.0, 0.5],
            beta2: -2.0,
            frailty_var: 0.5,
            target_censoring: 0.5,
            contamination: Contamination::None,
            jitter_floor: 4.0,
            replicates: 200,
            seed: 1,
        }
    }

    /// Outlier scenario with 10 strongly jittered event times.
    pub fn outlier(g: usize, m: usize) -> Self {
        Self { scenario: Scenario::Outlier, contamination: Contamination::Fixed(10), ..Self::nonlinear(g, m) }
    }

    pub fn n(&self) -> usize {
        self.g * self.m
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.g == 0 || self.m == 0 || self.replicates == 0 {
            return fail("g, m and replicates must be at least 1");
        }
        if !(self.alpha > 0.0 && self.lambda > 0.0) {
            return fail("alpha and lambda must be positive");
        }
        if !(self.target_censoring > 0.0 && self.target_censoring < 1.0) {
            return fail("target_censoring must lie in (0, 1)");
        }
        if !(self.frailty_var > 0.0) || !self.frailty_var.is_finite() {
            return fail("frailty_var must be positive");
        }
        if !(self.jitter_floor >= 0.0) {
            return fail("jitter_floor must be non-negative");
        }
        if self.beta.iter().chain([&self.beta2]).any(|b| !b.is_finite()) {
            return fail("coefficients must be finite");
        }
        Ok(())
    }

    fn eta(&self, x: &[f64; 3]) -> f64 {
        let x2 = match self.scenario {
            Scenario::Nonlinear => x[1].ln(),
            Scenario::Outlier => x[1],
        };
        self.beta[0] * x[0] + self.beta2 * x2 + self.beta[1] * x[2]
    }

    fn draw_covariates<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        let x1: f64 = rng.gen();
        let normal: f64 = StandardNormal.sample(rng);
        let x2 = match self.scenario {
            Scenario::Nonlinear => {
                // Half-normal; reject exact zero so log(x2) stays finite.
                let mut v = normal.abs();
                while v == 0.0 {
                    v = {
                        let d: f64 = StandardNormal.sample(rng);
                        d.abs()
                    };
                }
                v
            }
            Scenario::Outlier => normal,
        };
        let x3 = if rng.gen::<f64>() < 0.25 { 1.0 } else { 0.0 };
        [x1, x2, x3]
    }

    /// Weibull event time from a uniform `v` by inverting the survival
    /// function.
    pub fn invert(&self, v: f64, z: f64, eta: f64) -> f64 {
        (-v.ln() / (self.lambda * z * eta.exp())).powf(1.0 / self.alpha)
    }

    /// Generating survival function at `t`.
    pub fn survival(&self, t: f64, z: f64, eta: f64) -> f64 {
        (-self.lambda * z * eta.exp() * t.powf(self.alpha)).exp()
    }
}

/// A generated dataset with the quantities that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    /// Covariates `x1`, `x2`, `x3` on their raw scale.
    pub data: SurvivalDataset,
    pub frailties: Vec<f64>,
    pub eta: Vec<f64>,
    /// Generating survival probability at each observed time.
    pub true_sp: Vec<f64>,
    pub outlier_truth: Vec<bool>,
    pub censoring_rate: f64,
}

impl SimulatedDataset {
    /// Dataset with `log(x2)` in place of `x2`.
    pub fn log_x2(&self) -> Result<SurvivalDataset> {
        self.data.with_covariates(sim_schema(), |o| {
            let mut c = o.covariates.clone();
            if let CovariateValue::Numeric(v) = c[1] {
                c[1] = CovariateValue::Numeric(v.ln());
            }
            c
        })
    }
}

fn sim_schema() -> CovariateSchema {
    CovariateSchema::new().numeric("x1").numeric("x2").numeric("x3")
}

const PILOT_DRAWS: usize = 100_000;
const LABEL_PILOT: u64 = 0x7069_6c6f;
const LABEL_DATA: u64 = 0x6461_7461;
const LABEL_JITTER: u64 = 0x6a69_7474;

/// Exponential censoring rate whose marginal censoring probability matches
/// the target, by bisection on a pilot sample of event times.
pub fn calibrate_censoring(config: &ScenarioConfig) -> Result<f64> {
    config.validate()?;
    let mut rng = rng::substream(config.seed, LABEL_PILOT, 0);
    let gamma = frailty_dist(config)?;
    let times: Vec<f64> = (0..PILOT_DRAWS)
        .map(|_| {
            let z = gamma.sample(&mut rng);
            let x = config.draw_covariates(&mut rng);
            let v = 1.0 - rng.gen::<f64>();
            config.invert(v, z, config.eta(&x))
        })
        .collect();
    calibrate_rate(&times, config.target_censoring)
}

/// Rate `r` with `mean(1 - exp(-r t)) = target`: the probability that an
/// exponential censoring time falls before each event time, averaged.
pub fn calibrate_rate(times: &[f64], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) || times.is_empty() {
        return Err(Error::Config("censoring target must lie in (0, 1)".into()));
    }
    let censored = |rate: f64| times.iter().map(|t| -(-rate * t).exp_m1()).sum::<f64>() / times.len() as f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut expansions = 0;
    while censored(hi) < target {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 2000 {
            return Err(Error::Config("censoring calibration failed to bracket the target".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if censored(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn frailty_dist(config: &ScenarioConfig) -> Result<Gamma<f64>> {
    Gamma::new(1.0 / config.frailty_var, config.frailty_var).map_err(|e| Error::Config(e.to_string()))
}

struct Draws {
    x: Vec<[f64; 3]>,
    z: Vec<f64>,
    eta: Vec<f64>,
    t: Vec<f64>,
    c: Vec<f64>,
}

fn draw(config: &ScenarioConfig, rate: f64) -> Result<Draws> {
    let mut rng = rng::substream(config.seed, LABEL_DATA, 0);
    let gamma = frailty_dist(config)?;
    let cens = Exp::new(rate).map_err(|e| Error::Config(e.to_string()))?;
    let n = config.n();
    let mut d = Draws {
        x: Vec::with_capacity(n),
        z: Vec::with_capacity(config.g),
        eta: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
        c: Vec::with_capacity(n),
    };
    for _ in 0..config.g {
        let z = gamma.sample(&mut rng);
        d.z.push(z);
        for _ in 0..config.m {
            let x = config.draw_covariates(&mut rng);
            let eta = config.eta(&x);
            let v = 1.0 - rng.gen::<f64>();
            d.t.push(config.invert(v, z, eta));
            d.c.push(cens.sample(&mut rng));
            d.x.push(x);
            d.eta.push(eta);
        }
    }
    Ok(d)
}

fn assemble(
    config: &ScenarioConfig,
    d: &Draws,
    times: &[f64],
    status: &[bool],
    flags: Vec<bool>,
    rate: f64,
) -> Result<SimulatedDataset> {
    let n = config.n();
    let records = (0..n).map(|i| Record {
        row_id: i + 1,
        time: times[i],
        status: status[i] as u8,
        cluster: (i / config.m + 1).to_string(),
        covariates: d.x[i].iter().map(|v| CovariateValue::Numeric(*v)).collect(),
    });
    let data = SurvivalDataset::new(sim_schema(), records)?;
    let true_sp = (0..n).map(|i| config.survival(times[i], d.z[i / config.m], d.eta[i])).collect();
    Ok(SimulatedDataset {
        data,
        frailties: d.z.clone(),
        eta: d.eta.clone(),
        true_sp,
        outlier_truth: flags,
        censoring_rate: rate,
    })
}

fn clean(config: &ScenarioConfig, d: &Draws, rate: f64) -> Result<SimulatedDataset> {
    let times: Vec<f64> = d.t.iter().zip(&d.c).map(|(t, c)| t.min(*c)).collect();
    let status: Vec<bool> = d.t.iter().zip(&d.c).map(|(t, c)| t < c).collect();
    assemble(config, d, &times, &status, vec![false; config.n()], rate)
}

/// Non-linear covariate dataset using the calibrated censoring rate `rate`.
pub fn gen_nonlinear_with_rate(config: &ScenarioConfig, rate: f64) -> Result<SimulatedDataset> {
    config.validate()?;
    if config.scenario != Scenario::Nonlinear || config.contamination != Contamination::None {
        return Err(Error::Config("non-linear generator needs the non-linear scenario without contamination".into()));
    }
    clean(config, &draw(config, rate)?, rate)
}

pub fn gen_nonlinear(config: &ScenarioConfig) -> Result<SimulatedDataset> {
    gen_nonlinear_with_rate(config, calibrate_censoring(config)?)
}

/// Clean and contaminated versions of one outlier-scenario draw.
pub fn gen_outlier_pair_with_rate(config: &ScenarioConfig, rate: f64) -> Result<(SimulatedDataset, SimulatedDataset)> {
    config.validate()?;
    if config.scenario != Scenario::Outlier || config.contamination == Contamination::None {
        return Err(Error::Config("outlier generator needs the outlier scenario with contamination".into()));
    }
    let d = draw(config, rate)?;
    let base = clean(config, &d, rate)?;
    let events: Vec<usize> = (0..config.n()).filter(|&i| d.t[i] < d.c[i]).collect();
    let count = config.contamination.count(events.len());
    if count > events.len() {
        return Err(Error::invalid(format!(
            "cannot contaminate {count} event times with only {} events",
            events.len()
        )));
    }
    let mut rng = rng::substream(config.seed, LABEL_JITTER, 0);
    let chosen = sample(&mut rng, events.len(), count);
    let mut times: Vec<f64> = d.t.iter().zip(&d.c).map(|(t, c)| t.min(*c)).collect();
    let mut status: Vec<bool> = d.t.iter().zip(&d.c).map(|(t, c)| t < c).collect();
    let mut flags = vec![false; config.n()];
    for k in chosen.into_iter() {
        let i = events[k];
        let e: f64 = Exp1.sample(&mut rng);
        let jittered = d.t[i] + jitter(config.jitter_floor, e);
        if jittered < d.c[i] {
            times[i] = jittered;
        } else {
            times[i] = d.c[i];
            status[i] = false;
        }
        flags[i] = true;
    }
    let dirty = assemble(config, &d, &times, &status, flags, rate)?;
    Ok((base, dirty))
}

/// Jitter added to a contaminated event time.
pub fn jitter(floor: f64, e: f64) -> f64 {
    floor.max(e)
}

pub fn gen_outlier_pair(config: &ScenarioConfig) -> Result<(SimulatedDataset, SimulatedDataset)> {
    gen_outlier_pair_with_rate(config, calibrate_censoring(config)?)
}

/// Contaminated dataset of the outlier scenario.
pub fn gen_outlier_scenario(config: &ScenarioConfig) -> Result<SimulatedDataset> {
    gen_outlier_pair(config).map(|p| p.1)
}

/// One row of the tidy experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub scenario: String,
    pub n: usize,
    pub regime: String,
    pub model: String,
    pub metric: String,
    pub value: Option<f64>,
    pub mc_se: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentTable {
    pub fn get(&self, scenario: &str, n: usize, regime: &str, model: &str, metric: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| {
            r.scenario == scenario && r.n == n && r.regime == regime && r.model == model && r.metric == metric
        })
    }

    pub fn value(&self, scenario: &str, n: usize, regime: &str, model: &str, metric: &str) -> Option<f64> {
        self.get(scenario, n, regime, model, metric).and_then(|r| r.value)
    }

    pub fn extend(&mut self, other: ExperimentTable) {
        self.rows.extend(other.rows);
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["scenario", "n", "regime", "model", "metric", "value", "mc_se"])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), format_float);
        for r in &self.rows {
            w.write_record([
                r.scenario.clone(),
                r.n.to_string(),
                r.regime.clone(),
                r.model.clone(),
                r.metric.clone(),
                opt(r.value),
                opt(r.mc_se),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<experiment>", e))?;
        Ok(())
    }
}

/// Per-replicate outcome of one (regime, condition) cell.
#[derive(Debug, Clone, Default)]
struct Cell {
    p: Option<f64>,
    tail: Option<f64>,
    r2: Option<f64>,
    confusion: Option<Confusion>,
    failed_folds: usize,
    na: usize,
    failed: bool,
}

/// Conditions compared in a scenario: fitted model forms for the non-linear
/// scenario, clean versus contaminated data for the outlier scenario. The
/// second entry is the condition expected to be rejected.
pub fn conditions(scenario: Scenario) -> [&'static str; 2] {
    match scenario {
        Scenario::Nonlinear => ["true", "wrong"],
        Scenario::Outlier => ["clean", "contaminated"],
    }
}

fn evaluate_cell(
    data: &SurvivalDataset,
    full: Option<&FrailtyFit>,
    regime: Regime,
    sim: &SimulatedDataset,
    mode: ThetaMode,
    opts: &FitOptions,
    fold_seed: u64,
    u_seed: u64,
) -> Cell {
    let Some(full) = full else {
        return Cell { failed: true, ..Cell::default() };
    };
    let pred: Result<SurvivalPrediction> = match regime {
        Regime::NoCV => predict_nocv(full, data),
        Regime::LOOCV => make_loocv(data).and_then(|p| cv_predict_from(data, &p, mode, opts, Some(full))),
        Regime::KFold(k) => {
            make_kfold(data, k, fold_seed).and_then(|p| cv_predict_from(data, &p, mode, opts, Some(full)))
        }
    };
    let Ok(pred) = pred else {
        return Cell { failed: true, ..Cell::default() };
    };
    let set = pred.randomize(u_seed);
    let z = set.z_values();
    let (fitted, truth): (Vec<f64>, Vec<f64>) =
        set.surv.iter().zip(&sim.true_sp).filter_map(|(s, t)| s.map(|s| (s, *t))).unzip();
    let flags: Vec<Option<bool>> = set.z.iter().map(|z| z.map(|z| z.abs() > OUTLIER_THRESHOLD)).collect();
    Cell {
        p: shapiro_wilk(&z).ok().map(|r| r.1),
        tail: tail_probability(&set.z, OUTLIER_THRESHOLD).ok(),
        r2: diagnostics::r_squared(&fitted, &truth).ok(),
        confusion: sensitivity_fpr(&flags, &sim.outlier_truth).ok(),
        failed_folds: set.failed_folds,
        na: set.len() - set.n_used(),
        failed: false,
    }
}

fn mean_se(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some((var / n as f64).sqrt()))
}

/// Hanley-McNeil standard error of an AUC.
fn auc_se(a: f64, na: usize, nb: usize) -> f64 {
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let (na, nb) = (na as f64, nb as f64);
    ((a * (1.0 - a) + (na - 1.0) * (q1 - a * a) + (nb - 1.0) * (q2 - a * a)) / (na * nb)).max(0.0).sqrt()
}

/// Run every replicate of one scenario configuration and aggregate.
pub fn run_experiment(config: &ScenarioConfig, regimes: &[Regime], mode: ThetaMode) -> Result<ExperimentTable> {
    config.validate()?;
    let rate = calibrate_censoring(config)?;
    let opts = FitOptions::default();
    let conds = conditions(config.scenario);

    let replicate = |r: usize| -> Vec<Vec<Cell>> {
        let mut cfg = config.clone();
        cfg.seed = rng::derive(config.seed, 1, r as u64);
        let fold_seed = rng::derive(config.seed, 2, r as u64);
        let u_seed = rng::derive(config.seed, 3, r as u64);
        let pair: Result<[(SurvivalDataset, SimulatedDataset); 2]> = match config.scenario {
            Scenario::Nonlinear => gen_nonlinear_with_rate(&cfg, rate)
                .and_then(|sim| Ok([(sim.log_x2()?, sim.clone()), (sim.data.clone(), sim)])),
            Scenario::Outlier => {
                gen_outlier_pair_with_rate(&cfg, rate).map(|(a, b)| [(a.data.clone(), a), (b.data.clone(), b)])
            }
        };
        let Ok(pair) = pair else {
            return vec![vec![Cell { failed: true, ..Cell::default() }; regimes.len()]; 2];
        };
        pair.iter()
            .map(|(data, sim)| {
                let full = fit_with(data, mode, &opts).ok().filter(|f| f.converged);
                regimes
                    .iter()
                    .map(|&reg| evaluate_cell(data, full.as_ref(), reg, sim, mode, &opts, fold_seed, u_seed))
                    .collect()
            })
            .collect()
    };
    let results: Vec<Vec<Vec<Cell>>> = (0..config.replicates).into_par_iter().map(replicate).collect();

    let scenario = config.scenario.to_string();
    let n = config.n();
    let single = config.replicates < 2;
    let mut table = ExperimentTable::default();
    let mut push = |regime: &Regime, model: &str, metric: &str, value: Option<f64>, se: Option<f64>| {
        table.rows.push(ExperimentRow {
            scenario: scenario.clone(),
            n,
            regime: regime.to_string(),
            model: model.to_owned(),
            metric: metric.to_owned(),
            value,
            mc_se: if single { None } else { se },
        });
    };
    for (ri, regime) in regimes.iter().enumerate() {
        let mut pvals: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (ci, cond) in conds.iter().enumerate() {
            let cells: Vec<&Cell> = results.iter().map(|rep| &rep[ci][ri]).collect();
            let p: Vec<f64> = cells.iter().filter_map(|c| c.p).collect();
            let rejected: Vec<f64> = p.iter().map(|&v| (v < 0.05) as u8 as f64).collect();
            let tails: Vec<f64> = cells.iter().filter_map(|c| c.tail).collect();
            let r2: Vec<f64> = cells.iter().filter_map(|c| c.r2).collect();
            let failures = cells.iter().filter(|c| c.failed || c.p.is_none()).count();
            let failed_folds: usize = cells.iter().map(|c| c.failed_folds).sum();
            let na: Vec<f64> = cells.iter().filter(|c| !c.failed).map(|c| c.na as f64).collect();

            let (rate_v, rate_se) = mean_se(&rejected);
            push(regime, cond, "rejection_rate", rate_v, rate_se);
            let (v, se) = mean_se(&p);
            push(regime, cond, "mean_p", v, se);
            let (v, se) = mean_se(&tails);
            push(regime, cond, "mean_tail_prob", v, se);
            let (v, se) = mean_se(&r2);
            push(regime, cond, "mean_r2", v, se);
            let (v, se) = mean_se(&na);
            push(regime, cond, "mean_na", v, se);
            push(regime, cond, "failures", Some(failures as f64), None);
            push(regime, cond, "failed_folds", Some(failed_folds as f64), None);

            if config.scenario == Scenario::Outlier {
                let mut pooled = Confusion::default();
                let mut sens = Vec::new();
                let mut fprs = Vec::new();
                for c in cells.iter().filter_map(|c| c.confusion.as_ref()) {
                    pooled.add(c);
                    sens.extend(c.sensitivity());
                    fprs.extend(c.fpr());
                }
                push(regime, cond, "sensitivity", pooled.sensitivity(), mean_se(&sens).1);
                push(regime, cond, "fpr", pooled.fpr(), mean_se(&fprs).1);
            }
            pvals[ci] = p;
        }
        let label = format!("{}_vs_{}", conds[1], conds[0]);
        match auc(&pvals[1], &pvals[0]) {
            Ok(a) => push(regime, &label, "auc", Some(a), Some(auc_se(a, pvals[1].len(), pvals[0].len()))),
            Err(_) => push(regime, &label, "auc", None, None),
        }
    }
    Ok(table)
}
