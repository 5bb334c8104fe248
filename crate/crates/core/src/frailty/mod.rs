//! Shared gamma frailty Cox model.
//!
//! For a fixed frailty variance `theta` the estimator maximizes the penalized
//! partial likelihood
//!
//! ```text
//! PPL(beta, u) = PL(beta, u) + (1/theta) * sum_i (u_i - exp(u_i))
//! ```
//!
//! where `PL` is the Breslow partial likelihood with log-frailty offsets
//! `u_i`. Its stationary point is the fixed point of the gamma EM update
//! `z_i = (D_i + 1/theta) / (A_i + 1/theta)` with `A_i` the cumulative hazard
//! mass of cluster `i`; it is reached with joint Newton steps on
//! `(beta, u)`. `theta` itself maximizes the profile marginal likelihood of
//! the gamma frailty model, searched over `log theta`.

mod chf;
pub(crate) mod engine;

use serde::{Deserialize, Serialize};

pub use chf::{breslow_chf, StepChf};
use engine::{newton_step, spd_inverse, Problem, Sweep};

use crate::survdata::{CovariateValue, SurvivalDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThetaMode {
    /// Choose theta by maximizing the profile marginal likelihood.
    Profile,
    /// Fixed frailty variance; `Fixed(0.0)` is an ordinary Cox fit.
    Fixed(f64),
    /// Ordinary Cox model, all frailties equal to one.
    None,
}

impl std::str::FromStr for ThetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "profile" => Ok(ThetaMode::Profile),
            "none" => Ok(ThetaMode::None),
            other => {
                let value = other.strip_prefix("fixed:").unwrap_or(other);
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .map(ThetaMode::Fixed)
                    .ok_or_else(|| Error::invalid(format!("bad theta mode `{s}`")))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative change in the penalized log-likelihood that stops Newton.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Absolute tolerance on `log theta`.
    pub theta_tol: f64,
    /// Cap on profile-likelihood evaluations.
    pub max_outer: usize,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { newton_tol: 1e-9, max_newton: 60, theta_tol: 1e-4, max_outer: 200, theta_min: 1e-6, theta_max: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrailtyFit {
    pub covariate_names: Vec<String>,
    pub beta: Vec<f64>,
    /// Standard errors from the inverse observed information of the
    /// penalized likelihood.
    pub se: Vec<f64>,
    pub cluster_labels: Vec<String>,
    /// Per-cluster frailty `z_i = exp(u_i)`.
    pub frailties: Vec<f64>,
    /// Whether each cluster contributed observations to the fit. Clusters
    /// absent from the training rows have no usable frailty.
    pub cluster_present: Vec<bool>,
    pub theta: f64,
    pub baseline_chf: StepChf,
    /// Penalized partial log-likelihood at the estimate.
    pub loglik: f64,
    /// Profile marginal log-likelihood, when a frailty term is fitted.
    pub marginal_loglik: Option<f64>,
    pub iterations: usize,
    pub theta_evaluations: usize,
    pub converged: bool,
    pub mode: ThetaMode,
    pub n: usize,
    pub events: usize,
}

impl FrailtyFit {
    pub fn frailty_of(&self, cluster: &str) -> Result<f64> {
        self.cluster_labels
            .iter()
            .position(|l| l == cluster)
            .filter(|&i| self.cluster_present[i])
            .map(|i| self.frailties[i])
            .ok_or_else(|| Error::UnknownCluster(cluster.to_owned()))
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.beta).map(|(a, b)| a * b).sum()
    }

    /// Predicted survival `exp(-z * exp(x beta) * H0(t))` for an expanded
    /// covariate row in `cluster`.
    pub fn predict_survival(&self, x: &[f64], cluster: &str, t: f64) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::invalid(format!("expected {} covariate columns, got {}", self.beta.len(), x.len())));
        }
        if !(t > 0.0) {
            return Err(Error::invalid("time must be positive"));
        }
        let z = self.frailty_of(cluster)?;
        Ok(survival(z, self.linear_predictor(x), self.baseline_chf.eval(t)))
    }

    /// Wald z statistics and two-sided p-values per coefficient.
    pub fn wald(&self) -> Vec<(f64, f64)> {
        self.beta
            .iter()
            .zip(&self.se)
            .map(|(b, s)| {
                let z = b / s;
                (z, 2.0 * crate::normal::sf(z.abs()))
            })
            .collect()
    }

    pub(crate) fn warm_start(&self) -> WarmStart {
        WarmStart {
            beta: self.beta.clone(),
            u: self.frailties.iter().map(|z| z.ln()).collect(),
            log_theta: (self.theta > 0.0).then(|| self.theta.ln()),
        }
    }
}

pub(crate) fn survival(z: f64, lp: f64, chf: f64) -> f64 {
    (-z * lp.exp() * chf).exp()
}

/// Starting values for a fit.
#[derive(Debug, Clone)]
pub(crate) struct WarmStart {
    pub beta: Vec<f64>,
    pub u: Vec<f64>,
    pub log_theta: Option<f64>,
}

/// Fit the shared gamma frailty Cox model to every row of `data`.
pub fn fit(data: &SurvivalDataset, mode: ThetaMode) -> Result<FrailtyFit> {
    fit_with(data, mode, &FitOptions::default())
}

pub fn fit_with(data: &SurvivalDataset, mode: ThetaMode, opts: &FitOptions) -> Result<FrailtyFit> {
    let design = Design::new(data);
    let rows: Vec<usize> = (0..data.n()).collect();
    design.fit_rows(&rows, mode, opts, None)
}

/// Dataset laid out for repeated fits on row subsets.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub p: usize,
    pub g: usize,
    pub x: Vec<f64>,
    pub time: Vec<f64>,
    pub event: Vec<bool>,
    pub cluster: Vec<usize>,
    pub names: Vec<String>,
    pub labels: Vec<String>,
}

impl Design {
    pub fn new(data: &SurvivalDataset) -> Self {
        Self {
            p: data.schema().width(),
            g: data.g(),
            x: data.design(),
            time: data.observations().iter().map(|o| o.time).collect(),
            event: data.observations().iter().map(|o| o.status).collect(),
            cluster: data.observations().iter().map(|o| o.cluster).collect(),
            names: data.schema().expanded_names(),
            labels: data.cluster_labels().to_vec(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn fit_rows(
        &self,
        rows: &[usize],
        mode: ThetaMode,
        opts: &FitOptions,
        warm: Option<&WarmStart>,
    ) -> Result<FrailtyFit> {
        if rows.len() < 2 {
            return Err(Error::invalid("need at least two observations to fit"));
        }
        let prob = Problem::new(&self.x, self.p, &self.time, &self.event, &self.cluster, self.g, rows);
        if prob.n_events == 0 {
            return Err(Error::NoEvents);
        }
        if !prob.full_rank_on_events() {
            return Err(Error::RankDeficient);
        }
        let core = match mode {
            ThetaMode::None | ThetaMode::Fixed(0.0) => solve_fixed(&prob, None, opts, warm)?,
            ThetaMode::Fixed(theta) if theta > 0.0 && theta.is_finite() => {
                solve_fixed(&prob, Some(1.0 / theta), opts, warm)?
            }
            ThetaMode::Fixed(theta) => return Err(Error::invalid(format!("invalid theta {theta}"))),
            ThetaMode::Profile => profile_theta(&prob, opts, warm)?,
        };
        Ok(self.finish(&prob, core, mode))
    }

    fn finish(&self, prob: &Problem, core: Core, mode: ThetaMode) -> FrailtyFit {
        let frailties: Vec<f64> = core.u.iter().map(|u| u.exp()).collect();
        let baseline_chf = chf::from_problem(prob, &core.beta, &frailties);
        FrailtyFit {
            covariate_names: self.names.clone(),
            beta: core.beta,
            se: core.se,
            cluster_labels: self.labels.clone(),
            frailties,
            cluster_present: prob.cluster_size.iter().map(|&s| s > 0).collect(),
            theta: core.theta,
            baseline_chf,
            loglik: core.ppl,
            marginal_loglik: core.marginal,
            iterations: core.iterations,
            theta_evaluations: core.evaluations,
            converged: core.converged,
            mode,
            n: prob.n(),
            events: prob.n_events,
        }
    }
}

/// Expanded covariate row for a single observation's values.
pub fn expand_row(data: &SurvivalDataset, values: &[CovariateValue]) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.schema().width());
    data.schema().expand_into(values, &mut out);
    out
}

#[derive(Debug, Clone)]
struct Core {
    beta: Vec<f64>,
    u: Vec<f64>,
    theta: f64,
    ppl: f64,
    marginal: Option<f64>,
    se: Vec<f64>,
    iterations: usize,
    evaluations: usize,
    converged: bool,
}

/// Result of the inner Newton solve at one theta.
#[derive(Debug, Clone)]
struct Inner {
    beta: Vec<f64>,
    u: Vec<f64>,
    ppl: f64,
    /// Profile marginal log-likelihood and its derivative in `log theta`.
    marginal: f64,
    score: f64,
    se: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Gamma log-density kernel of the log-frailties, shifted to vanish at
/// `u = 0` so the penalized likelihood stays on the partial-likelihood scale
/// for small theta.
fn penalty(u: &[f64], nu: f64) -> f64 {
    nu * u.iter().map(|&v| v - v.exp() + 1.0).sum::<f64>()
}

fn evaluate(prob: &Problem, sweep: &mut Sweep, beta: &[f64], u: &[f64], nu: Option<f64>) -> Option<f64> {
    if !sweep.run(prob, beta, u, true) {
        return None;
    }
    let mut ppl = sweep.pl;
    if let Some(nu) = nu {
        ppl += penalty(u, nu);
        let p = prob.p;
        let dim = sweep.dim;
        for (c, &uc) in u.iter().enumerate() {
            let z = uc.exp();
            sweep.grad[p + c] += nu * (1.0 - z);
            sweep.info[(p + c) * dim + p + c] += nu * z;
        }
    }
    ppl.is_finite().then_some(ppl)
}

fn newton(prob: &Problem, nu: Option<f64>, opts: &FitOptions, beta0: &[f64], u0: &[f64]) -> Result<Inner> {
    let frailty = nu.is_some();
    let mut sweep = Sweep::new(prob, frailty);
    let mut beta = beta0.to_vec();
    let mut u = if frailty { u0.to_vec() } else { Vec::new() };
    let p = prob.p;

    let mut ppl = match evaluate(prob, &mut sweep, &beta, &u, nu) {
        Some(v) => v,
        None => {
            beta.iter_mut().for_each(|b| *b = 0.0);
            u.iter_mut().for_each(|v| *v = 0.0);
            evaluate(prob, &mut sweep, &beta, &u, nu).ok_or(Error::NotConverged { iterations: 0 })?
        }
    };
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_newton {
        iterations += 1;
        let step = newton_step(&sweep.info, &sweep.grad).ok_or(Error::RankDeficient)?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let nb: Vec<f64> = beta.iter().zip(&step[..p]).map(|(b, s)| b + scale * s).collect();
            let nu_: Vec<f64> = u.iter().zip(&step[p..]).map(|(v, s)| v + scale * s).collect();
            if let Some(val) = evaluate(prob, &mut sweep, &nb, &nu_, nu) {
                if val >= ppl - 1e-12 * ppl.abs().max(1.0) {
                    accepted = Some((nb, nu_, val));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((nb, nu_, val)) = accepted else {
            // No ascent direction left: restore the sweep at the current
            // point and stop.
            evaluate(prob, &mut sweep, &beta, &u, nu);
            converged = true;
            break;
        };
        let change = (val - ppl).abs();
        beta = nb;
        u = nu_;
        let old = ppl;
        ppl = val;
        if change <= opts.newton_tol * old.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let se = spd_inverse(&sweep.info, sweep.dim)
        .map(|inv| (0..p).map(|k| inv[k * sweep.dim + k].max(0.0).sqrt()).collect())
        .unwrap_or_else(|| vec![f64::NAN; p]);

    let (marginal, score) = match nu {
        Some(nu) => marginal_terms(prob, &sweep, &u, nu),
        None => (sweep.pl + sweep.sum_d_log_d - prob.n_events as f64, 0.0),
    };
    Ok(Inner { beta, u: if frailty { u } else { vec![0.0; prob.g] }, ppl, marginal, score, se, iterations, converged })
}

/// Profile marginal log-likelihood of the gamma frailty model at the
/// penalized solution, and its derivative with respect to `log theta`.
fn marginal_terms(prob: &Problem, sweep: &Sweep, u: &[f64], nu: f64) -> (f64, f64) {
    // PL includes the u offsets on event rows; remove them to recover the
    // Breslow full likelihood sum_k d_k log h_k + sum delta * eta.
    let mut ll = sweep.pl + sweep.sum_d_log_d;
    let mut dnu = 0.0;
    for c in 0..prob.g {
        let d = prob.cluster_events[c];
        if prob.cluster_size[c] == 0 {
            continue;
        }
        ll -= d * u[c];
        let a = sweep.expected[c] / u[c].exp();
        let mut term = -nu * (a / nu).ln_1p();
        let mut dterm = -(a / nu).ln_1p() + (a - d) / (nu + a);
        let mut k = 0.0;
        while k < d {
            term += ((k - a) / (nu + a)).ln_1p();
            dterm += 1.0 / (nu + k);
            k += 1.0;
        }
        ll += term;
        dnu += dterm;
    }
    // d/d(log theta) = -nu * d/d(nu)
    (ll, -nu * dnu)
}

fn initial(prob: &Problem, warm: Option<&WarmStart>) -> (Vec<f64>, Vec<f64>) {
    match warm {
        Some(w) if w.beta.len() == prob.p && w.u.len() == prob.g => (w.beta.clone(), w.u.clone()),
        _ => (vec![0.0; prob.p], vec![0.0; prob.g]),
    }
}

fn solve_fixed(prob: &Problem, nu: Option<f64>, opts: &FitOptions, warm: Option<&WarmStart>) -> Result<Core> {
    let (beta0, u0) = initial(prob, warm);
    let inner = newton(prob, nu, opts, &beta0, &u0)?;
    Ok(Core {
        theta: nu.map(|v| 1.0 / v).unwrap_or(0.0),
        marginal: nu.map(|_| inner.marginal),
        beta: inner.beta,
        u: inner.u,
        ppl: inner.ppl,
        se: inner.se,
        iterations: inner.iterations,
        evaluations: 1,
        converged: inner.converged,
    })
}

struct Profile<'a> {
    prob: &'a Problem,
    opts: &'a FitOptions,
    evals: Vec<(f64, Inner)>,
    iterations: usize,
}

impl<'a> Profile<'a> {
    fn eval(&mut self, s: f64) -> Result<f64> {
        if let Some((_, inner)) = self.evals.iter().find(|(t, _)| *t == s) {
            return Ok(inner.score);
        }
        if self.evals.len() >= self.opts.max_outer {
            return Err(Error::NotConverged { iterations: self.iterations });
        }
        let (beta0, u0) = self
            .evals
            .iter()
            .min_by(|a, b| (a.0 - s).abs().total_cmp(&(b.0 - s).abs()))
            .map(|(_, i)| (i.beta.clone(), i.u.clone()))
            .unwrap_or_else(|| (vec![0.0; self.prob.p], vec![0.0; self.prob.g]));
        let inner = newton(self.prob, Some((-s).exp()), self.opts, &beta0, &u0)?;
        self.iterations += inner.iterations;
        let score = inner.score;
        self.evals.push((s, inner));
        Ok(score)
    }

    fn take(mut self, s: f64) -> Result<Core> {
        self.eval(s)?;
        let evaluations = self.evals.len();
        let iterations = self.iterations;
        let (_, inner) = self.evals.into_iter().find(|(t, _)| *t == s).expect("evaluated");
        Ok(Core {
            theta: s.exp(),
            marginal: Some(inner.marginal),
            beta: inner.beta,
            u: inner.u,
            ppl: inner.ppl,
            se: inner.se,
            iterations,
            evaluations,
            converged: inner.converged,
        })
    }
}

fn profile_theta(prob: &Problem, opts: &FitOptions, warm: Option<&WarmStart>) -> Result<Core> {
    let lo = opts.theta_min.ln();
    let hi = opts.theta_max.ln();
    let (beta0, u0) = initial(prob, warm);
    let start = warm.and_then(|w| w.log_theta).unwrap_or(0.5f64.ln()).clamp(lo, hi);

    let mut prof = Profile { prob, opts, evals: Vec::new(), iterations: 0 };
    // Seed the cache with the warm solution at the starting theta.
    let first = newton(prob, Some((-start).exp()), opts, &beta0, &u0)?;
    prof.iterations += first.iterations;
    let f0 = first.score;
    prof.evals.push((start, first));

    let outcome = (|| -> Result<f64> {
        if f0 == 0.0 {
            return Ok(start);
        }
        // Walk uphill with growing steps until the profile score changes
        // sign or a bound is reached.
        let dir = if f0 > 0.0 { 1.0 } else { -1.0 };
        let (mut a, mut fa) = (start, f0);
        let mut step = 0.5;
        loop {
            let b = (a + dir * step).clamp(lo, hi);
            let fb = prof.eval(b)?;
            if fb * dir <= 0.0 {
                let (x0, f0, x1, f1) = if a < b { (a, fa, b, fb) } else { (b, fb, a, fa) };
                return zeroin(|s| prof.eval(s), x0, x1, f0, f1, opts.theta_tol);
            }
            if b == lo || b == hi {
                return Ok(b);
            }
            a = b;
            fa = fb;
            step *= 2.0;
        }
    })();

    match outcome {
        Ok(s) => {
            let mut core = prof.take(s)?;
            core.converged &= core.evaluations <= opts.max_outer;
            Ok(core)
        }
        Err(Error::NotConverged { .. }) => {
            let best = prof
                .evals
                .iter()
                .max_by(|a, b| a.1.marginal.total_cmp(&b.1.marginal))
                .map(|(s, _)| *s)
                .expect("at least one evaluation");
            let mut core = prof.take(best)?;
            core.converged = false;
            Ok(core)
        }
        Err(e) => Err(e),
    }
}

/// Brent's root finder on a bracket with `f(a)` and `f(b)` of opposite sign.
fn zeroin(mut f: impl FnMut(f64) -> Result<f64>, a: f64, b: f64, fa: f64, fb: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
    }
    Ok(b)
}

#[cfg(test)]
mod tests;
