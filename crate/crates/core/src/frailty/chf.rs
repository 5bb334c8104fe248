use serde::{Deserialize, Serialize};

use super::engine::Problem;
use crate::survdata::SurvivalDataset;
use crate::{Error, Result};

/// Right-continuous step function for a cumulative baseline hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepChf {
    /// Distinct event times, strictly increasing.
    pub times: Vec<f64>,
    /// Cumulative hazard at each time (nondecreasing).
    pub values: Vec<f64>,
}

impl StepChf {
    /// `H0(t)`: zero before the first event time, held at its last value
    /// beyond the last event time.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// `H0(t)` for a held-out observation: like [`StepChf::eval`], but
    /// interpolated linearly from the origin to the first step before the
    /// first training event. A held-out event preceding every training event
    /// would otherwise get survival exactly 1, which no continuous event time
    /// can have.
    pub fn eval_held_out(&self, t: f64) -> f64 {
        match self.times.first() {
            Some(&first) if t < first => self.values[0] * (t / first).max(0.0),
            _ => self.eval(t),
        }
    }

    pub fn first_time(&self) -> Option<f64> {
        self.times.first().copied()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }
}

/// Breslow estimator of the cumulative baseline hazard,
/// `H0(t) = sum_{t_k <= t} d_k / sum_{l at risk at t_k} z_l exp(x_l beta)`.
pub fn breslow_chf(data: &SurvivalDataset, beta: &[f64], frailties: &[f64]) -> Result<StepChf> {
    if beta.len() != data.schema().width() {
        return Err(Error::invalid("beta length does not match the design width"));
    }
    if frailties.len() != data.g() {
        return Err(Error::invalid("need one frailty per cluster"));
    }
    if frailties.iter().any(|z| !(*z > 0.0) || !z.is_finite()) {
        return Err(Error::invalid("frailties must be positive"));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("beta must be finite"));
    }
    if data.events() == 0 {
        return Err(Error::NoEvents);
    }
    let time: Vec<f64> = data.observations().iter().map(|o| o.time).collect();
    let event: Vec<bool> = data.observations().iter().map(|o| o.status).collect();
    let cluster: Vec<usize> = data.observations().iter().map(|o| o.cluster).collect();
    let rows: Vec<usize> = (0..data.n()).collect();
    let prob = Problem::new(&data.design(), beta.len(), &time, &event, &cluster, data.g(), &rows);
    Ok(from_problem(&prob, beta, frailties))
}

/// Breslow CHF on the raw covariate scale of a centered problem.
pub(crate) fn from_problem(prob: &Problem, beta: &[f64], frailties: &[f64]) -> StepChf {
    let p = prob.p;
    let shift: f64 = prob.center.iter().zip(beta).map(|(c, b)| c * b).sum();
    let mut s0 = 0.0;
    let mut steps = Vec::new();
    for &(lo, hi) in &prob.blocks {
        let mut d = 0usize;
        for &i in &prob.order[lo..hi] {
            let xi = &prob.x[i * p..(i + 1) * p];
            let eta: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum();
            s0 += frailties[prob.cluster[i]] * eta.exp();
            d += prob.event[i] as usize;
        }
        if d > 0 {
            steps.push((prob.time[prob.order[lo]], d as f64 / s0));
        }
    }
    steps.reverse();
    let scale = (-shift).exp();
    let mut acc = 0.0;
    let mut times = Vec::with_capacity(steps.len());
    let mut values = Vec::with_capacity(steps.len());
    for (t, h) in steps {
        acc += h * scale;
        times.push(t);
        values.push(acc);
    }
    StepChf { times, values }
}
