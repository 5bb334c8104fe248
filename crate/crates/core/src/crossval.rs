//! Constrained K-fold and leave-one-out plans and the cross-validatory
//! residual pipeline.
//!
//! Every cluster and every level of every categorical covariate is a
//! *group*. A plan is valid when, for each fold, every group of a test
//! observation also appears in the training rows, and every group that has
//! events in the full data still has an event in the training rows whenever
//! it appears there. Observations marked NA are never tested and stay in
//! every training set.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::frailty::{survival, Design, FitOptions, FrailtyFit, ThetaMode};
use crate::residuals::{Regime, ResidualSet, SurvivalPrediction};
use crate::survdata::{CovariateKind, CovariateValue, SurvivalDataset};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NaReason {
    /// The observation is the only member of its cluster or level.
    Unique(String),
    /// The observation is the only event of a cluster or level that has
    /// other members.
    SoleEvent(String),
    /// Fold repair found no fold that keeps the plan valid.
    NoFeasibleFold(String),
}

impl fmt::Display for NaReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NaReason::Unique(g) => write!(f, "unique:{g}"),
            NaReason::SoleEvent(g) => write!(f, "sole_event:{g}"),
            NaReason::NoFeasibleFold(g) => write!(f, "no_feasible_fold:{g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    /// Number of folds; equals `n` for leave-one-out.
    pub k: usize,
    pub loocv: bool,
    pub row_ids: Vec<usize>,
    /// Fold index per observation, `None` when excluded from testing.
    pub assignment: Vec<Option<usize>>,
    pub na_reason: Vec<Option<NaReason>>,
    pub seed: u64,
}

impl FoldPlan {
    /// One fold that is both training and test set; reproduces the
    /// full-data residuals.
    pub fn single(data: &SurvivalDataset) -> Self {
        let n = data.n();
        Self {
            k: 1,
            loocv: false,
            row_ids: data.observations().iter().map(|o| o.row_id).collect(),
            assignment: vec![Some(0); n],
            na_reason: vec![None; n],
            seed: 0,
        }
    }

    pub fn regime(&self) -> Regime {
        if self.loocv {
            Regime::LOOCV
        } else {
            Regime::KFold(self.k)
        }
    }

    pub fn n_na(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_none()).count()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for f in self.assignment.iter().flatten() {
            sizes[*f] += 1;
        }
        sizes
    }

    /// Observation positions tested in fold `f`.
    pub fn test_rows(&self, f: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == Some(f)).collect()
    }

    /// Observation positions used to fit fold `f`.
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        if self.k == 1 {
            return (0..self.assignment.len()).collect();
        }
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != Some(f)).collect()
    }

    /// CSV with columns `row_id, fold, na_reason`; folds are numbered from 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row_id", "fold", "na_reason"])?;
        for i in 0..self.row_ids.len() {
            w.write_record([
                self.row_ids[i].to_string(),
                self.assignment[i].map_or_else(|| "NA".to_owned(), |f| (f + 1).to_string()),
                self.na_reason[i].as_ref().map(|r| r.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<folds>", e))?;
        Ok(())
    }
}

/// Cluster and categorical-level membership of each observation.
struct Groups {
    of_obs: Vec<Vec<usize>>,
    names: Vec<String>,
    count: Vec<usize>,
    events: Vec<usize>,
}

impl Groups {
    fn new(data: &SurvivalDataset) -> Self {
        let mut names: Vec<String> = data.cluster_labels().iter().map(|c| format!("cluster={c}")).collect();
        let mut offsets = Vec::new();
        for cov in &data.schema().covariates {
            if let CovariateKind::Categorical { levels, .. } = &cov.kind {
                offsets.push(Some(names.len()));
                names.extend(levels.iter().map(|l| format!("{}={l}", cov.name)));
            } else {
                offsets.push(None);
            }
        }
        let mut count = vec![0; names.len()];
        let mut events = vec![0; names.len()];
        let of_obs: Vec<Vec<usize>> = data
            .observations()
            .iter()
            .map(|o| {
                let mut gs = vec![o.cluster];
                for (v, off) in o.covariates.iter().zip(&offsets) {
                    if let (CovariateValue::Level(l), Some(off)) = (v, off) {
                        gs.push(off + l);
                    }
                }
                for &g in &gs {
                    count[g] += 1;
                    events[g] += o.status as usize;
                }
                gs
            })
            .collect();
        Self { of_obs, names, count, events }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A test observation's group is missing from its fold's training rows.
    Unrepresented { row: usize, fold: usize, group: String },
    /// A group with events appears in training without any of its events.
    NoTrainingEvents { fold: usize, group: String },
}

struct Checker<'a> {
    groups: &'a Groups,
    status: Vec<bool>,
    test_count: Vec<usize>,
    test_events: Vec<usize>,
    reported: Vec<bool>,
}

/// Internal violation keyed by observation position or group index.
enum Found {
    Unrepresented { obs: usize, fold: usize, group: usize },
    NoEvents { fold: usize, group: usize },
}

impl<'a> Checker<'a> {
    fn new(groups: &'a Groups, data: &SurvivalDataset) -> Self {
        Self {
            groups,
            status: data.observations().iter().map(|o| o.status).collect(),
            test_count: vec![0; groups.names.len()],
            test_events: vec![0; groups.names.len()],
            reported: vec![false; groups.names.len()],
        }
    }

    fn find(&mut self, assignment: &[Option<usize>], k: usize, first_only: bool) -> Vec<Found> {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, a) in assignment.iter().enumerate() {
            if let Some(f) = a {
                members[*f].push(i);
            }
        }
        let g = self.groups;
        let mut out = Vec::new();
        for (f, rows) in members.iter().enumerate() {
            if rows.is_empty() || k == 1 {
                continue;
            }
            for &i in rows {
                for &gr in &g.of_obs[i] {
                    self.test_count[gr] += 1;
                    self.test_events[gr] += self.status[i] as usize;
                }
            }
            'rows: for &i in rows {
                for &gr in &g.of_obs[i] {
                    if g.count[gr] == self.test_count[gr] {
                        out.push(Found::Unrepresented { obs: i, fold: f, group: gr });
                        if first_only {
                            break 'rows;
                        }
                    }
                }
            }
            if !(first_only && !out.is_empty()) {
                for &i in rows {
                    for &gr in &g.of_obs[i] {
                        let train = g.count[gr] - self.test_count[gr];
                        let train_events = g.events[gr] - self.test_events[gr];
                        if g.events[gr] > 0 && train > 0 && train_events == 0 && !self.reported[gr] {
                            self.reported[gr] = true;
                            out.push(Found::NoEvents { fold: f, group: gr });
                        }
                    }
                }
            }
            for &i in rows {
                for &gr in &g.of_obs[i] {
                    self.test_count[gr] = 0;
                    self.test_events[gr] = 0;
                    self.reported[gr] = false;
                }
            }
            if first_only && !out.is_empty() {
                break;
            }
        }
        out
    }

    fn count(&mut self, assignment: &[Option<usize>], k: usize) -> usize {
        self.find(assignment, k, false).len()
    }
}

/// Every violation of the plan invariants; empty for a valid plan.
pub fn violations(data: &SurvivalDataset, plan: &FoldPlan) -> Vec<Violation> {
    let groups = Groups::new(data);
    let mut checker = Checker::new(&groups, data);
    let rows = data.observations();
    checker
        .find(&plan.assignment, plan.k, false)
        .into_iter()
        .map(|v| match v {
            Found::Unrepresented { obs, fold, group } => {
                Violation::Unrepresented { row: rows[obs].row_id, fold, group: groups.names[group].clone() }
            }
            Found::NoEvents { fold, group } => Violation::NoTrainingEvents { fold, group: groups.names[group].clone() },
        })
        .collect()
}

/// Leave-one-out plan. An observation is excluded when it is the only member
/// of its cluster or of a categorical level, or the only event of a cluster
/// or level that has other members.
pub fn make_loocv(data: &SurvivalDataset) -> Result<FoldPlan> {
    let n = data.n();
    if n < 2 {
        return Err(Error::invalid("leave-one-out needs at least two observations"));
    }
    let groups = Groups::new(data);
    let mut plan = FoldPlan {
        k: n,
        loocv: true,
        row_ids: data.observations().iter().map(|o| o.row_id).collect(),
        assignment: (0..n).map(Some).collect(),
        na_reason: vec![None; n],
        seed: 0,
    };
    for (i, o) in data.observations().iter().enumerate() {
        for &gr in &groups.of_obs[i] {
            let reason = if groups.count[gr] == 1 {
                Some(NaReason::Unique(groups.names[gr].clone()))
            } else if o.status && groups.events[gr] == 1 {
                Some(NaReason::SoleEvent(groups.names[gr].clone()))
            } else {
                None
            };
            if reason.is_some() {
                plan.assignment[i] = None;
                plan.na_reason[i] = reason;
                break;
            }
        }
    }
    Ok(plan)
}

/// Randomized K-fold plan stratified by cluster and categorical levels.
///
/// Observations are grouped into strata (cluster crossed with levels),
/// shuffled within stratum by `seed`, and dealt round-robin across folds with
/// one pointer that runs over all strata in turn. Violations are then
/// repaired greedily by moving an offending observation to the least-loaded
/// fold that reduces the violation count; an observation that cannot be
/// moved is excluded.
pub fn make_kfold(data: &SurvivalDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    let n = data.n();
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} observations")));
    }
    if data.events() == 0 {
        return Err(Error::NoEvents);
    }
    if k == n {
        let mut plan = make_loocv(data)?;
        plan.seed = seed;
        return Ok(plan);
    }
    let obs = data.observations();
    let mut order: Vec<usize> = (0..n).collect();
    let levels = |i: usize| -> Vec<usize> {
        obs[i]
            .covariates
            .iter()
            .filter_map(|v| match v {
                CovariateValue::Level(l) => Some(*l),
                CovariateValue::Numeric(_) => None,
            })
            .collect()
    };
    order.sort_by_key(|&i| (obs[i].cluster, levels(i), i));
    let mut rng = rng::substream(seed, 0x6b66, 0);
    let mut start = 0;
    while start < n {
        let key = (obs[order[start]].cluster, levels(order[start]));
        let mut end = start + 1;
        while end < n && (obs[order[end]].cluster, levels(order[end])) == key {
            end += 1;
        }
        order[start..end].shuffle(&mut rng);
        start = end;
    }
    let mut assignment = vec![None; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = Some(pos % k);
    }

    let groups = Groups::new(data);
    let mut checker = Checker::new(&groups, data);
    let mut na_reason = vec![None; n];
    let mut moved = vec![false; n];
    loop {
        let found = checker.find(&assignment, k, true);
        let Some(first) = found.into_iter().next() else { break };
        let (culprit, group) = match first {
            Found::Unrepresented { obs, group, .. } => (obs, group),
            Found::NoEvents { fold, group } => {
                let i = (0..n)
                    .rev()
                    .find(|&i| assignment[i] == Some(fold) && obs[i].status && groups.of_obs[i].contains(&group))
                    .expect("group events sit in the failing fold");
                (i, group)
            }
        };
        let current = checker.count(&assignment, k);
        let from = assignment[culprit];
        let mut fixed = false;
        if !moved[culprit] {
            let mut loads = vec![0usize; k];
            for f in assignment.iter().flatten() {
                loads[*f] += 1;
            }
            let mut targets: Vec<usize> = (0..k).filter(|&f| Some(f) != from).collect();
            targets.sort_by_key(|&f| (loads[f], f));
            for f in targets {
                assignment[culprit] = Some(f);
                if checker.count(&assignment, k) < current {
                    moved[culprit] = true;
                    fixed = true;
                    break;
                }
            }
        }
        if !fixed {
            assignment[culprit] = None;
            na_reason[culprit] = Some(NaReason::NoFeasibleFold(groups.names[group].clone()));
        }
    }
    // Greedy repair can strand rows that fit somewhere once the plan has
    // settled; put each back into the least-loaded fold that stays valid.
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            if assignment[i].is_some() {
                continue;
            }
            let mut loads = vec![0usize; k];
            for f in assignment.iter().flatten() {
                loads[*f] += 1;
            }
            let mut targets: Vec<usize> = (0..k).collect();
            targets.sort_by_key(|&f| (loads[f], f));
            for f in targets {
                assignment[i] = Some(f);
                if checker.find(&assignment, k, true).is_empty() {
                    na_reason[i] = None;
                    changed = true;
                    break;
                }
                assignment[i] = None;
            }
        }
    }
    Ok(FoldPlan { k, loocv: false, row_ids: obs.iter().map(|o| o.row_id).collect(), assignment, na_reason, seed })
}

/// Survival probabilities for each test observation from its fold's
/// training fit. Folds whose fit fails or does not converge leave their test
/// rows without a prediction and are counted in `failed_folds`.
pub fn cv_predict(
    data: &SurvivalDataset,
    plan: &FoldPlan,
    mode: ThetaMode,
    opts: &FitOptions,
) -> Result<SurvivalPrediction> {
    cv_predict_from(data, plan, mode, opts, None)
}

/// As [`cv_predict`], warm-starting fold fits from an existing full-data fit.
pub(crate) fn cv_predict_from(
    data: &SurvivalDataset,
    plan: &FoldPlan,
    mode: ThetaMode,
    opts: &FitOptions,
    full: Option<&FrailtyFit>,
) -> Result<SurvivalPrediction> {
    if plan.assignment.len() != data.n() || plan.row_ids.iter().zip(data.observations()).any(|(r, o)| *r != o.row_id) {
        return Err(Error::invalid("fold plan does not match the dataset"));
    }
    let design = Design::new(data);
    let all: Vec<usize> = (0..data.n()).collect();
    let warm = match full {
        Some(f) => Some(f.warm_start()),
        None => design.fit_rows(&all, mode, opts, None).ok().map(|f| f.warm_start()),
    };

    let folds: Vec<(usize, Vec<usize>)> =
        (0..plan.k).map(|f| (f, plan.test_rows(f))).filter(|(_, t)| !t.is_empty()).collect();
    let results: Vec<(Vec<usize>, Option<Vec<f64>>)> = folds
        .into_par_iter()
        .map(|(f, test)| {
            let train = plan.train_rows(f);
            let fitted = design.fit_rows(&train, mode, opts, warm.as_ref()).ok().filter(|fit| fit.converged);
            let surv = fitted.map(|fit| {
                test.iter()
                    .map(|&i| {
                        let z = fit.frailties[design.cluster[i]];
                        let lp = fit.linear_predictor(design.row(i));
                        survival(z, lp, fit.baseline_chf.eval_held_out(design.time[i]))
                    })
                    .collect()
            });
            (test, surv)
        })
        .collect();

    let mut pred = SurvivalPrediction::empty(data, plan.regime());
    for (test, surv) in results {
        match surv {
            Some(s) => {
                for (i, v) in test.into_iter().zip(s) {
                    pred.surv[i] = Some(v);
                }
            }
            None => pred.failed_folds += 1,
        }
    }
    Ok(pred)
}

/// Cross-validatory residuals for `plan` with the row-keyed uniform stream
/// of `seed`.
pub fn cv_residuals(data: &SurvivalDataset, plan: &FoldPlan, seed: u64, mode: ThetaMode) -> Result<ResidualSet> {
    Ok(cv_predict(data, plan, mode, &FitOptions::default())?.randomize(seed))
}

/// Plan for a regime: `None` for the full-data regime.
pub fn plan_for(data: &SurvivalDataset, regime: Regime, seed: u64) -> Result<Option<FoldPlan>> {
    match regime {
        Regime::NoCV => Ok(None),
        Regime::LOOCV => make_loocv(data).map(Some),
        Regime::KFold(1) => Ok(Some(FoldPlan::single(data))),
        Regime::KFold(k) => make_kfold(data, k, seed).map(Some),
    }
}
