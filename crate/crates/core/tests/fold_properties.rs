//! Fold plan invariants on randomized adversarial datasets: tiny clusters,
//! rare categorical levels, heavy censoring and tied times.

use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;

use zresid::crossval::{make_kfold, make_loocv, violations, FoldPlan};
use zresid::survdata::{CovariateValue, Record};
use zresid::{CovariateSchema, SurvivalDataset};

#[derive(Debug, Clone)]
struct Raw {
    rows: Vec<(u8, bool, usize, usize, f64)>,
}

fn raw() -> impl Strategy<Value = Raw> {
    (2usize..=30, 0.05f64..0.95, 1usize..=7).prop_flat_map(|(n, p_event, clusters)| {
        let row = (
            1u8..=6,
            proptest::bool::weighted(p_event),
            // Skew toward low cluster ids so late ids end up as singletons.
            (0..clusters * clusters).prop_map(|c| (c as f64).sqrt() as usize),
            prop_oneof![6 => Just(0usize), 3 => Just(1usize), 1 => Just(2usize)],
            -1.0f64..1.0,
        );
        proptest::collection::vec(row, n).prop_map(|rows| Raw { rows })
    })
}

fn schema() -> CovariateSchema {
    CovariateSchema::new().numeric("x").categorical("grp", ["a", "b", "c"], Some("a"))
}

fn build(raw: &Raw) -> Option<SurvivalDataset> {
    let records = raw.rows.iter().enumerate().map(|(i, &(t, s, c, l, x))| Record {
        row_id: i + 1,
        time: t as f64,
        status: s as u8,
        cluster: format!("c{c}"),
        covariates: vec![CovariateValue::Numeric(x), CovariateValue::Level(l)],
    });
    SurvivalDataset::new(schema(), records).ok()
}

/// Groups of each observation: its cluster and its categorical level.
fn groups(data: &SurvivalDataset) -> Vec<[String; 2]> {
    data.observations()
        .iter()
        .map(|o| {
            let level = match o.covariates[1] {
                CovariateValue::Level(l) => l,
                CovariateValue::Numeric(_) => unreachable!(),
            };
            [format!("cluster:{}", o.cluster), format!("level:{level}")]
        })
        .collect()
}

/// Independent check: for every fold, test groups appear in training and
/// every training group that had events in the full data keeps one.
fn plan_is_valid(data: &SurvivalDataset, plan: &FoldPlan) -> bool {
    let obs = data.observations();
    let g = groups(data);
    let mut full_events: HashMap<&str, usize> = HashMap::new();
    for (i, o) in obs.iter().enumerate() {
        for name in &g[i] {
            *full_events.entry(name.as_str()).or_default() += o.status as usize;
        }
    }
    for f in 0..plan.k {
        let train: Vec<usize> = (0..obs.len()).filter(|&i| plan.assignment[i] != Some(f)).collect();
        let mut present: HashMap<&str, usize> = HashMap::new();
        for &i in &train {
            for name in &g[i] {
                *present.entry(name.as_str()).or_default() += obs[i].status as usize;
            }
        }
        for i in (0..obs.len()).filter(|&i| plan.assignment[i] == Some(f)) {
            if g[i].iter().any(|name| !present.contains_key(name.as_str())) {
                return false;
            }
        }
        if present.iter().any(|(name, &ev)| ev == 0 && full_events[name] > 0) {
            return false;
        }
    }
    true
}

/// Observations that cannot be left out on their own.
fn loocv_na_oracle(data: &SurvivalDataset) -> BTreeSet<usize> {
    let n = data.n();
    (0..n)
        .filter(|&i| {
            let mut assignment = vec![None; n];
            assignment[i] = Some(0);
            let plan = FoldPlan {
                k: 1,
                loocv: false,
                row_ids: data.observations().iter().map(|o| o.row_id).collect(),
                assignment,
                na_reason: vec![None; n],
                seed: 0,
            };
            !plan_is_valid(data, &plan)
        })
        .collect()
}

fn na_set(plan: &FoldPlan) -> BTreeSet<usize> {
    (0..plan.assignment.len()).filter(|&i| plan.assignment[i].is_none()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn loocv_plans_are_valid_and_na_is_exact(raw in raw()) {
        let Some(data) = build(&raw) else { return Ok(()) };
        prop_assume!(data.n() >= 2);
        let plan = make_loocv(&data).unwrap();
        prop_assert_eq!(plan.k, data.n());
        prop_assert!(violations(&data, &plan).is_empty());
        prop_assert!(plan_is_valid(&data, &plan));
        prop_assert_eq!(na_set(&plan), loocv_na_oracle(&data));
        for (i, a) in plan.assignment.iter().enumerate() {
            prop_assert!(a.is_none() || *a == Some(i));
        }
    }

    #[test]
    fn kfold_plans_are_valid_deterministic_and_maximal(raw in raw(), k in 2usize..=10, seed in any::<u64>()) {
        let Some(data) = build(&raw) else { return Ok(()) };
        prop_assume!(data.events() > 0 && k <= data.n());
        let plan = make_kfold(&data, k, seed).unwrap();
        prop_assert_eq!(plan.k, k);
        prop_assert!(violations(&data, &plan).is_empty());
        prop_assert!(plan_is_valid(&data, &plan));
        prop_assert_eq!(&plan, &make_kfold(&data, k, seed).unwrap());
        if k == data.n() {
            prop_assert_eq!(plan.assignment.clone(), make_loocv(&data).unwrap().assignment);
        }
        // An NA observation has no fold it can join without breaking the plan.
        for i in na_set(&plan) {
            for f in 0..k {
                let mut trial = plan.clone();
                trial.assignment[i] = Some(f);
                prop_assert!(!plan_is_valid(&data, &trial), "row {} fits in fold {}", i + 1, f);
            }
        }
        for (i, reason) in plan.na_reason.iter().enumerate() {
            prop_assert_eq!(reason.is_some(), plan.assignment[i].is_none());
        }
    }

    #[test]
    fn kfold_without_repairs_is_balanced(clusters in 1usize..=6, per in 2usize..=12, k in 2usize..=6, seed in any::<u64>()) {
        // Every cluster has events and only one level, so dealing alone
        // yields a valid plan when each cluster has at least k + 1 rows.
        prop_assume!(per > k);
        let records = (0..clusters * per).map(|i| Record {
            row_id: i + 1,
            time: (i % 7 + 1) as f64,
            status: 1,
            cluster: format!("c{}", i / per),
            covariates: vec![CovariateValue::Numeric(0.0), CovariateValue::Level(0)],
        });
        let data = SurvivalDataset::new(schema(), records).unwrap();
        let plan = make_kfold(&data, k, seed).unwrap();
        prop_assert_eq!(plan.n_na(), 0);
        let sizes = plan.fold_sizes();
        let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
        let strata = clusters;
        prop_assert!(spread <= 1.max(strata.div_ceil(k)), "sizes {:?}", sizes);
    }
}
