use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::*;
use crate::survdata::{kidney_dataset, CovariateSchema, CovariateValue, Record};

fn dataset(rows: &[(f64, u8, &str, &[f64])]) -> SurvivalDataset {
    let p = rows[0].3.len();
    let mut schema = CovariateSchema::new();
    for k in 0..p {
        schema = schema.numeric(format!("x{k}"));
    }
    SurvivalDataset::new(
        schema,
        rows.iter().enumerate().map(|(i, (t, s, c, x))| Record {
            row_id: i + 1,
            time: *t,
            status: *s,
            cluster: (*c).to_owned(),
            covariates: x.iter().map(|v| CovariateValue::Numeric(*v)).collect(),
        }),
    )
    .unwrap()
}

/// Breslow partial log-likelihood for one covariate, written directly from
/// its definition over the risk sets.
fn partial_loglik(times: &[f64], status: &[u8], x: &[f64], beta: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..times.len() {
        if status[i] == 1 {
            let denom: f64 = (0..times.len()).filter(|&j| times[j] >= times[i]).map(|j| (beta * x[j]).exp()).sum();
            ll += beta * x[i] - denom.ln();
        }
    }
    ll
}

fn grid_argmax(times: &[f64], status: &[u8], x: &[f64]) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut b = -5.0;
    while b <= 5.0 {
        let ll = partial_loglik(times, status, x, b);
        if ll > best.0 {
            best = (ll, b);
        }
        b += 1e-4;
    }
    best.1
}

fn simulate_clustered(seed: u64, g: usize, m: usize, theta: f64) -> SurvivalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(1.0 / theta, theta).unwrap();
    let mut rows = Vec::new();
    for i in 0..g {
        let z: f64 = gamma.sample(&mut rng);
        for _ in 0..m {
            let x1: f64 = rng.gen();
            let x2: f64 = if rng.gen::<f64>() < 0.4 { 1.0 } else { 0.0 };
            let eta = 0.8 * x1 - 0.5 * x2;
            let v: f64 = rng.gen();
            let t = (-v.ln() / (0.1 * z * eta.exp())).sqrt();
            let c = -rng.gen::<f64>().ln() / 0.1;
            rows.push(Record {
                row_id: rows.len() + 1,
                time: t.min(c),
                status: (t < c) as u8,
                cluster: format!("c{i}"),
                covariates: vec![CovariateValue::Numeric(x1), CovariateValue::Numeric(x2)],
            });
        }
    }
    SurvivalDataset::new(CovariateSchema::new().numeric("x1").numeric("x2"), rows).unwrap()
}

#[test]
fn cox_matches_grid_oracle_four_events() {
    let times = [1.0, 2.0, 3.0, 4.0];
    let status = [1, 1, 1, 1];
    let x = [0.5, -0.2, 1.3, 0.1];
    let d = dataset(&[(1.0, 1, "a", &[0.5]), (2.0, 1, "b", &[-0.2]), (3.0, 1, "c", &[1.3]), (4.0, 1, "d", &[0.1])]);
    let f = fit(&d, ThetaMode::None).unwrap();
    let oracle = grid_argmax(&times, &status, &x);
    assert!(f.converged);
    assert!((f.beta[0] - oracle).abs() < 1e-3, "{} vs {}", f.beta[0], oracle);
    assert!(f.frailties.iter().all(|&z| z == 1.0));
    assert_eq!(f.theta, 0.0);
}

#[test]
fn cox_matches_grid_oracle_with_ties_and_censoring() {
    let times = [2.0, 2.0, 3.0, 5.0, 5.0, 6.0];
    let status = [1, 1, 0, 1, 0, 1];
    let x = [1.0, 0.0, 1.0, 0.3, 2.0, -1.0];
    let rows: Vec<(f64, u8, String, [f64; 1])> =
        (0..6).map(|i| (times[i], status[i], format!("c{i}"), [x[i]])).collect();
    let refs: Vec<(f64, u8, &str, &[f64])> = rows.iter().map(|r| (r.0, r.1, r.2.as_str(), &r.3[..])).collect();
    let d = dataset(&refs);
    let f = fit(&d, ThetaMode::None).unwrap();
    assert!((f.beta[0] - grid_argmax(&times, &status, &x)).abs() < 1e-3);
}

#[test]
fn symmetric_arms_give_zero_effect() {
    let d = dataset(&[
        (1.0, 1, "a", &[0.0]),
        (1.0, 1, "b", &[1.0]),
        (3.0, 1, "c", &[0.0]),
        (3.0, 1, "d", &[1.0]),
        (4.0, 0, "e", &[0.0]),
        (4.0, 0, "f", &[1.0]),
    ]);
    let f = fit(&d, ThetaMode::None).unwrap();
    assert!(f.beta[0].abs() < 1e-10);
}

#[test]
fn breslow_hand_computed_steps() {
    let d = dataset(&[(1.0, 1, "a", &[0.0]), (2.0, 1, "a", &[0.0]), (3.0, 1, "a", &[0.0])]);
    let h = breslow_chf(&d, &[0.0], &[1.0]).unwrap();
    assert_eq!(h.times, [1.0, 2.0, 3.0]);
    let want = [1.0 / 3.0, 1.0 / 3.0 + 0.5, 1.0 / 3.0 + 0.5 + 1.0];
    for (a, b) in h.values.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(h.eval(0.5), 0.0);
    assert_eq!(h.eval(2.5), h.values[1]);
    assert_eq!(h.eval(99.0), h.values[2]);
}

#[test]
fn breslow_single_event() {
    let d = dataset(&[(5.0, 1, "a", &[1.0]), (6.0, 0, "a", &[2.0]), (7.0, 0, "b", &[3.0]), (8.0, 0, "b", &[4.0])]);
    let h = breslow_chf(&d, &[0.0], &[1.0, 1.0]).unwrap();
    assert_eq!(h.eval(5.0), 0.25);
}

#[test]
fn breslow_reduces_to_nelson_aalen() {
    let d = simulate_clustered(3, 5, 8, 0.5);
    let h = breslow_chf(&d, &[0.0, 0.0], &vec![1.0; d.g()]).unwrap();
    // Nelson-Aalen straight from the counting definition.
    let obs = d.observations();
    let mut times: Vec<f64> = obs.iter().filter(|o| o.status).map(|o| o.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut acc = 0.0;
    for (k, t) in times.iter().enumerate() {
        let deaths = obs.iter().filter(|o| o.status && o.time == *t).count() as f64;
        let at_risk = obs.iter().filter(|o| o.time >= *t).count() as f64;
        acc += deaths / at_risk;
        assert_eq!(h.times[k], *t);
        assert!((h.values[k] - acc).abs() < 1e-12);
    }
}

#[test]
fn breslow_rejects_bad_input() {
    let d = dataset(&[(1.0, 1, "a", &[0.0]), (2.0, 0, "a", &[0.0])]);
    assert!(breslow_chf(&d, &[0.0], &[0.0]).is_err());
    assert!(breslow_chf(&d, &[f64::NAN], &[1.0]).is_err());
}

#[test]
fn kidney_matches_published_coefficients() {
    let f = fit(&kidney_dataset(), ThetaMode::Profile).unwrap();
    assert!(f.converged);
    let want = [0.003, 1.480, 0.088, 0.351, -1.430];
    for (b, w) in f.beta.iter().zip(want) {
        assert!((b - w).abs() < 0.05, "{:?}", f.beta);
    }
    let se = [0.011, 0.358, 0.406, 0.400, 0.631];
    for (s, w) in f.se.iter().zip(se) {
        assert!((s - w).abs() < 0.1, "{:?}", f.se);
    }
    // The profile pushes the frailty variance to its lower bound here.
    assert!(f.theta < 1e-3, "theta {}", f.theta);
}

#[test]
fn kidney_without_outliers() {
    let d = kidney_dataset().without_rows(&[20, 42]).unwrap();
    let f = fit(&d, ThetaMode::Profile).unwrap();
    assert!((f.beta[1] - 2.117).abs() < 0.05, "{:?}", f.beta);
    let (_, p_pkd) = f.wald()[4];
    assert!(p_pkd > 0.05);
}

fn gradient_at(d: &SurvivalDataset, f: &FrailtyFit) -> Vec<f64> {
    let design = Design::new(d);
    let rows: Vec<usize> = (0..d.n()).collect();
    let prob = Problem::new(&design.x, design.p, &design.time, &design.event, &design.cluster, design.g, &rows);
    let mut sweep = Sweep::new(&prob, true);
    let u: Vec<f64> = f.frailties.iter().map(|z| z.ln()).collect();
    evaluate(&prob, &mut sweep, &f.beta, &u, Some(1.0 / f.theta)).unwrap();
    sweep.grad.clone()
}

#[test]
fn score_vanishes_and_em_fixed_point_holds() {
    let d = simulate_clustered(11, 10, 20, 0.5);
    for mode in [ThetaMode::Fixed(0.5), ThetaMode::Profile] {
        let f = fit(&d, mode).unwrap();
        assert!(f.converged);
        let grad = gradient_at(&d, &f);
        let sup = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        assert!(sup < 1e-6, "gradient sup-norm {sup}");

        // EM identity z_i = (D_i + 1/theta) / (A_i + 1/theta) using the
        // raw-scale Breslow hazard of the fit.
        let nu = 1.0 / f.theta;
        let x = d.design();
        let p = d.schema().width();
        for (c, members) in d.cluster_index().iter().enumerate() {
            let mut a = 0.0;
            let mut events = 0.0;
            for &i in members {
                let o = &d.observations()[i];
                let lp: f64 = (0..p).map(|k| x[i * p + k] * f.beta[k]).sum();
                a += lp.exp() * f.baseline_chf.eval(o.time);
                events += o.status as u8 as f64;
            }
            let z = (events + nu) / (a + nu);
            assert!((z - f.frailties[c]).abs() < 1e-6, "cluster {c}: {z} vs {}", f.frailties[c]);
        }
    }
}

#[test]
fn profile_score_matches_finite_difference() {
    let d = simulate_clustered(5, 8, 15, 0.5);
    let at = |theta: f64| fit(&d, ThetaMode::Fixed(theta)).unwrap().marginal_loglik.unwrap();
    let design = Design::new(&d);
    let rows: Vec<usize> = (0..d.n()).collect();
    let prob = Problem::new(&design.x, design.p, &design.time, &design.event, &design.cluster, design.g, &rows);
    for theta in [0.05, 0.3, 1.5] {
        let inner = newton(&prob, Some(1.0 / theta), &FitOptions::default(), &[0.0, 0.0], &vec![0.0; d.g()]).unwrap();
        let h: f64 = 1e-4;
        let fd = (at(theta * h.exp()) - at(theta * (-h).exp())) / (2.0 * h);
        assert!((fd - inner.score).abs() < 1e-4 * (1.0 + fd.abs()), "theta {theta}: fd {fd} vs {}", inner.score);
    }
}

#[test]
fn profile_maximizer_agrees_with_grid() {
    let d = simulate_clustered(21, 10, 15, 0.8);
    let f = fit(&d, ThetaMode::Profile).unwrap();
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut s = -4.0;
    while s <= 2.0 {
        let m = fit(&d, ThetaMode::Fixed(f64::exp(s))).unwrap().marginal_loglik.unwrap();
        if m > best.0 {
            best = (m, s);
        }
        s += 0.01;
    }
    assert!((f.theta.ln() - best.1).abs() < 0.011, "profile {} grid {}", f.theta.ln(), best.1);
    assert!(f.marginal_loglik.unwrap() >= best.0 - 1e-9);
}

#[test]
fn predict_survival_examples() {
    let d = simulate_clustered(8, 4, 10, 0.5);
    let f = fit(&d, ThetaMode::Profile).unwrap();
    let first = f.baseline_chf.times[0];
    let x = vec![0.3, 1.0];
    assert_eq!(f.predict_survival(&x, "c0", first * 0.5).unwrap(), 1.0);
    assert!(f.predict_survival(&x, "nope", 1.0).is_err());
    assert!(f.predict_survival(&x, "c0", 0.0).is_err());

    // exp(-log 2) with z = 1 and a zero linear predictor.
    assert!((survival(1.0, 0.0, std::f64::consts::LN_2) - 0.5).abs() < 1e-15);
    let s1 = survival(1.0, 0.4, 0.7);
    let s2 = survival(2.0, 0.4, 0.7);
    assert!((s2 - s1 * s1).abs() < 1e-15);

    // Nonincreasing in t.
    let mut last = 1.0;
    for k in 1..200 {
        let s = f.predict_survival(&x, "c1", k as f64 * 0.1).unwrap();
        assert!(s <= last);
        last = s;
    }
}

#[test]
fn frailty_scale_and_chf_shift_cancel() {
    let d = simulate_clustered(8, 4, 10, 0.5);
    let f = fit(&d, ThetaMode::Profile).unwrap();
    let mut g = f.clone();
    let c = 3.7;
    g.frailties.iter_mut().for_each(|z| *z *= c);
    g.baseline_chf.values.iter_mut().for_each(|h| *h /= c);
    for t in [0.5, 1.0, 3.0, 10.0] {
        let a = f.predict_survival(&[0.2, 0.0], "c2", t).unwrap();
        let b = g.predict_survival(&[0.2, 0.0], "c2", t).unwrap();
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn recovers_frailty_variance_roughly() {
    let d = simulate_clustered(99, 30, 20, 0.5);
    let f = fit(&d, ThetaMode::Profile).unwrap();
    assert!(f.converged);
    assert!(f.theta > 0.15 && f.theta < 1.2, "theta {}", f.theta);
    assert!((f.beta[0] - 0.8).abs() < 0.4, "{:?}", f.beta);
}

#[test]
fn fit_errors() {
    let d = dataset(&[(1.0, 1, "a", &[1.0]), (2.0, 1, "a", &[1.0]), (3.0, 0, "b", &[1.0])]);
    assert!(matches!(fit(&d, ThetaMode::None), Err(Error::RankDeficient)));
    let d = dataset(&[(1.0, 1, "a", &[1.0])]);
    assert!(fit(&d, ThetaMode::None).is_err());
    assert!(matches!("fixed:-1".parse::<ThetaMode>(), Err(_)));
    assert_eq!("0.5".parse::<ThetaMode>().unwrap(), ThetaMode::Fixed(0.5));
}

#[test]
fn fixed_zero_theta_is_cox() {
    let d = simulate_clustered(4, 5, 10, 0.5);
    let a = fit(&d, ThetaMode::None).unwrap();
    let b = fit(&d, ThetaMode::Fixed(0.0)).unwrap();
    assert_eq!(a.beta, b.beta);
    assert!(b.frailties.iter().all(|&z| z == 1.0));
}

#[test]
fn held_out_chf_interpolates_before_first_event() {
    let chf = StepChf { times: vec![2.0, 3.0], values: vec![0.5, 0.9] };
    assert_eq!(chf.eval(1.0), 0.0);
    assert!((chf.eval_held_out(1.0) - 0.25).abs() < 1e-15);
    assert_eq!(chf.eval_held_out(0.0), 0.0);
    for t in [2.0, 2.5, 3.0, 7.0] {
        assert_eq!(chf.eval_held_out(t), chf.eval(t));
    }
}
