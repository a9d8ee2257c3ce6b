mod common;

use common::rng;
use occamlme_core::rng::{stream, Purpose};
use occamlme_core::sim::{
    generate, results_table, rmse_gamma, rmse_gamma_constant, rmse_gamma_literal, rmse_scalar, run_study,
    skew_t_error, symbol_grid, Algorithm, SimConfig, StudySettings,
};
use occamlme_core::{EmConfig, Error, ModelIndicator, VbConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn pooled_moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let var = m(2);
    (mean, var, m(3) / var.powf(1.5), m(4) / (var * var) - 3.0)
}

#[test]
fn no_effects_without_inclusion() {
    let sim = generate(&SimConfig { h: 0.0, m: 30, ..SimConfig::default() }, 0).unwrap();
    assert!(sim.truth.gamma.iter().all(|g| g.count() == 0));
    assert!(sim.truth.beta.iter().all(|b| b[1..].iter().all(|v| *v == 0.0)));
    assert_eq!(sim.truth.zeta[0], 0.0);
    assert_eq!(sim.truth.zeta.len(), 6);
}

#[test]
fn generated_design_has_declared_shape() {
    let cfg = SimConfig { m: 40, p: 7, h: 0.5, ..SimConfig::default() };
    let sim = generate(&cfg, 2).unwrap();
    for (d, (g, b)) in sim.data.iter().zip(sim.truth.gamma.iter().zip(&sim.truth.beta)) {
        assert!(d.n() == 50 || d.n() == 200);
        assert_eq!((d.q(), d.p()), (6, 7));
        assert!(d.x.column(0).iter().all(|v| *v == 1.0));
        for k in 0..7 {
            assert_eq!(g.get(k), b[k + 1] != 0.0);
        }
    }
    for (d, (ind, e)) in sim.data.iter().zip(sim.truth.beta.iter().zip(&sim.truth.errors)) {
        for r in 0..d.n() {
            let fixed: f64 = (0..6).map(|c| d.x[(r, c)] * sim.truth.zeta[c]).sum();
            let random: f64 = ind[0] + (0..7).map(|c| d.s[(r, c)] * ind[c + 1]).sum::<f64>();
            assert!((d.y[r] - fixed - random - e[r]).abs() < 1e-12);
        }
    }
}

#[test]
fn generation_is_reproducible() {
    let cfg = SimConfig { m: 10, c: 4.0, f: 5.0, seed: 8, ..SimConfig::default() };
    let a = generate(&cfg, 3).unwrap();
    let b = generate(&cfg, 3).unwrap();
    assert_eq!(a.truth, b.truth);
    for (x, y) in a.data.iter().zip(&b.data) {
        assert_eq!(x, y);
    }
    assert_ne!(generate(&cfg, 4).unwrap().truth, a.truth);
}

#[test]
fn large_sample_fraction_is_binomial() {
    let cfg = SimConfig { m: 300, p: 1, q_prop: 0.3, ..SimConfig::default() };
    let reps = 1000;
    let fractions: Vec<f64> = (0..reps)
        .map(|r| {
            let sim = generate(&cfg, r).unwrap();
            sim.data.iter().filter(|d| d.n() == 200).count() as f64 / 300.0
        })
        .collect();
    let mean = fractions.iter().sum::<f64>() / reps as f64;
    let se = (0.3 * 0.7 / (300.0 * reps as f64)).sqrt();
    assert!((mean - 0.3).abs() < 3.0 * se, "{mean} ± {se}");
}

#[test]
fn gaussian_limit_of_errors() {
    let mut r = stream(1, Purpose::Simulation, 0, 0);
    let errors: Vec<f64> = (0..100_000).map(|_| skew_t_error(1.0, 0.0, 1e6, &mut r)).collect();
    let (mean, var, skew, kurt) = pooled_moments(&errors);
    assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03);
    assert!(skew.abs() < 0.05, "skewness {skew}");
    assert!(kurt.abs() < 0.1, "excess kurtosis {kurt}");
}

#[test]
fn skew_normal_limit_moments() {
    let (c, sigma2) = (4.0f64, 2.0f64);
    let s = 1.0 + c * c;
    let mut r = stream(2, Purpose::Simulation, 0, 0);
    let errors: Vec<f64> = (0..200_000).map(|_| skew_t_error(sigma2, c, 1e6, &mut r)).collect();
    let (mean, var, skew, _) = pooled_moments(&errors);
    let two_over_pi = 2.0 / std::f64::consts::PI;
    let expected_mean = c / s.sqrt() * (sigma2 * two_over_pi).sqrt();
    let expected_var = sigma2 * (c * c / s * (1.0 - two_over_pi) + 1.0 / s);
    assert!((mean - expected_mean).abs() < 0.01, "{mean} vs {expected_mean}");
    assert!((var / expected_var - 1.0).abs() < 0.02, "{var} vs {expected_var}");
    assert!(skew > 0.5);
    let mut r = stream(3, Purpose::Simulation, 0, 0);
    let left: Vec<f64> = (0..50_000).map(|_| skew_t_error(1.0, -4.0, 5.0, &mut r)).collect();
    assert!(pooled_moments(&left).2 < 0.0);
}

fn indicators(rows: &[&[usize]], p: usize) -> Vec<ModelIndicator> {
    rows.iter().map(|idx| ModelIndicator::from_indices(p, idx)).collect()
}

#[test]
fn rmse_examples() {
    let truth = vec![indicators(&[&[0], &[]], 2), indicators(&[&[0, 1], &[1]], 2)];
    let perfect: Vec<Vec<Vec<f64>>> = truth
        .iter()
        .map(|rep| rep.iter().map(|g| (0..2).map(|j| if g.get(j) { 1.0 } else { 0.0 }).collect()).collect())
        .collect();
    assert_eq!(rmse_gamma(&truth, &perfect).unwrap(), 0.0);
    assert!((rmse_gamma_constant(&truth, 0.5).unwrap() - 0.5).abs() < 1e-15);

    let est = vec![vec![vec![0.9, 0.2], vec![0.1, 0.0]], vec![vec![0.5, 0.5], vec![0.0, 0.6]]];
    // gaps: 0.1, 0.2, 0.1, 0 | 0.5, 0.5, 0, 0.4
    let ss = 0.01 + 0.04 + 0.01 + 0.0 + 0.25 + 0.25 + 0.0 + 0.16;
    assert!((rmse_gamma(&truth, &est).unwrap() - (ss / 8.0f64).sqrt()).abs() < 1e-15);
    assert!((rmse_gamma_literal(&truth, &est).unwrap() - ss / 4.0).abs() < 1e-15);

    assert_eq!(rmse_scalar(4.0, &[4.0, 4.0, 4.0]).unwrap(), 0.0);
    assert!((rmse_scalar(4.0, &[3.0, 5.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!(matches!(rmse_scalar(4.0, &[]), Err(Error::Domain(_))));
    assert!(matches!(rmse_gamma(&truth, &est[..1]), Err(Error::Domain(_))));
    let short = vec![est[0].clone(), vec![vec![0.5], vec![0.0, 0.6]]];
    assert!(matches!(rmse_gamma(&truth, &short), Err(Error::Domain(_))));
}

#[test]
fn scalar_rmse_concentrates() {
    let mut r = rng(77);
    let dist = Normal::new(4.0, 0.5).unwrap();
    let trials = 2000;
    let inside = (0..trials)
        .filter(|_| {
            let est: Vec<f64> = (0..30).map(|_| dist.sample(&mut r)).collect();
            (0.3..=0.7).contains(&rmse_scalar(4.0, &est).unwrap())
        })
        .count();
    assert!(inside as f64 > 0.99 * trials as f64, "{inside}/{trials}");
}

proptest! {
    #[test]
    fn rmse_ignores_relabeling(seed in any::<u64>(), reps in 1usize..4, m in 1usize..6, p in 1usize..6) {
        let mut r = rng(seed);
        let truth: Vec<Vec<ModelIndicator>> = (0..reps)
            .map(|_| (0..m).map(|_| {
                let idx: Vec<usize> = (0..p).filter(|_| r.random::<bool>()).collect();
                ModelIndicator::from_indices(p, &idx)
            }).collect())
            .collect();
        let est: Vec<Vec<Vec<f64>>> = (0..reps)
            .map(|_| (0..m).map(|_| (0..p).map(|_| r.random::<f64>()).collect()).collect())
            .collect();
        let base = rmse_gamma(&truth, &est).unwrap();
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut r);
        let mut vars: Vec<usize> = (0..p).collect();
        vars.shuffle(&mut r);
        let t2: Vec<Vec<ModelIndicator>> = truth.iter().map(|rep| order.iter().map(|&i| {
            let idx: Vec<usize> = (0..p).filter(|&j| rep[i].get(vars[j])).collect();
            ModelIndicator::from_indices(p, &idx)
        }).collect()).collect();
        let e2: Vec<Vec<Vec<f64>>> = est.iter().map(|rep| order.iter().map(|&i| {
            (0..p).map(|j| rep[i][vars[j]]).collect()
        }).collect()).collect();
        prop_assert!((rmse_gamma(&t2, &e2).unwrap() - base).abs() < 1e-12);
    }
}

fn smoke_settings() -> StudySettings {
    StudySettings {
        algorithms: vec![Algorithm::NormalEm],
        fit: VbConfig {
            em: EmConfig {
                max_iter: 40,
                tol: 1e-6,
                ..EmConfig::default()
            },
            ..VbConfig::default()
        },
        metric_literal: false,
    }
}

#[test]
fn desk_scale_study_emits_one_row_per_symbol() {
    let base = SimConfig { m: 50, replicates: 3, seed: 6, ..SimConfig::default() };
    let grid = symbol_grid(&base);
    let results = run_study(&grid, &smoke_settings(), &|| 0.0).unwrap();
    assert_eq!(results.len(), 4);
    for r in &results {
        assert_eq!(r.completed, 3);
        assert!(!r.partial());
        let g = r.rmse_gamma.unwrap();
        assert!((0.0..=1.0).contains(&g));
        assert!(r.rmse_c.is_none());
    }
    let table = results_table(&results, false);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5);
    let width = lines[0].split('\t').count();
    assert!(lines.iter().all(|l| l.split('\t').count() == width));
    let with_time = results_table(&results, true);
    assert!(with_time.lines().next().unwrap().ends_with("mean_seconds"));
}

#[test]
fn identical_seeds_give_identical_tables() {
    let base = SimConfig { m: 12, p: 5, replicates: 2, c: 4.0, f: 5.0, seed: 1, ..SimConfig::default() };
    let mut settings = smoke_settings();
    settings.algorithms = vec![Algorithm::NormalEm, Algorithm::SkewtVb];
    settings.fit.em.max_iter = 4;
    settings.fit.mc_draws = 20;
    let grid = vec![base];
    let first = results_table(&run_study(&grid, &settings, &|| 0.0).unwrap(), false);
    let second = results_table(&run_study(&grid, &settings, &|| 0.0).unwrap(), false);
    assert_eq!(first, second);
    assert_eq!(first.lines().count(), 3);
}

#[test]
fn empty_grid_is_rejected() {
    assert!(run_study(&[], &smoke_settings(), &|| 0.0).is_err());
    let bad = SimConfig { h: 1.5, ..SimConfig::default() };
    assert!(run_study(&[bad], &smoke_settings(), &|| 0.0).is_err());
}
