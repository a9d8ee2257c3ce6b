mod common;

use approx::assert_relative_eq;
use common::{dataset, globals, param_names, random_globals, rng, scaled_gradients};
use nalgebra::DVector;
use occamlme_core::normal_em::mstep::{a1_b1_objective, slab_objective};
use occamlme_core::normal_em::{
    mstep_psi, mstep_zeta, q_function, solve_a1_b1, solve_ab, solve_g, Design, Evaluator, WeightedSums,
};
use occamlme_core::special::digamma;
use occamlme_core::window::models_up_to;
use occamlme_core::{Error, ExponentConvention, GlobalParams, IndividualData, OccamWindow, SlabConvention};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

const VAR: SlabConvention = SlabConvention::Variance;

fn sums(weight: f64, inv_sig2: f64, neg_log_sig2: f64, b1sq: f64, brest_sq: f64, size: f64) -> WeightedSums {
    WeightedSums {
        weight,
        inv_sig2,
        neg_log_sig2,
        b1sq,
        brest_sq,
        size,
        size_hist: vec![weight],
    }
}

fn full_windows(data: &[IndividualData], g: &GlobalParams) -> (Vec<Design>, Vec<OccamWindow>) {
    let designs: Vec<Design> = data.iter().map(Design::from_individual).collect();
    let p = data[0].p();
    let models = models_up_to(p, p);
    let windows = designs
        .iter()
        .map(|d| {
            let eval = Evaluator::normal(d, g, VAR, ExponentConvention::Conjugate);
            OccamWindow::from_models(&eval, &models, true).unwrap()
        })
        .collect();
    (designs, windows)
}

fn full_mstep(designs: &[Design], windows: &[OccamWindow], g: &GlobalParams) -> GlobalParams {
    let s = WeightedSums::collect(windows, 0.0);
    let (a, b) = solve_ab(&s).unwrap();
    let ab1 = solve_a1_b1(&s.size_hist, (g.a1, g.b1));
    GlobalParams {
        zeta_star: mstep_zeta(designs, windows, 0.0).unwrap(),
        psi: mstep_psi(&s),
        g2: solve_g(&s, g.g2, VAR).unwrap(),
        a,
        b,
        a1: ab1.a1,
        b1: ab1.b1,
        c: 0.0,
        f: 10.0,
    }
}

#[test]
fn every_block_is_stationary_in_q() {
    let mut r = rng(31);
    for trial in 0..5 {
        let data = dataset(12, 6, 20, 3, 4, 500 + trial);
        let g0 = random_globals(3, &mut r);
        let (designs, windows) = full_windows(&data, &g0);
        let next = full_mstep(&designs, &windows, &g0);
        let ab1 = solve_a1_b1(&WeightedSums::collect(&windows, 0.0).size_hist, (g0.a1, g0.b1));
        let mut names = param_names(3, false);
        if ab1.at_bound {
            names.retain(|n| n != "a1" && n != "b1");
        }
        let q = |g: &GlobalParams| q_function(&designs, &windows, g, VAR, 0.0);
        for (name, grad) in scaled_gradients(q, &next, &names) {
            assert!(grad.abs() < 1e-6, "trial {trial}: ∂Q/∂{name} scaled = {grad:e}");
        }
        assert!(q(&next) >= q(&g0) - 1e-9);
    }
}

#[test]
fn zeta_reduces_to_least_squares() {
    let data = dataset(1, 40, 40, 3, 1, 9);
    let d = &data[0];
    let mut g = globals(3);
    g.psi = 1e-12;
    let designs = vec![Design::from_individual(d)];
    let eval = Evaluator::normal(&designs[0], &g, VAR, ExponentConvention::Conjugate);
    let windows = vec![OccamWindow::from_models(&eval, &[occamlme_core::ModelIndicator::empty(1)], true).unwrap()];
    let zeta = mstep_zeta(&designs, &windows, 0.0).unwrap();
    let y = DVector::from_column_slice(&d.y);
    let ols = (d.x.transpose() * &d.x).lu().solve(&(d.x.transpose() * y)).unwrap();
    for (a, b) in zeta.iter().zip(ols.iter()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn zeta_rejects_collinear_design() {
    let mut data = dataset(2, 5, 5, 3, 1, 4);
    for d in &mut data {
        for r in 0..d.n() {
            d.x[(r, 2)] = 2.0 * d.x[(r, 1)];
        }
    }
    let (designs, windows) = full_windows(&data, &globals(3));
    assert!(matches!(mstep_zeta(&designs, &windows, 0.0), Err(Error::RankDeficient(_))));
}

#[test]
fn psi_plug_ins() {
    assert_relative_eq!(mstep_psi(&sums(1.0, 1.0, 0.0, 0.0, 0.0, 0.0)), 0.4);
    assert_relative_eq!(mstep_psi(&sums(4.0, 1.0, 0.0, 6.0, 0.0, 0.0)), 1.0);
}

#[test]
fn ab_recovers_inverse_gamma_population() {
    let mut r = rng(10);
    let precision = Gamma::new(10.0, 1.0 / 0.1).unwrap();
    let mut s = sums(5000.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..5000 {
        let tau: f64 = precision.sample(&mut r);
        s.inv_sig2 += tau;
        s.neg_log_sig2 += tau.ln();
    }
    let (a, b) = solve_ab(&s).unwrap();
    assert!((a - 10.0).abs() < 1.0, "a = {a}");
    assert!((b - 0.1).abs() < 0.01, "b = {b}");
    assert!((b - a * s.weight / s.inv_sig2).abs() < 1e-10 * b);
    assert!((digamma(a) - b.ln() - s.neg_log_sig2 / s.weight).abs() < 1e-10);
}

#[test]
fn ab_without_jensen_gap_diverges() {
    let s = sums(3.0, 6.0, 3.0 * 2f64.ln(), 0.0, 0.0, 0.0);
    match solve_ab(&s) {
        Err(Error::Solver(msg)) => assert!(msg.contains("diverges"), "{msg}"),
        other => panic!("expected solver error, got {other:?}"),
    }
}

#[test]
fn a1_b1_symmetric_histogram() {
    let mut hist = vec![0.0; 11];
    hist[5] = 20.0;
    let fit = solve_a1_b1(&hist, (1.0, 3.0));
    assert!((fit.a1 / fit.b1 - 1.0).abs() < 1e-4, "{fit:?}");
}

#[test]
fn a1_driven_to_bound_by_empty_models() {
    let mut hist = vec![0.0; 11];
    hist[0] = 20.0;
    let fit = solve_a1_b1(&hist, (1.0, 1.0));
    assert!(fit.at_bound);
    assert!(fit.a1 <= 1e-4 * 1.001 || fit.b1 >= 1e4 * 0.999, "{fit:?}");
}

#[test]
fn a1_b1_is_a_local_max() {
    let mut r = rng(3);
    let mut checked = 0;
    for _ in 0..30 {
        let hist: Vec<f64> = (0..=6).map(|_| r.random_range(0.0..5.0)).collect();
        let fit = solve_a1_b1(&hist, (1.0, 1.0));
        if fit.at_bound {
            continue;
        }
        checked += 1;
        let f0 = a1_b1_objective(&hist, fit.a1, fit.b1);
        for delta in [0.99, 1.01] {
            assert!(a1_b1_objective(&hist, fit.a1 * delta, fit.b1) <= f0 + 1e-12);
            assert!(a1_b1_objective(&hist, fit.a1, fit.b1 * delta) <= f0 + 1e-12);
        }
    }
    assert!(checked >= 10);
}

#[test]
fn slab_root_of_first_order_condition() {
    let g = solve_g(&sums(1.0, 1.0, 0.0, 0.0, 1.0, 1.0), 1.0, VAR).unwrap();
    // −2/v + 1/v² − 2/(1+v) = 0  ⇔  4v² + v − 1 = 0
    assert_relative_eq!(g, (17f64.sqrt() - 1.0) / 8.0, epsilon = 1e-8);
    let foc = -2.0 / g + 1.0 / (g * g) - 2.0 / (1.0 + g);
    assert!(foc.abs() < 1e-7);
    for scale in [0.5, 2.0] {
        assert!(slab_objective(1.0, 1.0, g) > slab_objective(1.0, 1.0, g * scale));
    }
}

#[test]
fn slab_grows_with_effect_energy() {
    let small = solve_g(&sums(1.0, 1.0, 0.0, 0.0, 1.0, 3.0), 1.0, VAR).unwrap();
    let large = solve_g(&sums(1.0, 1.0, 0.0, 0.0, 2.0, 3.0), 1.0, VAR).unwrap();
    assert!(large > small);
    let scale = solve_g(&sums(1.0, 1.0, 0.0, 0.0, 2.0, 3.0), 1.0, SlabConvention::Scale).unwrap();
    assert_relative_eq!(scale, large * large, max_relative = 1e-8);
}

#[test]
fn slab_unidentified_without_selected_effects() {
    assert_eq!(solve_g(&sums(3.0, 1.0, 0.0, 0.0, 0.0, 0.0), 2.0, VAR), None);
}

#[test]
fn sums_ignore_truncated_models() {
    let data = dataset(4, 8, 12, 2, 3, 77);
    let (_, windows) = full_windows(&data, &globals(2));
    let all = WeightedSums::collect(&windows, 0.0);
    assert_relative_eq!(all.weight, 4.0, epsilon = 1e-12);
    assert_relative_eq!(all.size_hist.iter().sum::<f64>(), 4.0, epsilon = 1e-12);
    let trimmed = WeightedSums::collect(&windows, 0.5);
    assert!(trimmed.weight <= all.weight);
}
