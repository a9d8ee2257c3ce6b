mod common;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use occamlme_core::model::log_prior_size;
use occamlme_core::{log_prior_gamma, validate_dataset, Error, IndividualData, ModelIndicator};
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma as oracle_ln_gamma;

fn all_models(p: usize) -> impl Iterator<Item = ModelIndicator> {
    (0u64..1 << p).map(move |bits| {
        let idx: Vec<usize> = (0..p).filter(|j| bits >> j & 1 == 1).collect();
        ModelIndicator::from_indices(p, &idx)
    })
}

#[test]
fn single_variable_uniform_prior() {
    let v = log_prior_gamma(&ModelIndicator::empty(1), 1.0, 1.0).unwrap();
    assert_relative_eq!(v, 0.5f64.ln(), epsilon = 1e-14);
}

#[test]
fn two_variables_enumerated() {
    let mut total = 0.0;
    for m in all_models(2) {
        let pr = log_prior_gamma(&m, 1.0, 1.0).unwrap().exp();
        if m.count() == 1 {
            assert_relative_eq!(pr, 1.0 / 6.0, epsilon = 1e-14);
        }
        total += pr;
    }
    assert_relative_eq!(total, 1.0, epsilon = 1e-14);
}

#[test]
fn matches_beta_binomial_pmf_over_binomial_coefficient() {
    // P(size = 3) for BetaBin(10, 2, 8) via the pmf, then divide by C(10, 3)
    let (n, k, a, b) = (10.0f64, 3.0f64, 2.0f64, 8.0f64);
    let ln_choose = oracle_ln_gamma(n + 1.0) - oracle_ln_gamma(k + 1.0) - oracle_ln_gamma(n - k + 1.0);
    let ln_beta = |x: f64, y: f64| oracle_ln_gamma(x) + oracle_ln_gamma(y) - oracle_ln_gamma(x + y);
    let ln_pmf = ln_choose + ln_beta(k + a, n - k + b) - ln_beta(a, b);
    let expected = ln_pmf - ln_choose;
    let gamma = ModelIndicator::from_indices(10, &[1, 4, 7]);
    assert_relative_eq!(log_prior_gamma(&gamma, 2.0, 8.0).unwrap(), expected, epsilon = 1e-12);
}

#[test]
fn rejects_non_positive_hyperparameters() {
    let m = ModelIndicator::empty(3);
    assert!(matches!(log_prior_gamma(&m, 0.0, 1.0), Err(Error::Domain(_))));
    assert!(matches!(log_prior_gamma(&m, 1.0, -2.0), Err(Error::Domain(_))));
    assert!(matches!(log_prior_size(4, 3, 1.0, 1.0), Err(Error::Domain(_))));
}

#[test]
fn indicator_bookkeeping() {
    let mut m = ModelIndicator::from_bitstring("0110100").unwrap();
    assert_eq!(m.count(), 3);
    assert_eq!(m.selected().collect::<Vec<_>>(), vec![1, 2, 4]);
    m.flip(2);
    assert_eq!(m.count(), 2);
    assert_eq!(m.bitstring(), "0100100");
    assert!(ModelIndicator::from_bitstring("01x").is_err());
    let wide = ModelIndicator::from_indices(130, &[0, 64, 129]);
    assert_eq!(wide.count(), 3);
    assert!(wide.get(129) && !wide.get(128));
}

fn simple(id: &str, n: usize, q: usize, p: usize) -> IndividualData {
    IndividualData::new(
        id,
        vec![1.0; n],
        DMatrix::from_element(n, q, 1.0),
        DMatrix::from_element(n, p, 0.5),
    )
    .unwrap()
}

#[test]
fn validation_accepts_consistent_dataset() {
    let dims = validate_dataset(&[simple("a", 3, 2, 10), simple("b", 5, 2, 10)]).unwrap();
    assert_eq!((dims.q, dims.p), (2, 10));
}

#[test]
fn validation_names_the_offending_individual() {
    let err = validate_dataset(&[simple("a", 3, 2, 10), simple("bad", 3, 2, 9)]).unwrap_err();
    match err {
        Error::Validation(issues) => {
            assert_eq!(issues.len(), 1);
            assert_eq!(issues[0].individual, "bad");
            assert!(issues[0].problem.contains("9"));
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn validation_rejects_empty_dataset() {
    let err = validate_dataset(&[]).unwrap_err();
    assert!(matches!(err, Error::NoIndividuals));
    assert_eq!(err.to_string(), "no individuals");
}

#[test]
fn validation_rejects_non_finite_and_missing_intercept() {
    let mut a = simple("nan", 3, 2, 2);
    a.s[(1, 1)] = f64::NAN;
    let mut b = simple("slope-only", 3, 2, 2);
    b.x[(0, 0)] = 2.0;
    match validate_dataset(&[a, b]).unwrap_err() {
        Error::Validation(issues) => {
            let ids: Vec<_> = issues.iter().map(|i| i.individual.as_str()).collect();
            assert!(ids.contains(&"nan") && ids.contains(&"slope-only"));
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn row_mismatch_is_rejected_on_construction() {
    let err = IndividualData::new("x", vec![1.0; 3], DMatrix::zeros(2, 1), DMatrix::zeros(3, 1)).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
}

proptest! {
    #[test]
    fn prior_sums_to_one(p in 1usize..=12, a1 in 0.05f64..20.0, b1 in 0.05f64..20.0) {
        let total: f64 = all_models(p).map(|m| log_prior_gamma(&m, a1, b1).unwrap().exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10, "total {}", total);
    }

    #[test]
    fn prior_is_exchangeable(bits in proptest::collection::vec(any::<bool>(), 1..40), seed in any::<u64>(),
                             a1 in 0.1f64..10.0, b1 in 0.1f64..10.0) {
        let p = bits.len();
        let idx: Vec<usize> = (0..p).filter(|&j| bits[j]).collect();
        let mut perm: Vec<usize> = (0..p).collect();
        let mut s = seed;
        for i in (1..p).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<usize> = idx.iter().map(|&j| perm[j]).collect();
        let x = log_prior_gamma(&ModelIndicator::from_indices(p, &idx), a1, b1).unwrap();
        let y = log_prior_gamma(&ModelIndicator::from_indices(p, &permuted), a1, b1).unwrap();
        prop_assert_eq!(x, y);
    }
}
