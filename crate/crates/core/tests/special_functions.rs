use occamlme_core::special::{digamma, ln_beta, normal_quantile, reg_inc_beta, student_t_cdf, student_t_quantile};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{digamma as oracle_digamma, ln_gamma as oracle_ln_gamma};

fn grid() -> impl Iterator<Item = f64> {
    (1..=400).map(|k| 1e-3 * (1.05f64).powi(k))
}

#[test]
fn gamma_family_matches_statrs() {
    for x in grid() {
        let lg = occamlme_core::special::ln_gamma(x);
        assert!((lg - oracle_ln_gamma(x)).abs() <= 1e-12 * oracle_ln_gamma(x).abs().max(1.0), "ln_gamma({x})");
        assert!((digamma(x) - oracle_digamma(x)).abs() <= 1e-10 * oracle_digamma(x).abs().max(1.0), "digamma({x})");
    }
    assert!((ln_beta(2.0, 3.0) - (1.0f64 / 12.0).ln()).abs() < 1e-14);
}

#[test]
fn distribution_functions_match_statrs() {
    for &dof in &[0.7, 1.0, 3.0, 12.5, 200.0] {
        let t = StudentsT::new(0.0, 1.0, dof).unwrap();
        for k in -40..=40 {
            let x = 0.25 * k as f64;
            assert!((student_t_cdf(x, dof) - t.cdf(x)).abs() < 1e-10, "cdf({x}, {dof})");
        }
        for p in [1e-6, 0.01, 0.3, 0.5, 0.77, 0.999] {
            let q = student_t_quantile(p, dof);
            assert!((t.cdf(q) - p).abs() < 1e-9 * p.max(1e-3), "quantile({p}, {dof})");
        }
    }
    let n = Normal::new(0.0, 1.0).unwrap();
    for p in [1e-12, 1e-5, 0.02, 0.5, 0.9, 1.0 - 1e-9] {
        let exact = n.inverse_cdf(p);
        assert!((normal_quantile(p) - exact).abs() < 5e-9 * exact.abs().max(1.0), "Φ⁻¹({p})");
    }
    for (a, b, x) in [(0.5, 0.5, 0.3), (2.0, 7.0, 0.1), (30.0, 2.5, 0.95)] {
        assert!((reg_inc_beta(a, b, x) - beta_reg(a, b, x)).abs() < 1e-12);
    }
}
