use plgc::theory::{
    epsilon_k, net_size_bound, run_concentration_trial, sample_complexity, validate_theorem, TheoremParams,
};
use proptest::prelude::*;

#[test]
fn epsilon_closed_form_value() {
    // 4 * sqrt((2 + ln 80) / 100)
    let expected = 4.0 * ((2.0 + 80f64.ln()) / 100.0).sqrt();
    let got = epsilon_k(1.0, 2, 2, 0.05, 100).unwrap();
    assert!((got - expected).abs() < 1e-15);
    assert!((got - 1.010507).abs() < 5e-7, "{got}");
}

#[test]
fn sample_complexity_closed_form_value() {
    assert_eq!(sample_complexity(1.0, 4.0, 2.0, 2, 2, 0.05).unwrap(), 409);
    assert_eq!(sample_complexity(0.0, 4.0, 2.0, 2, 2, 0.05).unwrap(), 1);
    // doubling the separation divides the unrounded bound by four
    let raw = |sep: f64| 16.0 * 4.0 * 4.0 / (sep * sep) * (2.0 + 80f64.ln());
    assert_eq!(sample_complexity(1.0, 4.0, 4.0, 2, 2, 0.05).unwrap(), raw(4.0).ceil() as usize);
    assert!((raw(2.0) / raw(4.0) - 4.0).abs() < 1e-12);
}

#[test]
fn net_size_overflow_threshold() {
    assert_eq!(net_size_bound(1).unwrap(), 5);
    assert_eq!(net_size_bound(3).unwrap(), 125);
    // first exponent whose power of five exceeds u64, found with u128
    let threshold = (1u32..).find(|&d| 5u128.pow(d) > u64::MAX as u128).unwrap();
    assert_eq!(threshold, 28);
    assert_eq!(net_size_bound(threshold - 1).unwrap() as u128, 5u128.pow(threshold - 1));
    assert!(net_size_bound(threshold).is_err());
}

proptest! {
    #[test]
    fn sample_complexity_inverts_epsilon(
        sigma in 0.1f64..5.0,
        beta in 2.1f64..10.0,
        sep in 0.5f64..20.0,
        d in 1usize..30,
        k in 1usize..20,
        delta in 0.001f64..0.5,
    ) {
        let s = sample_complexity(sigma, beta, sep, d, k, delta).unwrap();
        let eps = epsilon_k(sigma, d, k, delta, s).unwrap();
        prop_assert!(eps <= sep / beta * (1.0 + 1e-12), "eps {} > {}", eps, sep / beta);
    }
}

#[test]
fn noiseless_trial_recovers_centers() {
    let mut p = TheoremParams::regular(2, 4, 0.0, 6.0, 0.05, 4.0).unwrap();
    p.samples = vec![20; 4];
    let o = run_concentration_trial(&p, 3).unwrap();
    assert!(o.deviations.iter().all(|&d| d == 0.0));
    assert!(o.all_bounds_hold());
    assert_eq!(o.interior_fraction(), 1.0);
}

#[test]
fn theorem_report_is_deterministic() {
    let p = TheoremParams::regular(2, 4, 1.0, 6.0, 0.05, 4.0).unwrap();
    let a = validate_theorem(&p, 100, 17).unwrap();
    let b = validate_theorem(&p, 100, 17).unwrap();
    assert_eq!(a, b);
    assert_eq!(p.samples, vec![51; 4]);
}
