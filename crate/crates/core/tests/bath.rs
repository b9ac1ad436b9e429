use proptest::prelude::*;
use transmon_noise::bath::{
    correlation_function_grid, derive_seed, ensemble_psd_estimate, fluctuator_value_at,
    ohmic_spectrum_at, psd_with_sampling, sample_fluctuators, FluctuatorEnsembleSpec,
    OhmicBathSpec,
};
use transmon_noise::units::{mk_to_ghz, TWO_PI};

fn quito_x() -> OhmicBathSpec {
    OhmicBathSpec { g: 5.734e-3, omega_c: 1.948, temperature: mk_to_ghz(20.0), eta: 1e-4 }
}

fn quito_z() -> OhmicBathSpec {
    OhmicBathSpec { g: 4.413e-3, omega_c: 5.690e-3, temperature: mk_to_ghz(20.0), eta: 1e-4 }
}

fn quito_fluctuators(seed: u64) -> FluctuatorEnsembleSpec {
    FluctuatorEnsembleSpec { count: 10, b: 0.598e-3, gamma_min: 1e-4, gamma_max: 0.051, seed }
}

/// Adaptive Simpson quadrature.
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[test]
fn golden_rule_rate_at_qubit_frequency() {
    let rate = ohmic_spectrum_at(&quito_x(), 5.0806);
    assert!(rate.is_finite() && rate > 0.0);
    assert!((rate / 1.918067528758008e-06 - 1.0).abs() < 1e-4);
}

#[test]
fn detailed_balance_at_fixed_frequencies() {
    let s = quito_x();
    for f in [0.1, 1.0, 5.0] {
        let lhs = ohmic_spectrum_at(&s, -f);
        let rhs = (-f / s.temperature).exp() * ohmic_spectrum_at(&s, f);
        assert!((lhs / rhs - 1.0).abs() < 1e-12);
    }
}

#[test]
fn correlation_at_zero_matches_adaptive_quadrature() {
    for spec in [quito_x(), quito_z()] {
        let grid = correlation_function_grid(&spec, 5.0, 11).unwrap();
        let f = |w: f64| spec.spectral_density(w) / TWO_PI;
        let wc = TWO_PI * spec.omega_c;
        // Split at the kink and integrate each side far into the tail.
        let upper = 80.0 * spec.upper_scale();
        let c0 = adaptive(&f, -upper, 0.0, 1e-16) + adaptive(&f, 0.0, wc, 1e-16) + adaptive(&f, wc, upper, 1e-16);
        assert!(grid.values[0].im.abs() < 1e-12 * c0);
        assert!(grid.values[0].re > 0.0);
        assert!((grid.values[0].re / c0 - 1.0).abs() < 1e-6, "{} vs {c0}", grid.values[0].re);
    }
}

#[test]
fn correlation_is_hermitian_and_decays() {
    let grid = correlation_function_grid(&quito_x(), 200.0, 801).unwrap();
    for (a, b) in grid.values.iter().zip(&grid.reversed) {
        assert!((a - b.conj()).norm() < 1e-12 * grid.values[0].re);
    }
    let mem = grid.memory_time.expect("x-channel memory within 200 ns");
    // Frozen from a direct numpy transform: |C(50 ns)|/C(0) = 1.03e-6.
    assert!(mem > 40.0 && mem < 60.0, "memory time {mem}");
    let c0 = grid.values[0].re;
    for (t, v) in grid.tau.iter().zip(&grid.values) {
        if *t >= mem {
            assert!(v.norm() < 1e-6 * c0);
        }
    }
}

#[test]
fn fixed_seed_is_reproducible() {
    let spec = quito_fluctuators(1);
    let a = sample_fluctuators(&spec, 1e4, 77).unwrap();
    let b = sample_fluctuators(&spec, 1e4, 77).unwrap();
    assert_eq!(a, b);
    let c = sample_fluctuators(&spec, 1e4, 78).unwrap();
    assert_ne!(a, c);
}

#[test]
fn switch_counts_follow_rates() {
    let spec = quito_fluctuators(0);
    let t_max = 2000.0;
    let (mut count, mut expected) = (0.0, 0.0);
    for s in 0..400 {
        let r = sample_fluctuators(&spec, t_max, derive_seed(5, s)).unwrap();
        for k in 0..spec.count {
            count += r.switch_times[k].len() as f64;
            expected += r.rates[k] * t_max;
        }
    }
    assert!((count - expected).abs() < 3.0 * expected.sqrt(), "{count} vs {expected}");
}

#[test]
fn telegraph_values() {
    let spec = FluctuatorEnsembleSpec { count: 3, b: 0.5, gamma_min: 0.01, gamma_max: 0.02, seed: 0 };
    let r = sample_fluctuators(&spec, 500.0, 4).unwrap();
    let first = r.switch_times.iter().filter_map(|t| t.first()).fold(f64::INFINITY, |a, &b| a.min(b));
    let start: f64 = r.initial_signs.iter().map(|&s| s as f64 * 0.5).sum();
    assert_eq!(fluctuator_value_at(&r, 0.5 * first).unwrap(), start);

    let single = FluctuatorEnsembleSpec { count: 1, ..spec };
    let r = sample_fluctuators(&single, 500.0, 11).unwrap();
    let ts = r.switch_times[0][0];
    let before = fluctuator_value_at(&r, ts - 1e-9).unwrap();
    let after = fluctuator_value_at(&r, ts + 1e-9).unwrap();
    assert_eq!(before, -after);
    for w in r.switch_times[0].windows(2) {
        assert!(w[1] > w[0]);
    }
}

#[test]
fn telegraph_autocorrelation() {
    let gamma = 0.01;
    let spec = FluctuatorEnsembleSpec { count: 1, b: 1.0, gamma_min: gamma, gamma_max: gamma, seed: 0 };
    let taus = [10.0, 30.0, 60.0, 120.0];
    let n = 10_000;
    let mut sums = [0.0; 4];
    for s in 0..n {
        let r = sample_fluctuators(&spec, 200.0, derive_seed(9, s)).unwrap();
        let v0 = fluctuator_value_at(&r, 0.0).unwrap();
        for (k, &tau) in taus.iter().enumerate() {
            sums[k] += v0 * fluctuator_value_at(&r, tau).unwrap();
        }
    }
    for (k, &tau) in taus.iter().enumerate() {
        let expected = (-2.0 * gamma * tau).exp();
        let se = ((1.0 - expected * expected) / n as f64).sqrt();
        let got = sums[k] / n as f64;
        assert!((got - expected).abs() < 4.0 * se, "tau {tau}: {got} vs {expected}");
    }
}

#[test]
fn ensemble_spectrum_is_one_over_f() {
    let spec = quito_fluctuators(3);
    let psd = ensemble_psd_estimate(&spec, 100).unwrap();
    let slope = psd.loglog_slope(10.0 * spec.gamma_min, spec.gamma_max / 10.0).unwrap();
    assert!((-1.3..=-0.7).contains(&slope), "slope {slope}");
}

#[test]
fn single_fluctuator_spectrum_is_lorentzian() {
    let gamma = 0.02;
    let b = 1e-3;
    let spec = FluctuatorEnsembleSpec { count: 1, b, gamma_min: gamma, gamma_max: gamma, seed: 8 };
    let psd = psd_with_sampling(&spec, 300, 2.0, 1 << 14).unwrap();
    for f in [1e-3, 3e-3, 1e-2, 3e-2] {
        let (mut acc, mut m) = (0.0, 0);
        for (x, p) in psd.freqs.iter().zip(&psd.psd) {
            if (*x / f - 1.0).abs() < 0.1 {
                acc += p;
                m += 1;
            }
        }
        let got = acc / m as f64;
        let w = TWO_PI * f;
        let expected = 2.0 * b * b * 4.0 * gamma / (4.0 * gamma * gamma + w * w);
        assert!((got / expected - 1.0).abs() < 0.1, "f {f}: {got} vs {expected}");
    }
}

#[test]
fn spectrum_scales_with_coupling_squared() {
    let spec = quito_fluctuators(2);
    let a = psd_with_sampling(&spec, 100, 4.0, 1 << 12).unwrap();
    let b = psd_with_sampling(&FluctuatorEnsembleSpec { b: 2.0 * spec.b, ..spec }, 100, 4.0, 1 << 12).unwrap();
    let sa: f64 = a.psd.iter().sum();
    let sb: f64 = b.psd.iter().sum();
    assert!((sb / sa / 4.0 - 1.0).abs() < 0.05);
}

proptest! {
    #[test]
    fn detailed_balance_and_positivity(
        g in 1e-4f64..2e-2,
        wc in 1e-3f64..5.0,
        t in 0.05f64..2.0,
        f in -8.0f64..8.0,
    ) {
        let s = OhmicBathSpec { g, omega_c: wc, temperature: t, eta: 1e-4 };
        let pos = ohmic_spectrum_at(&s, f.abs());
        let neg = ohmic_spectrum_at(&s, -f.abs());
        prop_assert!(pos > 0.0 || pos == 0.0 && f.abs() / wc > 600.0);
        if pos > 1e-250 {
            prop_assert!((neg / ((-f.abs() / t).exp() * pos) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn telegraph_sum_is_bounded(seed in 0u64..1000, t in 0.0f64..5000.0) {
        let spec = quito_fluctuators(seed);
        let r = sample_fluctuators(&spec, 5000.0, seed).unwrap();
        let v = fluctuator_value_at(&r, t).unwrap();
        prop_assert!(v.abs() <= spec.count as f64 * spec.b * (1.0 + 1e-12));
        for k in 0..spec.count {
            prop_assert!(r.sign_at(k, t).abs() == 1);
        }
    }
}

#[test]
fn field_pieces_cover_the_interval() {
    use transmon_noise::bath::PiecewiseField;
    let f = PiecewiseField::new(vec![0.0, 1.0, 2.5], vec![1.0, -1.0, 2.0], 4.0);
    assert_eq!(f.pieces(0.5, 0.9), vec![(0.5, 0.9, 1.0)]);
    assert_eq!(f.pieces(0.5, 3.0), vec![(0.5, 1.0, 1.0), (1.0, 2.5, -1.0), (2.5, 3.0, 2.0)]);
    assert!(f.is_constant_on(1.0, 2.5) && !f.is_constant_on(0.5, 1.5));
    let total: f64 = f.pieces(0.5, 3.0).iter().map(|(a, b, v)| (b - a) * v).sum();
    assert!((total - f.integral(0.5, 3.0)).abs() < 1e-15);
}
