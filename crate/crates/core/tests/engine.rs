use std::sync::Arc;

use num_complex::Complex64;
use transmon_noise::bath::{
    correlation_function_grid, ohmic_spectrum_at, FluctuatorEnsembleSpec, OhmicBathSpec, PiecewiseField,
};
use transmon_noise::engine::{
    cumulative_kernel, lambda_operator_at, propagate_trajectory, run_ensemble, state_fidelity, ChannelKernel,
    DensityState, HybridNoiseModel, Integrator, PropagationOptions, Propagator, PulseProgram, QubitState, Segment,
    Timeline,
};
use transmon_noise::linalg::{c, hermiticity_error, max_abs, CMat};
use transmon_noise::pulse::{gate_metrics, simulate_gate, GateCalibration, GateSpec};
use transmon_noise::transmon::{fit_circuit_params, solve_spectrum, TransmonSpec, TransmonSpectrum};
use transmon_noise::units::{mk_to_ghz, TWO_PI};
use transmon_noise::Error;

fn quito(levels: usize) -> TransmonSpectrum {
    let (e_c, e_j) = fit_circuit_params(5.0806, 0.3192).unwrap();
    let spec = TransmonSpec::new(e_c, e_j).unwrap().with_truncation(50, levels.max(3)).unwrap();
    solve_spectrum(&spec).unwrap().truncated(levels).unwrap()
}

fn quito_x() -> OhmicBathSpec {
    OhmicBathSpec { g: 5.734e-3, omega_c: 1.948, temperature: mk_to_ghz(20.0), eta: 1e-4 }
}

fn quito_z() -> OhmicBathSpec {
    OhmicBathSpec { g: 4.413e-3, omega_c: 5.690e-3, temperature: mk_to_ghz(20.0), eta: 1e-4 }
}

fn quito_fluct() -> FluctuatorEnsembleSpec {
    FluctuatorEnsembleSpec { count: 10, b: 0.598e-3, gamma_min: 1e-4, gamma_max: 0.051, seed: 7 }
}

fn hybrid() -> HybridNoiseModel {
    HybridNoiseModel { x: Some(quito_x()), z: Some(quito_z()), fluctuators: Some(quito_fluct()), redraw_rates: true }
}

fn s2() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2
}

fn plus() -> QubitState {
    [c(s2()), c(s2())]
}

fn plus_i() -> QubitState {
    [c(s2()), Complex64::new(0.0, s2())]
}

fn xy4(spectrum: &TransmonSpectrum, cycles: usize) -> PulseProgram {
    let cal = GateCalibration::default();
    let mut p = PulseProgram::new();
    for _ in 0..cycles {
        for g in [GateSpec::x(), GateSpec::y(), GateSpec::x(), GateSpec::y()] {
            p.push_gate(&g, &cal, spectrum).unwrap();
        }
    }
    p
}

fn opts_at(instants: &[f64]) -> PropagationOptions {
    PropagationOptions { store_instants: instants.to_vec(), ..Default::default() }
}

#[test]
fn noiseless_idle_leaves_qubit_states_unchanged() {
    let sp = quito(4);
    let rho0 = DensityState::from_qubit(&plus_i(), 4).unwrap();
    for integrator in [Integrator::Auto, Integrator::General] {
        let opts = PropagationOptions { integrator, ..opts_at(&[0.0, 100.0, 400.0]) };
        let out = propagate_trajectory(&rho0, &PulseProgram::idle(400.0), &sp, &HybridNoiseModel::noiseless(), None, &opts)
            .unwrap();
        for s in out {
            assert!(max_abs(&(s.rho() - rho0.rho())) < 1e-12);
        }
    }
}

#[test]
fn relaxation_matches_golden_rule() {
    let sp = quito(2);
    let a01 = sp.charge_coupling_op()[(0, 1)].norm();
    let rate = a01 * a01 * ohmic_spectrum_at(&quito_x(), sp.qubit_freq);
    let noise = HybridNoiseModel { x: Some(quito_x()), ..HybridNoiseModel::noiseless() };
    let instants: Vec<f64> = (0..=20).map(|k| 1000.0 * k as f64).collect();
    let rho0 = DensityState::pure(&[c(0.0), c(1.0)]).unwrap();
    let out = propagate_trajectory(&rho0, &PulseProgram::idle(20_000.0), &sp, &noise, None, &opts_at(&instants)).unwrap();
    // Least-squares slope of ln p1 against t.
    let pts: Vec<(f64, f64)> = instants.iter().zip(&out).skip(1).map(|(t, s)| (*t, s.population(1).ln())).collect();
    let n = pts.len() as f64;
    let (mt, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    assert!(((-slope) / rate - 1.0).abs() < 0.05, "fitted {} vs {rate}", -slope);
}

/// Coherence of a qubit under one telegraph fluctuator of switching rate
/// `gamma` and angular half-splitting `b_eff`.
fn telegraph_coherence(gamma: f64, b_eff: f64, t: f64) -> f64 {
    let mu = Complex64::new(gamma * gamma - 4.0 * b_eff * b_eff, 0.0).sqrt();
    let mt = mu * t;
    let v = mt.cosh() + mt.sinh() * gamma / mu;
    (-gamma * t).exp() * v.re
}

#[test]
fn single_fluctuator_matches_telegraph_dephasing() {
    let sp = quito(2);
    let az = sp.josephson_coupling_op();
    let gamma = 0.01;
    let b = 1e-3;
    let fluct = FluctuatorEnsembleSpec { count: 1, b, gamma_min: gamma, gamma_max: gamma, seed: 1 };
    let noise = HybridNoiseModel { fluctuators: Some(fluct), ..HybridNoiseModel::noiseless() };
    // Level energies shift by 2π·F·a_k, so the coherence turns at 2πb·|a_0 - a_1|.
    let b_eff = 0.5 * TWO_PI * b * (az[(0, 0)].re - az[(1, 1)].re).abs();
    assert!(b_eff > 0.2 * gamma && b_eff < 5.0 * gamma);
    let instants: Vec<f64> = (0..=25).map(|k| 40.0 * k as f64).collect();
    let curve = run_ensemble(&plus(), &plus(), &PulseProgram::idle(1000.0), &sp, &noise, &opts_at(&instants), 600, 11)
        .unwrap();
    for (k, t) in instants.iter().enumerate() {
        let expect = 0.5 * (1.0 + telegraph_coherence(gamma, b_eff, *t));
        let err = (curve.mean[k] - expect).abs();
        assert!(err <= 4.0 * curve.std_error[k] + 1e-4, "t = {t}: {} vs {expect} ± {}", curve.mean[k], curve.std_error[k]);
    }
}

#[test]
fn lambda_vanishes_at_zero_and_reduces_for_diagonal_coupling() {
    let sp = quito(3);
    let delta = 0.1;
    let timeline = Timeline::compile(&sp, &PulseProgram::idle(60.0), delta, 0.01).unwrap();
    let bath = quito_z();
    let corr = correlation_function_grid(&bath, 60.0, 601).unwrap();
    let op = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0), c(-0.5), c(2.0)]));
    assert_eq!(max_abs(&lambda_operator_at(0.0, &op, &timeline, &corr, None).unwrap()), 0.0);
    let gamma = cumulative_kernel(&bath, 0.0, delta, 600).unwrap();
    for t in [10.0, 30.0, 60.0] {
        let lam = lambda_operator_at(t, &op, &timeline, &corr, None).unwrap();
        let expect = &op * gamma[(t / delta).round() as usize];
        assert!(max_abs(&(lam - &expect)) < 1e-3 * max_abs(&expect), "t = {t}");
    }
}

#[test]
fn lambda_converges_in_memory_cutoff() {
    let sp = quito(3);
    let delta = 0.1;
    let timeline = Timeline::compile(&sp, &PulseProgram::idle(300.0), delta, 0.01).unwrap();
    let corr = correlation_function_grid(&quito_x(), 300.0, 3001).unwrap();
    let tau_mem = corr.memory_time.expect("x channel memory fits the grid");
    let op = sp.charge_coupling_op();
    let a = lambda_operator_at(300.0, &op, &timeline, &corr, Some(tau_mem)).unwrap();
    let b = lambda_operator_at(300.0, &op, &timeline, &corr, Some(2.0 * tau_mem)).unwrap();
    assert!(max_abs(&(a - b)) < 1e-6);
}

#[test]
fn lambda_quadrature_matches_kernel_during_pulses() {
    let sp = quito(3);
    let cal = GateCalibration::default();
    let mut program = PulseProgram::new();
    program.push_gate(&GateSpec::x(), &cal, &sp).unwrap();
    program.push(Segment::Idle(30.0));
    // Fine nodes keep the trapezoid accurate on the drive-frequency harmonics.
    let delta = 0.02;
    let timeline = Arc::new(Timeline::compile(&sp, &program, delta, 0.01).unwrap());
    let bath = quito_z();
    let op = sp.josephson_coupling_op();
    let kernel = ChannelKernel::build(&timeline, &op, &bath, None).unwrap();
    let corr = correlation_function_grid(&bath, program.duration(), timeline.n_nodes()).unwrap();
    for t in [20.0, 35.0, 70.0, 100.0] {
        let node = timeline.step_node(t).unwrap();
        let quad = lambda_operator_at(t, &op, &timeline, &corr, None).unwrap();
        let prod = kernel.lambda_at(&timeline, node);
        assert!(max_abs(&(&quad - &prod)) < 1e-3 * max_abs(&prod), "t = {t}: {:e} of {:e}", max_abs(&(&quad - &prod)), max_abs(&prod));
    }
}

#[test]
fn fast_path_matches_driven_integrator() {
    let sp = quito(4);
    let noise = HybridNoiseModel { fluctuators: None, ..hybrid() };
    let instants = [0.0, 200.0, 800.0, 2000.0];
    let program = PulseProgram::idle(2000.0);
    let fast = Propagator::new(&sp, &program, &noise, &opts_at(&instants)).unwrap();
    let general =
        Propagator::new(&sp, &program, &noise, &PropagationOptions { integrator: Integrator::General, ..opts_at(&instants) })
            .unwrap();
    let field = Some(PiecewiseField::new(vec![0.0, 300.0, 1100.0], vec![2e-3, -1e-3, 3e-3], 2000.0));
    let states = [plus(), plus_i(), [c(0.0), c(1.0)]];
    let inputs: Vec<CMat> = states.iter().map(|s| DensityState::from_qubit(s, 4).unwrap().into_inner()).collect();
    let a = fast.propagate(&inputs, &[None, field.clone()]);
    let b = general.propagate(&inputs, &[None, field]);
    for (ra, rb) in a.into_iter().zip(b) {
        for (sa, sb) in ra.unwrap().iter().zip(rb.unwrap().iter()) {
            for (x, y) in sa.iter().zip(sb) {
                assert!(max_abs(&(x - y)) < 1e-5, "{:e}\n{x}\n{y}", max_abs(&(x - y)));
            }
        }
    }
}

#[test]
fn driven_run_preserves_trace_and_hermiticity_and_is_linear() {
    let sp = quito(4);
    let program = xy4(&sp, 3);
    let instants: Vec<f64> = (0..=6).map(|k| 140.0 * k as f64).collect();
    let prop = Propagator::new(&sp, &program, &HybridNoiseModel { fluctuators: None, ..hybrid() }, &opts_at(&instants)).unwrap();
    let r1 = DensityState::from_qubit(&plus(), 4).unwrap().into_inner();
    let r2 = DensityState::from_qubit(&[c(0.0), c(1.0)], 4).unwrap().into_inner();
    let alpha = 0.3;
    let mix = &r1 * c(alpha) + &r2 * c(1.0 - alpha);
    let field = Some(PiecewiseField::new(vec![0.0, 400.0], vec![1e-3, -2e-3], 840.0));
    let out = prop.propagate(&[r1, r2, mix], &[field]).pop().unwrap().unwrap();
    for k in 0..instants.len() {
        for s in &out {
            assert!((s[k].trace() - c(1.0)).norm() < 1e-6);
            assert!(hermiticity_error(&s[k]) < 1e-10);
        }
        let combo = &out[0][k] * c(alpha) + &out[1][k] * c(1.0 - alpha);
        assert!(max_abs(&(combo - &out[2][k])) < 1e-8);
    }
}

#[test]
fn halving_steps_changes_fidelities_little() {
    let sp = quito(4);
    let noise = HybridNoiseModel { fluctuators: None, ..hybrid() };
    let program = xy4(&sp, 2);
    let instants = [280.0, 560.0];
    let run = |dt: f64| {
        let opts = PropagationOptions { dt, ..opts_at(&instants) };
        Propagator::new(&sp, &program, &noise, &opts).unwrap().ensemble(&[plus(), plus_i()], 1, 0).unwrap()
    };
    for (a, b) in run(0.1).iter().zip(run(0.05).iter()) {
        for (x, y) in a.mean.iter().zip(&b.mean) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }
    let idle = |idle_dt: f64| {
        let opts = PropagationOptions { idle_dt, ..opts_at(&[1000.0, 5000.0]) };
        Propagator::new(&sp, &PulseProgram::idle(5000.0), &noise, &opts).unwrap().ensemble(&[plus()], 1, 0).unwrap()
    };
    for (x, y) in idle(1.0)[0].mean.iter().zip(&idle(0.5)[0].mean) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[test]
fn xy4_without_noise_returns_to_start_within_gate_error() {
    let sp = quito(4);
    let cycles = 3;
    let program = xy4(&sp, cycles);
    let out = Propagator::new(&sp, &program, &HybridNoiseModel::noiseless(), &PropagationOptions::default())
        .unwrap()
        .ensemble(&[plus(), plus_i(), [c(1.0), c(0.0)]], 1, 0)
        .unwrap();
    let cal = GateCalibration::default();
    let per_gate = [GateSpec::x(), GateSpec::y()]
        .iter()
        .map(|g| gate_metrics(&simulate_gate(g, &sp, &cal, 0.01).unwrap(), &g.ideal()).unwrap().infidelity())
        .fold(0.0, f64::max);
    for curve in out {
        assert!(1.0 - curve.mean[0] <= 4.0 * cycles as f64 * per_gate);
    }
}

#[test]
fn zero_field_ensemble_is_one_trajectory() {
    let sp = quito(3);
    let noise = HybridNoiseModel {
        fluctuators: Some(FluctuatorEnsembleSpec { b: 0.0, ..quito_fluct() }),
        ..hybrid()
    };
    let opts = opts_at(&[100.0, 500.0]);
    let program = PulseProgram::idle(500.0);
    let one = run_ensemble(&plus(), &plus(), &program, &sp, &noise, &opts, 1, 3).unwrap();
    let many = run_ensemble(&plus(), &plus(), &program, &sp, &noise, &opts, 50, 3).unwrap();
    assert_eq!(one.mean, many.mean);
    assert!(many.std_error.iter().all(|&e| e == 0.0));
}

#[test]
fn ensemble_is_independent_of_thread_count() {
    let sp = quito(3);
    let opts = opts_at(&[200.0, 1000.0]);
    let program = PulseProgram::idle(1000.0);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_ensemble(&plus(), &plus(), &program, &sp, &hybrid(), &opts, 40, 99).unwrap())
    };
    let (a, b) = (run(1), run(8));
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.std_error, b.std_error);
}

#[test]
fn trajectory_failure_reports_its_seed() {
    let sp = quito(3);
    let opts = PropagationOptions { trace_tolerance: 1e-30, ..opts_at(&[500.0]) };
    let err = run_ensemble(&plus(), &plus(), &PulseProgram::idle(500.0), &sp, &hybrid(), &opts, 4, 5).unwrap_err();
    assert!(matches!(err, Error::Trajectory { index: 0, .. }), "{err}");
}

#[test]
fn misaligned_or_late_instants_are_rejected() {
    let sp = quito(3);
    let noise = HybridNoiseModel::noiseless();
    let rho0 = DensityState::ground(3).unwrap();
    let program = PulseProgram::idle(100.0);
    assert!(propagate_trajectory(&rho0, &program, &sp, &noise, None, &opts_at(&[0.5])).is_err());
    assert!(propagate_trajectory(&rho0, &program, &sp, &noise, None, &opts_at(&[200.0])).is_err());
}

#[test]
fn fidelity_examples() {
    let psi = plus_i();
    let embedded = DensityState::from_qubit(&psi, 4).unwrap();
    assert!((state_fidelity(&embedded, &psi) - 1.0).abs() < 1e-14);
    let mut mixed = CMat::zeros(3, 3);
    mixed[(0, 0)] = c(0.5);
    mixed[(1, 1)] = c(0.5);
    assert!((state_fidelity(&DensityState::new(mixed).unwrap(), &psi) - 0.5).abs() < 1e-14);
    let leaked = DensityState::pure(&[c(0.0), c(0.0), c(1.0)]).unwrap();
    assert_eq!(state_fidelity(&leaked, &psi), 0.0);
}

#[test]
fn invalid_states_are_rejected() {
    let mut m = CMat::zeros(2, 2);
    m[(0, 0)] = c(0.7);
    assert!(DensityState::new(m.clone()).is_err());
    m[(1, 1)] = c(0.3);
    m[(0, 1)] = c(0.1);
    assert!(DensityState::new(m.clone()).is_err());
    m[(1, 0)] = c(0.1);
    assert!(DensityState::new(m).is_ok());
    let mut neg = CMat::zeros(2, 2);
    neg[(0, 0)] = c(1.01);
    neg[(1, 1)] = c(-0.01);
    assert!(DensityState::new(neg).is_err());
}

#[test]
fn fluctuator_rotation_converges_in_step_size_during_pulses() {
    let sp = quito(4);
    let program = xy4(&sp, 4);
    let instants: Vec<f64> = (1..=4).map(|k| 280.0 * k as f64).collect();
    let rho = DensityState::from_qubit(&plus(), 4).unwrap().into_inner();
    let field = PiecewiseField::new(vec![0.0, 100.3, 333.37, 700.01], vec![3e-3, -3e-3, 3e-3, -3e-3], program.duration());
    let run = |dt: f64| {
        let opts = PropagationOptions { dt, ..opts_at(&instants) };
        let prop = Propagator::new(&sp, &program, &HybridNoiseModel::noiseless(), &opts).unwrap();
        prop.propagate(&[rho.clone()], &[Some(field.clone())]).pop().unwrap().unwrap().remove(0)
    };
    let (a, b) = (run(0.1), run(0.05));
    for (x, y) in a.iter().zip(&b) {
        assert!(max_abs(&(x - y)) < 1e-7, "{}", max_abs(&(x - y)));
    }
}
