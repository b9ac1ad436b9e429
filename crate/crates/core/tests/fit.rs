use proptest::prelude::*;
use transmon_noise::bath::OhmicBathSpec;
use transmon_noise::data::DecayCurve;
use transmon_noise::engine::HybridNoiseModel;
use transmon_noise::fit::{
    cost, extract_t1, locate_minimum, predict_states, required_curves, Axis, AxisScale, CostSurface, FitConfig,
    FitDataset, FitRanges, FitReport, FitStep, Fitter, ModelVariant, NoiseParameters,
};
use transmon_noise::schedules::{instants_grid, simulate_decay_curve, ExperimentKind, ScheduleConfig, U3Params};
use transmon_noise::transmon::{fit_circuit_params, solve_spectrum, TransmonSpec, TransmonSpectrum};
use transmon_noise::units::mk_to_ghz;
use transmon_noise::Error;

fn quito(levels: usize) -> TransmonSpectrum {
    let (e_c, e_j) = fit_circuit_params(5.0806, 0.3192).unwrap();
    solve_spectrum(&TransmonSpec::new(e_c, e_j).unwrap()).unwrap().truncated(levels).unwrap()
}

fn curve(instants: Vec<f64>, mean: Vec<f64>) -> DecayCurve {
    let n = instants.len();
    DecayCurve { instants, mean, half_width: vec![0.0; n] }
}

fn bowl(n: usize, c1: f64, c2: f64) -> CostSurface {
    let a1 = Axis::new("p1", "GHz", AxisScale::Linear, [0.0, 1.0], n).unwrap();
    let a2 = Axis::new("p2", "GHz", AxisScale::Linear, [0.0, 2.0], n).unwrap();
    let cost = a1
        .values
        .iter()
        .map(|x| a2.values.iter().map(|y| (x - c1).powi(2) + 0.3 * (y - c2).powi(2) + 0.01).collect())
        .collect();
    CostSurface::new(FitStep::I, a1, a2, cost).unwrap()
}

#[test]
fn cost_examples() {
    let t = instants_grid(19_600.0, 70).unwrap();
    let a = curve(t.clone(), vec![0.9; 70]);
    assert_eq!(cost(&a, &a).unwrap(), 0.0);
    let d = 0.03;
    let b = curve(t.clone(), vec![0.9 + d; 70]);
    assert!((cost(&a, &b).unwrap() - d / 70f64.sqrt()).abs() < 1e-15);
    let short = curve(t[..69].to_vec(), vec![0.9; 69]);
    assert!(matches!(cost(&a, &short), Err(Error::GridMismatch(_))));
}

#[test]
fn axes_map_indices_to_values() {
    let lin = Axis::new("g", "GHz", AxisScale::Linear, [0.0, 1e-2], 11).unwrap();
    assert!((lin.values[3] - 3e-3).abs() < 1e-15);
    assert!((lin.index_of(4.5e-3) - 4.5).abs() < 1e-12);
    assert!((lin.cell_width_at(4.5e-3) - 1e-3).abs() < 1e-15);
    let log = Axis::new("b", "GHz", AxisScale::Log, [1e-5, 1e-3], 5).unwrap();
    assert!((log.values[2] - 1e-4).abs() < 1e-18);
    assert!((log.cells_between(1e-5, 1e-3) - 4.0).abs() < 1e-12);
    assert!((log.value_at(log.index_of(3.3e-4)) - 3.3e-4).abs() < 1e-16);
    assert!(Axis::new("b", "GHz", AxisScale::Log, [0.0, 1.0], 5).is_err());
    assert!(Axis::new("b", "GHz", AxisScale::Linear, [1.0, 1.0], 5).is_err());
}

#[test]
fn surface_rejects_bad_shapes_and_values() {
    let a = Axis::new("a", "GHz", AxisScale::Linear, [0.0, 1.0], 3).unwrap();
    assert!(CostSurface::new(FitStep::I, a.clone(), a.clone(), vec![vec![0.0; 3]; 2]).is_err());
    let mut bad = vec![vec![0.0; 3]; 3];
    bad[1][1] = f64::NAN;
    assert!(CostSurface::new(FitStep::I, a.clone(), a, bad).is_err());
}

#[test]
fn interpolation_passes_through_grid_values() {
    let s = bowl(7, 0.4, 1.1);
    for i in 0..7 {
        for j in 0..7 {
            assert!((s.interpolate(i as f64, j as f64) - s.cost[i][j]).abs() < 1e-14);
        }
    }
}

#[test]
fn convex_bowl_minimum_is_refined_within_one_cell() {
    let s = bowl(10, 0.37, 1.23);
    let m = locate_minimum(&s).unwrap();
    assert!(m.converged);
    assert!(s.axis1.cells_between(m.p1, 0.37) < 1.0 && s.axis2.cells_between(m.p2, 1.23) < 1.0);
    // A quadratic is reproduced closely by the cubic interpolant.
    assert!((m.p1 - 0.37).abs() < 0.02 && (m.p2 - 1.23).abs() < 0.05, "{m:?}");
    assert!(m.cost <= m.grid_cost);
}

#[test]
fn minimum_on_the_boundary_stays_inside() {
    let s = bowl(8, -0.5, 3.0);
    let m = locate_minimum(&s).unwrap();
    assert_eq!(m.p1, 0.0);
    assert_eq!(m.p2, 2.0);
}

#[test]
fn flat_surface_breaks_ties_toward_small_values() {
    let a = Axis::new("a", "GHz", AxisScale::Linear, [1.0, 2.0], 5).unwrap();
    let s = CostSurface::new(FitStep::II, a.clone(), a, vec![vec![0.2; 5]; 5]).unwrap();
    assert_eq!(s.best_cell(), (0, 0, 0.2));
    let m = locate_minimum(&s).unwrap();
    assert_eq!((m.p1, m.p2, m.cost), (1.0, 1.0, 0.2));
}

#[test]
fn surface_csv_lists_every_cell() {
    let s = bowl(3, 0.5, 1.0);
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text.starts_with("p1,p2,cost"));
}

#[test]
fn t1_of_an_exact_exponential() {
    let t = instants_grid(19_600.0, 70).unwrap();
    let y = t.iter().map(|t| 0.97 * (-t / 100_000.0).exp()).collect();
    let fit = extract_t1(&curve(t.clone(), y)).unwrap();
    assert!((fit.t1_us - 100.0).abs() < 0.1, "{fit:?}");
    assert!((fit.amplitude - 0.97).abs() < 1e-6 && fit.residual < 1e-8);
    assert!(extract_t1(&curve(t.clone(), vec![0.8; 70])).is_err());
    let rising = t.iter().map(|t| 0.5 + t * 1e-5).collect();
    assert!(extract_t1(&curve(t, rising)).is_err());
}

#[test]
fn missing_curves_are_listed() {
    let ds = FitDataset::default();
    let err = ds.require(&required_curves(ModelVariant::Full)).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("free (180.0, 0.0, 0.0)") && msg.contains("dd (90.0, 90.0, 0.0)"), "{msg}");
    let sm2 = required_curves(ModelVariant::Sm2);
    assert_eq!(sm2.len(), 7);
    assert!(sm2.iter().all(|(_, k)| *k == ExperimentKind::Free));
}

fn truth() -> NoiseParameters {
    NoiseParameters {
        g_x: 5.734e-3,
        omega_c_x: 1.948,
        g_z: 4.413e-3,
        omega_c_z: 5.690e-3,
        fluctuators: None,
        temperature: mk_to_ghz(20.0),
        gamma_min: 1e-4,
        eta: 1e-4,
        n_fluctuators: 10,
        fluctuator_seed: 0,
    }
}

fn small_config(ranges: FitRanges, resolution: usize) -> FitConfig {
    FitConfig { resolution, ranges, ..FitConfig::default() }
}

#[test]
fn step_one_recovers_generating_parameters_on_the_grid() {
    let sp = quito(4);
    let p = truth();
    let grid = instants_grid(1680.0, 6).unwrap();
    let one = U3Params::from_degrees(180.0, 0.0, 0.0);
    let noise = HybridNoiseModel { x: Some(p.x_bath()), z: None, fluctuators: None, redraw_rates: true };
    let cfg = small_config(FitRanges { omega_c_x: [1.448, 2.448], g_x: [3.734e-3, 7.734e-3], ..Default::default() }, 3);
    let exp = simulate_decay_curve(&sp, &one, ExperimentKind::Free, &noise, &grid, 1, 0, &cfg.schedule, &cfg.propagation).unwrap();
    let mut ds = FitDataset::default();
    ds.push(one, ExperimentKind::Free, exp);
    let fitter = Fitter::new(ModelVariant::Full, &sp, &ds, &cfg).unwrap();
    let s = fitter.sweep_step1().unwrap();
    let (i, j, c) = s.best_cell();
    assert_eq!((i, j), (1, 1));
    assert!(c < 1e-9, "{c}");
    assert!(s.cost.iter().flatten().all(|c| c.is_finite() && *c >= 0.0));
    // Step I ignores everything fitted later.
    assert_eq!(fitter.sweep_step1().unwrap(), s);
}

#[test]
fn step_two_cost_is_the_mean_over_pauli_states() {
    let sp = quito(2);
    let p = truth();
    let grid = instants_grid(1120.0, 4).unwrap();
    let cfg = small_config(FitRanges { omega_c_z: [4e-3, 8e-3], g_z: [2e-3, 6e-3], ..Default::default() }, 2);
    let states = U3Params::pauli_states();
    let flat = curve(grid.clone(), vec![0.99, 0.98, 0.97, 0.96]);
    let mut ds = FitDataset::default();
    for s in states {
        ds.push(s, ExperimentKind::Free, flat.clone());
    }
    let fitter = Fitter::new(ModelVariant::Sm2, &sp, &ds, &cfg).unwrap();
    let surface = fitter.sweep_step2(p.g_x, p.omega_c_x).unwrap();
    let two = sp.truncated(2).unwrap();
    for (i, wc) in surface.axis1.values.iter().enumerate() {
        for (j, g) in surface.axis2.values.iter().enumerate() {
            let noise = HybridNoiseModel {
                x: Some(p.x_bath()),
                z: Some(OhmicBathSpec { g: *g, omega_c: *wc, ..p.z_bath() }),
                fluctuators: None,
                redraw_rates: true,
            };
            let sched = ModelVariant::Sm2.schedule(&ScheduleConfig::default());
            let mean = states
                .iter()
                .map(|s| {
                    let sim = simulate_decay_curve(&two, s, ExperimentKind::Free, &noise, &grid, 1, 0, &sched, &cfg.propagation).unwrap();
                    cost(&sim, &flat).unwrap()
                })
                .sum::<f64>()
                / 6.0;
            assert!((surface.cost[i][j] - mean).abs() < 1e-9 * mean, "{} vs {mean}", surface.cost[i][j]);
        }
    }
}

#[test]
fn prediction_against_itself_has_zero_error() {
    let sp = quito(3);
    let p = truth();
    let grid = instants_grid(1400.0, 5).unwrap();
    let cfg = FitConfig::default();
    let states = [U3Params::from_degrees(90.0, 0.0, 0.0), U3Params::from_degrees(45.0, 30.0, 0.0)];
    let kinds = [ExperimentKind::Free, ExperimentKind::Dd];
    let first = predict_states(&p, ModelVariant::Full, &sp, &states, &kinds, &grid, None, 1, 1, &cfg).unwrap();
    assert_eq!(first.len(), 4);
    let mut ds = FitDataset::default();
    for pr in &first {
        ds.push(pr.state, pr.kind, pr.simulated.clone());
    }
    let again = predict_states(&p, ModelVariant::Full, &sp, &states, &kinds, &grid, Some(&ds), 1, 1, &cfg).unwrap();
    for pr in again {
        assert!(pr.relative_error.unwrap().iter().all(|e| *e == 0.0));
    }
}

#[test]
fn report_round_trips_through_toml() {
    let s = bowl(4, 0.5, 1.0);
    let m = locate_minimum(&s).unwrap();
    let result = transmon_noise::fit::FitResult {
        variant: ModelVariant::Sm1,
        parameters: truth(),
        surfaces: vec![s],
        minima: vec![m],
    };
    let report = result.report();
    assert!((report.steps[0].axes[0].cell_width - 1.0 / 3.0).abs() < 1e-12);
    let text = report.to_toml().unwrap();
    assert!(text.contains("g_x = 0.005734"));
    assert_eq!(FitReport::from_toml(&text).unwrap(), report);
    let dir = std::env::temp_dir().join(format!("fit-report-{}", std::process::id()));
    let paths = result.write_outputs(&dir).unwrap();
    assert_eq!(paths.len(), 2);
    assert!(paths.iter().all(|p| p.exists()));
    std::fs::remove_dir_all(dir).unwrap();
}

proptest! {
    #[test]
    fn cost_is_symmetric_and_zero_only_on_identity(
        a in prop::collection::vec(0.0f64..1.0, 8),
        b in prop::collection::vec(0.0f64..1.0, 8),
    ) {
        let t: Vec<f64> = (0..8).map(|k| 280.0 * k as f64).collect();
        let (ca, cb) = (curve(t.clone(), a.clone()), curve(t, b.clone()));
        let ab = cost(&ca, &cb).unwrap();
        prop_assert_eq!(ab, cost(&cb, &ca).unwrap());
        prop_assert_eq!(ab == 0.0, a == b);
    }

    #[test]
    fn refined_cost_never_exceeds_the_best_cell(values in prop::collection::vec(0.0f64..1.0, 36)) {
        let a = Axis::new("a", "GHz", AxisScale::Linear, [0.0, 1.0], 6).unwrap();
        let s = CostSurface::new(FitStep::III, a.clone(), a, values.chunks(6).map(|c| c.to_vec()).collect()).unwrap();
        let m = locate_minimum(&s).unwrap();
        prop_assert!(m.cost <= s.best_cell().2);
        prop_assert!((0.0..=1.0).contains(&m.p1) && (0.0..=1.0).contains(&m.p2));
    }
}
