use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;

use transmon_noise::config::{resolve_noise, DeviceConfig};
use transmon_noise::data::{load_experiment_records, summarize, write_curve_csv, write_experiment_records, SpamMode, Summary};
use transmon_noise::fit::{
    predict_states, prediction_states, synthesize_dataset, FitConfig, FitDataset, FitResult, Fitter, ModelVariant,
    NoiseParameters, Prediction,
};
use transmon_noise::pulse::{envelope_spectrum, gate_metrics, simulate_gate, GateCalibration, GateSpec, GateStep};
use transmon_noise::schedules::{instants_grid, ExperimentKind, ScheduleConfig, U3Params};
use transmon_noise::transmon::TransmonSpectrum;
use transmon_noise::{Error, Result};

use crate::manifest::{write_manifest, RunConfig};
use crate::{Common, DataArgs};

/// Parses a command-line value, reporting failures as usage errors.
fn flag<T: std::str::FromStr<Err = Error>>(name: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e| Error::Config(format!("--{name}: {e}")))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn toml_string<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))
}

/// A path, or a bare name looked up as `data/<name>.csv`.
pub fn resolve_dataset(name: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(name);
    if direct.is_file() {
        return Ok(direct);
    }
    let named = Path::new("data").join(format!("{name}.csv"));
    if named.is_file() {
        return Ok(named);
    }
    Err(Error::Config(format!("dataset {name:?} not found (also tried {})", named.display())))
}

fn parse_spam(s: &str) -> Result<Option<SpamMode>> {
    match s.to_ascii_lowercase().as_str() {
        "additive" => Ok(Some(SpamMode::Additive)),
        "multiplicative" => Ok(Some(SpamMode::Multiplicative)),
        "none" => Ok(None),
        _ => Err(Error::Config(format!("unknown SPAM mode {s:?}; expected additive, multiplicative or none"))),
    }
}

pub fn parse_state(s: &str) -> Result<U3Params> {
    let angles: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("state {s:?} must be three comma-separated angles in degrees")))?;
    match angles.as_slice() {
        [t, p, l] => Ok(U3Params::from_degrees(*t, *p, *l)),
        _ => Err(Error::Config(format!("state {s:?} must be three comma-separated angles in degrees"))),
    }
}

fn base_config(device: &DeviceConfig, seed: u64) -> FitConfig {
    FitConfig {
        seed,
        schedule: ScheduleConfig { gates: device.gates, ..ScheduleConfig::default() },
        ..FitConfig::default()
    }
}

struct Loaded {
    path: PathBuf,
    dataset: FitDataset,
}

fn load_dataset(args: &DataArgs, seed: u64) -> Result<Loaded> {
    let path = resolve_dataset(&args.dataset)?;
    let records = load_experiment_records(&path)?;
    if records.is_empty() {
        return Err(Error::MissingData(format!("{} holds no records", path.display())));
    }
    let dataset = FitDataset::from_records(&records, args.bootstrap, seed, parse_spam(&args.spam)?)?;
    Ok(Loaded { path, dataset })
}

fn setup(common: &Common) -> Result<(DeviceConfig, TransmonSpectrum)> {
    let device = DeviceConfig::resolve(&common.device)?;
    let spectrum = device.spectrum()?;
    std::fs::create_dir_all(&common.out)?;
    Ok((device, spectrum))
}

fn noise_for(noise: Option<&str>, device: &DeviceConfig) -> Result<NoiseParameters> {
    resolve_noise(noise.unwrap_or(&device.name))
}

pub fn fit(
    common: &Common,
    data: &DataArgs,
    model: &str,
    config: Option<&Path>,
    resolution: Option<usize>,
    trajectories: Option<usize>,
) -> Result<()> {
    let (device, spectrum) = setup(common)?;
    let variant: ModelVariant = flag("model", model)?;
    let mut cfg = match config {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => base_config(&device, common.seed),
    };
    cfg.seed = common.seed;
    if let Some(r) = resolution {
        cfg.resolution = r;
    }
    if let Some(n) = trajectories {
        cfg.n_trajectories = n;
    }
    let loaded = load_dataset(data, common.seed)?;
    let result = Fitter::new(variant, &spectrum, &loaded.dataset, &cfg)?.run()?;
    let outputs = result.write_outputs(&common.out)?;
    print_parameters(&result);
    let run = RunConfig { fit: Some(cfg), ..RunConfig::new("fit", common.seed, &common.out, device) }
        .with_dataset(&loaded.path)?
        .option("model", variant.as_str())
        .option("bootstrap", data.bootstrap)
        .option("spam", &data.spam);
    write_manifest(&run, &outputs)?;
    Ok(())
}

fn print_parameters(result: &FitResult) {
    let p = &result.parameters;
    println!("model      {}", result.variant.as_str());
    println!("omega_c_x  {:.6e} GHz", p.omega_c_x);
    println!("g_x        {:.6e} GHz", p.g_x);
    println!("omega_c_z  {:.6e} GHz", p.omega_c_z);
    println!("g_z        {:.6e} GHz", p.g_z);
    if let Some(f) = p.fluctuators {
        println!("gamma_max  {:.6e} GHz", f.gamma_max);
        println!("b          {:.6e} GHz", f.b);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    common: &Common,
    noise: Option<&str>,
    state: &str,
    kind: &str,
    instants: usize,
    total_ns: f64,
    trajectories: usize,
    model: &str,
) -> Result<()> {
    let (device, spectrum) = setup(common)?;
    let params = noise_for(noise, &device)?;
    let variant: ModelVariant = flag("model", model)?;
    let u3 = parse_state(state)?;
    let kind: ExperimentKind = flag("kind", kind)?;
    let grid = instants_grid(total_ns, instants)?;
    let cfg = base_config(&device, common.seed);
    let pred = predict_states(&params, variant, &spectrum, &[u3], &[kind], &grid, None, trajectories, common.seed, &cfg)?;
    let path = common.out.join("curve.csv");
    write_curve_csv(File::create(&path)?, &pred[0].simulated)?;
    println!("{}", path.display());
    let run = RunConfig { noise: Some(params), ..RunConfig::new("simulate", common.seed, &common.out, device) }
        .option("state", state)
        .option("kind", kind.as_str())
        .option("instants", instants)
        .option("total_ns", total_ns)
        .option("trajectories", trajectories)
        .option("model", variant.as_str());
    write_manifest(&run, &[path])?;
    Ok(())
}

/// Predictions for every curve in `dataset`, grouped by kind.
fn predict_dataset(
    params: &NoiseParameters,
    variant: ModelVariant,
    spectrum: &TransmonSpectrum,
    dataset: &FitDataset,
    n_traj: usize,
    cfg: &FitConfig,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for kind in [ExperimentKind::Free, ExperimentKind::Dd] {
        let curves: Vec<_> = dataset.curves.iter().filter(|c| c.kind == kind).collect();
        let Some(first) = curves.first() else { continue };
        if let Some(c) = curves.iter().find(|c| !c.curve.same_grid(&first.curve)) {
            return Err(Error::GridMismatch(format!("{} curves use different instant grids ({:?})", kind.as_str(), c.state.degrees())));
        }
        let states: Vec<U3Params> = curves.iter().map(|c| c.state).collect();
        out.extend(predict_states(params, variant, spectrum, &states, &[kind], &first.curve.instants, Some(dataset), n_traj, cfg.seed, cfg)?);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ErrorSummary {
    free: Option<Summary>,
    dd: Option<Summary>,
    combined: Option<Summary>,
    /// Mean absolute relative error.
    mean_abs_free: Option<f64>,
    mean_abs_dd: Option<f64>,
    mean_abs_combined: Option<f64>,
}

fn error_summary(preds: &[Prediction]) -> Result<ErrorSummary> {
    let collect = |kind: Option<ExperimentKind>| -> Vec<f64> {
        preds
            .iter()
            .filter(|p| kind.is_none_or(|k| p.kind == k))
            .filter_map(|p| p.relative_error.as_ref())
            .flatten()
            .copied()
            .collect()
    };
    let stats = |v: Vec<f64>| -> Result<(Option<Summary>, Option<f64>)> {
        if v.is_empty() {
            return Ok((None, None));
        }
        let mean_abs = v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
        Ok((Some(summarize(&v)?), Some(mean_abs)))
    };
    let (free, mean_abs_free) = stats(collect(Some(ExperimentKind::Free)))?;
    let (dd, mean_abs_dd) = stats(collect(Some(ExperimentKind::Dd)))?;
    let (combined, mean_abs_combined) = stats(collect(None))?;
    Ok(ErrorSummary { free, dd, combined, mean_abs_free, mean_abs_dd, mean_abs_combined })
}

fn write_predictions(path: &Path, preds: &[Prediction], dataset: &FitDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["theta_deg", "phi_deg", "lambda_deg", "kind", "instant_ns", "experiment", "simulated", "relative_error"])
        .map_err(csv_error)?;
    for p in preds {
        let [t, ph, l] = p.state.degrees();
        let exp = dataset.find(&p.state, p.kind);
        for (k, &instant) in p.simulated.instants.iter().enumerate() {
            let e = exp.and_then(|c| c.restricted_to(&[instant]).ok()).map(|c| c.mean[0]);
            let r = p.relative_error.as_ref().map(|r| r[k]);
            let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            w.write_record([
                format!("{t}"),
                format!("{ph}"),
                format!("{l}"),
                p.kind.as_str().to_string(),
                format!("{instant}"),
                opt(e),
                format!("{:e}", p.simulated.mean[k]),
                opt(r),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn predict(common: &Common, data: &DataArgs, noise: Option<&str>, model: &str, trajectories: usize) -> Result<()> {
    let (device, spectrum) = setup(common)?;
    let params = noise_for(noise, &device)?;
    let variant: ModelVariant = flag("model", model)?;
    let loaded = load_dataset(data, common.seed)?;
    let cfg = base_config(&device, common.seed);
    let preds = predict_dataset(&params, variant, &spectrum, &loaded.dataset, trajectories, &cfg)?;
    let csv_path = common.out.join("relative_errors.csv");
    write_predictions(&csv_path, &preds, &loaded.dataset)?;
    let summary = error_summary(&preds)?;
    let summary_path = common.out.join("summary.toml");
    std::fs::write(&summary_path, toml_string(&summary)?)?;
    for (name, s) in [("free", summary.free), ("dd", summary.dd)] {
        if let Some(s) = s {
            println!("{name:5} median {:+.4}  IQR [{:+.4}, {:+.4}]  max|.| {:.4}", s.median, s.q1, s.q3, s.max_abs);
        }
    }
    let run = RunConfig { noise: Some(params), ..RunConfig::new("predict", common.seed, &common.out, device) }
        .with_dataset(&loaded.path)?
        .option("model", variant.as_str())
        .option("trajectories", trajectories)
        .option("bootstrap", data.bootstrap)
        .option("spam", &data.spam);
    write_manifest(&run, &[csv_path, summary_path])?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct GateReport {
    gate: String,
    fidelity: f64,
    infidelity: f64,
    leakage: f64,
    phase_error: f64,
}

#[derive(Debug, Serialize)]
struct GateAnalysis {
    gate_time_ns: f64,
    drag_alpha: f64,
    sigma_ratio: f64,
    anharmonicity_ghz: f64,
    /// Envelope spectrum of one half pulse, normalized to its peak.
    spectrum_half_width_ghz: f64,
    spectrum_at_plus_anharmonicity: f64,
    spectrum_at_minus_anharmonicity: f64,
    gates: Vec<GateReport>,
}

pub fn gate(common: &Common, tg: f64, drag: f64, sigma_ratio: f64) -> Result<()> {
    let (device, spectrum) = setup(common)?;
    let cal = GateCalibration { gate_time: tg, drag_alpha: drag, sigma_ratio, ..device.gates };
    let mut gates = Vec::new();
    for (name, g) in [("X", GateSpec::x()), ("Y", GateSpec::y())] {
        let m = gate_metrics(&simulate_gate(&g, &spectrum, &cal, 0.01)?, &g.ideal())?;
        println!("{name}: infidelity {:.3e}  leakage {:.3e}", m.infidelity(), m.leakage);
        gates.push(GateReport {
            gate: name.into(),
            fidelity: m.fidelity,
            infidelity: m.infidelity(),
            leakage: m.leakage,
            phase_error: m.phase_error,
        });
    }
    let env = cal
        .steps(&GateSpec::x(), &spectrum)?
        .into_iter()
        .find_map(|s| match s {
            GateStep::Pulse(e) => Some(e),
            _ => None,
        })
        .ok_or_else(|| Error::InvalidPulse("gate has no pulse".into()))?;
    let spec = envelope_spectrum(&env, 20.0)?;
    let eta = spectrum.anharmonicity.abs();
    let analysis = GateAnalysis {
        gate_time_ns: tg,
        drag_alpha: drag,
        sigma_ratio,
        anharmonicity_ghz: eta,
        spectrum_half_width_ghz: spec.half_width(),
        spectrum_at_plus_anharmonicity: spec.magnitude_at(eta),
        spectrum_at_minus_anharmonicity: spec.magnitude_at(-eta),
        gates,
    };
    let report = common.out.join("gate_report.toml");
    std::fs::write(&report, toml_string(&analysis)?)?;
    let spectrum_csv = common.out.join("envelope_spectrum.csv");
    let mut w = csv::Writer::from_path(&spectrum_csv).map_err(csv_error)?;
    w.write_record(["frequency_ghz", "magnitude"]).map_err(csv_error)?;
    for (f, m) in spec.freqs.iter().zip(&spec.magnitude).filter(|(f, _)| f.abs() <= 1.0) {
        w.write_record([format!("{f:e}"), format!("{m:e}")]).map_err(csv_error)?;
    }
    w.flush()?;
    let run = RunConfig::new("gate", common.seed, &common.out, device)
        .option("tg", tg)
        .option("drag", drag)
        .option("sigma_ratio", sigma_ratio);
    write_manifest(&run, &[report, spectrum_csv])?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ModelComparison {
    model: String,
    parameters: NoiseParameters,
    errors: ErrorSummary,
}

pub fn compare_models(
    common: &Common,
    data: &DataArgs,
    reports: [Option<String>; 3],
    resolution: Option<usize>,
    trajectories: usize,
) -> Result<()> {
    let (device, spectrum) = setup(common)?;
    let loaded = load_dataset(data, common.seed)?;
    let mut cfg = base_config(&device, common.seed);
    if let Some(r) = resolution {
        cfg.resolution = r;
    }
    cfg.n_trajectories = trajectories;
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    let variants = [ModelVariant::Full, ModelVariant::Sm1, ModelVariant::Sm2];
    for (variant, report) in variants.into_iter().zip(reports) {
        let params = match report {
            Some(r) => resolve_noise(&r)?,
            None => {
                let result = Fitter::new(variant, &spectrum, &loaded.dataset, &cfg)?.run()?;
                let dir = common.out.join(variant.as_str());
                outputs.extend(result.write_outputs(&dir)?);
                result.parameters
            }
        };
        let preds = predict_dataset(&params, variant, &spectrum, &loaded.dataset, trajectories, &cfg)?;
        let path = common.out.join(format!("relative_errors_{}.csv", variant.as_str()));
        write_predictions(&path, &preds, &loaded.dataset)?;
        outputs.push(path);
        rows.push(ModelComparison { model: variant.as_str().into(), parameters: params, errors: error_summary(&preds)? });
    }
    println!("model  mean|rel| free   dd       combined");
    let f = |v: Option<f64>| v.map(|x| format!("{x:.5}")).unwrap_or_else(|| "-".into());
    for r in &rows {
        println!("{:6} {:15} {:8} {}", r.model, f(r.errors.mean_abs_free), f(r.errors.mean_abs_dd), f(r.errors.mean_abs_combined));
    }
    let mut doc = BTreeMap::new();
    doc.insert("models", rows);
    let path = common.out.join("comparison.toml");
    std::fs::write(&path, toml_string(&doc)?)?;
    outputs.push(path);
    let run = RunConfig { fit: Some(cfg), ..RunConfig::new("compare-models", common.seed, &common.out, device) }
        .with_dataset(&loaded.path)?
        .option("trajectories", trajectories)
        .option("bootstrap", data.bootstrap)
        .option("spam", &data.spam);
    write_manifest(&run, &outputs)?;
    Ok(())
}

pub fn synthesize(
    common: &Common,
    noise: Option<&str>,
    instants: usize,
    total_ns: f64,
    shots: u64,
    trajectories: usize,
    states: &str,
) -> Result<()> {
    let (device, spectrum) = setup(common)?;
    let params = noise_for(noise, &device)?;
    let set = match states {
        "fit" => U3Params::pauli_states().to_vec(),
        "all" => prediction_states(),
        _ => return Err(Error::Config(format!("unknown state set {states:?}; expected fit or all"))),
    };
    let grid = instants_grid(total_ns, instants)?;
    let cfg = base_config(&device, common.seed);
    let kinds = [ExperimentKind::Free, ExperimentKind::Dd];
    let records = synthesize_dataset(&params, &spectrum, &set, &kinds, &grid, shots, trajectories, common.seed, &cfg)?;
    let path = common.out.join("dataset.csv");
    let note = format!(
        "synthetic data: device {}, {} trajectories, {} shots, seed {}",
        device.name, trajectories, shots, common.seed
    );
    write_experiment_records(File::create(&path)?, &records, Some(&note))?;
    println!("{}", path.display());
    let run = RunConfig { noise: Some(params), ..RunConfig::new("synthesize", common.seed, &common.out, device) }
        .option("instants", instants)
        .option("total_ns", total_ns)
        .option("shots", shots)
        .option("trajectories", trajectories)
        .option("states", states);
    write_manifest(&run, &[path])?;
    Ok(())
}
