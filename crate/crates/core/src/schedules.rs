//! Free-evolution and XY4 decoupling programs, state preparation and the
//! instant grid.

use serde::{Deserialize, Serialize};

use crate::data::DecayCurve;
use crate::engine::{HybridNoiseModel, PropagationOptions, Propagator, PulseProgram, QubitState, Segment};
use crate::error::{Error, Result};
use crate::linalg::{c, CMat, C64};
use crate::pulse::{frame_z, Axis, Composition, GateCalibration, GateSpec};
use crate::transmon::TransmonSpectrum;

/// Angles of `U3(θ, φ, λ)`, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct U3Params {
    pub theta: f64,
    pub phi: f64,
    pub lambda: f64,
}

impl U3Params {
    pub fn new(theta: f64, phi: f64, lambda: f64) -> Self {
        Self { theta, phi, lambda }
    }

    pub fn from_degrees(theta: f64, phi: f64, lambda: f64) -> Self {
        Self::new(theta.to_radians(), phi.to_radians(), lambda.to_radians())
    }

    pub fn degrees(&self) -> [f64; 3] {
        [self.theta.to_degrees(), self.phi.to_degrees(), self.lambda.to_degrees()]
    }

    /// `[[cos θ/2, -e^{iλ} sin θ/2], [e^{iφ} sin θ/2, e^{i(φ+λ)} cos θ/2]]`.
    pub fn unitary(&self) -> CMat {
        let (s, co) = (0.5 * self.theta).sin_cos();
        let e = |a: f64| C64::from_polar(1.0, a);
        CMat::from_row_slice(
            2,
            2,
            &[c(co), -e(self.lambda) * s, e(self.phi) * s, e(self.phi + self.lambda) * co],
        )
    }

    /// `U3|0⟩`.
    pub fn state(&self) -> QubitState {
        let (s, co) = (0.5 * self.theta).sin_cos();
        [c(co), C64::from_polar(s, self.phi)]
    }

    /// `|0⟩, |1⟩, |+⟩, |−⟩, |+i⟩, |−i⟩`.
    pub fn pauli_states() -> [U3Params; 6] {
        let h = std::f64::consts::FRAC_PI_2;
        let p = std::f64::consts::PI;
        [
            Self::new(0.0, 0.0, 0.0),
            Self::new(p, 0.0, 0.0),
            Self::new(h, 0.0, 0.0),
            Self::new(h, p, 0.0),
            Self::new(h, h, 0.0),
            Self::new(h, -h, 0.0),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Free,
    Dd,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Free => "free",
            Self::Dd => "dd",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "free" => Ok(Self::Free),
            "dd" => Ok(Self::Dd),
            other => Err(Error::Schedule(format!("unknown experiment kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// `τ/2 X τ Y τ X τ Y τ/2`.
    #[default]
    Symmetric,
    /// `X τ Y τ X τ Y τ`.
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GateModel {
    /// Shaped pulses from the gate calibration.
    #[default]
    Shaped,
    /// Ideal zero-duration gates.
    Instantaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preparation {
    /// Exact instantaneous map; the run starts from `U3|0⟩`.
    #[default]
    Ideal,
    /// `RZ(φ+π)·SX·RZ(θ+π)·SX·RZ(λ)` with shaped half-π pulses.
    Pulses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub gates: GateCalibration,
    pub gate_model: GateModel,
    pub placement: Placement,
    /// XY4 cycles between neighbouring instants.
    pub cycles_per_spacing: usize,
    pub preparation: Preparation,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            gates: GateCalibration::default(),
            gate_model: GateModel::Shaped,
            placement: Placement::Symmetric,
            cycles_per_spacing: 1,
            preparation: Preparation::Ideal,
        }
    }
}

/// `n` instants `k·total/n`, `k = 0..n`, starting at zero.
pub fn instants_grid(total: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(total > 0.0) {
        return Err(Error::Schedule("need at least two instants and a positive span".into()));
    }
    let spacing = total / n as f64;
    Ok((0..n).map(|k| k as f64 * spacing).collect())
}

/// Spacing of an equidistant grid starting at zero.
pub fn grid_spacing(instants: &[f64]) -> Result<f64> {
    if instants.len() < 2 || instants[0] != 0.0 {
        return Err(Error::Schedule("instants must start at zero and contain at least two points".into()));
    }
    let spacing = instants[1];
    for (k, t) in instants.iter().enumerate() {
        if (t - k as f64 * spacing).abs() > 1e-9 * spacing.max(1.0) {
            return Err(Error::Schedule(format!("instant {k} at {t} ns breaks the {spacing} ns spacing")));
        }
    }
    Ok(spacing)
}

impl ScheduleConfig {
    fn pulse_time(&self) -> f64 {
        match self.gate_model {
            GateModel::Shaped => self.gates.gate_time,
            GateModel::Instantaneous => 0.0,
        }
    }

    /// XY4 cycle length for an instant `spacing`.
    pub fn cycle_length(&self, spacing: f64) -> Result<f64> {
        if self.cycles_per_spacing == 0 {
            return Err(Error::Schedule("cycles_per_spacing must be at least one".into()));
        }
        let cycle = spacing / self.cycles_per_spacing as f64;
        if cycle + 1e-9 < 4.0 * self.pulse_time() {
            return Err(Error::Schedule(format!(
                "an XY4 cycle of {cycle} ns cannot hold four {} ns pulses",
                self.pulse_time()
            )));
        }
        Ok(cycle)
    }

    /// Instants snapped to whole XY4 cycles.
    pub fn snap_to_cycles(&self, instants: &[f64]) -> Result<Vec<f64>> {
        let cycle = self.cycle_length(grid_spacing(instants)?)?;
        Ok(instants.iter().map(|t| (t / cycle).round() * cycle).collect())
    }
}

fn embedded(gate: &CMat, d: usize) -> CMat {
    let mut u = CMat::identity(d, d);
    u.view_mut((0, 0), (2, 2)).copy_from(gate);
    u
}

/// One XY4 cycle of length `cycle`.
pub fn xy4_cycle(cycle: f64, cfg: &ScheduleConfig, spectrum: &TransmonSpectrum) -> Result<PulseProgram> {
    let tau = cycle / 4.0 - cfg.pulse_time();
    if tau < -1e-9 {
        return Err(Error::Schedule(format!("an XY4 cycle of {cycle} ns cannot hold its pulses")));
    }
    let tau = tau.max(0.0);
    let d = spectrum.n_levels();
    let mut p = PulseProgram::new();
    let gates = [GateSpec::x(), GateSpec::y(), GateSpec::x(), GateSpec::y()];
    for (i, g) in gates.iter().enumerate() {
        let (before, after) = match cfg.placement {
            Placement::Symmetric => (if i == 0 { 0.5 * tau } else { 0.0 }, if i == 3 { 0.5 * tau } else { tau }),
            Placement::Edge => (0.0, tau),
        };
        p.push(Segment::Idle(before));
        match cfg.gate_model {
            GateModel::Shaped => p.push_gate(g, &cfg.gates, spectrum)?,
            GateModel::Instantaneous => p.push(Segment::Instant(embedded(&g.ideal(), d))),
        }
        p.push(Segment::Idle(after));
    }
    Ok(p)
}

/// Program of `kind` lasting `duration`. DD durations must hold a whole
/// number of cycles of length `cycle`.
pub fn build_schedule(
    kind: ExperimentKind,
    duration: f64,
    cycle: f64,
    cfg: &ScheduleConfig,
    spectrum: &TransmonSpectrum,
) -> Result<PulseProgram> {
    if !(duration >= 0.0) {
        return Err(Error::Schedule("duration must be non-negative".into()));
    }
    match kind {
        ExperimentKind::Free => Ok(PulseProgram::idle(duration)),
        ExperimentKind::Dd => {
            let n = (duration / cycle).round();
            if (n * cycle - duration).abs() > 1e-6 * cycle {
                return Err(Error::Schedule(format!("{duration} ns is not a whole number of {cycle} ns XY4 cycles")));
            }
            let one = xy4_cycle(cycle, cfg, spectrum)?;
            let mut p = PulseProgram::new();
            for _ in 0..n as usize {
                p.append(&one);
            }
            Ok(p)
        }
    }
}

/// Prepared state and the program that prepares it from `|0⟩`. The
/// program is empty for ideal preparation.
pub fn prepare_state(u3: &U3Params, cfg: &ScheduleConfig, spectrum: &TransmonSpectrum) -> Result<(QubitState, PulseProgram)> {
    let mut p = PulseProgram::new();
    if cfg.preparation == Preparation::Pulses {
        let d = spectrum.n_levels();
        let pi = std::f64::consts::PI;
        let sx = GateSpec { axis: Axis::X, angle: 0.5 * pi, composition: Composition::Single, virtual_z: vec![] };
        let half = GateCalibration { gate_time: 0.5 * cfg.gates.gate_time, ..cfg.gates };
        p.push(Segment::Instant(frame_z(d, u3.lambda)));
        p.push_gate(&sx, &half, spectrum)?;
        p.push(Segment::Instant(frame_z(d, u3.theta + pi)));
        p.push_gate(&sx, &half, spectrum)?;
        p.push(Segment::Instant(frame_z(d, u3.phi + pi)));
    }
    Ok((u3.state(), p))
}

/// Runs of one kind on a fixed instant grid, sharing one propagator for
/// all initial states. Every instant is a prefix of the longest program.
pub struct DecayExperiment {
    propagator: Propagator,
    prep: Vec<(QubitState, QubitState)>,
    instants: Vec<f64>,
}

impl DecayExperiment {
    pub fn new(
        spectrum: &TransmonSpectrum,
        states: &[U3Params],
        kind: ExperimentKind,
        noise: &HybridNoiseModel,
        instants: &[f64],
        cfg: &ScheduleConfig,
        opts: &PropagationOptions,
    ) -> Result<Self> {
        let spacing = grid_spacing(instants)?;
        let (cycle, instants) = match kind {
            ExperimentKind::Dd => (cfg.cycle_length(spacing)?, cfg.snap_to_cycles(instants)?),
            ExperimentKind::Free => (spacing, instants.to_vec()),
        };
        let total = *instants.last().expect("non-empty grid");
        let body = build_schedule(kind, total, cycle, cfg, spectrum)?;
        let (program, offset, prep) = if cfg.preparation == Preparation::Pulses {
            if states.len() != 1 {
                return Err(Error::Schedule("pulsed preparation runs one state at a time".into()));
            }
            let (psi, mut program) = prepare_state(&states[0], cfg, spectrum)?;
            let offset = program.duration();
            program.append(&body);
            (program, offset, vec![([c(1.0), c(0.0)], psi)])
        } else {
            (body, 0.0, states.iter().map(|s| (s.state(), s.state())).collect())
        };
        let store: Vec<f64> = instants.iter().map(|t| t + offset).collect();
        let opts = PropagationOptions { store_instants: store, ..opts.clone() };
        let propagator = Propagator::new(spectrum, &program, noise, &opts)?;
        Ok(Self { propagator, prep, instants })
    }

    pub fn instants(&self) -> &[f64] {
        &self.instants
    }

    /// One curve per state; `half_width` is twice the standard error.
    pub fn run(&self, n_traj: usize, base_seed: u64) -> Result<Vec<DecayCurve>> {
        let curves = self.propagator.ensemble_targets(&self.prep, n_traj, base_seed)?;
        Ok(curves
            .into_iter()
            .map(|e| DecayCurve {
                instants: self.instants.clone(),
                half_width: e.std_error.iter().map(|s| 2.0 * s).collect(),
                mean: e.mean,
            })
            .collect())
    }
}

/// Simulated fidelity decay of one prepared state.
#[allow(clippy::too_many_arguments)]
pub fn simulate_decay_curve(
    spectrum: &TransmonSpectrum,
    u3: &U3Params,
    kind: ExperimentKind,
    noise: &HybridNoiseModel,
    instants: &[f64],
    n_traj: usize,
    base_seed: u64,
    cfg: &ScheduleConfig,
    opts: &PropagationOptions,
) -> Result<DecayCurve> {
    let exp = DecayExperiment::new(spectrum, std::slice::from_ref(u3), kind, noise, instants, cfg, opts)?;
    Ok(exp.run(n_traj, base_seed)?.remove(0))
}
