//! Cost surfaces, grid sweeps and the three-step bath fit.
//!
//! Step I sweeps the x-bath against free `|1⟩` decay, Step II the z-bath
//! against XY4 decay of the six Pauli states, Step III the fluctuator
//! ensemble against free `|+⟩` decay. Each step fixes the parameters of
//! the previous ones. The simplified models SM1 and SM2 are two-level,
//! fluctuator-free variants with ideal instantaneous gates.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use argmin::core::{CostFunction, Executor, State, TerminationReason};
use argmin::solver::goldensectionsearch::GoldenSectionSearch;
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{derive_seed, FluctuatorEnsembleSpec, OhmicBathSpec};
use crate::data::{bootstrap_curve, spam_normalize, DecayCurve, ExperimentRecord, SpamMode};
use crate::engine::{
    ChannelKernel, HybridNoiseModel, IdleKernel, PropagationOptions, Propagator, QubitState, Timeline,
};
use crate::error::{Error, Result};
use crate::schedules::{
    build_schedule, grid_spacing, DecayExperiment, ExperimentKind, GateModel, Preparation, ScheduleConfig, U3Params,
};
use crate::transmon::TransmonSpectrum;
use crate::units::mk_to_ghz;

/// `(1/N)·sqrt(Σ (sim − exp)²)` over a shared instant grid.
pub fn cost(sim: &DecayCurve, exp: &DecayCurve) -> Result<f64> {
    if !sim.same_grid(exp) || sim.is_empty() {
        return Err(Error::GridMismatch(format!(
            "simulated curve has {} instants, experimental {}",
            sim.len(),
            exp.len()
        )));
    }
    let ss: f64 = sim.mean.iter().zip(&exp.mean).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(ss.sqrt() / sim.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStep {
    I,
    II,
    III,
}

impl fmt::Display for FitStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitStep::I => "I",
            FitStep::II => "II",
            FitStep::III => "III",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisScale {
    Linear,
    Log,
}

/// One sweep axis. Values are equidistant in the axis scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub units: String,
    pub scale: AxisScale,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: &str, units: &str, scale: AxisScale, range: [f64; 2], n: usize) -> Result<Self> {
        let [lo, hi] = range;
        let ok = n >= 2
            && lo.is_finite()
            && hi.is_finite()
            && hi > lo
            && (scale == AxisScale::Linear || lo > 0.0);
        if !ok {
            return Err(Error::Config(format!("axis {name}: invalid range [{lo}, {hi}] with {n} points")));
        }
        let values = (0..n)
            .map(|k| {
                let s = k as f64 / (n - 1) as f64;
                match scale {
                    AxisScale::Linear => lo + s * (hi - lo),
                    AxisScale::Log => lo * (hi / lo).powf(s),
                }
            })
            .collect();
        Ok(Self { name: name.into(), units: units.into(), scale, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bounds(&self) -> [f64; 2] {
        [self.values[0], self.values[self.len() - 1]]
    }

    fn transform(&self, v: f64) -> f64 {
        match self.scale {
            AxisScale::Linear => v,
            AxisScale::Log => v.ln(),
        }
    }

    /// Parameter value at fractional grid index `u`.
    pub fn value_at(&self, u: f64) -> f64 {
        let [lo, hi] = self.bounds();
        let s = u / (self.len() - 1) as f64;
        match self.scale {
            AxisScale::Linear => lo + s * (hi - lo),
            AxisScale::Log => lo * (hi / lo).powf(s),
        }
    }

    /// Fractional grid index of `v`.
    pub fn index_of(&self, v: f64) -> f64 {
        let [lo, hi] = self.bounds();
        let (a, b) = (self.transform(lo), self.transform(hi));
        (self.transform(v) - a) / (b - a) * (self.len() - 1) as f64
    }

    /// Distance between two values in grid cells.
    pub fn cells_between(&self, a: f64, b: f64) -> f64 {
        (self.index_of(a) - self.index_of(b)).abs()
    }

    /// Width of the cell containing `v`, in parameter units.
    pub fn cell_width_at(&self, v: f64) -> f64 {
        let u = self.index_of(v).clamp(0.0, (self.len() - 1) as f64);
        let i = (u.floor() as usize).min(self.len() - 2);
        self.values[i + 1] - self.values[i]
    }
}

/// Cost over a 2-D parameter grid; `cost[i][j]` belongs to
/// `(axis1.values[i], axis2.values[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSurface {
    pub step: FitStep,
    pub axis1: Axis,
    pub axis2: Axis,
    pub cost: Vec<Vec<f64>>,
}

impl CostSurface {
    pub fn new(step: FitStep, axis1: Axis, axis2: Axis, cost: Vec<Vec<f64>>) -> Result<Self> {
        if cost.len() != axis1.len() || cost.iter().any(|r| r.len() != axis2.len()) {
            return Err(Error::GridMismatch("cost array does not match the axes".into()));
        }
        if cost.iter().flatten().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Fit("cost surface has negative or non-finite entries".into()));
        }
        Ok(Self { step, axis1, axis2, cost })
    }

    /// Grid cell with the least cost. Ties go to the smaller indices.
    pub fn best_cell(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::INFINITY);
        for (i, row) in self.cost.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c < best.2 {
                    best = (i, j, c);
                }
            }
        }
        best
    }

    /// Bicubic (Keys, `a = −1/2`) interpolation at fractional indices.
    pub fn interpolate(&self, u: f64, v: f64) -> f64 {
        let (n1, n2) = (self.axis1.len(), self.axis2.len());
        let (u, v) = (u.clamp(0.0, (n1 - 1) as f64), v.clamp(0.0, (n2 - 1) as f64));
        let (i0, tu) = split(u, n1);
        let (j0, tv) = split(v, n2);
        let (wu, wv) = (keys_weights(tu), keys_weights(tv));
        let mut acc = 0.0;
        for (a, wa) in wu.iter().enumerate() {
            let i = (i0 as isize + a as isize - 1).clamp(0, n1 as isize - 1) as usize;
            for (b, wb) in wv.iter().enumerate() {
                let j = (j0 as isize + b as isize - 1).clamp(0, n2 as isize - 1) as usize;
                acc += wa * wb * self.cost[i][j];
            }
        }
        acc
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let map = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record([self.axis1.name.as_str(), self.axis2.name.as_str(), "cost"]).map_err(map)?;
        for (i, row) in self.cost.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                out.write_record(&[
                    format!("{:e}", self.axis1.values[i]),
                    format!("{:e}", self.axis2.values[j]),
                    format!("{c:e}"),
                ])
                .map_err(map)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn split(u: f64, n: usize) -> (usize, f64) {
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64)
}

fn keys_weights(t: f64) -> [f64; 4] {
    let k = |x: f64| {
        let x = x.abs();
        if x <= 1.0 {
            1.5 * x.powi(3) - 2.5 * x * x + 1.0
        } else if x < 2.0 {
            -0.5 * x.powi(3) + 2.5 * x * x - 4.0 * x + 2.0
        } else {
            0.0
        }
    };
    [k(t + 1.0), k(t), k(1.0 - t), k(2.0 - t)]
}

/// Refined minimum of a cost surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub p1: f64,
    pub p2: f64,
    pub cost: f64,
    /// Cost of the best grid cell.
    pub grid_cost: f64,
    /// False when the simplex hit its iteration cap and the best grid
    /// cell was returned instead.
    pub converged: bool,
}

pub const MAX_SIMPLEX_ITERATIONS: u64 = 500;

struct Interpolant<'a> {
    surface: &'a CostSurface,
}

impl CostFunction for Interpolant<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.surface.interpolate(p[0], p[1]))
    }
}

/// Bicubic interpolation of the surface refined by Nelder–Mead from the
/// best grid cell, clamped to the sweep rectangle.
pub fn locate_minimum(surface: &CostSurface) -> Result<Minimum> {
    let (i, j, grid_cost) = surface.best_cell();
    let cell = Minimum {
        p1: surface.axis1.values[i],
        p2: surface.axis2.values[j],
        cost: grid_cost,
        grid_cost,
        converged: true,
    };
    let (n1, n2) = ((surface.axis1.len() - 1) as f64, (surface.axis2.len() - 1) as f64);
    let (u0, v0) = (i as f64, j as f64);
    let step = |x: f64, max: f64| if x + 0.5 <= max { x + 0.5 } else { x - 0.5 };
    let simplex = vec![vec![u0, v0], vec![step(u0, n1), v0], vec![u0, step(v0, n2)]];
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-14).map_err(|e| Error::Fit(e.to_string()))?;
    let res = Executor::new(Interpolant { surface }, solver)
        .configure(|s| s.max_iters(MAX_SIMPLEX_ITERATIONS))
        .run()
        .map_err(|e| Error::Fit(e.to_string()))?;
    if matches!(res.state().get_termination_reason(), Some(TerminationReason::MaxItersReached)) {
        return Ok(Minimum { converged: false, ..cell });
    }
    let Some(best) = res.state().get_best_param() else {
        return Ok(cell);
    };
    let (u, v) = (best[0].clamp(0.0, n1), best[1].clamp(0.0, n2));
    let value = surface.interpolate(u, v);
    if !(value < grid_cost) {
        return Ok(cell);
    }
    Ok(Minimum {
        p1: surface.axis1.value_at(u),
        p2: surface.axis2.value_at(v),
        cost: value.max(0.0),
        grid_cost,
        converged: true,
    })
}

/// Sweep ranges in GHz. Fluctuator axes are log-spaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitRanges {
    pub omega_c_x: [f64; 2],
    pub g_x: [f64; 2],
    pub omega_c_z: [f64; 2],
    pub g_z: [f64; 2],
    pub gamma_max: [f64; 2],
    pub b: [f64; 2],
}

impl Default for FitRanges {
    fn default() -> Self {
        Self {
            omega_c_x: [0.5, 3.0],
            g_x: [0.0, 1e-2],
            omega_c_z: [1e-3, 5e-2],
            g_z: [0.0, 2e-2],
            gamma_max: [1e-3, 0.2],
            b: [1e-5, 2e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Points per axis.
    pub resolution: usize,
    pub ranges: FitRanges,
    /// GHz.
    pub temperature: f64,
    pub gamma_min: f64,
    pub eta: f64,
    pub n_fluctuators: usize,
    /// Trajectories per Step III grid point.
    pub n_trajectories: usize,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub propagation: PropagationOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            resolution: 20,
            ranges: FitRanges::default(),
            temperature: mk_to_ghz(20.0),
            gamma_min: 1e-4,
            eta: 1e-4,
            n_fluctuators: 10,
            n_trajectories: 600,
            seed: 0,
            schedule: ScheduleConfig::default(),
            propagation: PropagationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Full,
    /// Step II trained on XY4 curves.
    Sm1,
    /// Step II trained on free-evolution curves.
    Sm2,
}

impl ModelVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::Sm1 => "sm1",
            ModelVariant::Sm2 => "sm2",
        }
    }

    pub fn spectrum(&self, full: &TransmonSpectrum) -> Result<TransmonSpectrum> {
        match self {
            ModelVariant::Full => Ok(full.clone()),
            _ => full.truncated(2),
        }
    }

    pub fn schedule(&self, cfg: &ScheduleConfig) -> ScheduleConfig {
        match self {
            ModelVariant::Full => cfg.clone(),
            _ => ScheduleConfig { gate_model: GateModel::Instantaneous, ..cfg.clone() },
        }
    }

    fn step2_kind(&self) -> ExperimentKind {
        match self {
            ModelVariant::Sm2 => ExperimentKind::Free,
            _ => ExperimentKind::Dd,
        }
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(ModelVariant::Full),
            "sm1" => Ok(ModelVariant::Sm1),
            "sm2" => Ok(ModelVariant::Sm2),
            _ => Err(Error::Config(format!("unknown model {s:?}; expected full, sm1 or sm2"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuatorFit {
    pub b: f64,
    pub gamma_max: f64,
}

/// Learned and fixed parameters of a noise model, GHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParameters {
    pub g_x: f64,
    pub omega_c_x: f64,
    pub g_z: f64,
    pub omega_c_z: f64,
    pub fluctuators: Option<FluctuatorFit>,
    pub temperature: f64,
    pub gamma_min: f64,
    pub eta: f64,
    pub n_fluctuators: usize,
    pub fluctuator_seed: u64,
}

impl NoiseParameters {
    pub fn x_bath(&self) -> OhmicBathSpec {
        OhmicBathSpec { g: self.g_x, omega_c: self.omega_c_x, temperature: self.temperature, eta: self.eta }
    }

    pub fn z_bath(&self) -> OhmicBathSpec {
        OhmicBathSpec { g: self.g_z, omega_c: self.omega_c_z, temperature: self.temperature, eta: self.eta }
    }

    pub fn noise_model(&self) -> HybridNoiseModel {
        HybridNoiseModel {
            x: Some(self.x_bath()),
            z: Some(self.z_bath()),
            fluctuators: self.fluctuators.map(|f| FluctuatorEnsembleSpec {
                count: self.n_fluctuators,
                b: f.b,
                gamma_min: self.gamma_min,
                gamma_max: f.gamma_max,
                seed: self.fluctuator_seed,
            }),
            redraw_rates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: ModelVariant,
    pub parameters: NoiseParameters,
    pub surfaces: Vec<CostSurface>,
    pub minima: Vec<Minimum>,
}

impl FitResult {
    pub fn noise_model(&self) -> HybridNoiseModel {
        self.parameters.noise_model()
    }

    /// Structured report: parameters, grid bounds, cell widths and minima.
    pub fn report(&self) -> FitReport {
        let steps = self
            .surfaces
            .iter()
            .zip(&self.minima)
            .map(|(s, m)| StepReport {
                step: s.step,
                grid_cost: m.grid_cost,
                refined_cost: m.cost,
                converged: m.converged,
                axes: [(&s.axis1, m.p1), (&s.axis2, m.p2)]
                    .map(|(a, p)| AxisReport {
                        name: a.name.clone(),
                        units: a.units.clone(),
                        scale: a.scale,
                        bounds: a.bounds(),
                        points: a.len(),
                        value: p,
                        cell_width: a.cell_width_at(p),
                    })
                    .to_vec(),
            })
            .collect();
        FitReport { variant: self.variant, parameters: self.parameters.clone(), steps }
    }

    /// Writes `fit_report.toml` and one `surface_step_<n>.csv` per step.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = vec![dir.join("fit_report.toml")];
        std::fs::write(&paths[0], self.report().to_toml()?)?;
        for s in &self.surfaces {
            let p = dir.join(format!("surface_step_{}.csv", s.step));
            s.write_csv(std::fs::File::create(&p)?)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisReport {
    pub name: String,
    pub units: String,
    pub scale: AxisScale,
    pub bounds: [f64; 2],
    pub points: usize,
    pub value: f64,
    /// One cell width is the reported uncertainty.
    pub cell_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: FitStep,
    pub grid_cost: f64,
    pub refined_cost: f64,
    pub converged: bool,
    pub axes: Vec<AxisReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub variant: ModelVariant,
    pub parameters: NoiseParameters,
    pub steps: Vec<StepReport>,
}

impl FitReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Experimental decay curves keyed by prepared state and experiment kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDataset {
    pub curves: Vec<LabeledCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCurve {
    pub state: U3Params,
    pub kind: ExperimentKind,
    pub curve: DecayCurve,
}

fn same_state(a: &U3Params, b: &U3Params) -> bool {
    let (x, y) = (a.state(), b.state());
    (x[0].conj() * y[0] + x[1].conj() * y[1]).norm_sqr() > 1.0 - 1e-9
}

impl FitDataset {
    /// Bootstraps each record, then applies the optional SPAM shift.
    pub fn from_records(
        records: &[ExperimentRecord],
        n_resamples: usize,
        seed: u64,
        spam: Option<SpamMode>,
    ) -> Result<Self> {
        let curves = records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut curve = bootstrap_curve(r, n_resamples, derive_seed(seed, i as u64))?;
                if let Some(mode) = spam {
                    curve = spam_normalize(&curve, mode)?;
                }
                Ok(LabeledCurve { state: r.state, kind: r.kind, curve })
            })
            .collect::<Result<_>>()?;
        Ok(Self { curves })
    }

    pub fn push(&mut self, state: U3Params, kind: ExperimentKind, curve: DecayCurve) {
        self.curves.push(LabeledCurve { state, kind, curve });
    }

    pub fn find(&self, state: &U3Params, kind: ExperimentKind) -> Option<&DecayCurve> {
        self.curves.iter().find(|c| c.kind == kind && same_state(&c.state, state)).map(|c| &c.curve)
    }

    /// Curves for every `(state, kind)`, or an error naming the missing ones.
    pub fn require(&self, wanted: &[(U3Params, ExperimentKind)]) -> Result<Vec<&DecayCurve>> {
        let missing: Vec<String> = wanted
            .iter()
            .filter(|(s, k)| self.find(s, *k).is_none())
            .map(|(s, k)| {
                let d = s.degrees();
                format!("{} ({:.1}, {:.1}, {:.1})", k.as_str(), d[0], d[1], d[2])
            })
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingData(missing.join(", ")));
        }
        Ok(wanted.iter().map(|(s, k)| self.find(s, *k).expect("checked")).collect())
    }
}

fn one_state() -> U3Params {
    U3Params::from_degrees(180.0, 0.0, 0.0)
}

fn plus_state() -> U3Params {
    U3Params::from_degrees(90.0, 0.0, 0.0)
}

/// Curves needed by [`run_three_step_fit`].
pub fn required_curves(variant: ModelVariant) -> Vec<(U3Params, ExperimentKind)> {
    let mut out = vec![(one_state(), ExperimentKind::Free)];
    out.extend(U3Params::pauli_states().map(|s| (s, variant.step2_kind())));
    if variant == ModelVariant::Full {
        out.push((plus_state(), ExperimentKind::Free));
    }
    out
}

enum Kernels {
    Idle(Vec<IdleKernel>),
    Driven(Arc<Timeline>, Vec<ChannelKernel>),
}

/// Shared setup of one sweep: a schedule, its instants and the states.
struct SweepContext<'a> {
    spectrum: &'a TransmonSpectrum,
    cfg: &'a FitConfig,
    instants: Vec<f64>,
    total: f64,
    opts: PropagationOptions,
    pairs: Vec<(QubitState, QubitState)>,
    timeline: Option<Arc<Timeline>>,
}

impl<'a> SweepContext<'a> {
    fn new(
        spectrum: &'a TransmonSpectrum,
        cfg: &'a FitConfig,
        schedule: &ScheduleConfig,
        kind: ExperimentKind,
        states: &[U3Params],
        instants: &[f64],
    ) -> Result<Self> {
        let spacing = grid_spacing(instants)?;
        let (cycle, instants) = match kind {
            ExperimentKind::Dd => (schedule.cycle_length(spacing)?, schedule.snap_to_cycles(instants)?),
            ExperimentKind::Free => (spacing, instants.to_vec()),
        };
        let total = *instants.last().expect("non-empty grid");
        let opts = PropagationOptions { store_instants: instants.clone(), ..cfg.propagation.clone() };
        let timeline = match kind {
            ExperimentKind::Free => None,
            ExperimentKind::Dd => {
                let program = build_schedule(kind, total, cycle, schedule, spectrum)?;
                Some(Arc::new(Timeline::compile(spectrum, &program, opts.dt, opts.pulse_dt)?))
            }
        };
        let pairs = states.iter().map(|s| (s.state(), s.state())).collect();
        Ok(Self { spectrum, cfg, instants, total, opts, pairs, timeline })
    }

    /// Kernel of `op` for bath `spec`, one per sweep row.
    fn kernel(&self, op: &crate::linalg::CMat, spec: &OhmicBathSpec) -> Result<Kernel> {
        Ok(match &self.timeline {
            None => {
                let n = (self.total / self.opts.idle_dt).round() as usize;
                Kernel::Idle(IdleKernel::build(self.spectrum, op, spec, self.opts.idle_dt, n, self.opts.memory_cutoff)?)
            }
            Some(t) => Kernel::Driven(ChannelKernel::build(t, op, spec, self.opts.memory_cutoff)?),
        })
    }

    fn simulate(&self, kernels: &[&Kernel], scales: &[f64], noise: &HybridNoiseModel, n_traj: usize) -> Result<Vec<DecayCurve>> {
        let set = match &self.timeline {
            None => Kernels::Idle(
                kernels
                    .iter()
                    .zip(scales)
                    .map(|(k, s)| match k {
                        Kernel::Idle(k) => k.scaled(*s),
                        Kernel::Driven(_) => unreachable!("idle sweep with a driven kernel"),
                    })
                    .collect(),
            ),
            Some(t) => Kernels::Driven(
                t.clone(),
                kernels
                    .iter()
                    .zip(scales)
                    .map(|(k, s)| match k {
                        Kernel::Driven(k) => k.scaled(*s),
                        Kernel::Idle(_) => unreachable!("driven sweep with an idle kernel"),
                    })
                    .collect(),
            ),
        };
        let prop = match set {
            Kernels::Idle(ks) => Propagator::idle(self.spectrum, &ks, noise, &self.opts, self.total)?,
            Kernels::Driven(t, ks) => Propagator::driven(t, ks, self.spectrum, noise, &self.opts)?,
        };
        let curves = prop.ensemble_targets(&self.pairs, n_traj, self.cfg.seed)?;
        Ok(curves
            .into_iter()
            .map(|e| DecayCurve {
                instants: self.instants.clone(),
                half_width: e.std_error.iter().map(|s| 2.0 * s).collect(),
                mean: e.mean,
            })
            .collect())
    }

    fn mean_cost(&self, sims: &[DecayCurve], exps: &[&DecayCurve]) -> Result<f64> {
        let mut total = 0.0;
        for (s, e) in sims.iter().zip(exps) {
            total += cost(s, &e.restricted_to(&s.instants)?)?;
        }
        Ok(total / sims.len() as f64)
    }
}

enum Kernel {
    Idle(IdleKernel),
    Driven(ChannelKernel),
}

fn reference_bath(omega_c: f64, cfg: &FitConfig) -> OhmicBathSpec {
    OhmicBathSpec { g: 1.0, omega_c, temperature: cfg.temperature, eta: cfg.eta }
}

/// Runs `row(a1)` for each first-axis value and collects the surface.
fn sweep_rows<F>(step: FitStep, axis1: Axis, axis2: Axis, row: F) -> Result<CostSurface>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    let cost = axis1.values.iter().map(|&a| row(a)).collect::<Result<Vec<_>>>()?;
    CostSurface::new(step, axis1, axis2, cost)
}

/// Fitting driver for one model variant on one dataset.
pub struct Fitter<'a> {
    spectrum: TransmonSpectrum,
    dataset: &'a FitDataset,
    config: FitConfig,
    schedule: ScheduleConfig,
    variant: ModelVariant,
}

impl<'a> Fitter<'a> {
    /// `spectrum` is the full multi-level model; simplified variants
    /// truncate it themselves.
    pub fn new(variant: ModelVariant, spectrum: &TransmonSpectrum, dataset: &'a FitDataset, config: &FitConfig) -> Result<Self> {
        if config.schedule.preparation != Preparation::Ideal {
            return Err(Error::Config("sweeps require ideal state preparation".into()));
        }
        if config.resolution < 2 {
            return Err(Error::Config("resolution must be at least 2".into()));
        }
        Ok(Self {
            spectrum: variant.spectrum(spectrum)?,
            dataset,
            config: config.clone(),
            schedule: variant.schedule(&config.schedule),
            variant,
        })
    }

    fn axis(&self, name: &str, scale: AxisScale, range: [f64; 2]) -> Result<Axis> {
        Axis::new(name, "GHz", scale, range, self.config.resolution)
    }

    /// Free `|1⟩` decay over `(ω_c_x, g_x)` with only the x-bath.
    pub fn sweep_step1(&self) -> Result<CostSurface> {
        let want = [(one_state(), ExperimentKind::Free)];
        let exps = self.dataset.require(&want)?;
        let r = &self.config.ranges;
        let (a1, a2) = (self.axis("omega_c_x", AxisScale::Linear, r.omega_c_x)?, self.axis("g_x", AxisScale::Linear, r.g_x)?);
        let ctx = SweepContext::new(&self.spectrum, &self.config, &self.schedule, ExperimentKind::Free, &[want[0].0], &exps[0].instants)?;
        let ax = self.spectrum.charge_coupling_op();
        let noise = HybridNoiseModel::noiseless();
        let g_values = a2.values.clone();
        sweep_rows(FitStep::I, a1, a2, |wc| {
            let k = ctx.kernel(&ax, &reference_bath(wc, &self.config))?;
            g_values.par_iter().map(|g| ctx.mean_cost(&ctx.simulate(&[&k], &[g * g], &noise, 1)?, &exps)).collect()
        })
    }

    /// Pauli-state decay over `(ω_c_z, g_z)` with both baths and no
    /// fluctuators. XY4 curves for the full model and SM1, free curves
    /// for SM2.
    pub fn sweep_step2(&self, g_x: f64, omega_c_x: f64) -> Result<CostSurface> {
        let kind = self.variant.step2_kind();
        let states = U3Params::pauli_states();
        let want: Vec<_> = states.iter().map(|s| (*s, kind)).collect();
        let exps = self.dataset.require(&want)?;
        let r = &self.config.ranges;
        let (a1, a2) = (self.axis("omega_c_z", AxisScale::Linear, r.omega_c_z)?, self.axis("g_z", AxisScale::Linear, r.g_z)?);
        let ctx = SweepContext::new(&self.spectrum, &self.config, &self.schedule, kind, &states, &exps[0].instants)?;
        let kx = ctx.kernel(&self.spectrum.charge_coupling_op(), &reference_bath(omega_c_x, &self.config))?;
        let az = self.spectrum.josephson_coupling_op();
        let noise = HybridNoiseModel::noiseless();
        let g_values = a2.values.clone();
        sweep_rows(FitStep::II, a1, a2, |wc| {
            let kz = ctx.kernel(&az, &reference_bath(wc, &self.config))?;
            g_values
                .par_iter()
                .map(|g| ctx.mean_cost(&ctx.simulate(&[&kx, &kz], &[g_x * g_x, g * g], &noise, 1)?, &exps))
                .collect()
        })
    }

    /// Free `|+⟩` decay over `(γ_max, b)` with the full model.
    pub fn sweep_step3(&self, x: &OhmicBathSpec, z: &OhmicBathSpec) -> Result<CostSurface> {
        let want = [(plus_state(), ExperimentKind::Free)];
        let exps = self.dataset.require(&want)?;
        let r = &self.config.ranges;
        let (a1, a2) = (self.axis("gamma_max", AxisScale::Log, r.gamma_max)?, self.axis("b", AxisScale::Log, r.b)?);
        let ctx = SweepContext::new(&self.spectrum, &self.config, &self.schedule, ExperimentKind::Free, &[want[0].0], &exps[0].instants)?;
        let kx = ctx.kernel(&self.spectrum.charge_coupling_op(), &OhmicBathSpec { g: 1.0, ..*x })?;
        let kz = ctx.kernel(&self.spectrum.josephson_coupling_op(), &OhmicBathSpec { g: 1.0, ..*z })?;
        let scales = [x.g * x.g, z.g * z.g];
        let b_values = a2.values.clone();
        sweep_rows(FitStep::III, a1, a2, |gamma_max| {
            b_values
                .iter()
                .map(|&b| {
                    let noise = HybridNoiseModel {
                        x: Some(*x),
                        z: Some(*z),
                        fluctuators: Some(FluctuatorEnsembleSpec {
                            count: self.config.n_fluctuators,
                            b,
                            gamma_min: self.config.gamma_min,
                            gamma_max,
                            seed: self.config.seed,
                        }),
                        redraw_rates: true,
                    };
                    ctx.mean_cost(&ctx.simulate(&[&kx, &kz], &scales, &noise, self.config.n_trajectories)?, &exps)
                })
                .collect()
        })
    }

    /// Steps I → II (→ III for the full model), threading parameters.
    pub fn run(&self) -> Result<FitResult> {
        let s1 = self.sweep_step1()?;
        let m1 = locate_minimum(&s1)?;
        let s2 = self.sweep_step2(m1.p2, m1.p1)?;
        let m2 = locate_minimum(&s2)?;
        let mut parameters = NoiseParameters {
            g_x: m1.p2,
            omega_c_x: m1.p1,
            g_z: m2.p2,
            omega_c_z: m2.p1,
            fluctuators: None,
            temperature: self.config.temperature,
            gamma_min: self.config.gamma_min,
            eta: self.config.eta,
            n_fluctuators: self.config.n_fluctuators,
            fluctuator_seed: self.config.seed,
        };
        let mut surfaces = vec![s1, s2];
        let mut minima = vec![m1, m2];
        if self.variant == ModelVariant::Full {
            let s3 = self.sweep_step3(&parameters.x_bath(), &parameters.z_bath())?;
            let m3 = locate_minimum(&s3)?;
            parameters.fluctuators = Some(FluctuatorFit { gamma_max: m3.p1, b: m3.p2 });
            surfaces.push(s3);
            minima.push(m3);
        }
        Ok(FitResult { variant: self.variant, parameters, surfaces, minima })
    }
}

/// The full three-step fit.
pub fn run_three_step_fit(spectrum: &TransmonSpectrum, dataset: &FitDataset, config: &FitConfig) -> Result<FitResult> {
    Fitter::new(ModelVariant::Full, spectrum, dataset, config)?.run()
}

/// Two-level, fluctuator-free fit with instantaneous ideal gates.
pub fn build_simplified_model(
    variant: ModelVariant,
    spectrum: &TransmonSpectrum,
    dataset: &FitDataset,
    config: &FitConfig,
) -> Result<FitResult> {
    if variant == ModelVariant::Full {
        return Err(Error::Config("build_simplified_model expects sm1 or sm2".into()));
    }
    Fitter::new(variant, spectrum, dataset, config)?.run()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub state: U3Params,
    pub kind: ExperimentKind,
    pub simulated: DecayCurve,
    /// `(exp − sim)/exp` per instant, when a matching curve was supplied.
    pub relative_error: Option<Vec<f64>>,
}

/// Simulates each `(state, kind)` under a fitted model and compares with
/// `experiment` where it has a curve on the same grid.
#[allow(clippy::too_many_arguments)]
pub fn predict_states(
    fit: &NoiseParameters,
    variant: ModelVariant,
    spectrum: &TransmonSpectrum,
    states: &[U3Params],
    kinds: &[ExperimentKind],
    instants: &[f64],
    experiment: Option<&FitDataset>,
    n_traj: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<Vec<Prediction>> {
    let spectrum = variant.spectrum(spectrum)?;
    let schedule = variant.schedule(&config.schedule);
    let mut noise = fit.noise_model();
    if variant != ModelVariant::Full {
        noise.fluctuators = None;
    }
    let mut out = Vec::new();
    for &kind in kinds {
        let exp = DecayExperiment::new(&spectrum, states, kind, &noise, instants, &schedule, &config.propagation)?;
        for (state, simulated) in states.iter().zip(exp.run(n_traj, seed)?) {
            let relative_error = match experiment.and_then(|d| d.find(state, kind)) {
                Some(e) => Some(crate::data::relative_error(&e.restricted_to(&simulated.instants)?, &simulated)?),
                None => None,
            };
            out.push(Prediction { state: *state, kind, simulated, relative_error });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T1Fit {
    /// μs.
    pub t1_us: f64,
    pub amplitude: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

struct ExpResidual<'a> {
    t: &'a [f64],
    y: &'a [f64],
}

impl ExpResidual<'_> {
    /// Optimal amplitude and squared residual for time constant `tau`.
    fn solve(&self, tau: f64) -> (f64, f64) {
        let e: Vec<f64> = self.t.iter().map(|t| (-t / tau).exp()).collect();
        let a = e.iter().zip(self.y).map(|(e, y)| e * y).sum::<f64>() / e.iter().map(|e| e * e).sum::<f64>();
        let ss = e.iter().zip(self.y).map(|(e, y)| (a * e - y).powi(2)).sum();
        (a, ss)
    }
}

impl CostFunction for ExpResidual<'_> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, log_tau: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.solve(log_tau.exp()).1)
    }
}

/// Least-squares fit of `A·exp(−t/T1)` with free `A`.
pub fn extract_t1(curve: &DecayCurve) -> Result<T1Fit> {
    let (t, y) = (&curve.instants, &curve.mean);
    if t.len() < 3 {
        return Err(Error::Fit("need at least three instants".into()));
    }
    let span = t[t.len() - 1] - t[0];
    if !(span > 0.0) || y[y.len() - 1] >= y[0] {
        return Err(Error::Fit("curve does not decay".into()));
    }
    let problem = ExpResidual { t, y };
    let (lo, hi) = ((span * 1e-3).ln(), (span * 1e4).ln());
    let solver = GoldenSectionSearch::new(lo, hi)
        .and_then(|s| s.with_tolerance(1e-10))
        .map_err(|e| Error::Fit(e.to_string()))?;
    let res = Executor::new(ExpResidual { t, y }, solver)
        .configure(|s| s.param(0.5 * (lo + hi)).max_iters(500))
        .run()
        .map_err(|e| Error::Fit(e.to_string()))?;
    let log_tau = *res.state().get_best_param().ok_or_else(|| Error::Fit("no fit".into()))?;
    if log_tau > hi - 1e-3 {
        return Err(Error::Fit("curve does not decay on the measured span".into()));
    }
    let tau = log_tau.exp();
    let (amplitude, ss) = problem.solve(tau);
    Ok(T1Fit { t1_us: tau * 1e-3, amplitude, residual: (ss / t.len() as f64).sqrt() })
}

/// The six Pauli states plus ten states at polar angles 45° and 135°
/// with azimuths spaced by 72°.
pub fn prediction_states() -> Vec<U3Params> {
    let mut out = U3Params::pauli_states().to_vec();
    for theta in [45.0, 135.0] {
        for k in 0..5 {
            out.push(U3Params::from_degrees(theta, 72.0 * k as f64, 0.0));
        }
    }
    out
}

/// Shot-sampled records drawn from a model's simulated curves.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_dataset(
    params: &NoiseParameters,
    spectrum: &TransmonSpectrum,
    states: &[U3Params],
    kinds: &[ExperimentKind],
    instants: &[f64],
    shots: u64,
    n_traj: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<Vec<ExperimentRecord>> {
    let preds = predict_states(params, ModelVariant::Full, spectrum, states, kinds, instants, None, n_traj, seed, config)?;
    preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let p0: Vec<f64> = p.simulated.mean.iter().map(|m| m.clamp(0.0, 1.0)).collect();
            crate::data::synthesize_record(p.state, p.kind, &p.simulated.instants, &p0, shots, derive_seed(seed ^ 0x5eed, i as u64))
        })
        .collect()
}
