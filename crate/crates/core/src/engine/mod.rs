//! Hybrid Redfield propagation of the transmon density matrix.
//!
//! The Ohmic channels enter a second-order time-convolutionless generator in
//! the frame rotating at the drive frequency, with rapidly rotating terms
//! dropped. Fluctuators enter as a classical shift along the diagonal of the
//! `z` coupling. Programs without pulses use a block-diagonal fast path;
//! everything else uses the driven integrator.

mod driven;
mod generator;
mod idle;
mod kernel;
mod program;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use driven::{ChannelKernel, DrivenEngine};
pub use idle::{IdleEngine, IdleKernel};
pub use kernel::{cell_weights, cumulative_kernel, harmonic_part, harmonics, CellWeights, ConvolutionPlan};
pub use program::{PulseProgram, Segment, Timeline};

use crate::bath::{
    derive_seed, resample_switching, sample_fluctuators, CorrelationGrid, FluctuatorEnsembleSpec,
    FluctuatorRealization, OhmicBathSpec, PiecewiseField,
};
use crate::error::{Error, Result};
use crate::linalg::{c, from_row_major, hermitian_eigen, hermiticity_error, to_row_major, CMat, C64};
use crate::transmon::TransmonSpectrum;
use crate::units::TWO_PI;

/// Pure qubit state `c0|0⟩ + c1|1⟩`.
pub type QubitState = [C64; 2];

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-8;
const NEGATIVITY_TOL: f64 = -1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    rho: CMat,
}

impl DensityState {
    pub fn new(rho: CMat) -> Result<Self> {
        if rho.nrows() != rho.ncols() || rho.nrows() < 2 {
            return Err(Error::InvalidState("density matrix must be square with at least two levels".into()));
        }
        let herm = hermiticity_error(&rho);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:.3e})")));
        }
        let tr = rho.trace();
        if (tr - c(1.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let state = Self { rho };
        let min = state.min_eigenvalue()?;
        if min < NEGATIVITY_TOL {
            return Err(Error::InvalidState(format!("eigenvalue {min:.3e} below {NEGATIVITY_TOL:e}")));
        }
        Ok(state)
    }

    /// `|ψ⟩⟨ψ|` for a normalized vector.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(psi);
        Self::new(&v * v.adjoint())
    }

    /// Qubit state embedded in the two lowest of `n_levels` levels.
    pub fn from_qubit(psi: &QubitState, n_levels: usize) -> Result<Self> {
        let mut v = vec![c(0.0); n_levels];
        v[..2].copy_from_slice(psi);
        Self::pure(&v)
    }

    pub fn ground(n_levels: usize) -> Result<Self> {
        Self::from_qubit(&[c(1.0), c(0.0)], n_levels)
    }

    pub fn rho(&self) -> &CMat {
        &self.rho
    }

    pub fn into_inner(self) -> CMat {
        self.rho
    }

    pub fn n_levels(&self) -> usize {
        self.rho.nrows()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = hermitian_eigen(&self.rho)?;
        Ok(vals.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn population(&self, level: usize) -> f64 {
        self.rho[(level, level)].re
    }
}

/// `⟨ψ|ρ|ψ⟩` on the qubit block. Population outside it counts as lost.
pub fn state_fidelity(rho: &DensityState, psi: &QubitState) -> f64 {
    qubit_overlap(rho.rho(), psi).clamp(0.0, 1.0)
}

fn qubit_overlap(rho: &CMat, psi: &QubitState) -> f64 {
    let mut acc = c(0.0);
    for i in 0..2 {
        for j in 0..2 {
            acc += psi[i].conj() * rho[(i, j)] * psi[j];
        }
    }
    acc.re
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    Rotating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Fast path for pulse-free programs, driven integrator otherwise.
    #[default]
    Auto,
    /// Always use the driven integrator.
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationOptions {
    /// Node spacing of the driven integrator, ns. Steps are `2·dt`.
    pub dt: f64,
    /// Step of the idle fast path, ns.
    pub idle_dt: f64,
    /// Micro-step of the pulse propagator, ns.
    pub pulse_dt: f64,
    /// Optional truncation of the bath memory, ns.
    pub memory_cutoff: Option<f64>,
    pub frame: Frame,
    /// Times at which the state is returned. Empty means the program end.
    pub store_instants: Vec<f64>,
    pub integrator: Integrator,
    /// Largest accepted change of the trace.
    pub trace_tolerance: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            dt: 0.1,
            idle_dt: 1.0,
            pulse_dt: 0.01,
            memory_cutoff: None,
            frame: Frame::Rotating,
            store_instants: Vec::new(),
            integrator: Integrator::Auto,
            trace_tolerance: 1e-5,
        }
    }
}

impl PropagationOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.dt, self.idle_dt, self.pulse_dt, self.trace_tolerance].iter().all(|v| *v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::Schedule("step sizes and trace tolerance must be positive".into()));
        }
        if let Some(cut) = self.memory_cutoff {
            if !(cut > 0.0) {
                return Err(Error::Schedule("memory cutoff must be positive".into()));
            }
        }
        if self.store_instants.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Schedule("stored instants must be non-negative".into()));
        }
        Ok(())
    }
}

/// Two Ohmic channels and a fluctuator ensemble. Missing parts are off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridNoiseModel {
    pub x: Option<OhmicBathSpec>,
    pub z: Option<OhmicBathSpec>,
    pub fluctuators: Option<FluctuatorEnsembleSpec>,
    /// Draw new switching rates for every trajectory. When false the rates
    /// come from the ensemble seed and only the histories are redrawn.
    #[serde(default = "yes")]
    pub redraw_rates: bool,
}

fn yes() -> bool {
    true
}

impl HybridNoiseModel {
    pub fn noiseless() -> Self {
        Self { x: None, z: None, fluctuators: None, redraw_rates: true }
    }

    fn active_fluctuators(&self) -> Option<&FluctuatorEnsembleSpec> {
        self.fluctuators.as_ref().filter(|f| f.count > 0 && f.b != 0.0)
    }

    /// Fluctuator realization of trajectory `index`.
    pub fn realization(&self, duration: f64, base_seed: u64, index: usize) -> Result<Option<FluctuatorRealization>> {
        let Some(spec) = self.active_fluctuators() else {
            return Ok(None);
        };
        let seed = derive_seed(base_seed, index as u64);
        let real = if self.redraw_rates {
            sample_fluctuators(spec, duration, seed)?
        } else {
            let rates = sample_fluctuators(spec, duration, spec.seed)?.rates;
            resample_switching(&rates, spec.b, duration, seed)?
        };
        Ok(Some(real))
    }
}

/// Mean fidelity over trajectories at each stored instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCurve {
    pub instants: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Smallest eigenvalue of the trajectory-averaged state per instant.
    pub min_eigenvalue: Vec<f64>,
    pub n_trajectories: usize,
}

enum Kind {
    Idle(IdleEngine),
    Driven(DrivenEngine),
}

/// A program, noise model and options prepared for repeated runs.
pub struct Propagator {
    kind: Kind,
    d: usize,
    duration: f64,
    instants: Vec<f64>,
    record_steps: Vec<usize>,
    noise: HybridNoiseModel,
    trace_tolerance: f64,
}

fn record_steps(instants: &[f64], step: f64, n_steps: usize) -> Result<Vec<usize>> {
    instants
        .iter()
        .map(|&t| {
            let k = (t / step).round();
            if (k * step - t).abs() > 1e-6 * step {
                return Err(Error::Schedule(format!("stored instant {t} ns is not a multiple of the {step} ns step")));
            }
            if k as usize > n_steps {
                return Err(Error::OutOfRange { t, t_max: n_steps as f64 * step });
            }
            Ok(k as usize)
        })
        .collect()
}

fn instants_or_end(opts: &PropagationOptions, duration: f64) -> Vec<f64> {
    if opts.store_instants.is_empty() {
        vec![duration]
    } else {
        opts.store_instants.clone()
    }
}

impl Propagator {
    pub fn new(
        spectrum: &TransmonSpectrum,
        program: &PulseProgram,
        noise: &HybridNoiseModel,
        opts: &PropagationOptions,
    ) -> Result<Self> {
        opts.validate()?;
        let duration = program.duration();
        let ax = spectrum.charge_coupling_op();
        let az = spectrum.josephson_coupling_op();
        let idle = opts.integrator == Integrator::Auto && program.segments.iter().all(|s| matches!(s, Segment::Idle(_)));
        if idle {
            let n_steps = snap_steps(duration, opts.idle_dt)?;
            let mut kernels = Vec::new();
            for (bath, op) in [(noise.x, &ax), (noise.z, &az)] {
                if let Some(b) = bath {
                    kernels.push(IdleKernel::build(spectrum, op, &b, opts.idle_dt, n_steps, opts.memory_cutoff)?);
                }
            }
            return Self::idle(spectrum, &kernels, noise, opts, duration);
        }
        let timeline = Arc::new(Timeline::compile(spectrum, program, opts.dt, opts.pulse_dt)?);
        let mut kernels = Vec::new();
        for (bath, op) in [(noise.x, &ax), (noise.z, &az)] {
            if let Some(b) = bath {
                kernels.push(ChannelKernel::build(&timeline, op, &b, opts.memory_cutoff)?);
            }
        }
        Self::driven(timeline, kernels, spectrum, noise, opts)
    }

    /// Idle run from prebuilt kernels, which may be rescaled copies.
    pub fn idle(
        spectrum: &TransmonSpectrum,
        kernels: &[IdleKernel],
        noise: &HybridNoiseModel,
        opts: &PropagationOptions,
        duration: f64,
    ) -> Result<Self> {
        opts.validate()?;
        let n_steps = snap_steps(duration, opts.idle_dt)?;
        let engine = IdleEngine::new(spectrum, kernels, &spectrum.josephson_coupling_op(), opts.idle_dt, n_steps)?;
        let instants = instants_or_end(opts, duration);
        let record_steps = record_steps(&instants, opts.idle_dt, n_steps)?;
        Ok(Self {
            kind: Kind::Idle(engine),
            d: spectrum.n_levels(),
            duration,
            instants,
            record_steps,
            noise: noise.clone(),
            trace_tolerance: opts.trace_tolerance,
        })
    }

    /// Driven run from prebuilt channel kernels on `timeline`.
    pub fn driven(
        timeline: Arc<Timeline>,
        kernels: Vec<ChannelKernel>,
        spectrum: &TransmonSpectrum,
        noise: &HybridNoiseModel,
        opts: &PropagationOptions,
    ) -> Result<Self> {
        opts.validate()?;
        let duration = timeline.duration();
        let instants = instants_or_end(opts, duration);
        let engine = DrivenEngine::new(timeline, kernels, &spectrum.josephson_coupling_op());
        let record_steps = record_steps(&instants, engine.step_len(), engine.n_steps())?;
        Ok(Self {
            kind: Kind::Driven(engine),
            d: spectrum.n_levels(),
            duration,
            instants,
            record_steps,
            noise: noise.clone(),
            trace_tolerance: opts.trace_tolerance,
        })
    }

    pub fn instants(&self) -> &[f64] {
        &self.instants
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn n_levels(&self) -> usize {
        self.d
    }

    /// Propagates each input operator under each field. Returns, per field
    /// and input, the states at the stored instants. Inputs need not be
    /// states; the trace check compares against each input's own trace.
    pub fn propagate(&self, inputs: &[CMat], fields: &[Option<PiecewiseField>]) -> Vec<Result<Vec<Vec<CMat>>>> {
        let flat: Vec<Vec<C64>> = inputs.iter().map(to_row_major).collect();
        let traces: Vec<C64> = inputs.iter().map(|m| m.trace()).collect();
        let d = self.d;
        let tol = self.trace_tolerance;
        let check = move |_traj: usize, input: usize, t: f64, x: &[C64]| -> Result<()> {
            let tr: C64 = (0..d).map(|k| x[k * d + k]).sum();
            let drift = (tr - traces[input]).norm();
            if drift > tol || !drift.is_finite() {
                return Err(Error::TraceDrift { t, drift });
            }
            Ok(())
        };
        let raw = match &self.kind {
            Kind::Idle(e) => e.run(&flat, fields, &self.record_steps, &check),
            Kind::Driven(e) => e.run(&flat, fields, &self.record_steps, &check),
        };
        // Engines emit in sorted order; restore the requested order.
        let mut order: Vec<usize> = (0..self.record_steps.len()).collect();
        order.sort_by_key(|&i| self.record_steps[i]);
        raw.into_iter()
            .map(|r| {
                r.map(|per_input| {
                    per_input
                        .into_iter()
                        .map(|seq| {
                            let mut out = vec![CMat::zeros(d, d); seq.len()];
                            for (pos, v) in order.iter().zip(seq) {
                                out[*pos] = from_row_major(d, &v);
                            }
                            out
                        })
                        .collect()
                })
            })
            .collect()
    }

    /// Fidelity curves of `states`, each prepared ideally and compared with
    /// itself, averaged over `n_traj` fluctuator realizations.
    pub fn ensemble(&self, states: &[QubitState], n_traj: usize, base_seed: u64) -> Result<Vec<EnsembleCurve>> {
        if n_traj == 0 {
            return Err(Error::Schedule("need at least one trajectory".into()));
        }
        let pairs: Vec<(QubitState, QubitState)> = states.iter().map(|s| (*s, *s)).collect();
        self.ensemble_targets(&pairs, n_traj, base_seed)
    }

    /// Like [`Propagator::ensemble`] with separate `(initial, target)` pairs.
    pub fn ensemble_targets(
        &self,
        pairs: &[(QubitState, QubitState)],
        n_traj: usize,
        base_seed: u64,
    ) -> Result<Vec<EnsembleCurve>> {
        let d = self.d;
        let deterministic = self.noise.active_fluctuators().is_none();
        let n_run = if deterministic { 1 } else { n_traj };
        let fields: Vec<Option<PiecewiseField>> = (0..n_run)
            .into_par_iter()
            .map(|i| Ok(self.noise.realization(self.duration, base_seed, i)?.map(|r| r.field())))
            .collect::<Result<_>>()?;
        let basis = |i: usize, j: usize| {
            let mut m = CMat::zeros(d, d);
            m[(i, j)] = c(1.0);
            m
        };
        let fail = |i: usize, e: Error| Error::Trajectory {
            index: i,
            seed: derive_seed(base_seed, i as u64),
            source: Box::new(e),
        };
        // Idle populations never see the fluctuator phase.
        let shared_populations = matches!(self.kind, Kind::Idle(_)) && !deterministic;
        let runs: Vec<Vec<Vec<CMat>>> = if shared_populations {
            let pops = self.propagate(&[basis(0, 0), basis(1, 1)], &[None]).pop().expect("one run").map_err(|e| fail(0, e))?;
            self.propagate(&[basis(0, 1)], &fields)
                .into_iter()
                .enumerate()
                .map(|(i, r)| r.map(|mut c| vec![pops[0].clone(), pops[1].clone(), c.remove(0)]).map_err(|e| fail(i, e)))
                .collect::<Result<_>>()?
        } else {
            self.propagate(&[basis(0, 0), basis(1, 1), basis(0, 1)], &fields)
                .into_iter()
                .enumerate()
                .map(|(i, r)| r.map_err(|e| fail(i, e)))
                .collect::<Result<_>>()?
        };
        let n_inst = self.instants.len();
        let states = |run: &Vec<Vec<CMat>>, k: usize, psi: &QubitState| -> CMat {
            let e01 = &run[2][k];
            &run[0][k] * c(psi[0].norm_sqr())
                + &run[1][k] * c(psi[1].norm_sqr())
                + e01 * (psi[0] * psi[1].conj())
                + e01.adjoint() * (psi[0].conj() * psi[1])
        };
        pairs
            .iter()
            .map(|(init, target)| {
                let mut mean = vec![0.0; n_inst];
                let mut std_error = vec![0.0; n_inst];
                let mut min_eigenvalue = vec![0.0; n_inst];
                for k in 0..n_inst {
                    let mut avg = CMat::zeros(d, d);
                    let mut f = Vec::with_capacity(runs.len());
                    for run in &runs {
                        let rho = states(run, k, init);
                        f.push(qubit_overlap(&rho, target));
                        avg += rho;
                    }
                    let n = f.len() as f64;
                    let m = f.iter().sum::<f64>() / n;
                    mean[k] = m;
                    std_error[k] = if f.len() > 1 {
                        (f.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
                    } else {
                        0.0
                    };
                    avg /= c(n);
                    let avg = (&avg + avg.adjoint()) * c(0.5);
                    let (vals, _) = hermitian_eigen(&avg)?;
                    min_eigenvalue[k] = vals.iter().copied().fold(f64::INFINITY, f64::min);
                }
                Ok(EnsembleCurve { instants: self.instants.clone(), mean, std_error, min_eigenvalue, n_trajectories: n_traj })
            })
            .collect()
    }
}

fn snap_steps(duration: f64, step: f64) -> Result<usize> {
    let k = (duration / step).round();
    if (k * step - duration).abs() > 1e-6 * step {
        return Err(Error::Schedule(format!("duration {duration} ns is not a multiple of the {step} ns step")));
    }
    Ok(k as usize)
}

/// States of a single trajectory at `opts.store_instants` (or the end).
pub fn propagate_trajectory(
    rho0: &DensityState,
    program: &PulseProgram,
    spectrum: &TransmonSpectrum,
    noise: &HybridNoiseModel,
    fluct: Option<&FluctuatorRealization>,
    opts: &PropagationOptions,
) -> Result<Vec<DensityState>> {
    if rho0.n_levels() != spectrum.n_levels() {
        return Err(Error::InvalidState(format!(
            "state has {} levels, spectrum {}",
            rho0.n_levels(),
            spectrum.n_levels()
        )));
    }
    if let Some(f) = fluct {
        if f.t_max + 1e-9 < program.duration() {
            return Err(Error::OutOfRange { t: program.duration(), t_max: f.t_max });
        }
    }
    let prop = Propagator::new(spectrum, program, noise, opts)?;
    let field = fluct.filter(|f| f.b != 0.0).map(|f| f.field());
    let mut out = prop.propagate(std::slice::from_ref(rho0.rho()), &[field]);
    let states = out.pop().expect("one field")?.pop().expect("one input");
    states
        .into_iter()
        .map(|m| DensityState::new((&m + m.adjoint()) * c(0.5)))
        .collect()
}

/// Ensemble-averaged fidelity of `target` after `program` from `rho0`.
pub fn run_ensemble(
    rho0: &QubitState,
    target: &QubitState,
    program: &PulseProgram,
    spectrum: &TransmonSpectrum,
    noise: &HybridNoiseModel,
    opts: &PropagationOptions,
    n_traj: usize,
    base_seed: u64,
) -> Result<EnsembleCurve> {
    let prop = Propagator::new(spectrum, program, noise, opts)?;
    if n_traj == 0 {
        return Err(Error::Schedule("need at least one trajectory".into()));
    }
    Ok(prop.ensemble_targets(&[(*rho0, *target)], n_traj, base_seed)?.remove(0))
}

/// `Λ(t) = ∫_0^t C(τ)Ã(t, τ)dτ` for coupling `op` by trapezoid quadrature on
/// the timeline nodes, in the rotating-frame Schrödinger picture. `corr`
/// must be sampled with the timeline's node spacing from `τ = 0`.
pub fn lambda_operator_at(
    t: f64,
    op: &CMat,
    timeline: &Timeline,
    corr: &CorrelationGrid,
    memory_cutoff: Option<f64>,
) -> Result<CMat> {
    let d = timeline.dim();
    if op.nrows() != d {
        return Err(Error::Schedule(format!("coupling operator is not {d}×{d}")));
    }
    let node = timeline.step_node(t).or_else(|_| {
        let k = (t / timeline.delta()).round();
        if (k * timeline.delta() - t).abs() <= 1e-6 * timeline.delta() && (k as usize) < timeline.n_nodes() {
            Ok(k as usize)
        } else {
            Err(Error::OutOfRange { t, t_max: timeline.duration() })
        }
    })?;
    let h = timeline.delta();
    if corr.tau.len() < 2 || (corr.tau[1] - corr.tau[0] - h).abs() > 1e-9 * h || corr.tau[0] != 0.0 {
        return Err(Error::GridMismatch("correlation grid spacing must equal the node spacing".into()));
    }
    let mut last = node;
    if let Some(cut) = memory_cutoff {
        last = last.min((cut / h).floor() as usize);
    }
    if last >= corr.values.len() {
        return Err(Error::GridMismatch(format!(
            "correlation grid ends at {} ns, history needs {} ns",
            corr.tau.last().copied().unwrap_or(0.0),
            last as f64 * h
        )));
    }
    let wd = TWO_PI * timeline.drive_freq();
    let parts: Vec<(i32, CMat)> = harmonics(op).into_iter().map(|m| (m, harmonic_part(op, m))).collect();
    let ut = timeline.unitary(node);
    let mut acc = CMat::zeros(d, d);
    if last == 0 {
        return Ok(acc);
    }
    for j in 0..=last {
        let w = if j == 0 || j == last { 0.5 * h } else { h };
        let tau = j as f64 * h;
        let prop = &ut * timeline.unitary(node - j).adjoint();
        let mut a = CMat::zeros(d, d);
        for (m, part) in &parts {
            a += part * C64::from_polar(1.0, -(*m as f64) * wd * tau);
        }
        acc += (&prop * a * prop.adjoint()) * (corr.values[j] * w);
    }
    Ok(acc)
}
