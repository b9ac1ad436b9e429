//! Gaussian and DRAG drive envelopes, the rotating-frame drive Hamiltonian and
//! closed-system gate propagators.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, unitarity_error, unitary_step, CMat, I};
use crate::transmon::TransmonSpectrum;
use crate::units::TWO_PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Gaussian,
}

/// A single drive pulse on `[0, t_g]`. `amplitude` is in rad/ns so that the
/// area of the in-phase component times the qubit coupling is a rotation
/// angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub shape: Shape,
    pub t_g: f64,
    pub sigma: f64,
    pub amplitude: f64,
    pub drag_alpha: f64,
    /// Anharmonicity used by the DRAG quadrature, GHz.
    pub drag_eta: f64,
    /// Drive phase; 0 drives about x and π/2 about y.
    pub phase: f64,
    /// Drive frequency minus qubit frequency, GHz.
    pub detuning: f64,
}

impl Envelope {
    fn center(&self) -> f64 {
        0.5 * self.t_g
    }

    fn baseline(&self) -> f64 {
        let h = self.center();
        (-h * h / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Baseline-subtracted Gaussian of unit amplitude.
    fn unit_shape(&self, t: f64) -> f64 {
        if !(0.0..=self.t_g).contains(&t) {
            return 0.0;
        }
        let x = t - self.center();
        (-x * x / (2.0 * self.sigma * self.sigma)).exp() - self.baseline()
    }

    /// In-phase envelope `ε(t)`, rad/ns.
    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * self.unit_shape(t)
    }

    /// `dε/dt`, rad/ns².
    pub fn derivative(&self, t: f64) -> f64 {
        if !(0.0..=self.t_g).contains(&t) {
            return 0.0;
        }
        let x = t - self.center();
        -self.amplitude * x / (self.sigma * self.sigma) * (-x * x / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// DRAG-corrected envelope `ε + i·α·ε̇/(2π·η)`.
    pub fn complex_value(&self, t: f64) -> Complex64 {
        let quad = if self.drag_alpha != 0.0 {
            self.drag_alpha * self.derivative(t) / (TWO_PI * self.drag_eta)
        } else {
            0.0
        };
        Complex64::new(self.value(t), quad)
    }

    /// Complex drive amplitude including the drive phase.
    pub fn drive(&self, t: f64) -> Complex64 {
        self.complex_value(t) * Complex64::from_polar(1.0, self.phase)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude == 0.0
    }
}

const AREA_INTERVALS: usize = 20_000;

/// Composite Simpson area of `f` over `[0, t]`.
fn simpson(t: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = AREA_INTERVALS;
    let h = t / n as f64;
    let mut acc = f(0.0) + f(t);
    for j in 1..n {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(j as f64 * h);
    }
    acc * h / 3.0
}

/// Gaussian envelope whose area times `coupling` equals `angle`.
pub fn make_envelope(angle: f64, t_g: f64, sigma: f64, coupling: f64) -> Result<Envelope> {
    if !(t_g > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidPulse(format!("t_g = {t_g} and sigma = {sigma} must be positive")));
    }
    if !(angle >= 0.0) || !angle.is_finite() {
        return Err(Error::InvalidPulse(format!("rotation angle {angle} must be non-negative")));
    }
    if !(coupling > 0.0) {
        return Err(Error::InvalidPulse("coupling must be positive".into()));
    }
    let mut env = Envelope {
        shape: Shape::Gaussian,
        t_g,
        sigma,
        amplitude: 1.0,
        drag_alpha: 0.0,
        drag_eta: 1.0,
        phase: 0.0,
        detuning: 0.0,
    };
    let area = simpson(t_g, |t| env.unit_shape(t));
    env.amplitude = if angle == 0.0 { 0.0 } else { angle / (coupling * area) };
    Ok(env)
}

pub fn apply_drag(env: &Envelope, alpha: f64, eta_q: f64) -> Result<Envelope> {
    if !(eta_q > 0.0) {
        return Err(Error::InvalidPulse("anharmonicity must be positive".into()));
    }
    Ok(Envelope { drag_alpha: alpha, drag_eta: eta_q, ..*env })
}

/// Rotating-frame generator in rad/ns at time `t` within the pulse.
pub fn drive_hamiltonian_at(t: f64, spectrum: &TransmonSpectrum, env: &Envelope) -> CMat {
    let d = spectrum.n_levels();
    let drive_freq = spectrum.qubit_freq + env.detuning;
    let mut h = CMat::zeros(d, d);
    for k in 0..d {
        h[(k, k)] = c(TWO_PI * (spectrum.omega[k] - k as f64 * drive_freq));
    }
    let omega = env.drive(t);
    if omega != Complex64::new(0.0, 0.0) {
        for (k, g) in spectrum.couplings.iter().enumerate() {
            h[(k, k + 1)] = 0.5 * g * omega.conj();
            h[(k + 1, k)] = 0.5 * g * omega;
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct EnvelopeSpectrum {
    /// GHz, ascending and centred on zero.
    pub freqs: Vec<f64>,
    /// Normalized to a maximum of 1.
    pub magnitude: Vec<f64>,
}

impl EnvelopeSpectrum {
    /// Linear interpolation of the magnitude at `f`.
    pub fn magnitude_at(&self, f: f64) -> f64 {
        let i = self.freqs.partition_point(|&x| x < f);
        if i == 0 {
            return self.magnitude[0];
        }
        if i >= self.freqs.len() {
            return *self.magnitude.last().unwrap();
        }
        let (f0, f1) = (self.freqs[i - 1], self.freqs[i]);
        let w = (f - f0) / (f1 - f0);
        self.magnitude[i - 1] * (1.0 - w) + self.magnitude[i] * w
    }

    /// Half width at half maximum, GHz.
    pub fn half_width(&self) -> f64 {
        let peak = self
            .magnitude
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut j = peak;
        while j + 1 < self.magnitude.len() && self.magnitude[j + 1] >= 0.5 {
            j += 1;
        }
        if j + 1 >= self.magnitude.len() {
            return self.freqs[j] - self.freqs[peak];
        }
        let (m0, m1) = (self.magnitude[j], self.magnitude[j + 1]);
        let f = self.freqs[j] + (m0 - 0.5) / (m0 - m1) * (self.freqs[j + 1] - self.freqs[j]);
        f - self.freqs[peak]
    }
}

/// DFT magnitude of the sampled complex envelope, zero padded to at least
/// 8192 points.
pub fn envelope_spectrum(env: &Envelope, sample_rate: f64) -> Result<EnvelopeSpectrum> {
    if !(sample_rate > 0.0) {
        return Err(Error::InvalidPulse("sample rate must be positive".into()));
    }
    let dt = 1.0 / sample_rate;
    let n_samples = (env.t_g * sample_rate).round() as usize + 1;
    let samples: Vec<Complex64> = (0..n_samples).map(|j| env.drive(j as f64 * dt)).collect();
    sampled_spectrum(&samples, dt)
}

/// Normalized DFT magnitude of arbitrary drive samples spaced by `dt`.
pub fn sampled_spectrum(samples: &[Complex64], dt: f64) -> Result<EnvelopeSpectrum> {
    if samples.is_empty() || !(dt > 0.0) {
        return Err(Error::InvalidPulse("need samples and a positive spacing".into()));
    }
    let n = samples.len().max(8192).next_power_of_two() * 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..samples.len()].copy_from_slice(samples);
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let peak = buf.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let norm = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    // A drive e^{-iωt} convention maps forward DFT bin k to frequency -k/(n·dt).
    let mut pairs: Vec<(f64, f64)> = buf
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            (-kk / (n as f64 * dt), z.norm() * norm)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(EnvelopeSpectrum {
        freqs: pairs.iter().map(|p| p.0).collect(),
        magnitude: pairs.iter().map(|p| p.1).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    I,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Composition {
    Single,
    TwoHalves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub axis: Axis,
    pub angle: f64,
    pub composition: Composition,
    /// Frame updates: the first is applied between the halves, the second
    /// after the gate. Missing entries are zero.
    pub virtual_z: Vec<f64>,
}

impl GateSpec {
    pub fn x() -> Self {
        Self { axis: Axis::X, angle: std::f64::consts::PI, composition: Composition::TwoHalves, virtual_z: vec![] }
    }

    pub fn y() -> Self {
        Self { axis: Axis::Y, ..Self::x() }
    }

    pub fn identity() -> Self {
        Self { axis: Axis::I, angle: 0.0, composition: Composition::Single, virtual_z: vec![] }
    }

    fn phase(&self) -> f64 {
        match self.axis {
            Axis::Y => std::f64::consts::FRAC_PI_2,
            _ => 0.0,
        }
    }

    /// Ideal qubit unitary `exp(-i·angle·σ/2)`.
    pub fn ideal(&self) -> CMat {
        let (s, co) = (0.5 * self.angle).sin_cos();
        match self.axis {
            Axis::X => CMat::from_row_slice(2, 2, &[c(co), -I * s, -I * s, c(co)]),
            Axis::Y => CMat::from_row_slice(2, 2, &[c(co), c(-s), c(s), c(co)]),
            Axis::I => CMat::identity(2, 2),
        }
    }
}

/// Pulse parameters shared by all gates of a device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateCalibration {
    /// Duration of a full X or Y gate, ns.
    pub gate_time: f64,
    /// Each pulse uses `sigma = duration / sigma_ratio`.
    pub sigma_ratio: f64,
    pub drag_alpha: f64,
    /// Duration of an identity gate, ns.
    pub identity_time: f64,
    pub detuning: f64,
}

impl Default for GateCalibration {
    fn default() -> Self {
        Self { gate_time: 70.0, sigma_ratio: 6.0, drag_alpha: 1.0, identity_time: 35.0, detuning: 0.0 }
    }
}

/// One element of a gate: a shaped pulse or an instantaneous frame update.
#[derive(Debug, Clone, PartialEq)]
pub enum GateStep {
    Pulse(Envelope),
    Idle(f64),
    FrameZ(f64),
}

impl GateCalibration {
    pub fn duration(&self, gate: &GateSpec) -> f64 {
        match gate.axis {
            Axis::I => self.identity_time,
            _ => self.gate_time,
        }
    }

    fn pulse(&self, angle: f64, duration: f64, phase: f64, spectrum: &TransmonSpectrum) -> Result<Envelope> {
        let env = make_envelope(angle, duration, duration / self.sigma_ratio, spectrum.couplings[0])?;
        let env = apply_drag(&env, self.drag_alpha, spectrum.anharmonicity)?;
        Ok(Envelope { phase, detuning: self.detuning, ..env })
    }

    /// Decomposes a gate into timed steps.
    pub fn steps(&self, gate: &GateSpec, spectrum: &TransmonSpectrum) -> Result<Vec<GateStep>> {
        let vz = |i: usize| gate.virtual_z.get(i).copied().unwrap_or(0.0);
        let mut steps = Vec::new();
        match (gate.axis, gate.composition) {
            (Axis::I, _) => steps.push(GateStep::Idle(self.identity_time)),
            (_, Composition::Single) => {
                steps.push(GateStep::Pulse(self.pulse(gate.angle, self.gate_time, gate.phase(), spectrum)?));
            }
            (_, Composition::TwoHalves) => {
                let half = self.pulse(0.5 * gate.angle, 0.5 * self.gate_time, gate.phase(), spectrum)?;
                steps.push(GateStep::Pulse(half));
                if vz(0) != 0.0 {
                    steps.push(GateStep::FrameZ(vz(0)));
                }
                steps.push(GateStep::Pulse(half));
            }
        }
        if vz(1) != 0.0 {
            steps.push(GateStep::FrameZ(vz(1)));
        }
        Ok(steps)
    }
}

/// `diag(e^{ikθ})`, the multi-level frame update for a z rotation by `theta`.
pub fn frame_z(d: usize, theta: f64) -> CMat {
    CMat::from_fn(d, d, |r, col| if r == col { Complex64::from_polar(1.0, r as f64 * theta) } else { c(0.0) })
}

/// Propagator of one pulse by midpoint exponentials with step at most `dt`.
pub fn pulse_propagator(spectrum: &TransmonSpectrum, env: &Envelope, dt: f64) -> Result<CMat> {
    let n = (env.t_g / dt).ceil().max(1.0) as usize;
    let h = env.t_g / n as f64;
    let d = spectrum.n_levels();
    let mut u = CMat::identity(d, d);
    for j in 0..n {
        let hm = drive_hamiltonian_at((j as f64 + 0.5) * h, spectrum, env);
        u = unitary_step(&hm, h)? * u;
    }
    Ok(u)
}

/// Free rotating-frame propagator over `duration`.
pub fn idle_propagator(spectrum: &TransmonSpectrum, detuning: f64, duration: f64) -> CMat {
    let d = spectrum.n_levels();
    let f_d = spectrum.qubit_freq + detuning;
    CMat::from_fn(d, d, |r, col| {
        if r == col {
            Complex64::from_polar(1.0, -TWO_PI * (spectrum.omega[r] - r as f64 * f_d) * duration)
        } else {
            c(0.0)
        }
    })
}

/// Samples `U(j·spacing)` of one pulse for `j = 0..=t_g/spacing`, integrating
/// with micro-steps of at most `dt`. `t_g` must be a multiple of `spacing`.
pub fn pulse_propagator_samples(
    spectrum: &TransmonSpectrum,
    env: &Envelope,
    spacing: f64,
    dt: f64,
) -> Result<Vec<CMat>> {
    let n_nodes = (env.t_g / spacing).round() as usize;
    if n_nodes == 0 || (n_nodes as f64 * spacing - env.t_g).abs() > 1e-9 * env.t_g.max(1.0) {
        return Err(Error::InvalidPulse(format!(
            "pulse length {} ns is not a multiple of the node spacing {spacing} ns",
            env.t_g
        )));
    }
    let sub = (spacing / dt).ceil().max(1.0) as usize;
    let h = spacing / sub as f64;
    let d = spectrum.n_levels();
    let mut u = CMat::identity(d, d);
    let mut out = Vec::with_capacity(n_nodes + 1);
    out.push(u.clone());
    for j in 0..n_nodes {
        for s in 0..sub {
            let t = j as f64 * spacing + (s as f64 + 0.5) * h;
            u = unitary_step(&drive_hamiltonian_at(t, spectrum, env), h)? * u;
        }
        out.push(u.clone());
    }
    Ok(out)
}

/// Closed-system propagator of a gate on the full truncated space.
pub fn simulate_gate(
    gate: &GateSpec,
    spectrum: &TransmonSpectrum,
    cal: &GateCalibration,
    dt: f64,
) -> Result<CMat> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::InvalidPulse(format!("micro-step {dt} ns must lie in (0, 0.1]")));
    }
    let d = spectrum.n_levels();
    let mut u = CMat::identity(d, d);
    for step in cal.steps(gate, spectrum)? {
        let s = match step {
            GateStep::Pulse(env) => pulse_propagator(spectrum, &env, dt)?,
            GateStep::Idle(t) => idle_propagator(spectrum, cal.detuning, t),
            GateStep::FrameZ(theta) => frame_z(d, theta),
        };
        u = s * u;
    }
    let dev = unitarity_error(&u);
    if dev > 1e-10 {
        return Err(Error::NonUnitary(dev));
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateMetrics {
    pub fidelity: f64,
    pub leakage: f64,
    pub phase_error: f64,
}

impl GateMetrics {
    pub fn infidelity(&self) -> f64 {
        1.0 - self.fidelity
    }
}

/// The six qubit polar states `|0⟩, |1⟩, |±⟩, |±i⟩`.
pub fn polar_states() -> [[Complex64; 2]; 6] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        [c(1.0), c(0.0)],
        [c(0.0), c(1.0)],
        [c(s), c(s)],
        [c(s), c(-s)],
        [c(s), I * s],
        [c(s), -I * s],
    ]
}

fn six_state_fidelity(actual: &CMat, ideal: &CMat) -> (f64, f64) {
    let mut fid = 0.0;
    let mut kept = 0.0;
    for psi in polar_states() {
        let d = actual.nrows();
        let mut out = vec![c(0.0); d];
        for r in 0..d {
            out[r] = actual[(r, 0)] * psi[0] + actual[(r, 1)] * psi[1];
        }
        let target = [ideal[(0, 0)] * psi[0] + ideal[(0, 1)] * psi[1], ideal[(1, 0)] * psi[0] + ideal[(1, 1)] * psi[1]];
        let overlap = target[0].conj() * out[0] + target[1].conj() * out[1];
        fid += overlap.norm_sqr();
        kept += out[0].norm_sqr() + out[1].norm_sqr();
    }
    (fid / 6.0, kept / 6.0)
}

pub fn gate_metrics(propagator: &CMat, ideal: &CMat) -> Result<GateMetrics> {
    if propagator.nrows() < 2 || ideal.nrows() != 2 || ideal.ncols() != 2 {
        return Err(Error::InvalidPulse("need a propagator of at least two levels and a 2×2 target".into()));
    }
    let (fidelity, kept) = six_state_fidelity(propagator, ideal);
    let block = propagator.view((0, 0), (2, 2)).into_owned();
    // Closest unitary to the projected block, from its SVD.
    let svd = block.svd(true, true);
    let phase_error = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => 1.0 - six_state_fidelity(&(u * v_t), ideal).0,
        _ => return Err(Error::InvalidPulse("SVD of the qubit block failed".into())),
    };
    Ok(GateMetrics { fidelity, leakage: (1.0 - kept).max(0.0), phase_error })
}
