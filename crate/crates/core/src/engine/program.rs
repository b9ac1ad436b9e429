//! Pulse programs and their compilation to a propagator timeline.

use crate::error::{Error, Result};
use crate::linalg::{from_row_major, matmul_into, reunitarize, to_row_major, CMat, C64};
use crate::pulse::{
    frame_z, pulse_propagator_samples, Envelope, GateCalibration, GateSpec, GateStep,
};
use crate::transmon::TransmonSpectrum;
use crate::units::TWO_PI;

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Pulse(Envelope),
    Idle(f64),
    /// Instantaneous unitary on the full truncated space.
    Instant(CMat),
}

/// A timed sequence of drive pulses, idles and instantaneous gates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PulseProgram {
    pub segments: Vec<Segment>,
}

impl PulseProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn idle(duration: f64) -> Self {
        Self { segments: vec![Segment::Idle(duration)] }
    }

    pub fn push(&mut self, segment: Segment) {
        match (&segment, self.segments.last_mut()) {
            (Segment::Idle(t), _) if *t == 0.0 => {}
            (Segment::Idle(t), Some(Segment::Idle(prev))) => *prev += t,
            _ => self.segments.push(segment),
        }
    }

    /// Appends the shaped pulses and frame updates of `gate`.
    pub fn push_gate(&mut self, gate: &GateSpec, cal: &GateCalibration, spectrum: &TransmonSpectrum) -> Result<()> {
        for step in cal.steps(gate, spectrum)? {
            match step {
                GateStep::Pulse(env) => self.push(Segment::Pulse(env)),
                GateStep::Idle(t) => self.push(Segment::Idle(t)),
                GateStep::FrameZ(theta) => self.push(Segment::Instant(frame_z(spectrum.n_levels(), theta))),
            }
        }
        Ok(())
    }

    pub fn append(&mut self, other: &PulseProgram) {
        for s in &other.segments {
            self.push(s.clone());
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Pulse(env) => env.t_g,
                Segment::Idle(t) => *t,
                Segment::Instant(_) => 0.0,
            })
            .sum()
    }

    /// True when the program only idles.
    pub fn is_idle(&self) -> bool {
        self.segments.iter().all(|s| matches!(s, Segment::Idle(_)))
    }

    pub fn pulse_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, Segment::Pulse(_))).count()
    }

    fn detuning(&self) -> Result<f64> {
        let mut det: Option<f64> = None;
        for s in &self.segments {
            if let Segment::Pulse(env) = s {
                match det {
                    None => det = Some(env.detuning),
                    Some(d) if (d - env.detuning).abs() > 1e-15 => {
                        return Err(Error::Schedule("pulses use different drive frequencies".into()))
                    }
                    _ => {}
                }
            }
        }
        Ok(det.unwrap_or(0.0))
    }
}

/// Rotating-frame system propagator `Ũ(t_i)` on a uniform node grid.
///
/// Stored values are right limits; nodes carrying an instantaneous gate also
/// keep the left limit.
#[derive(Debug, Clone)]
pub struct Timeline {
    d: usize,
    delta: f64,
    n_nodes: usize,
    /// Drive frequency in GHz.
    drive_freq: f64,
    /// Rotating-frame level energies, rad/ns.
    energies: Vec<f64>,
    u: Vec<C64>,
    jumps: Vec<(usize, Vec<C64>)>,
}

fn snap(t: f64, unit: f64, what: &str) -> Result<usize> {
    let k = (t / unit).round();
    if k < 0.0 || (k * unit - t).abs() > 1e-6 * unit {
        return Err(Error::Schedule(format!("{what} at {t} ns is not a multiple of {unit} ns")));
    }
    Ok(k as usize)
}

impl Timeline {
    /// Compiles `program` with node spacing `delta`. Segment boundaries must
    /// fall on even nodes so that integration steps of `2·delta` never
    /// straddle them. `pulse_dt` bounds the micro-steps inside pulses.
    pub fn compile(spectrum: &TransmonSpectrum, program: &PulseProgram, delta: f64, pulse_dt: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Schedule("node spacing must be positive".into()));
        }
        let d = spectrum.n_levels();
        let drive_freq = spectrum.qubit_freq + program.detuning()?;
        let energies: Vec<f64> =
            (0..d).map(|k| TWO_PI * (spectrum.omega[k] - k as f64 * drive_freq)).collect();
        let total_steps = snap(program.duration(), 2.0 * delta, "program end")?;
        let n_nodes = 2 * total_steps + 1;
        let mut u = Vec::with_capacity(n_nodes * d * d);
        u.extend(to_row_major(&CMat::identity(d, d)));
        let mut jumps = Vec::new();
        let mut node = 0usize;
        let mut cache: Vec<(Envelope, Vec<Vec<C64>>)> = Vec::new();
        let mut tmp = vec![C64::new(0.0, 0.0); d * d];
        for seg in &program.segments {
            // Keeps round-off in the running product from accumulating.
            reunitarize(d, &mut u[node * d * d..(node + 1) * d * d]);
            let base: Vec<C64> = u[node * d * d..(node + 1) * d * d].to_vec();
            match seg {
                Segment::Idle(t) => {
                    let steps = snap(*t, 2.0 * delta, "idle length")?;
                    for j in 1..=2 * steps {
                        let s = j as f64 * delta;
                        for r in 0..d {
                            let ph = C64::from_polar(1.0, -energies[r] * s);
                            for col in 0..d {
                                u.push(ph * base[r * d + col]);
                            }
                        }
                    }
                    node += 2 * steps;
                }
                Segment::Pulse(env) => {
                    if (env.detuning - (drive_freq - spectrum.qubit_freq)).abs() > 1e-15 {
                        return Err(Error::Schedule("pulse detuning differs from the program frame".into()));
                    }
                    let steps = snap(env.t_g, 2.0 * delta, "pulse length")?;
                    let idx = match cache.iter().position(|(e, _)| e == env) {
                        Some(i) => i,
                        None => {
                            let samples = pulse_propagator_samples(spectrum, env, delta, pulse_dt)?;
                            let mut flat: Vec<Vec<C64>> = samples.iter().map(to_row_major).collect();
                            flat.iter_mut().for_each(|m| reunitarize(d, m));
                            cache.push((*env, flat));
                            cache.len() - 1
                        }
                    };
                    let samples = &cache[idx].1;
                    for sample in samples.iter().take(2 * steps + 1).skip(1) {
                        matmul_into(d, sample, &base, &mut tmp);
                        u.extend_from_slice(&tmp);
                    }
                    node += 2 * steps;
                }
                Segment::Instant(g) => {
                    if g.nrows() != d || g.ncols() != d {
                        return Err(Error::Schedule(format!("instantaneous gate is not {d}×{d}")));
                    }
                    let gm = to_row_major(g);
                    matmul_into(d, &gm, &base, &mut tmp);
                    u[node * d * d..(node + 1) * d * d].copy_from_slice(&tmp);
                    match jumps.last_mut() {
                        Some((n, _)) if *n == node => {}
                        _ => jumps.push((node, base)),
                    }
                }
            }
        }
        debug_assert_eq!(u.len(), n_nodes * d * d);
        Ok(Self { d, delta, n_nodes, drive_freq, energies, u, jumps })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn duration(&self) -> f64 {
        (self.n_nodes - 1) as f64 * self.delta
    }

    pub fn drive_freq(&self) -> f64 {
        self.drive_freq
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Right limit `Ũ(t_i)`, row-major.
    pub fn u(&self, node: usize) -> &[C64] {
        let dd = self.d * self.d;
        &self.u[node * dd..(node + 1) * dd]
    }

    /// Left limit `Ũ(t_i⁻)`, row-major.
    pub fn u_left(&self, node: usize) -> &[C64] {
        match self.jumps.binary_search_by_key(&node, |(n, _)| *n) {
            Ok(i) => &self.jumps[i].1,
            Err(_) => self.u(node),
        }
    }

    pub fn jump_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.jumps.iter().map(|(n, _)| *n)
    }

    pub fn unitary(&self, node: usize) -> CMat {
        from_row_major(self.d, self.u(node))
    }

    /// Index of the node at time `t`, which must be an even node.
    pub fn step_node(&self, t: f64) -> Result<usize> {
        let k = snap(t, 2.0 * self.delta, "stored instant")?;
        if 2 * k >= self.n_nodes {
            return Err(Error::OutOfRange { t, t_max: self.duration() });
        }
        Ok(2 * k)
    }
}
