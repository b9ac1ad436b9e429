//! Ohmic bath spectra, their correlation functions and random-telegraph
//! fluctuator ensembles.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::TWO_PI;

/// Ohmic bath with exponential cutoff. All fields are linear frequencies in
/// GHz except `eta` (GHz⁻²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhmicBathSpec {
    pub g: f64,
    pub omega_c: f64,
    pub temperature: f64,
    pub eta: f64,
}

impl OhmicBathSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.g >= 0.0
            && self.omega_c > 0.0
            && self.temperature > 0.0
            && self.eta > 0.0
            && [self.g, self.omega_c, self.temperature, self.eta].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBath(format!("{self:?}")))
        }
    }

    /// Spectral density `γ(ω)` in 1/ns at angular frequency `omega` (rad/ns).
    pub fn spectral_density(&self, omega: f64) -> f64 {
        let g = TWO_PI * self.g;
        let wc = TWO_PI * self.omega_c;
        let t = TWO_PI * self.temperature;
        let prefactor = TWO_PI * self.eta * g * g;
        let x = omega.abs() / t;
        if x < 1e-10 {
            return prefactor * t * (1.0 + omega / (2.0 * t)) * (-omega.abs() / wc).exp();
        }
        let thermal = -(-x).exp_m1();
        if omega > 0.0 {
            prefactor * omega * (-omega / wc).exp() / thermal
        } else {
            prefactor * omega.abs() * (-omega.abs() / wc - x).exp() / thermal
        }
    }

    /// Largest angular scale of the spectrum.
    pub fn upper_scale(&self) -> f64 {
        TWO_PI * self.omega_c.max(self.temperature)
    }

    /// Smallest angular scale of the spectrum.
    pub fn lower_scale(&self) -> f64 {
        TWO_PI * self.omega_c.min(self.temperature)
    }
}

/// `γ(2π·freq_ghz)`.
pub fn ohmic_spectrum_at(spec: &OhmicBathSpec, freq_ghz: f64) -> f64 {
    spec.spectral_density(TWO_PI * freq_ghz)
}

#[derive(Debug, Clone)]
pub struct CorrelationGrid {
    pub tau: Vec<f64>,
    /// `C(τ)` on `tau`.
    pub values: Vec<Complex64>,
    /// `C(-τ)` on `tau`.
    pub reversed: Vec<Complex64>,
    /// First grid time after which `|C| < 1e-6·C(0)` for the rest of the grid.
    pub memory_time: Option<f64>,
    pub omega_max: f64,
    pub n_omega: usize,
}

const MEMORY_THRESHOLD: f64 = 1e-6;
const MAX_OMEGA_POINTS: usize = 1 << 24;

/// `C(τ) = (1/2π)∫γ(ω)e^{-iωτ}dω` on `n_points` times in `[0, tau_max]` by
/// trapezoid quadrature.
pub fn correlation_function_grid(
    spec: &OhmicBathSpec,
    tau_max: f64,
    n_points: usize,
) -> Result<CorrelationGrid> {
    spec.validate()?;
    if !(tau_max > 0.0) || n_points < 2 {
        return Err(Error::InvalidBath("need tau_max > 0 and at least two points".into()));
    }
    let omega_max = 40.0 * spec.upper_scale();
    // Resolve the narrowest spectral feature and keep the quadrature period
    // well beyond tau_max.
    let h = (spec.lower_scale() / 50.0).min(std::f64::consts::PI / (2.0 * tau_max));
    let n_half = (omega_max / h).ceil() as usize;
    let n_omega = 2 * n_half + 1;
    if n_omega > MAX_OMEGA_POINTS {
        return Err(Error::Quadrature(format!(
            "{n_omega} frequency nodes needed (step {h:.3e} rad/ns over ±{omega_max:.3e}); limit {MAX_OMEGA_POINTS}"
        )));
    }
    let h = omega_max / n_half as f64;
    let weights: Vec<(f64, f64)> = (0..n_omega)
        .map(|j| {
            let w = -omega_max + j as f64 * h;
            let edge = if j == 0 || j == n_omega - 1 { 0.5 } else { 1.0 };
            (w, edge * h * spec.spectral_density(w) / TWO_PI)
        })
        .collect();

    let tau: Vec<f64> =
        (0..n_points).map(|k| tau_max * k as f64 / (n_points - 1) as f64).collect();
    // Euler-Maclaurin correction for the derivative jump of the cutoff
    // factor at ω = 0.
    let kink = -h * h / 12.0 * 2.0 * spec.spectral_density(0.0) / TWO_PI / (TWO_PI * spec.omega_c);
    let transform = |t: f64| {
        let mut acc = Complex64::new(kink, 0.0);
        for &(w, wt) in &weights {
            acc += Complex64::from_polar(wt, -w * t);
        }
        acc
    };
    let values: Vec<Complex64> = tau.iter().map(|&t| transform(t)).collect();
    let reversed: Vec<Complex64> = tau.iter().map(|&t| transform(-t)).collect();

    let c0 = values[0].re;
    let memory_time = values
        .iter()
        .rposition(|v| v.norm() >= MEMORY_THRESHOLD * c0)
        .and_then(|last| tau.get(last + 1).copied());
    Ok(CorrelationGrid { tau, values, reversed, memory_time, omega_max, n_omega })
}

/// Mixes a base seed with an index into an independent stream seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuatorEnsembleSpec {
    pub count: usize,
    /// Coupling of each fluctuator, GHz.
    pub b: f64,
    /// Switching rates are log-uniform in `[gamma_min, gamma_max]`, events/ns.
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub seed: u64,
}

impl FluctuatorEnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidBath("fluctuator count must be positive".into()));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min <= self.gamma_max && self.gamma_max.is_finite())
        {
            return Err(Error::InvalidBath(format!(
                "need 0 < gamma_min <= gamma_max, got [{}, {}]",
                self.gamma_min, self.gamma_max
            )));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidBath(format!("b = {} must be non-negative", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuatorRealization {
    pub b: f64,
    pub t_max: f64,
    pub rates: Vec<f64>,
    pub initial_signs: Vec<i8>,
    pub switch_times: Vec<Vec<f64>>,
}

pub fn sample_fluctuators(
    spec: &FluctuatorEnsembleSpec,
    t_max: f64,
    rng_seed: u64,
) -> Result<FluctuatorRealization> {
    spec.validate()?;
    if !(t_max > 0.0) {
        return Err(Error::InvalidBath("t_max must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (lo, hi) = (spec.gamma_min.ln(), spec.gamma_max.ln());
    let mut rates = Vec::with_capacity(spec.count);
    let mut initial_signs = Vec::with_capacity(spec.count);
    let mut switch_times = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let rate = if hi > lo { rng.gen_range(lo..hi).exp() } else { spec.gamma_min };
        let sign: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
        let mut times = Vec::new();
        let mut t = 0.0;
        loop {
            let u: f64 = rng.gen();
            t += -(1.0 - u).ln() / rate;
            if t > t_max {
                break;
            }
            times.push(t);
        }
        rates.push(rate);
        initial_signs.push(sign);
        switch_times.push(times);
    }
    Ok(FluctuatorRealization { b: spec.b, t_max, rates, initial_signs, switch_times })
}

/// New telegraph histories for fixed switching `rates`.
pub fn resample_switching(rates: &[f64], b: f64, t_max: f64, rng_seed: u64) -> Result<FluctuatorRealization> {
    if !(t_max > 0.0) || rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) || !b.is_finite() {
        return Err(Error::InvalidBath("need t_max > 0, finite b and positive rates".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut initial_signs = Vec::with_capacity(rates.len());
    let mut switch_times = Vec::with_capacity(rates.len());
    for &rate in rates {
        initial_signs.push(if rng.gen_bool(0.5) { 1 } else { -1 });
        let mut times = Vec::new();
        let mut t = 0.0;
        loop {
            let u: f64 = rng.gen();
            t += -(1.0 - u).ln() / rate;
            if t > t_max {
                break;
            }
            times.push(t);
        }
        switch_times.push(times);
    }
    Ok(FluctuatorRealization { b, t_max, rates: rates.to_vec(), initial_signs, switch_times })
}

impl FluctuatorRealization {
    /// Telegraph value `χ_k(t)` of a single fluctuator.
    pub fn sign_at(&self, k: usize, t: f64) -> i8 {
        let flips = self.switch_times[k].partition_point(|&s| s <= t);
        if flips % 2 == 0 {
            self.initial_signs[k]
        } else {
            -self.initial_signs[k]
        }
    }

    /// Total field as a piecewise-constant function of time.
    pub fn field(&self) -> PiecewiseField {
        let mut events: Vec<(f64, usize)> = self
            .switch_times
            .iter()
            .enumerate()
            .flat_map(|(k, ts)| ts.iter().map(move |&t| (t, k)))
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut signs: Vec<i8> = self.initial_signs.clone();
        let mut value: f64 = signs.iter().map(|&s| s as f64).sum::<f64>() * self.b;
        let mut times = vec![0.0];
        let mut values = vec![value];
        for (t, k) in events {
            signs[k] = -signs[k];
            value += 2.0 * self.b * signs[k] as f64;
            times.push(t);
            values.push(value);
        }
        PiecewiseField::new(times, values, self.t_max)
    }
}

pub fn fluctuator_value_at(real: &FluctuatorRealization, t: f64) -> Result<f64> {
    if !(0.0..=real.t_max).contains(&t) {
        return Err(Error::OutOfRange { t, t_max: real.t_max });
    }
    let sum: f64 = (0..real.rates.len()).map(|k| real.sign_at(k, t) as f64).sum();
    Ok(real.b * sum)
}

/// Right-continuous piecewise-constant signal on `[0, t_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseField {
    times: Vec<f64>,
    values: Vec<f64>,
    cumulative: Vec<f64>,
    t_max: f64,
}

impl PiecewiseField {
    pub fn new(times: Vec<f64>, values: Vec<f64>, t_max: f64) -> Self {
        let mut cumulative = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        for i in 0..times.len() {
            cumulative.push(acc);
            let end = times.get(i + 1).copied().unwrap_or(t_max);
            acc += values[i] * (end - times[i]);
        }
        Self { times, values, cumulative, t_max }
    }

    pub fn constant(value: f64, t_max: f64) -> Self {
        Self::new(vec![0.0], vec![value], t_max)
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= t).max(1) - 1;
        self.values[i]
    }

    /// `∫_0^t` of the field; times past `t_max` continue with the last value.
    pub fn primitive(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= t).max(1) - 1;
        self.cumulative[i] + self.values[i] * (t - self.times[i])
    }

    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        self.primitive(t1) - self.primitive(t0)
    }

    /// Constant pieces `(start, end, value)` covering `[t0, t1]`.
    pub fn pieces(&self, t0: f64, t1: f64) -> Vec<(f64, f64, f64)> {
        let first = self.times.partition_point(|&s| s <= t0).max(1) - 1;
        let mut out = Vec::new();
        let mut a = t0;
        for i in first..self.times.len() {
            let end = self.times.get(i + 1).copied().filter(|&e| e < t1).unwrap_or(t1);
            out.push((a, end, self.values[i]));
            if end >= t1 {
                break;
            }
            a = end;
        }
        out
    }

    /// True when no switch falls strictly inside `(t0, t1)`.
    pub fn is_constant_on(&self, t0: f64, t1: f64) -> bool {
        self.times.partition_point(|&s| s <= t0) == self.times.partition_point(|&s| s < t1)
    }
}

#[derive(Debug, Clone)]
pub struct PsdEstimate {
    /// Linear frequencies, GHz.
    pub freqs: Vec<f64>,
    /// One-sided power spectral density, GHz²/GHz.
    pub psd: Vec<f64>,
}

/// Hann-windowed periodogram of the summed fluctuator field averaged over
/// realizations, each with freshly drawn rates.
pub fn ensemble_psd_estimate(
    spec: &FluctuatorEnsembleSpec,
    n_realizations: usize,
) -> Result<PsdEstimate> {
    spec.validate()?;
    if n_realizations < 100 {
        return Err(Error::InvalidBath("need at least 100 realizations".into()));
    }
    // The record must resolve the slowest corner and the sampling the fastest.
    let dt = (0.25 / spec.gamma_max).clamp(1e-3, 50.0);
    let span = 20.0 / spec.gamma_min;
    let n = (span / dt).ceil().max(1024.0) as usize;
    let n = n.next_power_of_two().min(1 << 20);
    psd_with_sampling(spec, n_realizations, dt, n)
}

pub fn psd_with_sampling(
    spec: &FluctuatorEnsembleSpec,
    n_realizations: usize,
    dt: f64,
    n: usize,
) -> Result<PsdEstimate> {
    let t_max = dt * n as f64;
    let window: Vec<f64> = (0..n)
        .map(|j| 0.5 - 0.5 * (TWO_PI * j as f64 / n as f64).cos())
        .collect();
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let n_freq = n / 2 + 1;
    let mut acc = vec![0.0; n_freq];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..n_realizations {
        let real = sample_fluctuators(spec, t_max, derive_seed(spec.seed, r as u64))?;
        let field = real.field();
        // Bin averages suppress aliasing of the fast fluctuators.
        let mut prev = 0.0;
        for j in 0..n {
            let next = field.primitive((j + 1) as f64 * dt);
            buf[j] = Complex64::new(window[j] * (next - prev) / dt, 0.0);
            prev = next;
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let scale = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            *a += scale * dt * buf[k].norm_sqr() / w2;
        }
    }
    let freqs = (0..n_freq).map(|k| k as f64 / (n as f64 * dt)).collect();
    let psd = acc.into_iter().map(|a| a / n_realizations as f64).collect();
    Ok(PsdEstimate { freqs, psd })
}

impl PsdEstimate {
    /// Least-squares slope of `log psd` against `log f` over `[f_lo, f_hi]`,
    /// after averaging into logarithmic bins.
    pub fn loglog_slope(&self, f_lo: f64, f_hi: f64) -> Option<f64> {
        let n_bins = 20;
        let (llo, lhi) = (f_lo.ln(), f_hi.ln());
        let mut sums = vec![(0.0, 0.0, 0usize); n_bins];
        for (f, p) in self.freqs.iter().zip(&self.psd) {
            if *f < f_lo || *f > f_hi || *p <= 0.0 {
                continue;
            }
            let b = (((f.ln() - llo) / (lhi - llo)) * n_bins as f64) as usize;
            let s = &mut sums[b.min(n_bins - 1)];
            s.0 += f.ln();
            s.1 += p;
            s.2 += 1;
        }
        let pts: Vec<(f64, f64)> = sums
            .iter()
            .filter(|s| s.2 > 0)
            .map(|s| (s.0 / s.2 as f64, (s.1 / s.2 as f64).ln()))
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}
