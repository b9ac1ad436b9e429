//! Memory kernels of the second-order time-convolutionless generator.
//!
//! A bath with correlation `C(s)` enters through integrals of the form
//! `∫_0^t C(s)e^{-iΩs}X(t-s)ds`. They are evaluated by product integration:
//! `X` is interpolated linearly between nodes and the kernel is integrated
//! exactly on each cell, with the cell weights computed from the spectral
//! density through an aliased FFT.

use rustfft::FftPlanner;

use crate::bath::OhmicBathSpec;
use crate::error::{Error, Result};
use crate::linalg::{c, CMat, C64, I};
use crate::units::TWO_PI;

const MAX_WEIGHT_FFT: usize = 1 << 23;
/// Spectral support is cut where `e^{-|ω|/ω_c}` falls below `e^{-36}`.
const BAND_CUTOFFS: f64 = 36.0;

/// `(∫_0^1 e^{-ixu}(1-u)du, ∫_0^1 e^{-ixu}u du)`.
pub(crate) fn linear_moments(x: f64) -> (C64, C64) {
    if x.abs() < 0.5 {
        let mut term = c(1.0);
        let (mut r, mut l) = (c(0.0), c(0.0));
        for n in 0..24 {
            let nf = n as f64;
            r += term / ((nf + 1.0) * (nf + 2.0));
            l += term / (nf + 2.0);
            term *= -I * x / (nf + 1.0);
        }
        (r, l)
    } else {
        let ix = I * x;
        let e = (-ix).exp();
        let e0 = (c(1.0) - e) / ix;
        let l = (e0 - e) / ix;
        (e0 - l, l)
    }
}

/// Cell weights of `C(s)e^{-iΩs}` on a uniform grid.
#[derive(Debug, Clone)]
pub struct CellWeights {
    pub delta: f64,
    /// `∫_{jδ}^{(j+1)δ} C(s)e^{-iΩs}(1-u)ds` with `u = s/δ - j`.
    pub alpha: Vec<C64>,
    /// Same with weight `u`.
    pub beta: Vec<C64>,
}

impl CellWeights {
    /// Box weights `α_j + β_j`.
    pub fn boxes(&self) -> Vec<C64> {
        self.alpha.iter().zip(&self.beta).map(|(a, b)| a + b).collect()
    }

    /// Zeroes every cell starting at or beyond `cutoff`.
    pub fn truncate(&mut self, cutoff: f64) {
        let keep = ((cutoff / self.delta).ceil() as usize).min(self.alpha.len());
        for w in self.alpha[keep..].iter_mut().chain(self.beta[keep..].iter_mut()) {
            *w = c(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in self.alpha.iter_mut().chain(self.beta.iter_mut()) {
            *w *= factor;
        }
    }
}

/// Weights for cells `j = 0..n` of `C(s)e^{-iΩs}` with `shift = Ω` in rad/ns.
///
/// With `C(s) = (1/2π)∫γ(ω)e^{-iωs}dω` each weight is a frequency integral of
/// `γ(ν-Ω)` against the cell moment functions at `νδ`. Sampling `ν` with
/// period `2π/(Mδ)` and folding aliases of period `2π/δ` turns all `n`
/// integrals into one length-`M` FFT. The period `Mδ` is kept at least four
/// times the grid span so the implied periodic summation in time stays far
/// from the cells in use.
pub fn cell_weights(spec: &OhmicBathSpec, shift: f64, delta: f64, n: usize) -> Result<CellWeights> {
    spec.validate()?;
    if !(delta > 0.0) || n == 0 {
        return Err(Error::Quadrature("need a positive cell width and at least one cell".into()));
    }
    let wc = TWO_PI * spec.omega_c;
    let span = (4.0 * n as f64 * delta).max(50.0 * TWO_PI / wc.min(TWO_PI * spec.temperature));
    let m = ((span / delta).ceil() as usize).next_power_of_two().max(4096);
    if m > MAX_WEIGHT_FFT {
        return Err(Error::Quadrature(format!(
            "weight FFT of {m} points needed for {n} cells of {delta} ns; limit {MAX_WEIGHT_FFT}"
        )));
    }
    let dnu = TWO_PI / (m as f64 * delta);
    let wide = TWO_PI / delta;
    let band = BAND_CUTOFFS * wc;
    let mut fa = vec![c(0.0); m];
    let mut fb = vec![c(0.0); m];
    for k in 0..m {
        let nu0 = k as f64 * dnu;
        let p_lo = ((shift - band - nu0) / wide).ceil() as i64;
        let p_hi = ((shift + band - nu0) / wide).floor() as i64;
        let (mut sa, mut sb) = (c(0.0), c(0.0));
        for p in p_lo..=p_hi {
            let nu = nu0 + p as f64 * wide;
            let g = spec.spectral_density(nu - shift);
            if g == 0.0 {
                continue;
            }
            let (r, l) = linear_moments(nu * delta);
            sa += r * g;
            sb += l * g;
        }
        fa[k] = sa;
        fb[k] = sb;
    }
    let fft = FftPlanner::new().plan_fft_forward(m);
    fft.process(&mut fa);
    fft.process(&mut fb);
    let scale = 1.0 / m as f64;
    Ok(CellWeights {
        delta,
        alpha: fa[..n].iter().map(|z| z * scale).collect(),
        beta: fb[..n].iter().map(|z| z * scale).collect(),
    })
}

/// `Γ(Ω, t) = ∫_0^t C(s)e^{-iΩs}ds` at `t = j·delta` for `j = 0..=n`.
pub fn cumulative_kernel(spec: &OhmicBathSpec, shift: f64, delta: f64, n: usize) -> Result<Vec<C64>> {
    let w = cell_weights(spec, shift, delta, n)?;
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = c(0.0);
    out.push(acc);
    for b in w.boxes() {
        acc += b;
        out.push(acc);
    }
    Ok(out)
}

/// Causal product-integration convolution
/// `K[n] = Σ_{j<n} α_j·x⁻[n-j] + β_j·x⁺[n-j-1]` for `n = 0..len`, where
/// `x⁻` and `x⁺` are the left and right limits of a scalar sequence.
pub struct ConvolutionPlan {
    len: usize,
    size: usize,
    wa: Vec<C64>,
    wb: Vec<C64>,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl ConvolutionPlan {
    pub fn new(w: &CellWeights, len: usize) -> Self {
        let size = (2 * len).next_power_of_two().max(16);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let mut wa = padded(&w.alpha, 0, len.min(w.alpha.len()), size);
        let mut wb = padded(&w.beta, 0, len.min(w.beta.len()), size);
        fwd.process(&mut wa);
        fwd.process(&mut wb);
        Self { len, size, wa, wb, fwd, inv }
    }

    pub fn apply(&self, left: &[C64], right: &[C64]) -> Vec<C64> {
        assert!(left.len() == self.len && right.len() == self.len);
        // x⁻[0] never enters; x⁺ is delayed by one node.
        let mut xa = padded(left, 0, self.len, self.size);
        xa[0] = c(0.0);
        let mut xb = padded(right, 1, self.len - 1, self.size);
        self.fwd.process(&mut xa);
        self.fwd.process(&mut xb);
        for k in 0..self.size {
            xa[k] = self.wa[k] * xa[k] + self.wb[k] * xb[k];
        }
        self.inv.process(&mut xa);
        let s = 1.0 / self.size as f64;
        xa.truncate(self.len);
        for z in xa.iter_mut() {
            *z *= s;
        }
        xa
    }
}

fn padded(src: &[C64], offset: usize, take: usize, size: usize) -> Vec<C64> {
    let mut v = vec![c(0.0); size];
    v[offset..offset + take].copy_from_slice(&src[..take]);
    v
}

/// Matrix entries of `op` whose row minus column equals `m`.
pub fn harmonic_part(op: &CMat, m: i32) -> CMat {
    let d = op.nrows();
    CMat::from_fn(d, d, |r, col| if r as i32 - col as i32 == m { op[(r, col)] } else { c(0.0) })
}

/// Harmonics present in `op`, in ascending order.
pub fn harmonics(op: &CMat) -> Vec<i32> {
    let d = op.nrows() as i32;
    let scale = op.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    (-(d - 1)..d)
        .filter(|&m| {
            let part = harmonic_part(op, m);
            part.iter().any(|z| z.norm() > 1e-13 * scale)
        })
        .collect()
}
