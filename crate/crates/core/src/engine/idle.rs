//! Fast path for programs without pulses.
//!
//! Without drive the memory kernel of entry `(k, l)` is `A_kl·Γ(Ω_kl, t)`
//! with `Ω_kl` the transition frequency, and the rotating-wave generator
//! keeps every coherence order `k - l` separate. Each step exponentiates
//! the generator at the step midpoint block by block. Fluctuator phases are
//! split symmetrically around the block step.

use std::sync::Arc;

use rayon::prelude::*;

use super::generator::{self, Dissipator};
use super::kernel::{cell_weights, harmonic_part, harmonics};
use crate::bath::{OhmicBathSpec, PiecewiseField};
use crate::error::{Error, Result};
use crate::linalg::{to_row_major, CMat, C64};
use crate::transmon::TransmonSpectrum;
use crate::units::TWO_PI;

/// `Γ(Ω_kl, t)` tables of one bath channel at step midpoints.
#[derive(Debug, Clone)]
pub struct IdleKernel {
    d: usize,
    dt: f64,
    n_steps: usize,
    parts: Vec<CMat>,
    pairs: Vec<(usize, usize)>,
    gamma: Arc<Vec<Vec<C64>>>,
    scale: f64,
}

impl IdleKernel {
    pub fn build(
        spectrum: &TransmonSpectrum,
        op: &CMat,
        bath: &OhmicBathSpec,
        dt: f64,
        n_steps: usize,
        memory_cutoff: Option<f64>,
    ) -> Result<Self> {
        let d = spectrum.n_levels();
        if op.nrows() != d {
            return Err(Error::Schedule(format!("coupling operator is not {d}×{d}")));
        }
        let parts: Vec<CMat> = harmonics(op).into_iter().map(|m| harmonic_part(op, m)).collect();
        let scale = op.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        let pairs: Vec<(usize, usize)> = (0..d)
            .flat_map(|k| (0..d).map(move |l| (k, l)))
            .filter(|&(k, l)| op[(k, l)].norm() > 1e-13 * scale)
            .collect();
        let half = 0.5 * dt;
        let gamma: Vec<Vec<C64>> = pairs
            .par_iter()
            .map(|&(k, l)| -> Result<Vec<C64>> {
                let omega = TWO_PI * (spectrum.omega[k] - spectrum.omega[l]);
                let mut w = cell_weights(bath, omega, half, (2 * n_steps).max(1))?;
                if let Some(cut) = memory_cutoff {
                    w.truncate(cut);
                }
                let mut acc = C64::new(0.0, 0.0);
                let mut mids = Vec::with_capacity(n_steps);
                for (j, b) in w.boxes().into_iter().enumerate().take(2 * n_steps) {
                    acc += b;
                    if j % 2 == 0 {
                        mids.push(acc);
                    }
                }
                Ok(mids)
            })
            .collect::<Result<_>>()?;
        Ok(Self { d, dt, n_steps, parts, pairs, gamma: Arc::new(gamma), scale: 1.0 })
    }

    /// Same kernel for a bath whose `g²` is multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { scale: self.scale * factor, ..self.clone() }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// `Λ(t)` at the midpoint of step `n`, rotating-frame Schrödinger picture.
    pub fn lambda_mid(&self, n: usize) -> CMat {
        let mut lam = CMat::zeros(self.d, self.d);
        for (p, &(k, l)) in self.pairs.iter().enumerate() {
            let a: C64 = self.parts.iter().map(|x| x[(k, l)]).sum();
            lam[(k, l)] = a * self.gamma[p][n] * self.scale;
        }
        lam
    }

    fn add_to(&self, n: usize, acc: &mut Dissipator) {
        let lam = self.lambda_mid(n);
        for part in &self.parts {
            let x = to_row_major(part);
            let q: Vec<C64> =
                x.iter().zip(to_row_major(&lam)).map(|(a, b)| if a.norm() > 0.0 { b } else { C64::new(0.0, 0.0) }).collect();
            acc.add(&x, &q, 1.0);
        }
    }
}

/// Indices of row-major vec entries with coherence order `q = k - l`.
fn block_indices(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for q in -(d as i64 - 1)..(d as i64) {
        let idx: Vec<usize> = (0..d)
            .flat_map(|k| (0..d).map(move |l| (k, l)))
            .filter(|&(k, l)| k as i64 - l as i64 == q)
            .map(|(k, l)| k * d + l)
            .collect();
        out.push(idx);
    }
    out
}

/// Idle propagator built from one or more channel kernels.
#[derive(Debug, Clone)]
pub struct IdleEngine {
    d: usize,
    dt: f64,
    n_steps: usize,
    blocks: Vec<Vec<usize>>,
    /// Per step, per block, the row-major block propagator.
    steps: Arc<Vec<Vec<Vec<C64>>>>,
    fluct_diag: Vec<f64>,
}

impl IdleEngine {
    pub fn new(
        spectrum: &TransmonSpectrum,
        kernels: &[IdleKernel],
        fluct_op: &CMat,
        dt: f64,
        n_steps: usize,
    ) -> Result<Self> {
        let d = spectrum.n_levels();
        for k in kernels {
            if k.n_steps < n_steps || (k.dt - dt).abs() > 1e-12 * dt {
                return Err(Error::Schedule("idle kernel grid does not cover the run".into()));
            }
        }
        let energies: Vec<f64> = (0..d).map(|k| TWO_PI * (spectrum.omega[k] - k as f64 * spectrum.qubit_freq)).collect();
        let blocks = block_indices(d);
        let dd = d * d;
        let steps: Vec<Vec<Vec<C64>>> = (0..n_steps)
            .into_par_iter()
            .map(|n| {
                let mut acc = Dissipator::new(d);
                acc.add_diagonal_hamiltonian(&energies);
                for k in kernels {
                    k.add_to(n, &mut acc);
                }
                let g = acc.finish();
                blocks
                    .iter()
                    .map(|idx| {
                        let b = idx.len();
                        let m = CMat::from_fn(b, b, |r, c| g[idx[r] * dd + idx[c]] * dt);
                        to_row_major(&m.exp())
                    })
                    .collect()
            })
            .collect();
        let fluct_diag = (0..d).map(|k| fluct_op[(k, k)].re - fluct_op[(0, 0)].re).collect();
        Ok(Self { d, dt, n_steps, blocks, steps: Arc::new(steps), fluct_diag })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    fn phase(&self, x: &mut [C64], theta: f64) {
        let d = self.d;
        for k in 0..d {
            for l in 0..d {
                if k != l {
                    x[k * d + l] *= C64::from_polar(1.0, -theta * (self.fluct_diag[k] - self.fluct_diag[l]));
                }
            }
        }
    }

    fn block_step(&self, n: usize, x: &mut [C64]) {
        for (idx, op) in self.blocks.iter().zip(&self.steps[n]) {
            let inp: Vec<C64> = idx.iter().map(|&e| x[e]).collect();
            let mut y = vec![C64::new(0.0, 0.0); idx.len()];
            generator::apply(idx.len(), op, &inp, &mut y);
            for (&e, v) in idx.iter().zip(y) {
                x[e] = v;
            }
        }
    }

    /// Same contract as the driven engine's `run`.
    pub fn run(
        &self,
        inputs: &[Vec<C64>],
        fields: &[Option<PiecewiseField>],
        record_steps: &[usize],
        on_record: &(dyn Fn(usize, usize, f64, &[C64]) -> Result<()> + Sync),
    ) -> Vec<Result<Vec<Vec<Vec<C64>>>>> {
        let mut recs = record_steps.to_vec();
        recs.sort_unstable();
        let last = recs.last().copied().unwrap_or(0).min(self.n_steps);
        let dt = self.dt;
        fields
            .par_iter()
            .enumerate()
            .map(|(ti, field)| {
                let mut out = vec![Vec::with_capacity(recs.len()); inputs.len()];
                for (i, x0) in inputs.iter().enumerate() {
                    let mut x = x0.clone();
                    let mut ri = 0;
                    let emit = |x: &[C64], s: usize, ri: &mut usize, out: &mut Vec<Vec<Vec<C64>>>| -> Result<()> {
                        while *ri < recs.len() && recs[*ri] == s {
                            on_record(ti, i, s as f64 * dt, x)?;
                            out[i].push(x.to_vec());
                            *ri += 1;
                        }
                        Ok(())
                    };
                    emit(&x, 0, &mut ri, &mut out)?;
                    for n in 0..last {
                        let t0 = n as f64 * dt;
                        if let Some(f) = field {
                            self.phase(&mut x, TWO_PI * f.integral(t0, t0 + 0.5 * dt));
                        }
                        self.block_step(n, &mut x);
                        if let Some(f) = field {
                            self.phase(&mut x, TWO_PI * f.integral(t0 + 0.5 * dt, t0 + dt));
                        }
                        emit(&x, n + 1, &mut ri, &mut out)?;
                    }
                }
                Ok(out)
            })
            .collect()
    }
}
