//! General propagation in the interaction picture of the driven system.
//!
//! With `B_m(t) = Ũ†(t)A_mŨ(t)` and `K_m(t) = ∫_0^t C(s)e^{-imω_d s}B_m(t-s)ds`
//! the rotating-wave Redfield generator is
//! `L(ρ) = -Σ_m ([B_m†, K_m ρ] + h.c.)`. One step of length `2δ` is an RK4
//! superoperator on nodes `t, t+δ, t+2δ`, shared by all trajectories.
//! Fluctuators add `-i[F(t)·B_z0(t), ρ]`, applied as half-step rotations
//! around the superoperator. Each rotation is the two-term Magnus
//! expansion of `F·B_z0` with `B_z0` interpolated quadratically through
//! the step's three nodes.

use std::sync::Arc;

use rayon::prelude::*;

use super::generator::{self, Dissipator};
use super::kernel::{cell_weights, harmonic_part, harmonics, ConvolutionPlan};
use super::program::Timeline;
use crate::bath::{OhmicBathSpec, PiecewiseField};
use crate::error::Result;
use crate::linalg::{from_row_major, hermitian_eigen, matmul_into, to_row_major, CMat, C64};
use crate::units::TWO_PI;

/// Memory kernels `K_m` of one bath channel on every timeline node.
#[derive(Debug, Clone)]
pub struct ChannelKernel {
    d: usize,
    harmonics: Vec<i32>,
    ops: Vec<Vec<C64>>,
    k: Vec<Arc<Vec<C64>>>,
    scale: f64,
}

fn sandwich(d: usize, u: &[C64], a: &[C64], tmp: &mut [C64], out: &mut [C64]) {
    // out = u†·a·u
    matmul_into(d, a, u, tmp);
    for r in 0..d {
        for col in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..d {
                acc += u[k * d + r].conj() * tmp[k * d + col];
            }
            out[r * d + col] = acc;
        }
    }
}

impl ChannelKernel {
    /// Entry `(r, c)` of `B_m` is written as `e^{i(E_r - E_c)t}·b_rc(t)` with
    /// `E` the rotating-frame energies. Only the envelope `b` is
    /// interpolated; the free rotation goes into the cell weights, so idle
    /// stretches are integrated exactly.
    pub fn build(
        timeline: &Timeline,
        op: &CMat,
        bath: &OhmicBathSpec,
        memory_cutoff: Option<f64>,
    ) -> Result<Self> {
        let d = timeline.dim();
        let dd = d * d;
        let n = timeline.n_nodes();
        let delta = timeline.delta();
        let wd = TWO_PI * timeline.drive_freq();
        let energies = timeline.energies().to_vec();
        let hs = harmonics(op);
        let jumps: Vec<usize> = timeline.jump_nodes().collect();
        let op_scale = op.iter().fold(0.0f64, |a, z| a.max(z.norm()));
        let mut ops = Vec::with_capacity(hs.len());
        let mut ks = Vec::with_capacity(hs.len());
        for &m in &hs {
            let a = to_row_major(&harmonic_part(op, m));
            let mut right: Vec<Vec<C64>> = vec![Vec::with_capacity(n); dd];
            let mut tmp = vec![C64::new(0.0, 0.0); dd];
            let mut b = vec![C64::new(0.0, 0.0); dd];
            for node in 0..n {
                sandwich(d, timeline.u(node), &a, &mut tmp, &mut b);
                for e in 0..dd {
                    right[e].push(b[e]);
                }
            }
            let mut left_at: Vec<(usize, Vec<C64>)> = Vec::with_capacity(jumps.len());
            for &node in &jumps {
                sandwich(d, timeline.u_left(node), &a, &mut tmp, &mut b);
                left_at.push((node, b.clone()));
            }
            let entries: Vec<usize> =
                (0..dd).filter(|&e| right[e].iter().any(|z| z.norm() > 1e-14 * op_scale)).collect();
            let per_entry: Vec<(usize, Vec<C64>)> = entries
                .par_iter()
                .map(|&e| -> Result<(usize, Vec<C64>)> {
                    let nu = energies[e / d] - energies[e % d];
                    let rot = |node: usize| C64::from_polar(1.0, nu * node as f64 * delta);
                    let env_r: Vec<C64> = right[e].iter().enumerate().map(|(j, z)| z * rot(j).conj()).collect();
                    let mut env_l = env_r.clone();
                    for (node, left) in &left_at {
                        env_l[*node] = left[e] * rot(*node).conj();
                    }
                    let mut w = cell_weights(bath, m as f64 * wd + nu, delta, (n - 1).max(1))?;
                    if let Some(cut) = memory_cutoff {
                        w.truncate(cut);
                    }
                    let mut k = ConvolutionPlan::new(&w, n).apply(&env_l, &env_r);
                    for (j, z) in k.iter_mut().enumerate() {
                        *z *= rot(j);
                    }
                    Ok((e, k))
                })
                .collect::<Result<_>>()?;
            let mut k = vec![C64::new(0.0, 0.0); n * dd];
            for (e, seq) in &per_entry {
                for node in 0..n {
                    k[node * dd + e] = seq[node];
                }
            }
            ops.push(a);
            ks.push(Arc::new(k));
        }
        Ok(Self { d, harmonics: hs, ops, k: ks, scale: 1.0 })
    }

    /// Same kernel for a bath whose `g²` is multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { scale: self.scale * factor, ..self.clone() }
    }

    pub fn harmonics(&self) -> &[i32] {
        &self.harmonics
    }

    /// Interaction-picture `K_m` at `node` for harmonic index `h`.
    fn k_at(&self, h: usize, node: usize) -> &[C64] {
        let dd = self.d * self.d;
        &self.k[h][node * dd..(node + 1) * dd]
    }

    /// Rotating-frame Schrödinger-picture `Λ(t_node) = Σ_m Ũ K_m Ũ†`.
    pub fn lambda_at(&self, timeline: &Timeline, node: usize) -> CMat {
        let u = timeline.unitary(node);
        let mut k = CMat::zeros(self.d, self.d);
        for h in 0..self.harmonics.len() {
            k += from_row_major(self.d, self.k_at(h, node));
        }
        &u * k * u.adjoint() * C64::new(self.scale, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

/// Driven-system integrator over a compiled timeline.
#[derive(Debug, Clone)]
pub struct DrivenEngine {
    timeline: Arc<Timeline>,
    kernels: Vec<ChannelKernel>,
    /// Diagonal of the rotating-wave part of the fluctuator coupling,
    /// relative to the ground level.
    fluct_diag: Vec<f64>,
    block_steps: usize,
}

impl DrivenEngine {
    pub fn new(timeline: Arc<Timeline>, kernels: Vec<ChannelKernel>, fluct_op: &CMat) -> Self {
        let d = timeline.dim();
        let fluct_diag = (0..d).map(|k| fluct_op[(k, k)].re - fluct_op[(0, 0)].re).collect();
        Self { timeline, kernels, fluct_diag, block_steps: 512 }
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    pub fn n_steps(&self) -> usize {
        (self.timeline.n_nodes() - 1) / 2
    }

    pub fn step_len(&self) -> f64 {
        2.0 * self.timeline.delta()
    }

    fn generator(&self, node: usize, side: Side) -> Vec<C64> {
        let d = self.timeline.dim();
        let dd = d * d;
        let u = match side {
            Side::Left => self.timeline.u_left(node),
            Side::Right => self.timeline.u(node),
        };
        let mut acc = Dissipator::new(d);
        let mut tmp = vec![C64::new(0.0, 0.0); dd];
        let mut b = vec![C64::new(0.0, 0.0); dd];
        for kern in &self.kernels {
            for (h, a) in kern.ops.iter().enumerate() {
                sandwich(d, u, a, &mut tmp, &mut b);
                acc.add(&b, kern.k_at(h, node), kern.scale);
            }
        }
        acc.finish()
    }

    /// RK4 superoperator of step `n`, covering nodes `2n..=2n+2`.
    fn step_superop(&self, n: usize) -> Vec<C64> {
        let dd = self.timeline.dim().pow(2);
        let h = self.step_len();
        let l0 = self.generator(2 * n, Side::Right);
        let l1 = self.generator(2 * n + 1, Side::Right);
        let l2 = self.generator(2 * n + 2, Side::Left);
        let mut id = vec![C64::new(0.0, 0.0); dd * dd];
        for i in 0..dd {
            id[i * dd + i] = C64::new(1.0, 0.0);
        }
        let affine = |k: &[C64], f: f64| -> Vec<C64> { id.iter().zip(k).map(|(a, b)| a + b * f).collect() };
        let mut k2 = vec![C64::new(0.0, 0.0); dd * dd];
        let mut k3 = k2.clone();
        let mut k4 = k2.clone();
        generator::matmul(dd, &l1, &affine(&l0, 0.5 * h), &mut k2);
        generator::matmul(dd, &l1, &affine(&k2, 0.5 * h), &mut k3);
        generator::matmul(dd, &l2, &affine(&k3, h), &mut k4);
        (0..dd * dd).map(|i| id[i] + (l0[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0)).collect()
    }

    /// `B_z0 = V†·D·V` at the step's three nodes, one-sided at the ends.
    fn fluct_nodes(&self, n: usize) -> [Vec<C64>; 3] {
        let d = self.timeline.dim();
        let at = |v: &[C64]| {
            let mut dv = v.to_vec();
            for r in 0..d {
                for col in 0..d {
                    dv[r * d + col] *= self.fluct_diag[r];
                }
            }
            let mut va = vec![C64::new(0.0, 0.0); d * d];
            generator::adjoint(d, v, &mut va);
            let mut b = vec![C64::new(0.0, 0.0); d * d];
            matmul_into(d, &va, &dv, &mut b);
            b
        };
        [at(self.timeline.u(2 * n)), at(self.timeline.u(2 * n + 1)), at(self.timeline.u_left(2 * n + 2))]
    }

    /// Shared parts of both half-step rotations of step `n`.
    fn half_rotations(&self, n: usize) -> Result<[HalfRotation; 2]> {
        let d = self.timeline.dim();
        let b = self.fluct_nodes(n);
        let half = |lo: f64, mid: [f64; 3], slope: [f64; 3]| -> Result<HalfRotation> {
            let bm = weighted(&b, mid);
            let db = weighted(&b, slope);
            // Second Magnus term of a linear `B` over the half, per unit θ².
            let mut p = vec![C64::new(0.0, 0.0); d * d];
            let mut q = p.clone();
            matmul_into(d, &db, &bm, &mut p);
            matmul_into(d, &bm, &db, &mut q);
            let k: Vec<C64> = p.iter().zip(&q).map(|(x, y)| (x - y) * C64::new(0.0, -1.0 / 12.0)).collect();
            Ok(HalfRotation {
                mean: Eigen::new(d, &weighted(&b, lagrange_weights(lo, lo + 1.0)))?,
                commutator: Eigen::new(d, &k)?,
            })
        };
        Ok([
            half(0.0, [0.375, 0.75, -0.125], [-1.0, 1.0, 0.0])?,
            half(1.0, [-0.125, 0.75, 0.375], [0.0, -1.0, 1.0])?,
        ])
    }

    /// Rotation over half `half` of step `n` when the field switches inside it.
    fn switching_rotation(
        &self,
        n: usize,
        half: usize,
        shared: &HalfRotation,
        field: &PiecewiseField,
        out: &mut [C64],
    ) -> Result<()> {
        let delta = self.timeline.delta();
        let t0 = n as f64 * 2.0 * delta;
        let b = self.fluct_nodes(n);
        let (lo, hi) = (t0 + half as f64 * delta, t0 + (half as f64 + 1.0) * delta);
        let mut w = [0.0; 3];
        for (a, e, value) in field.pieces(lo, hi) {
            let lw = lagrange_weights((a - t0) / delta, (e - t0) / delta);
            for k in 0..3 {
                w[k] += TWO_PI * value * delta * lw[k];
            }
        }
        let theta = TWO_PI * field.integral(lo, hi);
        let mean = Eigen::new(self.timeline.dim(), &weighted(&b, w))?;
        HalfRotation { mean, commutator: shared.commutator.clone() }.compose(1.0, theta, out);
        Ok(())
    }

    /// Propagates row-major `inputs` for every field and returns, per field,
    /// per input, the Schrödinger-picture states at the requested steps.
    pub fn run(
        &self,
        inputs: &[Vec<C64>],
        fields: &[Option<PiecewiseField>],
        record_steps: &[usize],
        on_record: &(dyn Fn(usize, usize, f64, &[C64]) -> Result<()> + Sync),
    ) -> Vec<Result<Vec<Vec<Vec<C64>>>>> {
        let d = self.timeline.dim();
        let dd = d * d;
        let n_steps = self.n_steps();
        let h = self.step_len();
        let has_field = fields.iter().any(Option::is_some);
        struct Traj {
            x: Vec<Vec<C64>>,
            out: Vec<Vec<Vec<C64>>>,
            err: Option<crate::Error>,
        }
        let mut trajs: Vec<Traj> = fields
            .iter()
            .map(|_| Traj { x: inputs.to_vec(), out: vec![Vec::new(); inputs.len()], err: None })
            .collect();
        let record = |t: &mut Traj, traj: usize, step: usize| {
            if t.err.is_some() {
                return;
            }
            let u = self.timeline.u(2 * step);
            for (i, x) in t.x.iter().enumerate() {
                let mut rho = vec![C64::new(0.0, 0.0); dd];
                generator::conjugate(d, u, x, &mut rho);
                if let Err(e) = on_record(traj, i, step as f64 * h, &rho) {
                    t.err = Some(e);
                    return;
                }
                t.out[i].push(rho);
            }
        };
        let mut next_record = 0usize;
        let mut recs = record_steps.to_vec();
        recs.sort_unstable();
        while next_record < recs.len() && recs[next_record] == 0 {
            trajs.iter_mut().enumerate().for_each(|(i, t)| record(t, i, 0));
            next_record += 1;
        }
        let last = recs.last().copied().unwrap_or(0).min(n_steps);
        let mut start = 0;
        while start < last {
            let end = (start + self.block_steps).min(last);
            let ops: Vec<Vec<C64>> = (start..end).into_par_iter().map(|n| self.step_superop(n)).collect();
            let halves: Vec<Result<[HalfRotation; 2]>> = if has_field {
                (start..end).into_par_iter().map(|n| self.half_rotations(n)).collect()
            } else {
                Vec::new()
            };
            let rec_here: Vec<usize> = recs.iter().copied().filter(|&s| s > start && s <= end).collect();
            trajs.par_iter_mut().zip(fields.par_iter()).enumerate().for_each(|(ti, (t, field))| {
                if t.err.is_some() {
                    return;
                }
                let mut y = vec![C64::new(0.0, 0.0); dd];
                let mut u1 = vec![C64::new(0.0, 0.0); dd];
                let mut u2 = vec![C64::new(0.0, 0.0); dd];
                let mut ri = 0;
                for n in start..end {
                    let t0 = n as f64 * h;
                    if let Some(f) = field {
                        let pair = match &halves[n - start] {
                            Ok(p) => p,
                            Err(e) => {
                                t.err = Some(crate::Error::Diagonalization(e.to_string()));
                                return;
                            }
                        };
                        for (half, out) in [(0usize, &mut u1), (1, &mut u2)] {
                            let (a, b) = (t0 + half as f64 * 0.5 * h, t0 + (half as f64 + 1.0) * 0.5 * h);
                            if f.is_constant_on(a, b) {
                                let theta = TWO_PI * f.integral(a, b);
                                pair[half].compose(theta, theta, out);
                            } else if let Err(e) = self.switching_rotation(n, half, &pair[half], f, out) {
                                t.err = Some(e);
                                return;
                            }
                        }
                    }
                    let rot = field.as_ref();
                    for x in t.x.iter_mut() {
                        if rot.is_some() {
                            generator::conjugate(d, &u1, x, &mut y);
                            x.copy_from_slice(&y);
                        }
                        generator::apply(dd, &ops[n - start], x, &mut y);
                        if rot.is_some() {
                            generator::conjugate(d, &u2, &y, x);
                        } else {
                            x.copy_from_slice(&y);
                        }
                    }
                    while ri < rec_here.len() && rec_here[ri] == n + 1 {
                        record(t, ti, n + 1);
                        ri += 1;
                    }
                }
            });
            start = end;
        }
        trajs.into_iter().map(|t| match t.err { Some(e) => Err(e), None => Ok(t.out) }).collect()
    }
}

/// `∫_lo^hi` of the quadratic Lagrange basis on nodes `0, 1, 2`.
fn lagrange_weights(lo: f64, hi: f64) -> [f64; 3] {
    let i0 = |s: f64| (s * s * s / 3.0 - 1.5 * s * s + 2.0 * s) / 2.0;
    let i1 = |s: f64| -(s * s * s / 3.0 - s * s);
    let i2 = |s: f64| (s * s * s / 3.0 - 0.5 * s * s) / 2.0;
    [i0(hi) - i0(lo), i1(hi) - i1(lo), i2(hi) - i2(lo)]
}

fn weighted(b: &[Vec<C64>; 3], w: [f64; 3]) -> Vec<C64> {
    (0..b[0].len()).map(|i| b[0][i] * w[0] + b[1][i] * w[1] + b[2][i] * w[2]).collect()
}

/// `M = W·Λ·W†` for a Hermitian row-major `M`.
#[derive(Debug, Clone)]
struct Eigen {
    d: usize,
    values: Vec<f64>,
    vectors: Vec<C64>,
}

impl Eigen {
    fn new(d: usize, m: &[C64]) -> Result<Self> {
        let h = from_row_major(d, m);
        let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        let (values, w) = hermitian_eigen(&h)?;
        Ok(Self { d, values, vectors: to_row_major(&w) })
    }

    /// `exp(-iθ·M)`, row-major.
    fn exp(&self, theta: f64, out: &mut [C64]) {
        let d = self.d;
        let phases: Vec<C64> = self.values.iter().map(|v| C64::from_polar(1.0, -theta * v)).collect();
        for r in 0..d {
            for col in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..d {
                    acc += self.vectors[r * d + k] * phases[k] * self.vectors[col * d + k].conj();
                }
                out[r * d + col] = acc;
            }
        }
    }
}

/// Half-step rotation `exp(-iθ·M)·exp(-iθ²·K)` with `M` the mean of
/// `B_z0` and `K` its second Magnus term.
#[derive(Debug, Clone)]
struct HalfRotation {
    mean: Eigen,
    commutator: Eigen,
}

impl HalfRotation {
    /// `scale` multiplies `M`, `theta` sets the commutator weight.
    fn compose(&self, scale: f64, theta: f64, out: &mut [C64]) {
        let d = self.mean.d;
        let mut a = vec![C64::new(0.0, 0.0); d * d];
        let mut b = a.clone();
        self.mean.exp(scale, &mut a);
        self.commutator.exp(theta * theta, &mut b);
        matmul_into(d, &a, &b, out);
    }
}
