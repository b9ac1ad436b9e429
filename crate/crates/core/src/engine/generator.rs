//! Superoperator assembly on row-major vectorized density matrices, where
//! `vec(XρY) = (X ⊗ Yᵀ)·vec(ρ)`.

use crate::linalg::C64;

/// Accumulates the second-order dissipator
/// `-Σ_m ([X_m†, Q_m ρ] + h.c.)` one harmonic at a time.
pub(crate) struct Dissipator {
    d: usize,
    m: Vec<C64>,
    out: Vec<C64>,
}

impl Dissipator {
    pub fn new(d: usize) -> Self {
        Self { d, m: vec![C64::new(0.0, 0.0); d * d], out: vec![C64::new(0.0, 0.0); d * d * d * d] }
    }

    /// Adds harmonic `m` with coupling part `x = X_m` and kernel `q = Q_m`,
    /// both row-major. `X_m†` is the partner of opposite harmonic.
    pub fn add(&mut self, x: &[C64], q: &[C64], weight: f64) {
        let d = self.d;
        let dd = d * d;
        for i in 0..d {
            for j in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..d {
                    acc += x[k * d + i].conj() * q[k * d + j];
                }
                self.m[i * d + j] += acc * weight;
            }
        }
        // Q ⊗ conj(X) + X ⊗ conj(Q).
        for i in 0..d {
            for k in 0..d {
                let qa = q[i * d + k] * weight;
                let xa = x[i * d + k] * weight;
                if qa == C64::new(0.0, 0.0) && xa == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..d {
                    let row = (i * d + j) * dd + k * d;
                    for l in 0..d {
                        self.out[row + l] += qa * x[j * d + l].conj() + xa * q[j * d + l].conj();
                    }
                }
            }
        }
    }

    /// Adds `-i[H, ·]` for a diagonal `H`.
    pub fn add_diagonal_hamiltonian(&mut self, energies: &[f64]) {
        let d = self.d;
        let dd = d * d;
        for i in 0..d {
            for j in 0..d {
                let e = i * d + j;
                self.out[e * dd + e] += C64::new(0.0, -(energies[i] - energies[j]));
            }
        }
    }

    /// Finishes with `-M ⊗ I - I ⊗ conj(M)`, `M = Σ_m X_m†Q_m`.
    pub fn finish(mut self) -> Vec<C64> {
        let d = self.d;
        let dd = d * d;
        for i in 0..d {
            for k in 0..d {
                let mik = self.m[i * d + k];
                for j in 0..d {
                    self.out[(i * d + j) * dd + k * d + j] -= mik;
                    self.out[(j * d + i) * dd + j * d + k] -= mik.conj();
                }
            }
        }
        self.out
    }
}

/// `y = S·x` for a dense `n×n` row-major `S`.
#[inline]
pub(crate) fn apply(n: usize, s: &[C64], x: &[C64], y: &mut [C64]) {
    for r in 0..n {
        let row = &s[r * n..(r + 1) * n];
        let mut acc = C64::new(0.0, 0.0);
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        y[r] = acc;
    }
}

/// Dense `n×n` product `out = a·b`.
pub(crate) fn matmul(n: usize, a: &[C64], b: &[C64], out: &mut [C64]) {
    crate::linalg::matmul_into(n, a, b, out)
}

/// `out = a†`.
pub(crate) fn adjoint(d: usize, a: &[C64], out: &mut [C64]) {
    for r in 0..d {
        for col in 0..d {
            out[col * d + r] = a[r * d + col].conj();
        }
    }
}

/// `out = u·x·u†` for row-major `d×d` matrices.
pub(crate) fn conjugate(d: usize, u: &[C64], x: &[C64], out: &mut [C64]) {
    let mut tmp = vec![C64::new(0.0, 0.0); d * d];
    crate::linalg::matmul_into(d, u, x, &mut tmp);
    for r in 0..d {
        for col in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..d {
                acc += tmp[r * d + k] * u[col * d + k].conj();
            }
            out[r * d + col] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_row_major, to_row_major, CMat};

    fn sample(d: usize, seed: f64) -> CMat {
        CMat::from_fn(d, d, |r, c| C64::new((seed * (r * d + c + 1) as f64).sin(), (seed * (r + 2 * c + 1) as f64).cos()))
    }

    #[test]
    fn dissipator_matches_direct_formula() {
        let d = 3;
        let (x1, q1, x2, q2, rho) = (sample(d, 0.3), sample(d, 1.1), sample(d, 0.7), sample(d, 2.3), sample(d, 0.9));
        let mut acc = Dissipator::new(d);
        acc.add(&to_row_major(&x1), &to_row_major(&q1), 1.0);
        acc.add(&to_row_major(&x2), &to_row_major(&q2), 1.0);
        acc.add_diagonal_hamiltonian(&[0.0, 1.5, -0.4]);
        let s = acc.finish();
        let mut y = vec![C64::new(0.0, 0.0); d * d];
        apply(d * d, &s, &to_row_major(&rho), &mut y);
        let h = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.5, 0.0), C64::new(-0.4, 0.0)]));
        let mut direct = (&h * &rho - &rho * &h) * C64::new(0.0, -1.0);
        for (x, q) in [(&x1, &q1), (&x2, &q2)] {
            let p = x.adjoint();
            let qd = q.adjoint();
            direct -= &p * q * &rho - q * &rho * &p + &rho * &qd * x - x * &rho * &qd;
        }
        assert!((from_row_major(d, &y) - direct).iter().all(|z| z.norm() < 1e-12));
    }
}
