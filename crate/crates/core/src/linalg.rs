use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type C64 = Complex64;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn hermiticity_error(m: &CMat) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn unitarity_error(u: &CMat) -> f64 {
    let n = u.nrows();
    max_abs(&(u.adjoint() * u - CMat::identity(n, n)))
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues ascending.
pub fn hermitian_eigen(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = m.nrows();
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Diagonalization("non-finite matrix entry".into()));
    }
    let eig = SymmetricEigen::try_new(m.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Diagonalization("eigen solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    Ok((values, vectors))
}

/// `exp(-i·h·dt)` for Hermitian `h`.
pub fn unitary_step(h: &CMat, dt: f64) -> Result<CMat> {
    let (values, v) = hermitian_eigen(h)?;
    let n = h.nrows();
    let mut scaled = v.clone();
    for k in 0..n {
        let phase = Complex64::from_polar(1.0, -values[k] * dt);
        for r in 0..n {
            scaled[(r, k)] *= phase;
        }
    }
    Ok(scaled * v.adjoint())
}

/// Complex `d×d` product `out = a·b` on row-major slices.
#[inline]
pub fn matmul_into(d: usize, a: &[Complex64], b: &[Complex64], out: &mut [Complex64]) {
    for r in 0..d {
        for col in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..d {
                acc += a[r * d + k] * b[k * d + col];
            }
            out[r * d + col] = acc;
        }
    }
}

/// Pulls a nearly unitary row-major `u` onto the unitary group with two
/// Newton–Schulz polar steps `U ← U(3 − U†U)/2`.
pub fn reunitarize(d: usize, u: &mut [Complex64]) {
    let mut ua = vec![Complex64::new(0.0, 0.0); d * d];
    let mut g = vec![Complex64::new(0.0, 0.0); d * d];
    let mut next = vec![Complex64::new(0.0, 0.0); d * d];
    for _ in 0..2 {
        for r in 0..d {
            for c in 0..d {
                ua[r * d + c] = u[c * d + r].conj();
            }
        }
        matmul_into(d, &ua, u, &mut g);
        for r in 0..d {
            for c in 0..d {
                let id = if r == c { 3.0 } else { 0.0 };
                g[r * d + c] = (Complex64::new(id, 0.0) - g[r * d + c]) * 0.5;
            }
        }
        matmul_into(d, u, &g, &mut next);
        u.copy_from_slice(&next);
    }
}

/// Row-major flattening of a square matrix.
pub fn to_row_major(m: &CMat) -> Vec<Complex64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * d);
    for r in 0..d {
        for col in 0..d {
            out.push(m[(r, col)]);
        }
    }
    out
}

pub fn from_row_major(d: usize, v: &[Complex64]) -> CMat {
    CMat::from_fn(d, d, |r, col| v[r * d + col])
}
