//! Charge-basis transmon Hamiltonian, its low-lying spectrum and the coupling
//! operators expressed in the energy eigenbasis.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CMat};

pub const DEFAULT_N_MAX: usize = 50;
pub const DEFAULT_N_LEVELS: usize = 4;
const MIN_EJ_OVER_EC: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmonSpec {
    /// Charging energy, GHz.
    pub e_c: f64,
    /// Josephson energy, GHz.
    pub e_j: f64,
    /// Offset charge.
    pub n_g: f64,
    /// The charge basis spans `-n_max..=n_max`.
    pub n_max: usize,
    pub n_levels: usize,
}

impl TransmonSpec {
    pub fn new(e_c: f64, e_j: f64) -> Result<Self> {
        let spec = Self {
            e_c,
            e_j,
            n_g: 0.0,
            n_max: DEFAULT_N_MAX,
            n_levels: DEFAULT_N_LEVELS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_truncation(mut self, n_max: usize, n_levels: usize) -> Result<Self> {
        self.n_max = n_max;
        self.n_levels = n_levels;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        2 * self.n_max + 1
    }

    /// Full check of the transmon-regime and truncation constraints.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.e_j / self.e_c <= MIN_EJ_OVER_EC {
            return Err(Error::InvalidTransmon(format!(
                "E_J/E_C = {:.3} is not in the transmon regime (> {MIN_EJ_OVER_EC})",
                self.e_j / self.e_c
            )));
        }
        if self.n_max < 20 {
            return Err(Error::InvalidTransmon(format!("n_max = {} < 20", self.n_max)));
        }
        if self.n_levels < 2 || self.n_levels > self.dim() {
            return Err(Error::InvalidTransmon(format!(
                "n_levels = {} outside [2, {}]",
                self.n_levels,
                self.dim()
            )));
        }
        Ok(())
    }

    fn validate_structure(&self) -> Result<()> {
        if !(self.e_c.is_finite() && self.e_c > 0.0) {
            return Err(Error::InvalidTransmon(format!("E_C = {} must be positive", self.e_c)));
        }
        if !(self.e_j.is_finite() && self.e_j >= 0.0) {
            return Err(Error::InvalidTransmon(format!("E_J = {} must be non-negative", self.e_j)));
        }
        if !self.n_g.is_finite() {
            return Err(Error::InvalidTransmon("n_g must be finite".into()));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidTransmon("n_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// `4·E_C·(n - n_g)²` on the diagonal and `-E_J/2` between neighbouring charge
/// states, in GHz.
///
/// Only structural checks apply here, so small or non-transmon cases can be
/// built for inspection.
pub fn build_charge_hamiltonian(spec: &TransmonSpec) -> Result<DMatrix<f64>> {
    spec.validate_structure()?;
    let dim = spec.dim();
    let n_max = spec.n_max as f64;
    Ok(DMatrix::from_fn(dim, dim, |r, col| {
        if r == col {
            let n = r as f64 - n_max - spec.n_g;
            4.0 * spec.e_c * n * n
        } else if r.abs_diff(col) == 1 {
            -spec.e_j / 2.0
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone)]
pub struct TransmonSpectrum {
    /// Level frequencies in GHz with `omega[0] = 0`.
    pub omega: Vec<f64>,
    pub qubit_freq: f64,
    pub anharmonicity: f64,
    /// `n̂` in the truncated eigenbasis.
    pub charge_op: CMat,
    /// `cos φ̂` in the truncated eigenbasis.
    pub cosphi_op: CMat,
    /// Ladder couplings `n_{k,k+1}/n_{01}`, real and positive.
    pub couplings: Vec<f64>,
    pub e_c: f64,
    pub e_j: f64,
}

impl TransmonSpectrum {
    pub fn n_levels(&self) -> usize {
        self.omega.len()
    }

    /// Charge-noise coupling operator `8·E_C·n̂`.
    pub fn charge_coupling_op(&self) -> CMat {
        &self.charge_op * c(8.0 * self.e_c)
    }

    /// Josephson-energy coupling operator `E_J·cos φ̂`.
    pub fn josephson_coupling_op(&self) -> CMat {
        &self.cosphi_op * c(self.e_j)
    }

    /// Keeps the lowest `n_levels` levels.
    pub fn truncated(&self, n_levels: usize) -> Result<Self> {
        if n_levels < 2 || n_levels > self.n_levels() {
            return Err(Error::InvalidTransmon(format!(
                "cannot truncate {} levels to {n_levels}",
                self.n_levels()
            )));
        }
        Ok(Self {
            omega: self.omega[..n_levels].to_vec(),
            charge_op: self.charge_op.view((0, 0), (n_levels, n_levels)).into_owned(),
            cosphi_op: self.cosphi_op.view((0, 0), (n_levels, n_levels)).into_owned(),
            couplings: self.couplings[..n_levels - 1].to_vec(),
            ..self.clone()
        })
    }

    /// Lowering operator assembled from the ladder couplings.
    pub fn lowering_op(&self) -> CMat {
        let d = self.n_levels();
        let mut a = CMat::zeros(d, d);
        for (k, g) in self.couplings.iter().enumerate() {
            a[(k, k + 1)] = c(*g);
        }
        a
    }

    /// Level-number operator `Σ k|k⟩⟨k|`.
    pub fn number_op(&self) -> CMat {
        let d = self.n_levels();
        CMat::from_fn(d, d, |r, col| if r == col { c(r as f64) } else { c(0.0) })
    }
}

pub fn solve_spectrum(spec: &TransmonSpec) -> Result<TransmonSpectrum> {
    spec.validate()?;
    let h = build_charge_hamiltonian(spec)?;
    if spec.n_levels < 3 {
        // The anharmonicity needs three levels.
        let wide = spec.with_truncation(spec.n_max, 3)?;
        return solve_spectrum(&wide)?.truncated(spec.n_levels);
    }
    let dim = spec.dim();
    let eig = SymmetricEigen::try_new(h, 1e-15, 100_000)
        .ok_or_else(|| Error::Diagonalization("charge Hamiltonian did not converge".into()))?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let levels = spec.n_levels;
    let energies: Vec<f64> = order.iter().take(levels).map(|&k| eig.eigenvalues[k]).collect();
    for w in energies.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Diagonalization("degenerate low-lying levels".into()));
        }
    }

    let mut vecs = DMatrix::<f64>::zeros(dim, levels);
    for (col, &k) in order.iter().take(levels).enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(k));
    }
    let n_max = spec.n_max as f64;
    let charge = DMatrix::<f64>::from_fn(dim, dim, |r, col| {
        if r == col {
            r as f64 - n_max
        } else {
            0.0
        }
    });
    let cosphi =
        DMatrix::<f64>::from_fn(dim, dim, |r, col| if r.abs_diff(col) == 1 { 0.5 } else { 0.0 });

    // Fix eigenvector signs so that every n_{k,k+1} is positive.
    let col0 = vecs.column(0);
    let pivot = col0.iamax();
    if col0[pivot] < 0.0 {
        vecs.column_mut(0).neg_mut();
    }
    for k in 1..levels {
        let elem = (vecs.column(k - 1).transpose() * &charge * vecs.column(k))[(0, 0)];
        if elem < 0.0 {
            vecs.column_mut(k).neg_mut();
        }
    }

    let n_eig = vecs.transpose() * &charge * &vecs;
    let cos_eig = vecs.transpose() * &cosphi * &vecs;
    let charge_op = n_eig.map(c);
    let cosphi_op = cos_eig.map(c);

    let omega: Vec<f64> = energies.iter().map(|e| e - energies[0]).collect();
    let qubit_freq = omega[1];
    let anharmonicity = omega[1] - (omega[2] - omega[1]);
    let n01 = n_eig[(0, 1)];
    if n01.abs() < 1e-300 {
        return Err(Error::Diagonalization("vanishing qubit charge matrix element".into()));
    }
    let couplings = (0..levels - 1).map(|k| n_eig[(k, k + 1)] / n01).collect();

    Ok(TransmonSpectrum {
        omega,
        qubit_freq,
        anharmonicity,
        charge_op,
        cosphi_op,
        couplings,
        e_c: spec.e_c,
        e_j: spec.e_j,
    })
}

fn qubit_targets(e_c: f64, e_j: f64) -> Result<Vector2<f64>> {
    let spec = TransmonSpec {
        e_c,
        e_j,
        n_g: 0.0,
        n_max: DEFAULT_N_MAX,
        n_levels: 3,
    };
    let s = solve_spectrum(&spec)?;
    Ok(Vector2::new(s.qubit_freq, s.anharmonicity))
}

/// Finds `(E_C, E_J)` reproducing a qubit frequency and anharmonicity (GHz).
///
/// Damped Newton iteration on the relative residuals with a forward-difference
/// Jacobian, seeded from the asymptotic transmon relations.
pub fn fit_circuit_params(omega_q: f64, eta_q: f64) -> Result<(f64, f64)> {
    if !(omega_q > 0.0 && eta_q > 0.0) {
        return Err(Error::CircuitFit("frequencies must be positive".into()));
    }
    if omega_q / eta_q <= 5.0 {
        return Err(Error::CircuitFit(format!(
            "omega_q/eta_q = {:.3} too small for a transmon",
            omega_q / eta_q
        )));
    }
    let target = Vector2::new(omega_q, eta_q);
    let residual = |x: &Vector2<f64>| -> Result<Vector2<f64>> {
        let v = qubit_targets(x[0], x[1])?;
        Ok((v - target).component_div(&target))
    };

    let mut x = Vector2::new(eta_q, (omega_q + eta_q).powi(2) / (8.0 * eta_q));
    let mut r = residual(&x)?;
    for _ in 0..100 {
        if r.amax() < 1e-12 {
            break;
        }
        let mut jac = Matrix2::zeros();
        for j in 0..2 {
            let h = 1e-7 * x[j];
            let mut xp = x;
            xp[j] += h;
            let col = (residual(&xp)? - r) / h;
            jac.set_column(j, &col);
        }
        let step = jac
            .lu()
            .solve(&(-r))
            .ok_or_else(|| Error::CircuitFit("singular Jacobian".into()))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-6 {
            let trial = x + step * lambda;
            if trial[0] > 0.0 && trial[1] / trial[0] > MIN_EJ_OVER_EC {
                let rt = residual(&trial)?;
                if rt.norm() < r.norm() {
                    x = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r.amax() > 1e-9 {
        return Err(Error::CircuitFit(format!(
            "no transmon-regime solution (residual {:.3e})",
            r.amax()
        )));
    }
    Ok((x[0], x[1]))
}
