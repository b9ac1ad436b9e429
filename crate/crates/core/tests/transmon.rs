use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use transmon_noise::linalg::{hermiticity_error, max_abs};
use transmon_noise::transmon::{
    build_charge_hamiltonian, fit_circuit_params, solve_spectrum, TransmonSpec,
};

const QUITO: (f64, f64) = (5.0806, 0.3192);
const LIMA: (f64, f64) = (5.1277, 0.3183);

/// Independent dense diagonalization returning `(gaps, |n12/n01|)`.
fn brute_force(e_c: f64, e_j: f64, n_max: usize) -> (Vec<f64>, f64) {
    let dim = 2 * n_max + 1;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        let n = i as f64 - n_max as f64;
        h[(i, i)] = 4.0 * e_c * n * n;
        if i + 1 < dim {
            h[(i, i + 1)] = -e_j / 2.0;
            h[(i + 1, i)] = -e_j / 2.0;
        }
    }
    let eig = SymmetricEigen::new(h);
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let e: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let elem = |a: usize, b: usize| -> f64 {
        (0..dim)
            .map(|i| {
                eig.eigenvectors[(i, idx[a])] * (i as f64 - n_max as f64) * eig.eigenvectors[(i, idx[b])]
            })
            .sum()
    };
    ((1..4).map(|k| e[k] - e[0]).collect(), (elem(1, 2) / elem(0, 1)).abs())
}

fn fitted(target: (f64, f64)) -> TransmonSpec {
    let (e_c, e_j) = fit_circuit_params(target.0, target.1).unwrap();
    TransmonSpec::new(e_c, e_j).unwrap()
}

#[test]
fn quito_fit_round_trip() {
    let spec = fitted(QUITO);
    let s = solve_spectrum(&spec).unwrap();
    assert!((s.qubit_freq / QUITO.0 - 1.0).abs() < 1e-4);
    assert!((s.anharmonicity / QUITO.1 - 1.0).abs() < 1e-4);
    assert!((spec.e_c / QUITO.1 - 1.0).abs() < 0.15);
    // Frozen from an independent scipy fsolve at n_max = 50.
    assert!((spec.e_c - 0.27628002).abs() < 1e-6);
    assert!((spec.e_j - 13.0637706).abs() < 1e-5);
}

#[test]
fn lima_fit_round_trip() {
    let spec = fitted(LIMA);
    let s = solve_spectrum(&spec).unwrap();
    assert!((s.qubit_freq / LIMA.0 - 1.0).abs() < 1e-4);
    assert!((s.anharmonicity / LIMA.1 - 1.0).abs() < 1e-4);
    assert!((spec.e_c / LIMA.1 - 1.0).abs() < 0.15);
    assert!((spec.e_c - 0.27601603).abs() < 1e-6);
    assert!((spec.e_j - 13.3042213).abs() < 1e-5);
}

#[test]
fn charge_hamiltonian_gaps_reproduce_quito() {
    let spec = fitted(QUITO);
    let h = build_charge_hamiltonian(&spec).unwrap();
    assert_eq!(h.nrows(), 101);
    let mut e: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let wq = e[1] - e[0];
    let eta = wq - (e[2] - e[1]);
    assert!((wq / QUITO.0 - 1.0).abs() < 1e-4);
    assert!((eta / QUITO.1 - 1.0).abs() < 1e-4);
}

#[test]
fn ladder_ratio_against_large_basis() {
    let spec = fitted(QUITO);
    let s = solve_spectrum(&spec).unwrap();
    let (gaps, ratio) = brute_force(spec.e_c, spec.e_j, 200);
    assert!(s.charge_op[(0, 1)].re > 0.0);
    let ours = (s.charge_op[(1, 2)] / s.charge_op[(0, 1)]).norm();
    assert!((ours - ratio).abs() < 1e-9);
    assert!((ours / 2f64.sqrt() - 1.0).abs() < 0.10);
    for k in 0..3 {
        assert!((s.omega[k + 1] - gaps[k]).abs() < 1e-9);
    }
}

#[test]
fn first_order_ladder_couplings() {
    for ratio in [47.0, 200.0, 1000.0] {
        let spec = TransmonSpec::new(0.3, 0.3 * ratio).unwrap().with_truncation(80, 4).unwrap();
        let s = solve_spectrum(&spec).unwrap();
        let eps = s.anharmonicity / s.qubit_freq;
        for k in 0..3 {
            let tilde = s.couplings[k] / ((k + 1) as f64).sqrt();
            let expected = 1.0 - 0.5 * k as f64 * eps;
            assert!((tilde / expected - 1.0).abs() < 0.01, "ratio {ratio} k {k}: {tilde} vs {expected}");
        }
    }
}

#[test]
fn ladder_commutators() {
    let s = solve_spectrum(&fitted(QUITO)).unwrap();
    let a = s.lowering_op();
    let n = s.number_op();
    assert!(max_abs(&(&a * &n - &n * &a - &a)) < 1e-14);
    let ad = a.adjoint();
    assert!(max_abs(&(&ad * &n - &n * &ad + &ad)) < 1e-14);
}

#[test]
fn josephson_operator_is_not_trivial() {
    let s = solve_spectrum(&fitted(QUITO)).unwrap();
    let cos = &s.cosphi_op;
    let diag: Vec<f64> = (0..4).map(|k| cos[(k, k)].re).collect();
    // Frozen from the scipy diagonalization.
    for (got, want) in diag.iter().zip([0.89709, 0.69068, 0.48187, 0.27015]) {
        assert!((got - want).abs() < 1e-4);
    }
    for k in 0..4 {
        let off: f64 = (0..4).filter(|&l| l != k).map(|l| cos[(k, l)].norm()).sum();
        assert!(cos[(k, k)].norm() > off);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spectrum_invariants(e_c in 0.15f64..0.4, ratio in 25.0f64..120.0) {
        let spec = TransmonSpec::new(e_c, e_c * ratio).unwrap();
        let s = solve_spectrum(&spec).unwrap();
        prop_assert!(s.omega.windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(s.omega[0], 0.0);
        prop_assert!(s.anharmonicity > 0.0);
        prop_assert!(hermiticity_error(&s.charge_op) < 1e-12);
        prop_assert!(hermiticity_error(&s.cosphi_op) < 1e-12);
        let n01 = s.charge_op[(0, 1)].norm();
        for k in 0..2 {
            prop_assert!(s.charge_op[(k, k + 2)].norm() < 1e-10 * n01);
        }
        let third = s.charge_op[(0, 3)].norm() / n01;
        let eps = s.anharmonicity / s.qubit_freq;
        prop_assert!(third < eps && third > 0.1 * eps);
        prop_assert!(s.couplings.iter().all(|&g| g > 0.0));
        prop_assert!((s.cosphi_op[(0, 0)].re - s.cosphi_op[(3, 3)].re).abs() > 1e-3);
    }

    #[test]
    fn spectrum_converged_in_basis_size(e_c in 0.15f64..0.4, ratio in 25.0f64..120.0) {
        let base = TransmonSpec::new(e_c, e_c * ratio).unwrap();
        let a = solve_spectrum(&base.with_truncation(30, 4).unwrap()).unwrap();
        let b = solve_spectrum(&base.with_truncation(50, 4).unwrap()).unwrap();
        for k in 1..4 {
            prop_assert!((a.omega[k] / b.omega[k] - 1.0).abs() < 1e-8);
        }
    }
}
