//! Independent checks of the Gaussian machinery against dense Fock-space
//! calculations and closed-form results.

use fer_er::gaussian::{block_diagonalize, block_entropy, spectrum_values};
use fer_er::linalg::{canonical_matrix, random_so};
use fer_er::many_body::{dense_ground_state, dense_hamiltonian, density_matrix, C64};
use fer_er::model::{energy_density, exact_gs_energy_density, ground_state, majorana_coefficients};
use fer_er::{entropy_scan, many_body_oracle, MajoranaCorrelation, ModelSpec, ZeroModePolicy};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(l: usize, rng: &mut ChaCha8Rng) -> MajoranaCorrelation {
    let v: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
    let q = random_so(2 * l, rng);
    MajoranaCorrelation::new(&q * canonical_matrix(&v) * q.transpose()).unwrap()
}

fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    (a * b).trace()
}

#[test]
fn random_states_match_dense_diagonalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let l = rng.random_range(1..=6);
        let g = random_state(l, &mut rng);
        let o = many_body_oracle(&g).unwrap();
        assert_eq!(o.from_spectrum.len(), 1 << l);
        assert!(o.max_discrepancy() < 1e-10, "{}", o.max_discrepancy());
        let total: f64 = o.from_density_matrix.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn density_matrix_reproduces_its_correlations() {
    // Γ_ab = Im tr(ρ c_a c_b) for a != b
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l = 3;
    let g = random_state(l, &mut rng);
    let rho = density_matrix(&g).unwrap();
    let c = fer_er::many_body::majoranas(l);
    for a in 0..2 * l {
        for b in 0..2 * l {
            if a != b {
                let x = trace_product(&rho, &(&c[a] * &c[b]));
                assert!((x.im - g.matrix()[(a, b)]).abs() < 1e-12);
                assert!(x.re.abs() < 1e-12);
            }
        }
    }
}

#[test]
fn two_mode_entropy_matches_von_neumann() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let g = random_state(2, &mut rng);
        let rho = density_matrix(&g).unwrap();
        let vn: f64 = rho
            .symmetric_eigenvalues()
            .iter()
            .filter(|&&p| p > 1e-300)
            .map(|&p| -p * p.log2())
            .sum();
        let s = block_entropy(&block_diagonalize(&g).unwrap());
        assert!((s - vn).abs() < 1e-10, "{s} vs {vn}");
    }
}

#[test]
fn energy_functional_matches_trace_with_hamiltonian() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (gamma, lambda) in [(1.0, 1.0), (0.3, -0.7), (0.0, 0.4)] {
        let spec = ModelSpec::chain(4, 1, gamma, lambda);
        let ham = majorana_coefficients(&spec).unwrap();
        let h = dense_hamiltonian(&spec).unwrap();
        let g = random_state(4, &mut rng);
        let rho = density_matrix(&g).unwrap();
        let dense = trace_product(&rho, &h).re / 4.0;
        let fast = energy_density(&g, &ham).unwrap();
        assert!((dense - fast).abs() < 1e-12, "{dense} vs {fast}");
    }
}

#[test]
fn ground_state_matches_dense_diagonalization() {
    let spec = ModelSpec::chain(4, 1, 1.0, 1.0);
    let (e, dense) = dense_ground_state(&spec).unwrap();
    let fast = ground_state(&spec).unwrap().lattice.to_dense();
    assert!((dense.matrix() - fast.matrix()).amax() < 1e-10);
    assert!((e - exact_gs_energy_density(&spec).unwrap()).abs() < 1e-10);

    // deep in the filled band every mode is nearly pure
    let spec = ModelSpec::chain(8, 1, 1.0, 10.0);
    let (_, dense) = dense_ground_state(&spec).unwrap();
    let fast = ground_state(&spec).unwrap().lattice.to_dense();
    assert!((dense.matrix() - fast.matrix()).amax() < 1e-10);
    assert!(spectrum_values(&fast).unwrap().iter().all(|&v| v >= 0.999));

    let spec = ModelSpec::chain(2, 1, 0.0, 0.0);
    let (e, _) = dense_ground_state(&spec).unwrap();
    assert!((e - exact_gs_energy_density(&spec).unwrap()).abs() < 1e-12);
}

/// Two-point Richardson step for a `1/N^2` leading correction.
fn extrapolate(spec: impl Fn(usize) -> ModelSpec, n: usize) -> f64 {
    let a = exact_gs_energy_density(&spec(n)).unwrap();
    let b = exact_gs_energy_density(&spec(2 * n)).unwrap();
    (4.0 * b - a) / 3.0
}

#[test]
fn thermodynamic_energies() {
    let pi = std::f64::consts::PI;
    let ising = extrapolate(|n| ModelSpec::chain(n, 1, 1.0, 1.0), 1024);
    assert!((ising - (-2.0 / pi - 0.5)).abs() < 1e-9, "{ising}");
    let xx = extrapolate(
        |n| ModelSpec::chain(n, 1, 0.0, 0.0).with_zero_mode(ZeroModePolicy::AntiPeriodic),
        1024,
    );
    assert!((xx - (-1.0 / pi)).abs() < 1e-9, "{xx}");
    // γ = 1, λ = 0 is a flat band: Λ(k) = 1
    let flat = exact_gs_energy_density(&ModelSpec::chain(64, 1, 1.0, 0.0)).unwrap();
    assert!((flat + 0.5).abs() < 1e-14);
}

#[test]
fn critical_chain_entropy_grows_by_a_sixth_per_doubling() {
    let spec = ModelSpec::chain(2048, 1, 1.0, 1.0).with_zero_mode(ZeroModePolicy::AntiPeriodic);
    let gs = ground_state(&spec).unwrap();
    let s = entropy_scan(&gs.lattice, &[16, 32, 64, 128]).unwrap();
    for w in s.windows(2) {
        let slope = w[1].1 - w[0].1;
        assert!((slope - 1.0 / 6.0).abs() < 0.15 / 6.0, "{slope}");
    }
}

#[test]
fn ground_states_are_pure() {
    for spec in [
        ModelSpec::chain(64, 2, 1.0, 1.0),
        ModelSpec::chain(64, 1, 0.0, 0.0).with_zero_mode(ZeroModePolicy::AntiPeriodic),
        ModelSpec::square(8, 4, 1.0, 2.0),
    ] {
        let g = ground_state(&spec).unwrap().lattice.to_dense();
        assert!(g.purity_defect() < 1e-10, "{spec:?}");
    }
}
