//! Dense Fock-space oracle for small systems.
//!
//! Fermion operators are built through the Jordan-Wigner construction on
//! `2^L` basis states `|n_0 n_1 ... n_{L-1}>` (bit `r` of the index is
//! `n_r`). Majorana operators are kept as monomial matrices (one nonzero
//! per column), which makes the `4^L`-term Wick expansion of a Gaussian
//! density matrix affordable up to `L = 8`.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{block_diagonalize, MajoranaCorrelation};
use crate::linalg;
use crate::model::ModelSpec;

pub type C64 = Complex<f64>;

/// Largest block the oracle accepts.
pub const ORACLE_MAX_MODES: usize = 8;

/// Operator with exactly one nonzero per column:
/// `op |n> = phase[n] |target[n]>`.
#[derive(Clone, Debug)]
struct Monomial {
    target: Vec<usize>,
    phase: Vec<C64>,
}

impl Monomial {
    fn identity(dim: usize) -> Self {
        Self { target: (0..dim).collect(), phase: vec![C64::new(1.0, 0.0); dim] }
    }

    /// `self * other`
    fn mul(&self, other: &Monomial) -> Monomial {
        let dim = self.target.len();
        let mut target = vec![0; dim];
        let mut phase = vec![C64::new(0.0, 0.0); dim];
        for n in 0..dim {
            let mid = other.target[n];
            target[n] = self.target[mid];
            phase[n] = other.phase[n] * self.phase[mid];
        }
        Monomial { target, phase }
    }
}

fn jw_sign(n: usize, r: usize) -> f64 {
    if (n & ((1 << r) - 1)).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Majorana monomial `c_j` for `j < 2L`.
fn majorana(l: usize, j: usize) -> Monomial {
    let dim = 1 << l;
    let r = j / 2;
    let mut target = vec![0; dim];
    let mut phase = vec![C64::new(0.0, 0.0); dim];
    for n in 0..dim {
        let s = jw_sign(n, r);
        let occupied = n & (1 << r) != 0;
        target[n] = n ^ (1 << r);
        phase[n] = if j.is_multiple_of(2) {
            C64::new(s, 0.0)
        } else if occupied {
            C64::new(0.0, -s)
        } else {
            C64::new(0.0, s)
        };
    }
    Monomial { target, phase }
}

/// Dense annihilation operators `a_r`, `r < L`.
pub fn annihilators(l: usize) -> Vec<DMatrix<C64>> {
    let dim = 1 << l;
    (0..l)
        .map(|r| {
            let mut a = DMatrix::zeros(dim, dim);
            for n in 0..dim {
                if n & (1 << r) != 0 {
                    a[(n ^ (1 << r), n)] = C64::new(jw_sign(n, r), 0.0);
                }
            }
            a
        })
        .collect()
}

/// Dense Majorana operators `c_0 .. c_{2L-1}`.
pub fn majoranas(l: usize) -> Vec<DMatrix<C64>> {
    let dim = 1 << l;
    (0..2 * l)
        .map(|j| {
            let m = majorana(l, j);
            let mut out = DMatrix::zeros(dim, dim);
            for n in 0..dim {
                out[(m.target[n], n)] = m.phase[n];
            }
            out
        })
        .collect()
}

/// Gaussian density matrix from Wick's theorem,
/// `ρ = 2^-L Σ_{S even} (-i)^{|S|/2} Pf(Γ_S) c_S` with `c_S` ascending.
pub fn density_matrix(gamma: &MajoranaCorrelation) -> Result<DMatrix<C64>> {
    let l = gamma.mode_count();
    if l > ORACLE_MAX_MODES {
        return Err(Error::OracleTooLarge { modes: l, limit: ORACLE_MAX_MODES });
    }
    let dim = 1usize << l;
    let nmaj = 2 * l;
    let ops: Vec<Monomial> = (0..nmaj).map(|j| majorana(l, j)).collect();
    let mut rho = DMatrix::<C64>::zeros(dim, dim);
    let g = gamma.matrix();
    for mask in 0usize..(1 << nmaj) {
        let k = mask.count_ones() as usize;
        if k % 2 == 1 {
            continue;
        }
        let idx: Vec<usize> = (0..nmaj).filter(|j| mask & (1 << j) != 0).collect();
        let pf = if idx.is_empty() { 1.0 } else { linalg::pfaffian(&linalg::principal(g, &idx)) };
        if pf == 0.0 {
            continue;
        }
        let coeff = match (k / 2) % 4 {
            0 => C64::new(pf, 0.0),
            1 => C64::new(0.0, -pf),
            2 => C64::new(-pf, 0.0),
            _ => C64::new(0.0, pf),
        };
        let mut op = Monomial::identity(dim);
        for &j in &idx {
            op = op.mul(&ops[j]);
        }
        for n in 0..dim {
            rho[(op.target[n], n)] += coeff * op.phase[n];
        }
    }
    Ok(rho / C64::new(dim as f64, 0.0))
}

/// Reduced density matrix eigenvalues computed two independent ways.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSpectrum {
    /// `Π_r (1 ± v_r)/2` over all sign choices, descending.
    pub from_spectrum: Vec<f64>,
    /// Eigenvalues of the Wick-expanded dense density matrix, descending.
    pub from_density_matrix: Vec<f64>,
}

impl OracleSpectrum {
    pub fn max_discrepancy(&self) -> f64 {
        self.from_spectrum
            .iter()
            .zip(&self.from_density_matrix)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Product-form eigenvalues of a block from its canonical values.
pub fn product_eigenvalues(values: &[f64]) -> Vec<f64> {
    let mut out = vec![1.0];
    for &v in values {
        out = out.iter().flat_map(|&p| [p * 0.5 * (1.0 + v), p * 0.5 * (1.0 - v)]).collect();
    }
    out.sort_by(|a, b| b.partial_cmp(a).unwrap());
    out
}

pub fn many_body_oracle(gamma: &MajoranaCorrelation) -> Result<OracleSpectrum> {
    let l = gamma.mode_count();
    if l > ORACLE_MAX_MODES {
        return Err(Error::OracleTooLarge { modes: l, limit: ORACLE_MAX_MODES });
    }
    let spectrum = block_diagonalize(gamma)?;
    let from_spectrum = product_eigenvalues(&spectrum.values);
    let rho = density_matrix(gamma)?;
    let mut from_density_matrix: Vec<f64> = rho.symmetric_eigenvalues().iter().copied().collect();
    from_density_matrix.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(OracleSpectrum { from_spectrum, from_density_matrix })
}

/// Dense many-body Hamiltonian of a small model (at most 8 modes).
pub fn dense_hamiltonian(spec: &ModelSpec) -> Result<DMatrix<C64>> {
    spec.validate()?;
    let m = spec.mode_count();
    if m > ORACLE_MAX_MODES {
        return Err(Error::OracleTooLarge { modes: m, limit: ORACLE_MAX_MODES });
    }
    let a = annihilators(m);
    let ad: Vec<DMatrix<C64>> = a.iter().map(|x| x.adjoint()).collect();
    let dim = 1 << m;
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    let half = C64::new(0.5, 0.0);
    let gam = C64::new(0.5 * spec.gamma, 0.0);
    for (r, s, sign) in spec.bonds() {
        let sg = C64::new(sign, 0.0);
        h += (&ad[r] * &a[s] + &ad[s] * &a[r]) * (half * sg);
        h += (&ad[r] * &ad[s] + &a[s] * &a[r]) * (gam * sg);
    }
    for r in 0..m {
        h -= &ad[r] * &a[r] * C64::new(spec.lambda, 0.0);
    }
    Ok(h)
}

/// Exact many-body ground state of a small model: energy per mode and the
/// Majorana correlation matrix `Γ_ab = Im <c_a c_b>`. A degenerate ground
/// space is resolved by taking the state of largest particle number.
pub fn dense_ground_state(spec: &ModelSpec) -> Result<(f64, MajoranaCorrelation)> {
    let h = dense_hamiltonian(spec)?;
    let m = spec.mode_count();
    let dim = 1 << m;
    let eig = h.symmetric_eigen();
    let e0 = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let ground: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] < e0 + 1e-9).collect();
    let basis = DMatrix::from_fn(dim, ground.len(), |r, c| eig.eigenvectors[(r, ground[c])]);
    let number = DMatrix::<C64>::from_fn(dim, dim, |r, c| {
        if r == c {
            C64::new(r.count_ones() as f64, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let restricted = basis.adjoint() * &number * &basis;
    let neig = restricted.symmetric_eigen();
    let top = (0..ground.len())
        .max_by(|&a, &b| neig.eigenvalues[a].partial_cmp(&neig.eigenvalues[b]).unwrap())
        .unwrap();
    let psi = &basis * neig.eigenvectors.column(top);

    let c = majoranas(m);
    let mut g = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..2 * m {
        let ci_psi = &c[i].adjoint() * &psi;
        for j in 0..2 * m {
            if i != j {
                let v = ci_psi.dotc(&(&c[j] * &psi));
                g[(i, j)] = v.im;
            }
        }
    }
    Ok((e0 / m as f64, MajoranaCorrelation::new(g)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmax(m: &DMatrix<C64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn majoranas_square_to_one_and_anticommute() {
        let c = majoranas(3);
        let id = DMatrix::<C64>::identity(8, 8);
        for i in 0..6 {
            assert!(cmax(&(&c[i] * &c[i] - &id)) < 1e-14);
            assert!(cmax(&(c[i].adjoint() - &c[i])) < 1e-14);
            for j in i + 1..6 {
                assert!(cmax(&(&c[i] * &c[j] + &c[j] * &c[i])) < 1e-14);
            }
        }
    }

    #[test]
    fn oracle_trivial_spectra() {
        let pure = MajoranaCorrelation::vacuum(2);
        let o = many_body_oracle(&pure).unwrap();
        assert_eq!(o.from_spectrum, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(o.max_discrepancy() < 1e-12);

        let mixed = MajoranaCorrelation::zeros(1);
        let o = many_body_oracle(&mixed).unwrap();
        assert_eq!(o.from_spectrum, vec![0.5, 0.5]);

        let m = MajoranaCorrelation::new(linalg::canonical_matrix(&[0.6])).unwrap();
        let o = many_body_oracle(&m).unwrap();
        assert!((o.from_spectrum[0] - 0.8).abs() < 1e-15 && (o.from_spectrum[1] - 0.2).abs() < 1e-15);
        assert!(o.max_discrepancy() < 1e-12);
    }

    #[test]
    fn oracle_rejects_large_blocks() {
        assert!(matches!(
            many_body_oracle(&MajoranaCorrelation::zeros(9)),
            Err(Error::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn number_operator_matches_majorana_form() {
        // n = 1/2 + (i/2) c_0 c_1
        let a = annihilators(1);
        let c = majoranas(1);
        let n = a[0].adjoint() * &a[0];
        let half = DMatrix::<C64>::identity(2, 2) * C64::new(0.5, 0.0);
        let via = half + &c[0] * &c[1] * C64::new(0.0, 0.5);
        assert!(cmax(&(n - via)) < 1e-15);
    }
}
