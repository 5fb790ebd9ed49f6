//! Nearest-neighbour hopping/pairing Hamiltonian with a chemical potential,
//!
//! ```text
//! H = sum_<r,s> 1/2 [ a_r† a_s + γ (a_r† a_s† + a_s a_r) ] - λ sum_r a_r† a_r
//! ```
//!
//! on periodic 1D rings and 2D square tori. The hopping runs over both
//! orientations of every bond; the pairing over the forward orientation
//! `s = r + e_axis`. In Majorana form, with `c_{2r} = a_r + a_r†` and
//! `c_{2r+1} = (a_r - a_r†)/i`, this is `H = (i/4) sum_ab A_ab c_a c_b - λM/2`
//! with, per forward bond `r -> s`,
//!
//! ```text
//! A[2r, 2s+1] = (1 - γ)/2     A[2r+1, 2s] = -(1 + γ)/2     A[2r, 2r+1] = -λ
//! ```
//!
//! and single-particle dispersion
//! `Λ(k) = sqrt((Σ_i cos k_i - λ)^2 + γ^2 (Σ_i sin k_i)^2)`.
//!
//! Modes are grouped into sites of `P = p^D` modes: original site `x` lives on
//! grouped site `x / p` as mode `x % p` (2D: row-major inside the `p x p`
//! patch).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::MajoranaCorrelation;
use crate::lattice::{LatticeCorrelation, Site};
use crate::par;

/// Single-particle levels below this are treated as exact zero modes.
pub const ZERO_MODE_TOL: f64 = 1e-12;

/// What to do with single-particle levels at exactly zero energy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroModePolicy {
    /// Occupy every zero-energy level.
    #[default]
    Occupy,
    /// Anti-periodic boundary conditions: the momentum grid is shifted by
    /// half a spacing. Remaining zeros, if any, are occupied.
    AntiPeriodic,
    /// Fail with [`Error::DegenerateGroundState`].
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub dimension: usize,
    /// Original lattice sites along each axis (before grouping).
    pub sites_per_dim: usize,
    /// `P = p^D` modes per grouped site.
    pub modes_per_site: usize,
    pub gamma: f64,
    pub lambda: f64,
    #[serde(default)]
    pub zero_mode: ZeroModePolicy,
}

impl ModelSpec {
    pub fn chain(sites: usize, modes_per_site: usize, gamma: f64, lambda: f64) -> Self {
        Self { dimension: 1, sites_per_dim: sites, modes_per_site, gamma, lambda, zero_mode: ZeroModePolicy::Occupy }
    }

    pub fn square(side: usize, modes_per_site: usize, gamma: f64, lambda: f64) -> Self {
        Self { dimension: 2, sites_per_dim: side, modes_per_site, gamma, lambda, zero_mode: ZeroModePolicy::Occupy }
    }

    pub fn with_zero_mode(mut self, policy: ZeroModePolicy) -> Self {
        self.zero_mode = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(Error::InvalidModel(format!("dimension {} not in {{1, 2}}", self.dimension)));
        }
        if !self.gamma.is_finite() || !self.lambda.is_finite() {
            return Err(Error::InvalidModel("couplings must be finite".into()));
        }
        let p = self.grouping().ok_or_else(|| {
            Error::InvalidModel(format!(
                "modes_per_site {} is not a perfect {}-th power",
                self.modes_per_site, self.dimension
            ))
        })?;
        if self.sites_per_dim == 0 || !self.sites_per_dim.is_multiple_of(p) {
            return Err(Error::InvalidModel(format!(
                "{} sites per axis cannot be grouped in patches of {p}",
                self.sites_per_dim
            )));
        }
        let grouped = self.sites_per_dim / p;
        if grouped < 2 || !grouped.is_power_of_two() {
            return Err(Error::InvalidModel(format!(
                "{grouped} grouped sites per axis is not a power of two >= 2"
            )));
        }
        Ok(())
    }

    /// Grouping factor `p` with `p^D = P`.
    pub fn grouping(&self) -> Option<usize> {
        let p = match self.dimension {
            1 => self.modes_per_site,
            2 => (self.modes_per_site as f64).sqrt().round() as usize,
            _ => return None,
        };
        (p >= 1 && p.pow(self.dimension as u32) == self.modes_per_site).then_some(p)
    }

    pub fn grouped_sites(&self) -> usize {
        self.sites_per_dim / self.grouping().unwrap_or(1)
    }

    /// Total number of spinless modes `M`.
    pub fn mode_count(&self) -> usize {
        self.sites_per_dim.pow(self.dimension as u32)
    }

    pub fn twisted(&self) -> bool {
        self.zero_mode == ZeroModePolicy::AntiPeriodic
    }

    /// Global mode index of an original lattice site (wrapped).
    pub fn mode_index(&self, x: Site) -> usize {
        let n = self.sites_per_dim as isize;
        let p = self.grouping().unwrap_or(1);
        let g = self.grouped_sites();
        let xs = [x[0].rem_euclid(n) as usize, if self.dimension == 2 { x[1].rem_euclid(n) as usize } else { 0 }];
        let site = (xs[1] / p) * g + xs[0] / p;
        let within = if self.dimension == 2 { (xs[1] % p) * p + xs[0] % p } else { xs[0] % p };
        site * self.modes_per_site + within
    }

    /// Original-lattice coordinates of a mode index (inverse of
    /// [`ModelSpec::mode_index`]).
    pub fn mode_coords(&self, mode: usize) -> Site {
        let p = self.grouping().unwrap_or(1);
        let g = self.grouped_sites();
        let site = mode / self.modes_per_site;
        let within = mode % self.modes_per_site;
        if self.dimension == 1 {
            [(site * p + within) as isize, 0]
        } else {
            let (sx, sy) = (site % g, site / g);
            let (wx, wy) = (within % p, within / p);
            [(sx * p + wx) as isize, (sy * p + wy) as isize]
        }
    }

    fn axes(&self) -> Vec<Site> {
        if self.dimension == 1 {
            vec![[1, 0]]
        } else {
            vec![[1, 0], [0, 1]]
        }
    }

    fn sites(&self) -> Vec<Site> {
        let n = self.sites_per_dim as isize;
        if self.dimension == 1 {
            (0..n).map(|x| [x, 0]).collect()
        } else {
            (0..n).flat_map(|y| (0..n).map(move |x| [x, y])).collect()
        }
    }

    /// Forward bonds `(r, s, sign)`; `sign = -1` marks a bond across the
    /// anti-periodic seam.
    pub fn bonds(&self) -> Vec<(usize, usize, f64)> {
        let n = self.sites_per_dim as isize;
        let mut out = Vec::new();
        for x in self.sites() {
            for e in self.axes() {
                let y = [x[0] + e[0], x[1] + e[1]];
                let wrapped = y[0] >= n || y[1] >= n;
                let sign = if wrapped && self.twisted() { -1.0 } else { 1.0 };
                out.push((self.mode_index(x), self.mode_index(y), sign));
            }
        }
        out
    }

    fn momentum_shift2(&self) -> usize {
        usize::from(self.twisted())
    }

    /// The momentum grid: `k_i = π (2 n_i + s) / N`, `s = 1` when twisted.
    pub fn momenta(&self) -> Vec<[f64; 2]> {
        let n = self.sites_per_dim;
        let s = self.momentum_shift2() as f64;
        let k = |i: usize| PI * (2.0 * i as f64 + s) / n as f64;
        if self.dimension == 1 {
            (0..n).map(|i| [k(i), 0.0]).collect()
        } else {
            (0..n).flat_map(|j| (0..n).map(move |i| [k(i), k(j)])).collect()
        }
    }
}

/// `A` and the constant of `H = (i/4) Σ A_ab c_a c_b + constant_offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianMajorana {
    pub a: DMatrix<f64>,
    /// Total constant `-λ M / 2`.
    pub constant_offset: f64,
}

impl HamiltonianMajorana {
    pub fn mode_count(&self) -> usize {
        self.a.nrows() / 2
    }
}

pub fn majorana_coefficients(spec: &ModelSpec) -> Result<HamiltonianMajorana> {
    spec.validate()?;
    let m = spec.mode_count();
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    let g = spec.gamma;
    for (r, s, sign) in spec.bonds() {
        let hop_pair = sign * 0.5 * (1.0 - g);
        let pair_hop = -sign * 0.5 * (1.0 + g);
        a[(2 * r, 2 * s + 1)] += hop_pair;
        a[(2 * s + 1, 2 * r)] -= hop_pair;
        a[(2 * r + 1, 2 * s)] += pair_hop;
        a[(2 * s, 2 * r + 1)] -= pair_hop;
    }
    for r in 0..m {
        a[(2 * r, 2 * r + 1)] -= spec.lambda;
        a[(2 * r + 1, 2 * r)] += spec.lambda;
    }
    Ok(HamiltonianMajorana { a, constant_offset: -0.5 * spec.lambda * m as f64 })
}

/// Single-particle excitation energy `Λ(k) >= 0`.
pub fn dispersion(spec: &ModelSpec, k: &[f64]) -> f64 {
    let (xi, s) = band(spec, k);
    (xi * xi + spec.gamma * spec.gamma * s * s).sqrt()
}

fn band(spec: &ModelSpec, k: &[f64]) -> (f64, f64) {
    let d = spec.dimension.min(k.len());
    let cos: f64 = k[..d].iter().map(|x| x.cos()).sum();
    let sin: f64 = k[..d].iter().map(|x| x.sin()).sum();
    (cos - spec.lambda, sin)
}

/// Exact ground state in translation-invariant form plus the number of
/// zero-energy levels that were resolved by the occupation convention.
#[derive(Clone, Debug)]
pub struct GroundState {
    pub lattice: LatticeCorrelation,
    pub zero_modes: usize,
    pub policy: ZeroModePolicy,
}

/// Ground state on the grouped lattice.
///
/// Per momentum the Majorana correlation is `Γ(k) = A(k) / Λ(k)`; zero modes
/// get `Γ(k) = -J` (occupied). Real-space entries follow from a direct sum
/// over the grid:
///
/// ```text
/// Γ[(x,0),(x+d,1)] = 1/N Σ_k (ξ cos kd - γ s sin kd) / Λ
/// Γ[(x,1),(x+d,0)] = 1/N Σ_k (-ξ cos kd - γ s sin kd) / Λ
/// ```
pub fn ground_state(spec: &ModelSpec) -> Result<GroundState> {
    spec.validate()?;
    let n = spec.sites_per_dim;
    let dim = spec.dimension;
    let shift = spec.momentum_shift2();
    let momenta = spec.momenta();

    // per-momentum weights (ξ/Λ, γ s/Λ); zero modes occupy
    let mut zero_modes = 0;
    let weights: Vec<(f64, f64)> = momenta
        .iter()
        .map(|k| {
            let (xi, s) = band(spec, k);
            let lam = (xi * xi + spec.gamma * spec.gamma * s * s).sqrt();
            if lam < ZERO_MODE_TOL {
                zero_modes += 1;
                (-1.0, 0.0)
            } else {
                (xi / lam, spec.gamma * s / lam)
            }
        })
        .collect();
    if zero_modes > 0 && spec.zero_mode == ZeroModePolicy::Reject {
        return Err(Error::DegenerateGroundState { count: zero_modes });
    }

    // angle of k·d is π m / N with m = Σ (2 n_i + s) d_i mod 2N
    let two_n = 2 * n;
    let cos_t: Vec<f64> = (0..two_n).map(|m| (PI * m as f64 / n as f64).cos()).collect();
    let sin_t: Vec<f64> = (0..two_n).map(|m| (PI * m as f64 / n as f64).sin()).collect();
    let kidx: Vec<[usize; 2]> = if dim == 1 {
        (0..n).map(|i| [2 * i + shift, 0]).collect()
    } else {
        (0..n).flat_map(|j| (0..n).map(move |i| [2 * i + shift, 2 * j + shift])).collect()
    };
    let nk = momenta.len() as f64;
    let n_disp = n.pow(dim as u32);
    // f(d) = (Γ[(0,0),(d,1)], Γ[(0,1),(d,0)]) on the original lattice
    let f: Vec<(f64, f64)> = par::map_range(n_disp, |di| {
        let d = [di % n, di / n];
        let mut f01 = 0.0;
        let mut f10 = 0.0;
        for (ki, &(xw, sw)) in kidx.iter().zip(&weights) {
            let m = (ki[0] * d[0] + ki[1] * d[1]) % two_n;
            let (c, s) = (cos_t[m], sin_t[m]);
            f01 += xw * c - sw * s;
            f10 += -xw * c - sw * s;
        }
        (f01 / nk, f10 / nk)
    });

    let lattice = LatticeCorrelation::from_original(spec, |d: Site| {
        // d given in [0, n) per axis
        f[d[1] as usize * n + d[0] as usize]
    });
    Ok(GroundState { lattice, zero_modes, policy: spec.zero_mode })
}

/// Dense `2M x 2M` ground-state correlation matrix.
pub fn ground_state_correlation(spec: &ModelSpec) -> Result<MajoranaCorrelation> {
    Ok(ground_state(spec)?.lattice.to_dense())
}

/// `<H>/M = tr(A Γ) / (4M) + offset / M`.
pub fn energy_density(gamma: &MajoranaCorrelation, ham: &HamiltonianMajorana) -> Result<f64> {
    let m = ham.mode_count();
    if gamma.mode_count() != m {
        return Err(Error::DimensionMismatch { expected: m, found: gamma.mode_count() });
    }
    let a = &ham.a;
    let g = gamma.matrix();
    let mut tr = 0.0;
    for i in 0..2 * m {
        for j in 0..2 * m {
            tr += a[(i, j)] * g[(j, i)];
        }
    }
    Ok(tr / (4.0 * m as f64) + ham.constant_offset / m as f64)
}

/// Energy per mode of a level-0 translation-invariant state, averaged over
/// the `P` modes of one grouped site.
pub fn lattice_energy_density(spec: &ModelSpec, state: &LatticeCorrelation) -> Result<f64> {
    spec.validate()?;
    if state.modes_per_site() != spec.modes_per_site || state.sites_per_axis() != spec.grouped_sites() {
        return Err(Error::DimensionMismatch { expected: spec.mode_count(), found: state.mode_count() });
    }
    let p = spec.grouping().unwrap_or(1) as isize;
    let patch: Vec<Site> = if spec.dimension == 1 {
        (0..p).map(|x| [x, 0]).collect()
    } else {
        (0..p).flat_map(|y| (0..p).map(move |x| [x, y])).collect()
    };
    let g = spec.gamma;
    let mut tr = 0.0;
    for x in &patch {
        for e in spec.axes() {
            let y = [x[0] + e[0], x[1] + e[1]];
            // A_ab Γ_ba + A_ba Γ_ab = 2 A_ab Γ_ba
            tr += 2.0 * 0.5 * (1.0 - g) * state.original_entry(p as usize, y, 1, *x, 0);
            tr += 2.0 * -0.5 * (1.0 + g) * state.original_entry(p as usize, y, 0, *x, 1);
        }
        tr += 2.0 * -spec.lambda * state.original_entry(p as usize, *x, 1, *x, 0);
    }
    Ok(tr / (4.0 * patch.len() as f64) - 0.5 * spec.lambda)
}

/// Exact ground-state energy per mode, `-(1/2N) Σ_k Λ(k) - λ/2`.
pub fn exact_gs_energy_density(spec: &ModelSpec) -> Result<f64> {
    spec.validate()?;
    let momenta = spec.momenta();
    let sum: f64 = momenta.iter().map(|k| dispersion(spec, k)).sum();
    Ok(-0.5 * sum / momenta.len() as f64 - 0.5 * spec.lambda)
}
