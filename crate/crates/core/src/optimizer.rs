//! Alternating optimisation of one layer: a disentangler `U` shared by every
//! plaquette and an isometry `W = R Y` on the block.
//!
//! Only the plaquettes touching the central block influence it, so the
//! optimiser works on the "cone" of the window: the sites of those
//! plaquettes, plaquette by plaquette. Conjugating the cone by `U` on every
//! plaquette and keeping the rows of the central sites is the same as
//! applying `Ũ`, the matrix whose columns are the columns of `U` that land
//! on the central Majoranas. The purity of the removed modes is then
//!
//! `C(U, R) = Σ_{r >= P'} (R^T Ũ^T Γ Ũ R)_{2r, 2r+1}`.
//!
//! For fixed `U` the canonical frame of the disentangled block maximises
//! `C` exactly. For fixed `R`, `C` is quadratic in `U`; holding one copy fixed
//! gives a linear environment `E` with `C = tr(E^T U)` at the current point,
//! and `U` moves to the rotation maximising that linear form. A step that
//! lowers `C` is undone and replaced by a sweep of single-plane rotations,
//! each of which maximises `C` exactly along its angle.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{block_diagonalize, MajoranaCorrelation};
use crate::geometry::BlockGeometry;
use crate::linalg;

/// Drift in `U U^T - 1` tolerated before re-projecting onto `SO(n)`.
const ORTHO_DRIFT: f64 = 1e-12;

/// Weight of the current `U` added to the environment before the polar step.
const PROXIMAL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UUpdate {
    /// Polar projection of the linearised environment, Givens sweep fallback.
    #[default]
    Polar,
    /// Givens sweeps only.
    Givens,
    /// `U = 1` throughout (no disentangling).
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    /// Stop once one iteration gains less than this.
    pub tol: f64,
    pub u_update: UUpdate,
    /// Weight of the kept modes' purity in the objective. The removed
    /// modes alone leave the entanglement carried by the kept modes
    /// unconstrained; a small weight breaks that tie towards unentangled
    /// coarse sites.
    pub kept_weight: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { max_iters: 2000, tol: 1e-12, u_update: UUpdate::Polar, kept_weight: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disentangler {
    /// `2 P n_cell` rotation applied to the Majoranas of every plaquette.
    #[serde(with = "crate::linalg::rows")]
    pub matrix: DMatrix<f64>,
}

impl Disentangler {
    pub fn identity(dim: usize) -> Self {
        Self { matrix: DMatrix::identity(dim, dim) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Isometry {
    /// Columns `2r, 2r + 1` of `R` are the Majoranas of block mode `r`; the
    /// first `keep` modes survive.
    #[serde(with = "crate::linalg::rows")]
    pub rotation: DMatrix<f64>,
    pub keep: usize,
}

impl Isometry {
    pub fn modes(&self) -> usize {
        self.rotation.nrows() / 2
    }

    /// `Y_{P'}`: unit antisymmetric blocks on the kept modes.
    pub fn mask(&self) -> DMatrix<f64> {
        keep_mask(self.modes(), self.keep)
    }

    /// `W = R Y_{P'}`.
    pub fn w(&self) -> DMatrix<f64> {
        &self.rotation * self.mask()
    }
}

/// Unit blocks on modes `0..keep` of `l`.
pub fn keep_mask(l: usize, keep: usize) -> DMatrix<f64> {
    linalg::canonical_matrix(&(0..l).map(|r| if r < keep { 1.0 } else { 0.0 }).collect::<Vec<_>>())
}

/// Unit blocks on modes `keep..l` of `l` (`Y_L - Y_{P'}`).
pub fn removal_mask(l: usize, keep: usize) -> DMatrix<f64> {
    linalg::canonical_matrix(&(0..l).map(|r| if r < keep { 0.0 } else { 1.0 }).collect::<Vec<_>>())
}

/// `tr(Γ Y^T) / 2`.
pub fn purity_cost(gamma: &MajoranaCorrelation, mask: &DMatrix<f64>) -> Result<f64> {
    let g = gamma.matrix();
    if g.shape() != mask.shape() {
        return Err(Error::DimensionMismatch { expected: g.nrows(), found: mask.nrows() });
    }
    Ok(0.5 * g.component_mul(mask).sum())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub iterations: usize,
    /// Accepted cost after initialisation and after every iteration.
    pub costs: Vec<f64>,
    pub converged: bool,
    pub max_mixedness: f64,
    pub givens_sweeps: usize,
}

impl OptimizationTrace {
    pub fn is_monotone(&self) -> bool {
        self.costs.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Where the central block sits inside a window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowLayout {
    /// Window Majorana indices of the cone, plaquette by plaquette.
    pub cone: Vec<usize>,
    /// Majoranas per plaquette (the size of `U`).
    pub slot_dim: usize,
    /// For every central Majorana: its plaquette and the column of `U`.
    pub central: Vec<(usize, usize)>,
}

impl WindowLayout {
    pub fn new(geometry: &BlockGeometry) -> Result<Self> {
        let m2 = 2 * geometry.modes_per_site;
        let window = geometry.window_sites(0)?;
        let cone_sites = geometry.cone_sites(0)?;
        let mut cone = Vec::with_capacity(cone_sites.len() * m2);
        for s in &cone_sites {
            let pos = window
                .iter()
                .position(|w| w == s)
                .ok_or_else(|| Error::Geometry(format!("cone site {s:?} outside the window")))?;
            cone.extend(pos * m2..(pos + 1) * m2);
        }
        let central = geometry
            .cone_central()
            .into_iter()
            .flat_map(|(slot, site)| (0..m2).map(move |m| (slot, site * m2 + m)))
            .collect();
        Ok(Self { cone, slot_dim: m2 * geometry.sites_per_block(), central })
    }

    pub fn cone_dim(&self) -> usize {
        self.cone.len()
    }

    pub fn block_dim(&self) -> usize {
        self.central.len()
    }

    /// `Ũ`: `U` restricted to the columns landing on the central block.
    pub fn embed(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.slot_dim;
        let mut out = DMatrix::zeros(self.cone_dim(), self.block_dim());
        for (a, &(slot, q)) in self.central.iter().enumerate() {
            for i in 0..k {
                out[(slot * k + i, a)] = u[(i, q)];
            }
        }
        out
    }

    /// Folds a cone x block matrix back onto the entries of `U` it multiplies.
    fn fold(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.slot_dim;
        let mut e = DMatrix::zeros(k, k);
        for (a, &(slot, q)) in self.central.iter().enumerate() {
            for i in 0..k {
                e[(i, q)] += m[(slot * k + i, a)];
            }
        }
        e
    }

    pub fn cone_matrix(&self, window: &MajoranaCorrelation) -> Result<DMatrix<f64>> {
        let n = window.matrix().nrows();
        if let Some(&bad) = self.cone.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        Ok(linalg::principal(window.matrix(), &self.cone))
    }
}

fn block_of(cone: &DMatrix<f64>, ut: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = ut.transpose() * cone * ut;
    linalg::antisymmetrize(&mut g);
    g
}

/// Canonical-frame isometry of a disentangled block: the `keep` most mixed
/// modes are kept, the purest ones are removed.
pub fn optimal_isometry_given_disentanglers(central_block: &MajoranaCorrelation, keep: usize) -> Result<Isometry> {
    let l = central_block.mode_count();
    if keep == 0 || keep > l {
        return Err(Error::KeepOutOfRange { keep, modes: l });
    }
    let spectrum = block_diagonalize(central_block)?.mixed_first();
    Ok(Isometry { rotation: spectrum.rotation.transpose(), keep })
}

fn objective(g: &DMatrix<f64>, r: &DMatrix<f64>, keep: usize, kept_weight: f64) -> f64 {
    let l = g.nrows() / 2;
    let c = r.transpose() * g * r;
    let purity = |m: usize| c[(2 * m, 2 * m + 1)];
    (keep..l).map(purity).sum::<f64>() + kept_weight * (0..keep).map(purity).sum::<f64>()
}

/// `K_a` such that the cost is `Σ_ij G_ij K_ij`.
fn cost_kernel(r: &DMatrix<f64>, keep: usize, kept_weight: f64) -> DMatrix<f64> {
    let n = r.nrows();
    let mut k = DMatrix::zeros(n, n);
    for m in 0..n / 2 {
        let w = if m < keep { kept_weight } else { 1.0 };
        k += r.column(2 * m) * r.column(2 * m + 1).transpose() * w;
    }
    (&k - k.transpose()) * 0.5
}

struct Problem<'a> {
    layout: &'a WindowLayout,
    cone: DMatrix<f64>,
}

impl Problem<'_> {
    fn block(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        block_of(&self.cone, &self.layout.embed(u))
    }

    fn cost_fixed_r(&self, u: &DMatrix<f64>, kernel: &DMatrix<f64>) -> f64 {
        self.block(u).component_mul(kernel).sum()
    }

    fn environment(&self, u: &DMatrix<f64>, kernel: &DMatrix<f64>) -> DMatrix<f64> {
        let ut = self.layout.embed(u);
        let m = -(&self.cone * ut * kernel);
        self.layout.fold(&m)
    }

    /// One sweep over all rotation planes of `U`, each angle chosen as the
    /// exact maximiser of the cost along it (a trigonometric polynomial of
    /// degree two, fitted from five samples).
    fn givens_sweep(&self, u: &mut DMatrix<f64>, kernel: &DMatrix<f64>) {
        let n = u.nrows();
        let samples: Vec<f64> = (0..5).map(|k| 2.0 * std::f64::consts::PI * k as f64 / 5.0).collect();
        for i in 0..n {
            for j in i + 1..n {
                let rotated = |theta: f64| -> DMatrix<f64> {
                    let mut v = u.clone();
                    let (s, c) = theta.sin_cos();
                    for row in 0..n {
                        let a = v[(row, i)];
                        let b = v[(row, j)];
                        v[(row, i)] = c * a + s * b;
                        v[(row, j)] = -s * a + c * b;
                    }
                    v
                };
                let f: Vec<f64> = samples.iter().map(|&t| self.cost_fixed_r(&rotated(t), kernel)).collect();
                let mut coef = [0.0; 5];
                for (t, fv) in samples.iter().zip(&f) {
                    coef[0] += fv / 5.0;
                    coef[1] += 0.4 * fv * t.cos();
                    coef[2] += 0.4 * fv * t.sin();
                    coef[3] += 0.4 * fv * (2.0 * t).cos();
                    coef[4] += 0.4 * fv * (2.0 * t).sin();
                }
                let model = |t: f64| {
                    coef[0] + coef[1] * t.cos() + coef[2] * t.sin() + coef[3] * (2.0 * t).cos() + coef[4] * (2.0 * t).sin()
                };
                let dmodel = |t: f64| {
                    -coef[1] * t.sin() + coef[2] * t.cos() - 2.0 * coef[3] * (2.0 * t).sin()
                        + 2.0 * coef[4] * (2.0 * t).cos()
                };
                let d2model = |t: f64| {
                    -coef[1] * t.cos() - coef[2] * t.sin() - 4.0 * coef[3] * (2.0 * t).cos()
                        - 4.0 * coef[4] * (2.0 * t).sin()
                };
                let mut best = 0.0;
                let mut best_val = model(0.0);
                for k in 1..64 {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                    let v = model(t);
                    if v > best_val {
                        best = t;
                        best_val = v;
                    }
                }
                for _ in 0..8 {
                    let h = d2model(best);
                    if h >= 0.0 {
                        break;
                    }
                    best -= dmodel(best) / h;
                }
                if best.rem_euclid(2.0 * std::f64::consts::PI) == 0.0 {
                    continue;
                }
                let candidate = rotated(best);
                if self.cost_fixed_r(&candidate, kernel) > f[0] {
                    *u = candidate;
                }
            }
        }
        if linalg::orthogonality_residual(u) > ORTHO_DRIFT {
            *u = linalg::polar_so(u);
        }
    }
}

/// Optimises `U` and `R` for the cone of a window. Returns the best state
/// reached; `trace.converged` is false when `max_iters` ran out first.
pub fn optimize_cone(
    layout: &WindowLayout,
    cone: DMatrix<f64>,
    keep: usize,
    options: &OptimizerOptions,
) -> Result<(Disentangler, Isometry, OptimizationTrace)> {
    if cone.nrows() != layout.cone_dim() {
        return Err(Error::DimensionMismatch { expected: layout.cone_dim(), found: cone.nrows() });
    }
    let l = layout.block_dim() / 2;
    if keep == 0 || keep > l {
        return Err(Error::KeepOutOfRange { keep, modes: l });
    }
    let problem = Problem { layout, cone };
    let r_step = |u: &DMatrix<f64>| -> Result<(Isometry, f64)> {
        let g = problem.block(u);
        let iso = optimal_isometry_given_disentanglers(&MajoranaCorrelation::new(g.clone())?, keep)?;
        let c = objective(&g, &iso.rotation, keep, options.kept_weight);
        Ok((iso, c))
    };

    let mut u = DMatrix::identity(layout.slot_dim, layout.slot_dim);
    let (mut iso, mut cost) = r_step(&u)?;
    let mut trace = OptimizationTrace { costs: vec![cost], ..Default::default() };

    if options.u_update != UUpdate::Frozen && keep < l {
        while trace.iterations < options.max_iters {
            trace.iterations += 1;
            let kernel = cost_kernel(&iso.rotation, keep, options.kept_weight);
            let before = problem.cost_fixed_r(&u, &kernel);
            let mut next = u.clone();
            let mut polar_ok = false;
            if options.u_update == UUpdate::Polar {
                // the proximal term pins directions the cost does not see
                let e = problem.environment(&u, &kernel);
                let mu = PROXIMAL * e.norm().max(f64::MIN_POSITIVE);
                next = linalg::polar_so(&(e + &u * mu));
                polar_ok = problem.cost_fixed_r(&next, &kernel) >= before;
            }
            if !polar_ok {
                next = u.clone();
                problem.givens_sweep(&mut next, &kernel);
                trace.givens_sweeps += 1;
            }
            let (next_iso, next_cost) = r_step(&next)?;
            if next_cost <= cost {
                trace.converged = true;
                break;
            }
            let gain = next_cost - cost;
            u = next;
            iso = next_iso;
            cost = next_cost;
            trace.costs.push(cost);
            if gain < options.tol {
                trace.converged = true;
                break;
            }
        }
    } else {
        trace.converged = true;
    }

    let g = problem.block(&u);
    let c = iso.rotation.transpose() * &g * &iso.rotation;
    trace.max_mixedness = (keep..l).map(|m| 1.0 - c[(2 * m, 2 * m + 1)]).fold(0.0, f64::max);
    Ok((Disentangler { matrix: u }, iso, trace))
}

pub fn optimize_layer(
    window: &MajoranaCorrelation,
    geometry: &BlockGeometry,
    keep: usize,
    options: &OptimizerOptions,
) -> Result<(Disentangler, Isometry, OptimizationTrace)> {
    let layout = WindowLayout::new(geometry)?;
    let cone = layout.cone_matrix(window)?;
    optimize_cone(&layout, cone, keep, options)
}

fn disentangled_block(
    window: &MajoranaCorrelation,
    u: &Disentangler,
    w: &Isometry,
    geometry: &BlockGeometry,
) -> Result<DMatrix<f64>> {
    let layout = WindowLayout::new(geometry)?;
    if u.matrix.nrows() != layout.slot_dim {
        return Err(Error::DimensionMismatch { expected: layout.slot_dim, found: u.matrix.nrows() });
    }
    if w.rotation.nrows() != layout.block_dim() {
        return Err(Error::DimensionMismatch { expected: layout.block_dim(), found: w.rotation.nrows() });
    }
    let g = block_of(&layout.cone_matrix(window)?, &layout.embed(&u.matrix));
    Ok(w.rotation.transpose() * g * &w.rotation)
}

/// `Γ'` of the kept modes of the central block.
pub fn coarse_grain_window(
    window: &MajoranaCorrelation,
    u: &Disentangler,
    w: &Isometry,
    geometry: &BlockGeometry,
) -> Result<MajoranaCorrelation> {
    let c = disentangled_block(window, u, w, geometry)?;
    let k = 2 * w.keep;
    MajoranaCorrelation::new(c.view((0, 0), (k, k)).clone_owned())
}

/// `Γ̄'` of the modes the isometry removes.
pub fn removed_mode_correlation(
    window: &MajoranaCorrelation,
    u: &Disentangler,
    w: &Isometry,
    geometry: &BlockGeometry,
) -> Result<MajoranaCorrelation> {
    let c = disentangled_block(window, u, w, geometry)?;
    let k = 2 * w.keep;
    let n = c.nrows();
    MajoranaCorrelation::new(c.view((k, k), (n - k, n - k)).clone_owned())
}
