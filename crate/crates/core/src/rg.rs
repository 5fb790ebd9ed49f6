//! The RG flow: one optimised layer per level, applied to the whole lattice.
//!
//! Each level is translation invariant, so applying a layer only needs the
//! correlations between the cone of block 0 and the cone of block `D`:
//!
//! `Γ'(D) = [R^T Ũ^T Γ[cone_0, cone_0 + 2D] Ũ R]_{kept, kept}`.
//!
//! The dense route (conjugating the full `2M x 2M` matrix by the direct sum
//! of all disentanglers and isometries) is kept for reconstruction and as
//! the reference the fast route is tested against.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{block_diagonalize, block_entropy, extract_submatrix, MajoranaCorrelation};
use crate::geometry::{build_geometry, BlockGeometry};
use crate::lattice::{LatticeCorrelation, Site};
use crate::model::{energy_density, exact_gs_energy_density, ground_state, majorana_coefficients, ModelSpec};
use crate::optimizer::{optimize_cone, Disentangler, Isometry, OptimizationTrace, OptimizerOptions, WindowLayout};
use crate::par;

/// Largest mode count for which the flow reconstructs the fine state
/// densely to report its energy.
pub const DENSE_RECONSTRUCTION_LIMIT: usize = 2048;

/// Smallest side a lattice may have before a step.
pub const MIN_SIDE: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepPolicy {
    /// `P' = P` of the incoming level.
    #[default]
    SameAsInput,
    Fixed(usize),
    /// No truncation: every block mode survives.
    All,
}

impl KeepPolicy {
    pub fn resolve(self, modes_per_site: usize, modes_per_block: usize) -> usize {
        match self {
            KeepPolicy::SameAsInput => modes_per_site,
            KeepPolicy::Fixed(k) => k,
            KeepPolicy::All => modes_per_block,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowOptions {
    pub levels: usize,
    pub keep: KeepPolicy,
    pub optimizer: OptimizerOptions,
    /// Block sizes for the per-level entropy scan.
    pub entropy_ladder: Vec<usize>,
    /// Reconstruct the fine state at every level to report its energy.
    pub energy: bool,
    pub gauge_fix: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            levels: 6,
            keep: KeepPolicy::SameAsInput,
            optimizer: OptimizerOptions::default(),
            entropy_ladder: Vec::new(),
            energy: true,
            gauge_fix: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeraLayer {
    pub level: usize,
    pub disentangler: Disentangler,
    pub isometry: Isometry,
    pub geometry: BlockGeometry,
    pub p_in: usize,
    pub p_out: usize,
    pub trace: OptimizationTrace,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RGReport {
    pub level: usize,
    pub sites_per_axis: usize,
    pub modes_per_site: usize,
    pub eps_max: f64,
    pub eps_mean: f64,
    /// Entropy (bits) of one block of `2^D` sites.
    pub block_entropy: f64,
    pub entropies: Vec<(usize, f64)>,
    pub energy_density: Option<f64>,
    pub energy_error_rel: Option<f64>,
    /// Distance to the previous level.
    pub fp_distance: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLevel {
    pub level: usize,
    pub lattice: LatticeCorrelation,
    pub report: RGReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RGTrajectory {
    pub spec: ModelSpec,
    pub levels: Vec<TrajectoryLevel>,
    pub layers: Vec<MeraLayer>,
}

impl RGTrajectory {
    pub fn final_lattice(&self) -> &LatticeCorrelation {
        &self.levels.last().expect("trajectory has level 0").lattice
    }

    pub fn reports(&self) -> impl Iterator<Item = &RGReport> {
        self.levels.iter().map(|l| &l.report)
    }

    pub fn converged(&self) -> bool {
        self.reports().all(|r| r.converged)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlator {
    pub r: usize,
    pub s: usize,
    /// `<a_r^† a_s>` as `(re, im)`.
    pub hopping: (f64, f64),
    /// `<a_r a_s>` as `(re, im)`.
    pub pairing: (f64, f64),
}

fn check_steppable(lattice: &LatticeCorrelation) -> Result<()> {
    let n = lattice.sites_per_axis();
    if n < MIN_SIDE || n % 2 == 1 {
        return Err(Error::LatticeTooSmall { sites: n, reason: "a step needs an even side of at least 6" });
    }
    Ok(())
}

fn shift(sites: &[Site], d: Site) -> Vec<Site> {
    sites.iter().map(|s| [s[0] + d[0], s[1] + d[1]]).collect()
}

fn coarse_displacements(dimension: usize, n: usize) -> Vec<Site> {
    let n = n as isize;
    if dimension == 1 {
        (0..n).map(|x| [x, 0]).collect()
    } else {
        (0..n).flat_map(|y| (0..n).map(move |x| [x, y])).collect()
    }
}

/// Applies a layer to a translation-invariant lattice.
pub fn apply_layer(lattice: &LatticeCorrelation, u: &Disentangler, w: &Isometry) -> Result<LatticeCorrelation> {
    check_steppable(lattice)?;
    let geom = build_geometry(lattice.dimension(), lattice.sites_per_axis(), lattice.modes_per_site())?;
    let layout = WindowLayout::new(&geom)?;
    if u.matrix.nrows() != layout.slot_dim || w.rotation.nrows() != layout.block_dim() {
        return Err(Error::DimensionMismatch { expected: layout.slot_dim, found: u.matrix.nrows() });
    }
    let cone = geom.cone_sites(0)?;
    let ut = layout.embed(&u.matrix);
    let left = (&ut * &w.rotation).transpose();
    let right = &ut * &w.rotation;
    let k = 2 * w.keep;
    let nc = lattice.sites_per_axis() / 2;
    let disps = coarse_displacements(lattice.dimension(), nc);
    let blocks = par::map_slice(&disps, |d| {
        let sub = lattice.submatrix(&cone, &shift(&cone, [2 * d[0], 2 * d[1]]));
        let full = &left * sub * &right;
        full.view((0, 0), (k, k)).clone_owned()
    });
    let mut blocks = blocks;
    let mut b0 = blocks[0].clone();
    crate::linalg::antisymmetrize(&mut b0);
    blocks[0] = b0;
    LatticeCorrelation::new(lattice.dimension(), nc, w.keep, lattice.twisted(), blocks)
}

fn rotation2(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Fixes the residual gauge of a lattice whose on-site blocks are in
/// canonical form, using its neighbour blocks. Modes with (nearly) equal
/// on-site values are first rotated into one another; then each mode's
/// `SO(2)` angle is fixed. Returns the rotated lattice and the per-site
/// rotation `Q` (`block -> Q^T block Q`).
pub fn fix_gauge(lattice: &LatticeCorrelation) -> (LatticeCorrelation, DMatrix<f64>) {
    let mix = align_degenerate(lattice);
    let lattice = lattice.rotate_sites(&mix);
    let phases = fix_mode_angles(&lattice);
    (lattice.rotate_sites(&phases), mix * phases)
}

/// Groups of consecutive modes with nearly equal on-site values. Treating
/// a slightly split pair as one group keeps the gauge continuous while a
/// flow approaches a fixed point with an exact degeneracy.
fn degenerate_groups(onsite: &DMatrix<f64>) -> Vec<std::ops::Range<usize>> {
    const DEGENERATE: f64 = 3e-3;
    let p = onsite.nrows() / 2;
    let mut groups = Vec::new();
    let mut start = 0;
    for r in 1..=p {
        if r == p || (onsite[(2 * r, 2 * r + 1)] - onsite[(2 * r - 2, 2 * r - 1)]).abs() > DEGENERATE {
            groups.push(start..r);
            start = r;
        }
    }
    groups
}

/// Canonical form `J` of `k` modes with unit values.
fn unit_form(k: usize) -> DMatrix<f64> {
    crate::linalg::canonical_matrix(&vec![1.0; k])
}

/// Projects a site generator onto the rotations that preserve every
/// degenerate group and commute with its on-site form.
fn project_gauge_algebra(a: &DMatrix<f64>, groups: &[std::ops::Range<usize>]) -> DMatrix<f64> {
    let n = a.nrows();
    let j = unit_form(n / 2);
    let skew = (a - a.transpose()) * 0.5;
    let commuting = (&skew - &j * &skew * &j) * 0.5;
    let mut out = DMatrix::zeros(n, n);
    for g in groups {
        let (o, w) = (2 * g.start, 2 * g.len());
        out.view_mut((o, o), (w, w)).copy_from(&commuting.view((o, o), (w, w)));
    }
    out
}

/// Rotations within groups of degenerate modes. The couplings inside such
/// a group can be invariant under its whole `U(k)`, so the gauge is fixed
/// by maximising a fixed generic linear functional of the neighbour blocks
/// over all residual rotations, from several deterministic starts.
fn align_degenerate(lattice: &LatticeCorrelation) -> DMatrix<f64> {
    use rand::SeedableRng;
    const STARTS: u64 = 12;
    const MAX_STEPS: usize = 4000;
    const GRADIENT_TOL: f64 = 1e-13;
    const NEWTON_STEPS: usize = 8;
    const FD_STEP: f64 = 1e-5;
    let p = lattice.modes_per_site();
    let n = 2 * p;
    let groups = degenerate_groups(&lattice.block([0, 0]));
    if groups.iter().all(|g| g.len() == 1) {
        return DMatrix::identity(n, n);
    }
    let reach = (lattice.sites_per_axis() / 2).min(3) as isize;
    let mut blocks: Vec<(f64, DMatrix<f64>)> = (1..=reach).map(|d| (1.0 / d as f64, lattice.block([d, 0]))).collect();
    if lattice.dimension() == 2 {
        blocks.extend((1..=reach).map(|d| (0.5 / d as f64, lattice.block([0, d]))));
    }
    // orthonormal basis of the residual gauge algebra
    let mut basis: Vec<DMatrix<f64>> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let mut e = DMatrix::zeros(n, n);
            e[(a, b)] = 1.0;
            let mut e = project_gauge_algebra(&e, &groups);
            for f in &basis {
                e -= f * f.dot(&e);
            }
            if e.norm() > 1e-8 {
                basis.push(&e / e.norm());
            }
        }
    }
    let pattern = DMatrix::from_fn(n, n, |i, j| (0.618 * (1 + 7 * i + 3 * j) as f64).sin());
    let value = |q: &DMatrix<f64>| -> f64 {
        blocks.iter().map(|(w, b)| w * (q.transpose() * b * q).component_mul(&pattern).sum()).sum()
    };
    let ascent = |q: &DMatrix<f64>| -> DMatrix<f64> {
        let grad = blocks
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, (w, b)| acc + (b * q * pattern.transpose() + b.transpose() * q * &pattern) * *w);
        project_gauge_algebra(&(q.transpose() * grad), &groups)
    };
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for seed in 0..STARTS {
        let mut q = if seed == 0 {
            DMatrix::identity(n, n)
        } else {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let r = crate::linalg::random_so(n, &mut rng) * std::f64::consts::PI;
            project_gauge_algebra(&r, &groups).exp()
        };
        let mut f = value(&q);
        let mut step = 1.0;
        for _ in 0..MAX_STEPS {
            let a = ascent(&q);
            let norm = a.norm();
            if norm < GRADIENT_TOL {
                break;
            }
            let mut moved = false;
            while step * norm > 1e-16 {
                let next = &q * (&a * step).exp();
                let fn_ = value(&next);
                if fn_ > f {
                    q = next;
                    f = fn_;
                    step *= 2.0;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        // Newton polish: close to the maximum the gains drown in rounding
        for _ in 0..NEWTON_STEPS {
            let a0 = ascent(&q);
            let g = DVector::from_iterator(basis.len(), basis.iter().map(|e| a0.dot(e)));
            if g.norm() < GRADIENT_TOL {
                break;
            }
            let columns: Vec<DMatrix<f64>> = basis
                .iter()
                .map(|e| {
                    let plus = ascent(&(&q * (e * FD_STEP).exp()));
                    let minus = ascent(&(&q * (e * -FD_STEP).exp()));
                    (plus - minus) / (2.0 * FD_STEP)
                })
                .collect();
            let h = DMatrix::from_fn(basis.len(), basis.len(), |i, k| columns[k].dot(&basis[i]));
            let h = (&h + h.transpose()) * 0.5;
            let Ok(delta) = h.svd(true, true).solve(&(-g), 1e-8) else { break };
            let a = basis.iter().zip(delta.iter()).fold(DMatrix::zeros(n, n), |acc, (e, d)| acc + e * *d);
            q = &q * a.exp();
        }
        // re-orthonormalise against drift from repeated exponentials
        let q = crate::linalg::polar_so(&q);
        let f = value(&q);
        if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
            best = Some((f, q));
        }
    }
    best.expect("at least one start").1
}

fn fix_mode_angles(lattice: &LatticeCorrelation) -> DMatrix<f64> {
    const SMALL: f64 = 1e-9;
    let p = lattice.modes_per_site();
    let b = lattice.block([1, 0]);
    let sub = |r: usize, s: usize| b.view((2 * r, 2 * s), (2, 2)).clone_owned();
    let mut q: Vec<DMatrix<f64>> = Vec::with_capacity(p);
    for r in 0..p {
        // earlier mode most strongly coupled to this one, and the coupling
        // in its fixed frame (both directions side by side)
        let anchor = (0..r).max_by(|&x, &y| {
            let w = |s: usize| sub(s, r).norm() + sub(r, s).norm();
            w(x).total_cmp(&w(y))
        });
        let link = |s: usize, qr: &DMatrix<f64>| {
            let fwd = q[s].transpose() * sub(s, r) * qr;
            let bwd = (qr.transpose() * sub(r, s) * &q[s]).transpose();
            let mut m = DMatrix::zeros(2, 4);
            m.view_mut((0, 0), (2, 2)).copy_from(&fwd);
            m.view_mut((0, 2), (2, 2)).copy_from(&bwd);
            m
        };
        let brr = sub(r, r);
        let c = 0.5 * (brr[(0, 0)] - brr[(1, 1)]);
        let d = 0.5 * (brr[(0, 1)] + brr[(1, 0)]);
        let mut qr = DMatrix::identity(2, 2);
        if c.hypot(d) > SMALL {
            let phi = d.atan2(c);
            let score = |t: f64| {
                let m = rotation2(t).transpose() * &brr * rotation2(t);
                (0.5 * (m[(0, 1)] + m[(1, 0)])).abs() - 0.5 * (m[(0, 0)] - m[(1, 1)])
            };
            let candidates = [0.5 * phi, -0.5 * phi, 0.5 * phi + 0.5 * std::f64::consts::PI, -0.5 * phi + 0.5 * std::f64::consts::PI];
            let best = candidates
                .iter()
                .copied()
                .min_by(|a, b| score(*a).partial_cmp(&score(*b)).unwrap())
                .unwrap();
            qr = rotation2(best);
            if let Some(s) = anchor {
                let l = link(s, &qr);
                // generic odd functional; symmetric ones can vanish on
                // links of the form [[a, b], [-b, -a]]
                let weight: f64 = l.iter().enumerate().map(|(k, x)| x * (0.618 * (1 + 5 * k) as f64).sin()).sum();
                if weight < 0.0 {
                    qr = -qr;
                }
            }
        } else if let Some(s) = anchor {
            let l = link(s, &DMatrix::identity(2, 2));
            // columns of the forward part rotate with `qr`; align the
            // strongest row of it with the first axis
            let fwd = l.view((0, 0), (2, 2)).clone_owned();
            let row = if fwd.row(0).norm() >= fwd.row(1).norm() { 0 } else { 1 };
            if fwd.row(row).norm() > SMALL {
                qr = rotation2(fwd[(row, 1)].atan2(fwd[(row, 0)]));
            }
        }
        q.push(qr);
    }
    let refs: Vec<&DMatrix<f64>> = q.iter().collect();
    crate::linalg::direct_sum(&refs)
}

/// One RG step on a translation-invariant lattice.
pub fn rg_step(lattice: &LatticeCorrelation, keep: usize, options: &FlowOptions) -> Result<(LatticeCorrelation, MeraLayer, RGReport)> {
    let start = Instant::now();
    check_steppable(lattice)?;
    let geom = build_geometry(lattice.dimension(), lattice.sites_per_axis(), lattice.modes_per_site())?;
    let layout = WindowLayout::new(&geom)?;
    let cone_sites = geom.cone_sites(0)?;
    let cone = lattice.submatrix(&cone_sites, &cone_sites);
    let (u, mut w, trace) = optimize_cone(&layout, cone.clone(), keep, &options.optimizer)?;

    let mut coarse = apply_layer(lattice, &u, &w)?;
    if options.gauge_fix {
        let (fixed, q) = fix_gauge(&coarse);
        let l = w.modes();
        let mut qfull = DMatrix::identity(2 * l, 2 * l);
        qfull.view_mut((0, 0), (2 * keep, 2 * keep)).copy_from(&q);
        w.rotation = &w.rotation * qfull;
        coarse = fixed;
    }

    // mixedness of every removed mode
    let ut = layout.embed(&u.matrix);
    let block = w.rotation.transpose() * ut.transpose() * &cone * &ut * &w.rotation;
    let l = w.modes();
    let eps: Vec<f64> = (keep..l).map(|r| (1.0 - block[(2 * r, 2 * r + 1)]).max(0.0)).collect();
    let eps_max = eps.iter().copied().fold(0.0, f64::max);
    let eps_mean = if eps.is_empty() { 0.0 } else { eps.iter().sum::<f64>() / eps.len() as f64 };

    let mut report = describe(&coarse, options)?;
    report.eps_max = eps_max;
    report.eps_mean = eps_mean;
    report.converged = trace.converged;
    report.iterations = trace.iterations;
    report.fp_distance = fixed_point_distance(lattice, &coarse).ok();
    report.wall_time_s = start.elapsed().as_secs_f64();

    let layer = MeraLayer {
        level: 0,
        disentangler: u,
        p_in: lattice.modes_per_site(),
        p_out: keep,
        isometry: w,
        geometry: geom,
        trace,
    };
    Ok((coarse, layer, report))
}

/// Entropies of a level, without the layer-specific fields.
fn describe(lattice: &LatticeCorrelation, options: &FlowOptions) -> Result<RGReport> {
    let ladder: Vec<usize> = options
        .entropy_ladder
        .iter()
        .copied()
        .filter(|&l| entropy_scan(lattice, &[l]).is_ok())
        .collect();
    Ok(RGReport {
        sites_per_axis: lattice.sites_per_axis(),
        modes_per_site: lattice.modes_per_site(),
        block_entropy: block_entropy_of(lattice)?,
        entropies: entropy_scan(lattice, &ladder)?,
        converged: true,
        ..Default::default()
    })
}

/// Entropy of one block of `2^D` sites (a single site if the lattice is
/// smaller than a block).
pub fn block_entropy_of(lattice: &LatticeCorrelation) -> Result<f64> {
    let side = if lattice.sites_per_axis() >= 2 { 2 } else { 1 };
    let sites: Vec<Site> = if lattice.dimension() == 1 {
        (0..side).map(|x| [x, 0]).collect()
    } else {
        (0..side).flat_map(|y| (0..side).map(move |x| [x, y])).collect()
    };
    Ok(block_entropy(&block_diagonalize(&lattice.window(&sites)?)?))
}

/// `S_L` for contiguous blocks of `L` modes (1D) or `L x L` modes (2D, the
/// modes of a site forming a `p x p` patch).
pub fn entropy_scan(lattice: &LatticeCorrelation, ladder: &[usize]) -> Result<Vec<(usize, f64)>> {
    let p = lattice.modes_per_site();
    let n = lattice.sites_per_axis();
    let dim = lattice.dimension();
    let patch = if dim == 1 {
        1
    } else {
        let side = (p as f64).sqrt().round() as usize;
        if side * side != p {
            return Err(Error::Geometry(format!("{p} modes per site do not form a square patch")));
        }
        side
    };
    for &l in ladder {
        let too_big = if dim == 1 { l > n * p } else { l % patch != 0 || l / patch > n };
        if l == 0 || too_big {
            return Err(Error::Geometry(format!("block of {l} modes does not fit the lattice")));
        }
    }
    par::map_slice(ladder, |&l| {
        let s = if dim == 1 {
            let sites: Vec<Site> = (0..l.div_ceil(p) as isize).map(|x| [x, 0]).collect();
            let modes: Vec<usize> = (0..l).collect();
            let g = extract_submatrix(&lattice.window(&sites)?, &modes)?;
            block_entropy(&block_diagonalize(&g)?)
        } else {
            let side = (l / patch) as isize;
            let sites: Vec<Site> = (0..side).flat_map(|y| (0..side).map(move |x| [x, y])).collect();
            block_entropy(&block_diagonalize(&lattice.window(&sites)?)?)
        };
        Ok((l, s))
    })
    .into_iter()
    .collect()
}

/// Largest entry-wise difference between two lattices over displacements
/// with every component in `[-w, w]`, `w = min(n_a, n_b) / 2`.
pub fn fixed_point_distance(a: &LatticeCorrelation, b: &LatticeCorrelation) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch { expected: a.dimension(), found: b.dimension() });
    }
    if a.modes_per_site() != b.modes_per_site() {
        return Err(Error::DimensionMismatch { expected: a.modes_per_site(), found: b.modes_per_site() });
    }
    let w = (a.sites_per_axis().min(b.sites_per_axis()) / 2) as isize;
    let ys = if a.dimension() == 1 { 0..=0 } else { -w..=w };
    let mut worst: f64 = 0.0;
    for y in ys {
        for x in -w..=w {
            worst = worst.max((a.block([x, y]) - b.block([x, y])).amax());
        }
    }
    Ok(worst)
}

/// Runs the flow from the exact ground state of `spec`.
pub fn rg_flow(spec: &ModelSpec, options: &FlowOptions) -> Result<RGTrajectory> {
    let start = Instant::now();
    let gs = ground_state(spec)?;
    let exact = exact_gs_energy_density(spec)?;
    let ham = if options.energy && spec.mode_count() <= DENSE_RECONSTRUCTION_LIMIT {
        Some(majorana_coefficients(spec)?)
    } else {
        None
    };
    let mut report = describe(&gs.lattice, options)?;
    if let Some(h) = &ham {
        let e = energy_density(&gs.lattice.to_dense(), h)?;
        report.energy_density = Some(e);
        report.energy_error_rel = Some(((e - exact) / exact).abs());
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    let mut traj = RGTrajectory {
        spec: spec.clone(),
        levels: vec![TrajectoryLevel { level: 0, lattice: gs.lattice, report }],
        layers: Vec::new(),
    };
    for level in 1..=options.levels {
        let current = traj.final_lattice();
        let geom_block = current.modes_per_site() * (1 << current.dimension());
        let keep = options.keep.resolve(current.modes_per_site(), geom_block);
        let (next, mut layer, mut report) = rg_step(current, keep, options)?;
        layer.level = level - 1;
        report.level = level;
        traj.layers.push(layer);
        if let Some(h) = &ham {
            let fine = reconstruct_dense(&traj, &next.to_dense(), level)?;
            let e = energy_density(&fine, h)?;
            report.energy_density = Some(e);
            report.energy_error_rel = Some(((e - exact) / exact).abs());
        }
        traj.levels.push(TrajectoryLevel { level, lattice: next, report });
    }
    Ok(traj)
}

/// Dense Majorana indices of the sites of a cell anchored at `anchor`, with
/// the twist sign of each unwrapped site.
fn cell_indices(geom: &BlockGeometry, twisted: bool, anchor: Site) -> Vec<(usize, f64)> {
    let m2 = 2 * geom.modes_per_site;
    let n = geom.sites_per_axis as isize;
    geom.cell
        .iter()
        .flat_map(|c| {
            let s = [anchor[0] + c[0], anchor[1] + c[1]];
            let wraps = s[0].div_euclid(n) + if geom.dimension == 2 { s[1].div_euclid(n) } else { 0 };
            let sign = if twisted && wraps % 2 != 0 { -1.0 } else { 1.0 };
            let base = m2 * geom.site_index(s);
            (0..m2).map(move |j| (base + j, sign))
        })
        .collect()
}

/// `Γ <- O Γ O^T` where `O` acts as `m` (with signs) on every group.
fn conjugate_groups(gamma: &mut DMatrix<f64>, groups: &[Vec<(usize, f64)>], m: &DMatrix<f64>) {
    let n = gamma.nrows();
    for g in groups {
        let k = g.len();
        let signed = DMatrix::from_fn(k, k, |i, j| g[i].1 * m[(i, j)] * g[j].1);
        let rows = DMatrix::from_fn(k, n, |i, c| gamma[(g[i].0, c)]);
        let new_rows = &signed * rows;
        for (i, &(r, _)) in g.iter().enumerate() {
            for c in 0..n {
                gamma[(r, c)] = new_rows[(i, c)];
            }
        }
        let cols = DMatrix::from_fn(n, k, |r, j| gamma[(r, g[j].0)]);
        let new_cols = cols * signed.transpose();
        for (j, &(c, _)) in g.iter().enumerate() {
            for r in 0..n {
                gamma[(r, c)] = new_cols[(r, j)];
            }
        }
    }
}

fn slot_groups(geom: &BlockGeometry, twisted: bool) -> Vec<Vec<(usize, f64)>> {
    geom.placements.iter().map(|p| cell_indices(geom, twisted, p.anchor)).collect()
}

fn block_groups(geom: &BlockGeometry, twisted: bool) -> Vec<Vec<(usize, f64)>> {
    geom.blocks.iter().map(|&b| cell_indices(geom, twisted, b)).collect()
}

/// Dense application of a layer: disentanglers on every plaquette, then the
/// isometry on every block. Coarse sites follow the row-major block order.
pub fn apply_layer_dense(
    gamma: &MajoranaCorrelation,
    geom: &BlockGeometry,
    twisted: bool,
    u: &Disentangler,
    w: &Isometry,
) -> Result<MajoranaCorrelation> {
    let expected = geom.sites_per_axis.pow(geom.dimension as u32) * geom.modes_per_site;
    if gamma.mode_count() != expected {
        return Err(Error::DimensionMismatch { expected, found: gamma.mode_count() });
    }
    let mut g = gamma.matrix().clone();
    conjugate_groups(&mut g, &slot_groups(geom, twisted), &u.matrix.transpose());
    let blocks = block_groups(geom, twisted);
    conjugate_groups(&mut g, &blocks, &w.rotation.transpose());
    let kept: Vec<usize> = blocks.iter().flat_map(|b| b[..2 * w.keep].iter().map(|&(i, _)| i)).collect();
    MajoranaCorrelation::new(crate::linalg::principal(&g, &kept))
}

/// Inverse of [`apply_layer_dense`] with the removed modes put back pure.
pub fn unapply_layer_dense(
    coarse: &MajoranaCorrelation,
    geom: &BlockGeometry,
    twisted: bool,
    u: &Disentangler,
    w: &Isometry,
) -> Result<MajoranaCorrelation> {
    let blocks = block_groups(geom, twisted);
    if coarse.mode_count() != blocks.len() * w.keep {
        return Err(Error::DimensionMismatch { expected: blocks.len() * w.keep, found: coarse.mode_count() });
    }
    let n = 2 * geom.sites_per_axis.pow(geom.dimension as u32) * geom.modes_per_site;
    let k = 2 * w.keep;
    let mut g = DMatrix::zeros(n, n);
    let c = coarse.matrix();
    for (bi, a) in blocks.iter().enumerate() {
        for (bj, b) in blocks.iter().enumerate() {
            for i in 0..k {
                for j in 0..k {
                    g[(a[i].0, b[j].0)] = c[(bi * k + i, bj * k + j)];
                }
            }
        }
        for r in w.keep..w.modes() {
            g[(a[2 * r].0, a[2 * r + 1].0)] = 1.0;
            g[(a[2 * r + 1].0, a[2 * r].0)] = -1.0;
        }
    }
    conjugate_groups(&mut g, &blocks, &w.rotation);
    conjugate_groups(&mut g, &slot_groups(geom, twisted), &u.matrix);
    MajoranaCorrelation::new(g)
}

/// Undoes the layers of `trajectory` below `level`, starting from a dense
/// state of that level, down to level 0.
pub fn reconstruct_dense(trajectory: &RGTrajectory, state: &MajoranaCorrelation, level: usize) -> Result<MajoranaCorrelation> {
    if level > trajectory.layers.len() {
        return Err(Error::IndexOutOfRange { index: level, len: trajectory.layers.len() });
    }
    let twisted = trajectory.levels[0].lattice.twisted();
    let mut g = state.clone();
    for layer in trajectory.layers[..level].iter().rev() {
        g = unapply_layer_dense(&g, &layer.geometry, twisted, &layer.disentangler, &layer.isometry)?;
    }
    Ok(g)
}

/// Two-point functions from a dense correlation matrix.
pub fn correlators_from(gamma: &MajoranaCorrelation, pairs: &[(usize, usize)]) -> Result<Vec<Correlator>> {
    let m = gamma.mode_count();
    let g = gamma.matrix();
    pairs
        .iter()
        .map(|&(r, s)| {
            if r >= m || s >= m {
                return Err(Error::IndexOutOfRange { index: r.max(s), len: m });
            }
            let (a0, a1, b0, b1) = (2 * r, 2 * r + 1, 2 * s, 2 * s + 1);
            let diag = if r == s { 0.5 } else { 0.0 };
            Ok(Correlator {
                r,
                s,
                hopping: (diag + 0.25 * (-g[(a0, b1)] + g[(a1, b0)]), 0.25 * (g[(a0, b0)] + g[(a1, b1)])),
                pairing: (-0.25 * (g[(a0, b1)] + g[(a1, b0)]), 0.25 * (g[(a0, b0)] - g[(a1, b1)])),
            })
        })
        .collect()
}

/// Correlators of the state the MERA assigns to the fine lattice when the
/// flow is cut at `level`. Mode indices follow [`ModelSpec::mode_index`].
pub fn reconstruct_correlators(trajectory: &RGTrajectory, level: usize, pairs: &[(usize, usize)]) -> Result<Vec<Correlator>> {
    if level >= trajectory.levels.len() {
        return Err(Error::IndexOutOfRange { index: level, len: trajectory.levels.len() });
    }
    let state = trajectory.levels[level].lattice.to_dense();
    let fine = reconstruct_dense(trajectory, &state, level)?;
    correlators_from(&fine, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lattice_energy_density;
    use crate::optimizer::UUpdate;

    #[test]
    fn product_state_stays_product() {
        let spec = ModelSpec::chain(64, 2, 1.0, 1e6);
        let traj = rg_flow(&spec, &FlowOptions { levels: 2, ..Default::default() }).unwrap();
        for r in traj.reports().skip(1) {
            assert!(r.eps_max < 1e-12);
            assert!(r.block_entropy < 1e-9, "{}", r.block_entropy);
        }
    }

    #[test]
    fn fast_and_dense_layers_agree() {
        for (spec, keep) in [
            (ModelSpec::chain(32, 2, 1.0, 1.0), 2),
            (ModelSpec::chain(16, 1, 0.5, 0.3).with_zero_mode(crate::model::ZeroModePolicy::AntiPeriodic), 1),
            (ModelSpec::square(16, 4, 1.0, 2.0), 4),
        ] {
            let lat = ground_state(&spec).unwrap().lattice;
            let opts = FlowOptions { gauge_fix: true, ..Default::default() };
            let opts = FlowOptions { optimizer: OptimizerOptions { max_iters: 30, ..opts.optimizer }, ..opts };
            let (coarse, layer, _) = rg_step(&lat, keep, &opts).unwrap();
            let dense = apply_layer_dense(&lat.to_dense(), &layer.geometry, lat.twisted(), &layer.disentangler, &layer.isometry).unwrap();
            assert!((coarse.to_dense().matrix() - dense.matrix()).amax() < 1e-10);
        }
    }

    #[test]
    fn zero_truncation_round_trip() {
        let spec = ModelSpec::chain(64, 1, 1.0, 1.0);
        let opts = FlowOptions { levels: 2, keep: KeepPolicy::All, ..Default::default() };
        let opts = FlowOptions { optimizer: OptimizerOptions { max_iters: 5, ..opts.optimizer }, ..opts };
        let traj = rg_flow(&spec, &opts).unwrap();
        let orig = traj.levels[0].lattice.to_dense();
        let back = reconstruct_dense(&traj, &traj.final_lattice().to_dense(), 2).unwrap();
        assert!((orig.matrix() - back.matrix()).amax() < 1e-10);
        let e0 = lattice_energy_density(&spec, &traj.levels[0].lattice).unwrap();
        assert!((traj.levels[2].report.energy_density.unwrap() - e0).abs() < 1e-10);
    }

    #[test]
    fn gauge_fix_is_idempotent_and_removes_random_gauge() {
        let lat = ground_state(&ModelSpec::chain(32, 2, 1.0, 1.0)).unwrap().lattice;
        let (fixed, _) = fix_gauge(&lat);
        let (again, _) = fix_gauge(&fixed);
        assert!(fixed_point_distance(&fixed, &again).unwrap() < 1e-12);
        let q = crate::linalg::direct_sum(&[&rotation2(0.7), &rotation2(-2.1)]);
        let (scrambled, _) = fix_gauge(&lat.rotate_sites(&q));
        let d = fixed_point_distance(&fixed, &scrambled).unwrap();
        assert!(d < 1e-12, "{d}");
    }

    /// Real form of a random unitary on `k` modes: commutes with the
    /// on-site form of a degenerate group.
    fn random_unitary_form(k: usize, seed: u64) -> DMatrix<f64> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let o = crate::linalg::random_so(2 * k, &mut rng);
        let j = unit_form(k);
        let a = &o - &j * &o * &j;
        let sym = a.transpose() * &a;
        let eig = sym.symmetric_eigen();
        let inv_sqrt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()))
            * eig.eigenvectors.transpose();
        a * inv_sqrt
    }

    #[test]
    fn gauge_fix_removes_rotations_within_degenerate_modes() {
        let spec = ModelSpec::chain(64, 4, 0.0, 0.0).with_zero_mode(crate::model::ZeroModePolicy::AntiPeriodic);
        let lat = ground_state(&spec).unwrap().lattice;
        let opts = FlowOptions { optimizer: OptimizerOptions { max_iters: 200, ..Default::default() }, ..Default::default() };
        let (coarse, _, _) = rg_step(&lat, 4, &opts).unwrap();
        let groups = degenerate_groups(&coarse.block([0, 0]));
        assert!(groups.iter().any(|g| g.len() > 1), "{groups:?}");
        let mut q = DMatrix::identity(8, 8);
        for (i, g) in groups.iter().enumerate() {
            let rot = if g.len() > 1 { random_unitary_form(g.len(), i as u64) } else { rotation2(0.3 + i as f64) };
            let o = 2 * g.start;
            q.view_mut((o, o), (2 * g.len(), 2 * g.len())).copy_from(&rot);
        }
        assert!((&q * unit_form(4) - unit_form(4) * &q).amax() < 1e-12);
        let (again, _) = fix_gauge(&coarse.rotate_sites(&q));
        assert!(fixed_point_distance(&coarse, &again).unwrap() < 1e-9);
    }

    #[test]
    fn frozen_u_is_worse() {
        let spec = ModelSpec::chain(128, 2, 1.0, 1.0);
        let base = FlowOptions { levels: 1, ..Default::default() };
        let frozen = FlowOptions {
            optimizer: OptimizerOptions { u_update: UUpdate::Frozen, ..Default::default() },
            ..base.clone()
        };
        let a = rg_flow(&spec, &base).unwrap();
        let b = rg_flow(&spec, &frozen).unwrap();
        assert!(a.levels[1].report.eps_max < b.levels[1].report.eps_max);
        assert!(a.levels[1].report.energy_error_rel.unwrap() < b.levels[1].report.energy_error_rel.unwrap());
    }

    #[test]
    fn too_small_lattice_is_rejected() {
        let lat = ground_state(&ModelSpec::chain(8, 2, 1.0, 1.0)).unwrap().lattice;
        assert!(matches!(rg_step(&lat, 2, &FlowOptions::default()), Err(Error::LatticeTooSmall { .. })));
    }
}
