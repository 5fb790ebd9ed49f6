//! Correlation matrices of fermionic Gaussian states and their canonical form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Off-block tolerance for the Jacobi sweeps behind [`block_diagonalize`].
pub const CANONICAL_TOL: f64 = 1e-12;
/// Sweep budget for [`block_diagonalize`].
pub const CANONICAL_MAX_SWEEPS: usize = 100;

/// Canonical values below this are treated as exact zeros when pairing
/// Majorana directions.
const NULL_TOL: f64 = 1e-13;

/// Relative gap below which eigenvalues of `Γ^T Γ` share an eigenspace.
const CLUSTER_TOL: f64 = 1e-10;

/// Real antisymmetric `2M x 2M` matrix `Γ` with `<c_a c_b> = δ_ab + i Γ_ab`.
///
/// Mode `r` owns Majorana rows `2r` (`a_r + a_r†`) and `2r + 1`
/// (`(a_r - a_r†) / i`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MajoranaCorrelation {
    matrix: DMatrix<f64>,
}

impl MajoranaCorrelation {
    /// Wraps `matrix`, rejecting anything further than `1e-10` from
    /// antisymmetric and then antisymmetrizing exactly.
    pub fn new(mut matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        if !matrix.nrows().is_multiple_of(2) {
            return Err(Error::DimensionMismatch { expected: matrix.nrows() + 1, found: matrix.nrows() });
        }
        let res = linalg::antisymmetry_residual(&matrix);
        if res > 1e-10 {
            return Err(Error::NotAntisymmetric(res));
        }
        linalg::antisymmetrize(&mut matrix);
        Ok(Self { matrix })
    }

    /// Maximally mixed state (`Γ = 0`) of `modes` modes.
    pub fn zeros(modes: usize) -> Self {
        Self { matrix: DMatrix::zeros(2 * modes, 2 * modes) }
    }

    /// Product state with every mode empty (`v = +1` blocks).
    pub fn vacuum(modes: usize) -> Self {
        Self { matrix: linalg::canonical_matrix(&vec![1.0; modes]) }
    }

    pub fn mode_count(&self) -> usize {
        self.matrix.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// `O Γ O^T` for an orthogonal `O`.
    pub fn conjugate(&self, o: &DMatrix<f64>) -> Result<Self> {
        if o.nrows() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch { expected: self.matrix.nrows(), found: o.nrows() });
        }
        Self::new(o * &self.matrix * o.transpose())
    }

    /// `max |Γ Γ^T - 1|`; zero for a pure global state.
    pub fn purity_defect(&self) -> f64 {
        linalg::orthogonality_residual(&self.matrix)
    }

    /// Majorana-level principal submatrix.
    pub fn majorana_submatrix(&self, idx: &[usize]) -> Self {
        Self { matrix: linalg::principal(&self.matrix, idx) }
    }
}

/// Canonical form of a block correlation matrix.
///
/// `rotation * Γ * rotation^T` is the direct sum of `[[0, v_r], [-v_r, 0]]`
/// with `values` sorted descending. A rotation in `SO(2L)` can only reach
/// that form when `Pf(Γ) >= 0`; otherwise the most mixed block comes out as
/// `[[0, -v], [v, 0]]` and `flipped` holds its position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSpectrum {
    pub values: Vec<f64>,
    pub rotation: DMatrix<f64>,
    pub flipped: Option<usize>,
}

impl ModeSpectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The block-diagonal matrix `V Γ V^T` this spectrum describes.
    pub fn canonical(&self) -> DMatrix<f64> {
        let mut signed = self.values.clone();
        if let Some(r) = self.flipped {
            signed[r] = -signed[r];
        }
        linalg::canonical_matrix(&signed)
    }

    /// Same spectrum with blocks reordered most mixed first (ascending `v`,
    /// ties in current order). Swapping whole 2x2 blocks keeps `det = +1`;
    /// an orientation defect stays with its block, which becomes the first.
    pub fn mixed_first(&self) -> ModeSpectrum {
        let n = self.values.len();
        let mut order: Vec<usize> = (0..n).collect();
        // among ties the flipped block goes first so it is never truncated
        let rank = |i: usize| if self.flipped == Some(i) { 0 } else { 1 };
        order.sort_by(|&a, &b| {
            self.values[a]
                .partial_cmp(&self.values[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(rank(a).cmp(&rank(b)))
        });
        self.reorder(&order)
    }

    fn reorder(&self, order: &[usize]) -> ModeSpectrum {
        let n2 = self.rotation.nrows();
        let mut rotation = DMatrix::zeros(n2, n2);
        let mut values = Vec::with_capacity(order.len());
        let mut flipped = None;
        for (new, &old) in order.iter().enumerate() {
            rotation.row_mut(2 * new).copy_from(&self.rotation.row(2 * old));
            rotation.row_mut(2 * new + 1).copy_from(&self.rotation.row(2 * old + 1));
            values.push(self.values[old]);
            if self.flipped == Some(old) {
                flipped = Some(new);
            }
        }
        ModeSpectrum { values, rotation, flipped }
    }
}

/// Restriction of `Γ` to an ordered list of modes.
pub fn extract_submatrix(gamma: &MajoranaCorrelation, modes: &[usize]) -> Result<MajoranaCorrelation> {
    let m = gamma.mode_count();
    let mut seen = vec![false; m];
    let mut idx = Vec::with_capacity(2 * modes.len());
    for &r in modes {
        if r >= m {
            return Err(Error::IndexOutOfRange { index: r, len: m });
        }
        if seen[r] {
            return Err(Error::DuplicateIndex(r));
        }
        seen[r] = true;
        idx.push(2 * r);
        idx.push(2 * r + 1);
    }
    Ok(gamma.majorana_submatrix(&idx))
}

/// Brings a block correlation matrix to canonical form with `V ∈ SO(2L)`.
///
/// The invariant directions are read off the eigenvectors of the symmetric
/// matrix `Γ^T Γ` (Jacobi sweeps); each eigenvector `u` is paired with
/// `Γ^T u / |Γ^T u|`, which spans the same invariant plane. Exactly null
/// directions are paired in eigenvector order.
pub fn block_diagonalize(gamma: &MajoranaCorrelation) -> Result<ModeSpectrum> {
    let g = gamma.matrix();
    let n2 = g.nrows();
    let l = n2 / 2;
    if l == 0 {
        return Ok(ModeSpectrum { values: vec![], rotation: DMatrix::zeros(0, 0), flipped: None });
    }
    let s = g.transpose() * g;
    let (evals, evecs) = linalg::jacobi_eigen(&s, CANONICAL_TOL * 1e-2, CANONICAL_MAX_SWEEPS)?;

    let mut order: Vec<usize> = (0..n2).collect();
    // stable: ties keep original index order
    order.sort_by(|&a, &b| evals[b].partial_cmp(&evals[a]).unwrap_or(std::cmp::Ordering::Equal));

    let gt = g.transpose();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n2);
    let mut null_dirs: Vec<DVector<f64>> = Vec::new();

    fn orthogonalize(x: &mut DVector<f64>, against: &[DVector<f64>]) {
        for _ in 0..2 {
            for b in against {
                let c = b.dot(x);
                x.axpy(-c, b, 1.0);
            }
        }
    }

    // Γ maps each (near-)degenerate eigenspace of Γ^T Γ into itself, so
    // pairing runs cluster by cluster, always on the remaining direction
    // that is least covered by the pairs already found.
    let top = evals[order[0]].max(1.0);
    let mut start = 0;
    while start < n2 {
        let mut end = start + 1;
        while end < n2 && evals[order[end - 1]] - evals[order[end]] <= CLUSTER_TOL * top {
            end += 1;
        }
        let mut rest: Vec<DVector<f64>> = order[start..end]
            .iter()
            .map(|&k| {
                let mut x = evecs.column(k).clone_owned();
                orthogonalize(&mut x, &basis);
                orthogonalize(&mut x, &null_dirs);
                x
            })
            .collect();
        let mut remaining = end - start;
        while remaining > 0 {
            // first of the (nearly) largest, so ties keep eigenvector order
            let mut pick: Option<(usize, f64)> = None;
            for (i, x) in rest.iter().enumerate() {
                let nx = x.norm();
                if pick.is_none_or(|(_, best)| nx > best + 1e-12) {
                    pick = Some((i, nx));
                }
            }
            let Some((i, nu)) = pick else {
                break;
            };
            if nu < 1e-6 {
                break;
            }
            let mut u = rest.remove(i) / nu;
            orthogonalize(&mut u, &basis);
            orthogonalize(&mut u, &null_dirs);
            u.normalize_mut();
            let mut w = &gt * &u;
            let mut added = vec![u.clone()];
            let mut paired = false;
            if w.norm() > NULL_TOL {
                orthogonalize(&mut w, &basis);
                w.axpy(-u.dot(&w), &u, 1.0);
                let nw = w.norm();
                if nw > NULL_TOL {
                    w /= nw;
                    added.push(w.clone());
                    basis.push(u);
                    basis.push(w);
                    paired = true;
                }
            }
            if !paired {
                null_dirs.push(added[0].clone());
            }
            for x in rest.iter_mut() {
                orthogonalize(x, &added);
            }
            remaining = remaining.saturating_sub(added.len());
        }
        start = end;
    }
    // complete with standard vectors if rounding lost a null direction
    let mut e = 0;
    while basis.len() + null_dirs.len() < n2 && e < n2 {
        let mut x = DVector::zeros(n2);
        x[e] = 1.0;
        orthogonalize(&mut x, &basis);
        orthogonalize(&mut x, &null_dirs);
        let nx = x.norm();
        if nx > 0.5 {
            null_dirs.push(x / nx);
        }
        e += 1;
    }
    basis.extend(null_dirs);

    let mut v = DMatrix::zeros(n2, n2);
    for (i, b) in basis.iter().enumerate() {
        v.row_mut(i).copy_from(&b.transpose());
    }
    let b = &v * g * v.transpose();
    let mut values: Vec<f64> = (0..l).map(|r| b[(2 * r, 2 * r + 1)]).collect();
    // null blocks may come out with either orientation
    for (r, val) in values.iter_mut().enumerate() {
        if *val < 0.0 {
            let row = -v.row(2 * r + 1).clone_owned();
            v.row_mut(2 * r + 1).copy_from(&row);
            *val = -*val;
        }
    }

    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut spectrum = ModeSpectrum { values, rotation: v, flipped: None }.reorder(&order);

    if spectrum.rotation.determinant() < 0.0 {
        let last = 2 * l - 1;
        let row = -spectrum.rotation.row(last).clone_owned();
        spectrum.rotation.row_mut(last).copy_from(&row);
        if spectrum.values[l - 1] > NULL_TOL {
            spectrum.flipped = Some(l - 1);
        }
    }

    let residual = (&spectrum.rotation * g * spectrum.rotation.transpose() - spectrum.canonical())
        .amax()
        .max(linalg::orthogonality_residual(&spectrum.rotation));
    if residual > 1e-9 {
        return Err(Error::NoConvergence { sweeps: CANONICAL_MAX_SWEEPS, residual });
    }
    Ok(spectrum)
}

/// Binary entropy (bits) of a single mode with canonical value `v`.
pub fn mode_entropy(v: f64) -> f64 {
    let v = v.abs().min(1.0);
    if v >= 1.0 {
        return 0.0;
    }
    let p = 0.5 * (1.0 + v);
    let q = 0.5 * (1.0 - v);
    let h = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    h(p) + h(q)
}

/// Von Neumann entropy in bits of the block described by `spectrum`.
pub fn block_entropy(spectrum: &ModeSpectrum) -> f64 {
    entropy_of_values(&spectrum.values)
}

pub fn entropy_of_values(values: &[f64]) -> f64 {
    values.iter().map(|&v| mode_entropy(v)).sum()
}

/// Canonical values only (no rotation), descending.
pub fn spectrum_values(gamma: &MajoranaCorrelation) -> Result<Vec<f64>> {
    Ok(block_diagonalize(gamma)?.values)
}

/// Keeps the `keep` most mixed modes of the canonical frame and reports the
/// mixedness `1 - v_r` of every removed mode.
pub fn project_out_pure(
    gamma: &MajoranaCorrelation,
    spectrum: &ModeSpectrum,
    keep: usize,
) -> Result<(MajoranaCorrelation, Vec<f64>)> {
    let l = gamma.mode_count();
    if spectrum.len() != l {
        return Err(Error::DimensionMismatch { expected: l, found: spectrum.len() });
    }
    if keep == 0 || keep > l {
        return Err(Error::KeepOutOfRange { keep, modes: l });
    }
    let frame = spectrum.mixed_first();
    let canon = &frame.rotation * gamma.matrix() * frame.rotation.transpose();
    let kept = MajoranaCorrelation::new(canon.view((0, 0), (2 * keep, 2 * keep)).clone_owned())?;
    let mixedness = (keep..l).map(|r| 1.0 - canon[(2 * r, 2 * r + 1)]).collect();
    Ok((kept, mixedness))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(l: usize, rng: &mut ChaCha8Rng) -> (MajoranaCorrelation, Vec<f64>) {
        let mut v: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
        let q = linalg::random_so(2 * l, rng);
        let g = &q * linalg::canonical_matrix(&v) * q.transpose();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        (MajoranaCorrelation::new(g).unwrap(), v)
    }

    #[test]
    fn zero_matrix_is_already_canonical() {
        let s = block_diagonalize(&MajoranaCorrelation::zeros(3)).unwrap();
        assert_eq!(s.values, vec![0.0; 3]);
        assert!((s.rotation.clone() - DMatrix::identity(6, 6)).amax() == 0.0);
    }

    #[test]
    fn ascending_blocks_are_sorted_descending() {
        let g = MajoranaCorrelation::new(linalg::canonical_matrix(&[0.3, 0.9])).unwrap();
        let s = block_diagonalize(&g).unwrap();
        assert!((s.values[0] - 0.9).abs() < 1e-14 && (s.values[1] - 0.3).abs() < 1e-14);
        assert!((s.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!(s.rotation.iter().all(|x| x.abs() < 1e-12 || (x.abs() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn construct_then_recover() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let (g, v) = random_state(4, &mut rng);
            let s = block_diagonalize(&g).unwrap();
            for (a, b) in s.values.iter().zip(&v) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            assert!(linalg::orthogonality_residual(&s.rotation) < 1e-10);
            assert!((s.rotation.determinant() - 1.0).abs() < 1e-10);
            let back = s.rotation.transpose() * s.canonical() * &s.rotation;
            assert!((back - g.matrix()).amax() < 1e-10);
        }
    }

    #[test]
    fn negative_pfaffian_flips_last_block() {
        // single mode with v = -0.4 cannot be rotated to +0.4 inside SO(2)
        let g = MajoranaCorrelation::new(linalg::canonical_matrix(&[-0.4])).unwrap();
        let s = block_diagonalize(&g).unwrap();
        assert!((s.values[0] - 0.4).abs() < 1e-14);
        assert_eq!(s.flipped, Some(0));
        assert!((s.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!((&s.rotation * g.matrix() * s.rotation.transpose() - s.canonical()).amax() < 1e-14);
    }

    #[test]
    fn degenerate_and_null_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = linalg::random_so(8, &mut rng);
        let g = MajoranaCorrelation::new(&q * linalg::canonical_matrix(&[1.0, 1.0, 0.0, 0.0]) * q.transpose()).unwrap();
        let s = block_diagonalize(&g).unwrap();
        assert!((s.values[0] - 1.0).abs() < 1e-12 && (s.values[1] - 1.0).abs() < 1e-12);
        assert!(s.values[2].abs() < 1e-12 && s.values[3].abs() < 1e-12);
        assert!((&s.rotation * g.matrix() * s.rotation.transpose() - s.canonical()).amax() < 1e-10);
        assert!((s.rotation.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn large_nearly_pure_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v: Vec<f64> = (0..100).map(|k| 1.0 - 1e-17 * k as f64).collect();
        v.extend([0.3, 0.7, 0.7, 0.0]);
        let q = linalg::random_so(2 * v.len(), &mut rng);
        let g = MajoranaCorrelation::new(&q * linalg::canonical_matrix(&v) * q.transpose()).unwrap();
        let s = block_diagonalize(&g).unwrap();
        assert!(linalg::orthogonality_residual(&s.rotation) < 1e-10);
        let mut want = v.clone();
        want.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in s.values.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn entropy_edge_values() {
        assert_eq!(entropy_of_values(&[1.0, 1.0, 1.0]), 0.0);
        assert!((entropy_of_values(&[0.0]) - 1.0).abs() < 1e-15);
        let h = -(0.8f64 * 0.8f64.log2() + 0.2 * 0.2f64.log2());
        assert!((mode_entropy(0.6) - h).abs() < 1e-15);
    }

    #[test]
    fn extract_submatrix_rules() {
        let g = MajoranaCorrelation::vacuum(3);
        assert_eq!(extract_submatrix(&g, &[0, 1, 2]).unwrap(), g);
        let one = extract_submatrix(&g, &[1]).unwrap();
        assert_eq!(one.matrix(), &linalg::canonical_matrix(&[1.0]));
        assert!(matches!(extract_submatrix(&g, &[0, 0]), Err(Error::DuplicateIndex(0))));
        assert!(matches!(extract_submatrix(&g, &[3]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn project_out_pure_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (g, _) = random_state(3, &mut rng);
        let s = block_diagonalize(&g).unwrap();
        let (kept, eps) = project_out_pure(&g, &s, 3).unwrap();
        assert!(eps.is_empty());
        let frame = s.mixed_first();
        assert!((kept.matrix() - frame.canonical()).amax() < 1e-10);

        let q = linalg::random_so(6, &mut rng);
        let pure = MajoranaCorrelation::new(&q * linalg::canonical_matrix(&[1.0, 1.0, 1.0]) * q.transpose()).unwrap();
        let sp = block_diagonalize(&pure).unwrap();
        let (_, eps) = project_out_pure(&pure, &sp, 1).unwrap();
        assert_eq!(eps.len(), 2);
        assert!(eps.iter().all(|e| e.abs() < 1e-12));

        assert!(matches!(project_out_pure(&g, &s, 0), Err(Error::KeepOutOfRange { .. })));
        assert!(matches!(project_out_pure(&g, &s, 4), Err(Error::KeepOutOfRange { .. })));
    }
}
