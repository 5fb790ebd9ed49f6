//! Dense real kernels shared by the rest of the crate.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in input (diagonal) order and the matrix whose columns
/// are the corresponding orthonormal eigenvectors. Converges when the
/// off-diagonal Frobenius norm drops below `tol * max(1, ||S||_F)`.
pub fn jacobi_eigen(s: &DMatrix<f64>, tol: f64, max_sweeps: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = s.nrows();
    assert_eq!(n, s.ncols(), "jacobi_eigen needs a square matrix");
    // row-major working copy
    let mut a: Vec<f64> = (0..n * n).map(|k| s[(k / n, k % n)]).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = s.norm().max(1.0);
    let off = |a: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a[i * n + j] * a[i * n + j];
                }
            }
        }
        acc.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let residual = off(&a);
        if residual <= tol * scale {
            break;
        }
        if sweeps == max_sweeps {
            return Err(Error::NoConvergence { sweeps, residual });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // skip rotations that are below rounding of both diagonals
                if apq.abs() < 1e-18 * (app.abs() + aqq.abs()) {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    Ok((values, DMatrix::from_row_slice(n, n, &v)))
}

/// Closest special orthogonal matrix to `e` in Frobenius norm, i.e. the
/// maximiser of `tr(e^T U)` over `SO(n)`.
///
/// When the orthogonal polar factor has determinant -1 the singular
/// direction with the smallest singular value is flipped.
pub fn polar_so(e: &DMatrix<f64>) -> DMatrix<f64> {
    let n = e.nrows();
    let svd = e.clone().svd(true, true);
    let mut u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let q = &u * &v_t;
    if q.determinant() < 0.0 {
        let (k, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        for i in 0..n {
            u[(i, k)] = -u[(i, k)];
        }
        return &u * &v_t;
    }
    q
}

/// Haar-distributed rotation in `SO(n)`.
pub fn random_so<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    if q.determinant() < 0.0 {
        for i in 0..n {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    q
}

/// Rotation by `theta` in the `(i, j)` plane.
pub fn givens(n: usize, i: usize, j: usize, theta: f64) -> DMatrix<f64> {
    let mut g = DMatrix::identity(n, n);
    let (s, c) = theta.sin_cos();
    g[(i, i)] = c;
    g[(j, j)] = c;
    g[(i, j)] = -s;
    g[(j, i)] = s;
    g
}

/// Pfaffian of a real antisymmetric matrix (Parlett-Reid elimination with
/// pivoting). Returns 0 for odd dimension.
pub fn pfaffian(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n % 2 == 1 {
        return 0.0;
    }
    let mut a = m.clone();
    let mut pf = 1.0;
    let mut k = 0;
    while k + 1 < n {
        // pivot the largest entry of column k below the diagonal into row k+1
        let mut piv = k + 1;
        for i in k + 2..n {
            if a[(i, k)].abs() > a[(piv, k)].abs() {
                piv = i;
            }
        }
        if piv != k + 1 {
            a.swap_rows(k + 1, piv);
            a.swap_columns(k + 1, piv);
            pf = -pf;
        }
        let akk1 = a[(k, k + 1)];
        if akk1 == 0.0 {
            return 0.0;
        }
        pf *= akk1;
        if k + 2 < n {
            let tau: Vec<f64> = (k + 2..n).map(|i| a[(k, i)] / akk1).collect();
            // A[k+2.., k+2..] -= tau * A[k+1, k+2..]^T - A[k+1, k+2..] * tau^T
            let row: Vec<f64> = (k + 2..n).map(|i| a[(k + 1, i)]).collect();
            for (ii, i) in (k + 2..n).enumerate() {
                for (jj, j) in (k + 2..n).enumerate() {
                    a[(i, j)] -= tau[ii] * row[jj] - row[ii] * tau[jj];
                }
            }
        }
        k += 2;
    }
    pf
}

/// `max |X + X^T|`.
pub fn antisymmetry_residual(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut r: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            r = r.max((x[(i, j)] + x[(j, i)]).abs());
        }
    }
    r
}

/// `max |Q Q^T - I|`.
pub fn orthogonality_residual(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows();
    let p = q * q.transpose();
    (&p - DMatrix::<f64>::identity(n, n)).amax()
}

/// Direct sum of `[[0, v_r], [-v_r, 0]]` blocks.
pub fn canonical_matrix(values: &[f64]) -> DMatrix<f64> {
    let n = 2 * values.len();
    let mut m = DMatrix::zeros(n, n);
    for (r, &v) in values.iter().enumerate() {
        m[(2 * r, 2 * r + 1)] = v;
        m[(2 * r + 1, 2 * r)] = -v;
    }
    m
}

/// Replaces every entry by the exact antisymmetric average `(X - X^T) / 2`.
pub fn antisymmetrize(x: &mut DMatrix<f64>) {
    let n = x.nrows();
    for i in 0..n {
        x[(i, i)] = 0.0;
        for j in i + 1..n {
            let v = 0.5 * (x[(i, j)] - x[(j, i)]);
            x[(i, j)] = v;
            x[(j, i)] = -v;
        }
    }
}

/// Block-diagonal matrix with `block` repeated on consecutive index ranges.
pub fn direct_sum(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        m.view_mut((off, off), (k, k)).copy_from(*b);
        off += k;
    }
    m
}

/// Principal submatrix `x[idx, idx]`.
pub fn principal(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| x[(idx[i], idx[j])])
}

/// Serde adapter writing a matrix as a list of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix"));
        }
        let flat: Vec<f64> = rows.concat();
        Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_so(6, &mut rng);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -1.0, 0.5, 0.5, 2.0, 0.0]));
        let s = &q * d * q.transpose();
        let (mut vals, vecs) = jacobi_eigen(&s, 1e-14, 100).unwrap();
        assert!(orthogonality_residual(&vecs) < 1e-12);
        let back = &vecs * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals.clone())) * vecs.transpose();
        assert!((back - &s).amax() < 1e-12);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want = [-1.0, 0.0, 0.5, 0.5, 2.0, 3.0];
        for (a, b) in vals.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobi_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_so(8, &mut rng);
        let s = &q * DMatrix::from_fn(8, 8, |i, j| if i == j { i as f64 } else { 0.0 }) * q.transpose();
        assert!(matches!(jacobi_eigen(&s, 1e-14, 0), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn polar_so_is_special_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 3, 6] {
            let e = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
            let u = polar_so(&e);
            assert!(orthogonality_residual(&u) < 1e-12);
            assert!((u.determinant() - 1.0).abs() < 1e-12);
        }
        // for a rotation the projection is the identity map
        let r = random_so(5, &mut rng);
        assert!((polar_so(&r) - &r).amax() < 1e-12);
    }

    #[test]
    fn pfaffian_matches_canonical_product_and_determinant() {
        let c = canonical_matrix(&[0.3, -0.5, 2.0]);
        assert!((pfaffian(&c) - 0.3 * -0.5 * 2.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_so(6, &mut rng);
        let a = &q * &c * q.transpose();
        let pf = pfaffian(&a);
        assert!((pf - 0.3 * -0.5 * 2.0).abs() < 1e-12);
        assert!((pf * pf - a.determinant()).abs() < 1e-12);
    }

    #[test]
    fn random_so_has_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..7 {
            let q = random_so(n, &mut rng);
            assert!(orthogonality_residual(&q) < 1e-12);
            assert!((q.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
