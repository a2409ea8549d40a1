//! Small dense symmetric solves on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Relative pivot floor below which a Gram matrix is treated as singular.
const PIVOT_TOL: f64 = 1e-10;

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// On failure returns the index of the first column whose pivot collapses,
/// i.e. the first column that is (numerically) a combination of earlier ones.
pub fn cholesky(a: &DMatrix<f64>) -> std::result::Result<Cholesky<f64, Dyn>, usize> {
    let p = a.nrows();
    let chol = Cholesky::new(a.clone()).ok_or_else(|| first_collapsed_pivot(a))?;
    let l = chol.l_dirty();
    for k in 0..p {
        let scale = a[(k, k)].abs().max(f64::MIN_POSITIVE);
        if l[(k, k)] * l[(k, k)] < PIVOT_TOL * scale {
            return Err(k);
        }
    }
    Ok(chol)
}

fn first_collapsed_pivot(a: &DMatrix<f64>) -> usize {
    let p = a.nrows();
    for k in 1..=p {
        let sub = a.view((0, 0), (k, k)).into_owned();
        match Cholesky::new(sub) {
            Some(c) => {
                let l = c.l_dirty();
                let scale = a[(k - 1, k - 1)].abs().max(f64::MIN_POSITIVE);
                if l[(k - 1, k - 1)] * l[(k - 1, k - 1)] < PIVOT_TOL * scale {
                    return k - 1;
                }
            }
            None => return k - 1,
        }
    }
    p.saturating_sub(1)
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    cholesky(a).ok().map(|c| c.solve(b))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    cholesky(a).ok().map(|c| c.inverse())
}

/// Symmetric submatrix on the given index set.
pub fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let p = a.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Accumulates the upper triangle of `x xᵀ` scaled by `w` into `gram`.
#[inline]
pub fn rank_one_update(gram: &mut [f64], p: usize, x: &[f64], w: f64) {
    for i in 0..p {
        let wi = w * x[i];
        let row = &mut gram[i * p..(i + 1) * p];
        for j in i..p {
            row[j] += wi * x[j];
        }
    }
}

/// Builds a full symmetric matrix from an upper-triangle accumulator.
pub fn from_upper(gram: &[f64], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i <= j { gram[i * p + j] } else { gram[j * p + i] })
}
