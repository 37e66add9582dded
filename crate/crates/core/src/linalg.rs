//! Dense helpers on top of nalgebra: jittered Cholesky with bordering
//! extension, triangular solves and PSD square roots.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// First jitter tried, relative to the problem scale.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DMatrix<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factorizes a symmetric matrix without any jitter.
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        nalgebra::Cholesky::new(a.clone()).map(|c| Cholesky {
            l: c.unpack(),
            jitter: 0.0,
        })
    }

    /// Factorizes `a`, escalating a diagonal jitter from `1e-10·scale` by
    /// factors of ten up to `1e-4·scale` when the plain factorization fails.
    pub fn with_jitter(a: &DMatrix<f64>, scale: f64) -> Result<Self> {
        if let Some(c) = Self::new(a) {
            return Ok(c);
        }
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let mut rel = JITTER_START;
        let mut last = 0.0;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * scale;
            last = jitter;
            let mut shifted = a.clone();
            for i in 0..a.nrows() {
                shifted[(i, i)] += jitter;
            }
            if let Some(c) = nalgebra::Cholesky::new(shifted) {
                return Ok(Cholesky {
                    l: c.unpack(),
                    jitter,
                });
            }
            rel *= 10.0;
        }
        Err(Error::Factorization { jitter: last })
    }

    pub fn from_lower(l: DMatrix<f64>, jitter: f64) -> Self {
        Cholesky { l, jitter }
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `L⁻¹ b`
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        forward_sub(&self.l, b)
    }

    /// `L⁻ᵀ b`
    pub fn solve_upper(&self, b: &DVector<f64>) -> DVector<f64> {
        backward_sub_transposed(&self.l, b)
    }

    /// `(L Lᵀ)⁻¹ b`
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `L⁻¹ B` column by column.
    pub fn solve_lower_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        for mut col in out.column_iter_mut() {
            let x = forward_sub(&self.l, &col.clone_owned());
            col.copy_from(&x);
        }
        out
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        for mut col in out.column_iter_mut() {
            let x = self.solve(&col.clone_owned());
            col.copy_from(&x);
        }
        out
    }

    /// Explicit inverse of `L Lᵀ`; only used where the full matrix is needed
    /// (trace terms in gradients).
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.solve_mat(&DMatrix::identity(n, n))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Borders the factor with one new row: given the cross column `k` and
    /// the new diagonal entry `c` of the enlarged matrix, returns the factor
    /// of `[[A, k], [kᵀ, c]]` (the stored jitter is re-applied to `c`).
    pub fn extend(&self, k: &DVector<f64>, c: f64) -> Result<Self> {
        let n = self.dim();
        let row = self.solve_lower(k);
        let d2 = c + self.jitter - row.norm_squared();
        if !(d2 > 0.0) || !d2.is_finite() {
            return Err(Error::Factorization {
                jitter: self.jitter,
            });
        }
        let mut l = DMatrix::zeros(n + 1, n + 1);
        l.view_mut((0, 0), (n, n)).copy_from(&self.l);
        for j in 0..n {
            l[(n, j)] = row[j];
        }
        l[(n, n)] = d2.sqrt();
        Ok(Cholesky {
            l,
            jitter: self.jitter,
        })
    }
}

pub fn forward_sub(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= l[(i, j)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

pub fn backward_sub_transposed(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// `(A + Aᵀ) / 2`
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Lower-triangular `S` with `S Sᵀ = A` for a symmetric positive
/// semidefinite `A`. Pivots below `tol·max(diag)` are treated as zero so that
/// singular and all-zero covariances are accepted.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::input("matrix is not square"));
    }
    let a = symmetrize(a);
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -1e-10 * scale.max(1.0) {
            return Err(Error::input("covariance is not positive semidefinite"));
        }
        if d <= tol {
            // rank-deficient direction: column stays zero
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-8 * scale.max(1.0) {
                    return Err(Error::input("covariance is not positive semidefinite"));
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

pub fn is_all_zero(a: &DMatrix<f64>) -> bool {
    a.iter().all(|v| *v == 0.0)
}

pub fn rows_to_matrix(rows: &[DVector<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, d, |i, j| rows[i][j])
}

pub fn matrix_from_nested(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::input("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn matrix_to_nested(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extend_matches_full_factorization() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let top = a.view((0, 0), (2, 2)).clone_owned();
        let c = Cholesky::new(&top).unwrap();
        let k = DVector::from_vec(vec![0.5, 0.2]);
        let ext = c.extend(&k, 2.0).unwrap();
        let full = Cholesky::new(&a).unwrap();
        assert!((ext.l() - full.l()).amax() < 1e-14);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let c = Cholesky::with_jitter(&a, 1.0).unwrap();
        assert!(c.jitter() > 0.0);
        assert!(c.jitter() <= JITTER_MAX);
    }

    #[test]
    fn jitter_gives_up_on_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match Cholesky::with_jitter(&a, 1.0) {
            Err(Error::Factorization { jitter }) => assert!((jitter - 1e-4).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn psd_sqrt_handles_zero_and_singular() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(psd_sqrt(&z).unwrap(), z);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = psd_sqrt(&a).unwrap();
        assert!((&s * s.transpose() - a).amax() < 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_sqrt(&bad).is_err());
    }
}
