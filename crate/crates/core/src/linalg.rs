//! Least-squares solves, spectral norms and small matrix helpers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the least-squares solve treats a regressor without full column rank.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankPolicy {
    /// Reject any regressor whose column-scaled singular values drop below
    /// `rcond` times the largest one.
    Strict { rcond: f64 },
    /// Truncate those directions and return the minimum-norm solution in the
    /// column-scaled coordinates.
    MinimumNorm { rcond: f64 },
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::Strict { rcond: 1e-12 }
    }
}

impl RankPolicy {
    pub fn rcond(&self) -> f64 {
        match *self {
            RankPolicy::Strict { rcond } | RankPolicy::MinimumNorm { rcond } => rcond,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LsSolution {
    pub x: DVector<f64>,
    pub rank: usize,
    /// Ratio of extreme singular values of the column-scaled regressor.
    pub condition: f64,
}

/// Solve `min ‖A x − b‖₂` through an SVD of the column-equilibrated matrix.
///
/// Columns are scaled to unit norm first so that features living on very
/// different scales (e.g. x and x⁴ in glucose units) do not masquerade as a
/// rank loss.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, policy: RankPolicy) -> Result<LsSolution> {
    let (rows, cols) = a.shape();
    if b.len() != rows {
        return Err(Error::Dimension { what: "least-squares targets", expected: rows, got: b.len() });
    }
    if rows < cols {
        return Err(Error::BufferTooSmall { buffer: rows, features: cols });
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidSample("non-finite entry in least-squares system".into()));
    }

    let mut scale = DVector::zeros(cols);
    let mut scaled = a.clone();
    for j in 0..cols {
        let norm = a.column(j).norm();
        let s = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        scale[j] = s;
        scaled.column_mut(j).scale_mut(s);
    }

    let svd = scaled.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let cutoff = policy.rcond() * smax;
    let rank = sv.iter().filter(|&&s| s > cutoff).count();

    if rank < cols {
        if let RankPolicy::Strict { .. } = policy {
            return Err(Error::RankDeficient { rank, cols, condition });
        }
    }

    let y = svd
        .solve(b, cutoff)
        .map_err(|e| Error::InvalidSample(format!("svd solve failed: {e}")))?;
    let x = y.component_mul(&scale);
    Ok(LsSolution { x, rank, condition })
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn spectral_norm(a: &DMatrix<f64>, tol: f64) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let ata = a.transpose() * a;
    if ata.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    // A fixed non-symmetric start, then each unit vector, guards against
    // starting orthogonal to the dominant singular vector.
    let mut starts: Vec<DVector<f64>> = vec![DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64)];
    for i in 0..n {
        starts.push(DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 }));
    }
    let mut best = 0.0_f64;
    for v0 in starts {
        best = best.max(power_iterate(&ata, v0, tol));
    }
    best.sqrt()
}

fn power_iterate(m: &DMatrix<f64>, mut v: DVector<f64>, tol: f64) -> f64 {
    let nv = v.norm();
    if nv == 0.0 {
        return 0.0;
    }
    v /= nv;
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = m * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / nw;
        if (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return next.max(nw);
        }
        lambda = next;
    }
    lambda
}

pub fn is_symmetric_positive_definite(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.nrows() == 0 {
        return false;
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-12 * m.abs().max().max(1.0) {
        return false;
    }
    m.clone().cholesky().is_some()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::config("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_normal_equations() {
        // ΨᵀΨ = [[2,1],[1,5]], Ψᵀz = [3,6] → w = [9/9, 9/9] = [1, 1]
        let psi = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let z = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let sol = least_squares(&psi, &z, RankPolicy::default()).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-14);
        assert!((sol.x[1] - 1.0).abs() < 1e-14);
        assert_eq!(sol.rank, 2);
    }

    #[test]
    fn square_system_interpolates() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let sol = least_squares(&a, &b, RankPolicy::default()).unwrap();
        assert!((&a * &sol.x - &b).amax() < 1e-13);
    }

    #[test]
    fn strict_rejects_duplicate_column() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        match least_squares(&a, &b, RankPolicy::default()) {
            Err(Error::RankDeficient { rank, cols, .. }) => {
                assert_eq!((rank, cols), (1, 2));
            }
            other => panic!("expected rank error, got {other:?}"),
        }
        let sol = least_squares(&a, &b, RankPolicy::MinimumNorm { rcond: 1e-12 }).unwrap();
        assert_eq!(sol.rank, 1);
        assert!(sol.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_few_rows() {
        let a = DMatrix::<f64>::zeros(1, 2);
        let b = DVector::zeros(1);
        assert!(matches!(
            least_squares(&a, &b, RankPolicy::default()),
            Err(Error::BufferTooSmall { .. })
        ));
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, -2.0]);
        let expected = m.clone().svd(false, false).singular_values.max();
        assert!((spectral_norm(&m, 1e-12) - expected).abs() < 1e-8);
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -5.0]);
        assert!((spectral_norm(&d, 1e-12) - 5.0).abs() < 1e-10);
        assert_eq!(spectral_norm(&DMatrix::zeros(2, 2), 1e-12), 0.0);
    }

    #[test]
    fn spd_detection() {
        let good = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(is_symmetric_positive_definite(&good));
        assert!(!is_symmetric_positive_definite(&indefinite));
    }
}
