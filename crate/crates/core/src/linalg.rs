//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Stacks row vectors into an `rows.len() × n` matrix.
pub fn stack_rows(rows: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from(&r.transpose());
    }
    m
}

/// Singular values of `a`, padded with zeros up to the row count and sorted
/// ascending. A stack with more rows than columns is therefore reported with
/// a zero smallest value, matching rank deficiency of the row set.
pub fn row_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = a.shape();
    if r == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = if c == 0 {
        Vec::new()
    } else {
        SVD::new(a.clone(), false, false).singular_values.iter().copied().collect()
    };
    sv.resize(r, 0.0);
    sv.sort_by(f64::total_cmp);
    sv
}

fn rank_cutoff(a: &DMatrix<f64>, sigma_max: f64) -> f64 {
    let (r, c) = a.shape();
    (r.max(c) as f64) * f64::EPSILON * sigma_max.max(1.0)
}

/// Orthonormal basis (as columns) of the null space of `a` (r × n).
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, n) = a.shape();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if r == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to at least n rows so the SVD returns a full right factor.
    let rows = r.max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (r, n)).copy_from(a);
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rank_cutoff(a, sigma_max);
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cutoff)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Minimum-norm least-squares solution of `m w = b`.
pub fn lstsq_min_norm(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (r, c) = m.shape();
    if c == 0 {
        return DVector::zeros(0);
    }
    if r == 0 {
        return DVector::zeros(c);
    }
    let svd = SVD::new(m.clone(), true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rank_cutoff(m, sigma_max);
    svd.solve(b, cutoff)
        .expect("both factors were computed")
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_single_row() {
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let z = null_space(&a);
        assert_eq!(z.shape(), (2, 1));
        assert!((z[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!(z[(1, 0)].abs() < 1e-14);
    }

    #[test]
    fn null_space_full_rank_is_empty() {
        let a = DMatrix::<f64>::identity(2, 2);
        assert_eq!(null_space(&a).ncols(), 0);
    }

    #[test]
    fn overdetermined_rows_report_zero() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let sv = row_singular_values(&a);
        assert_eq!(sv.len(), 3);
        assert_eq!(sv[0], 0.0);
    }

    #[test]
    fn min_norm_solution_on_rank_deficient_system() {
        // w1 + w2 = 2 has min-norm solution (1, 1).
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let w = lstsq_min_norm(&m, &DVector::from_vec(vec![2.0]));
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] - 1.0).abs() < 1e-14);
    }
}
