//! Dense least-squares kernels shared by the fitters and the feedthrough filter.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("underdetermined: {rows} rows for {cols} unknowns")]
    Underdetermined { rows: usize, cols: usize },
    #[error("smallest singular subspace is degenerate (relative gap {gap:e})")]
    Degenerate { gap: f64 },
    #[error("non-finite entries in the data")]
    NonFinite,
}

/// Solution of `min ‖Z X − Y‖² + ridge ‖X‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstsq {
    pub x: DMatrix<f64>,
    pub rank: usize,
    /// Frobenius norm of `Z X − Y`.
    pub residual_norm: f64,
    pub warnings: Vec<String>,
}

/// Least squares through column equilibration, QR, and an SVD of the
/// triangular factor. Rank-deficient problems fall back to the minimum-norm
/// pseudo-inverse solution and record a warning.
pub fn lstsq(z: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<Lstsq, LinalgError> {
    let (m, c) = z.shape();
    assert_eq!(y.nrows(), m, "row mismatch");
    if m < c {
        return Err(LinalgError::Underdetermined { rows: m, cols: c });
    }
    if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let scale: Vec<f64> = z
        .column_iter()
        .map(|col| {
            let n = col.norm();
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        })
        .collect();
    let s = DVector::from_vec(scale.clone());
    let mut zs = z.clone();
    for (j, mut col) in zs.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    let (za, ya) = if ridge > 0.0 {
        let mut za = DMatrix::zeros(m + c, c);
        za.rows_mut(0, m).copy_from(&zs);
        for j in 0..c {
            za[(m + j, j)] = ridge.sqrt() * scale[j];
        }
        let mut ya = DMatrix::zeros(m + c, y.ncols());
        ya.rows_mut(0, m).copy_from(y);
        (za, ya)
    } else {
        (zs, y.clone())
    };

    let qr = za.qr();
    let qty = qr.q().transpose() * &ya;
    let r = qr.r();
    let svd = r.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * (m.max(c) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&sv| sv > cutoff).count();
    let mut warnings = Vec::new();
    if rank < c {
        let msg = format!("rank-deficient regressor (rank {rank} of {c}); using pseudo-inverse");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v requested");
    let mut ut_b = u.transpose() * qty;
    for (i, sv) in svd.singular_values.iter().enumerate() {
        let inv = if *sv > cutoff { 1.0 / sv } else { 0.0 };
        ut_b.row_mut(i).scale_mut(inv);
    }
    let b = vt.transpose() * ut_b;
    let mut x = b;
    for (i, mut row) in x.row_iter_mut().enumerate() {
        row *= s[i];
    }
    let residual_norm = (z * &x - y).norm();
    Ok(Lstsq { x, rank, residual_norm, warnings })
}

/// Classical total least squares: `Θ = −V₁₂ V₂₂⁻¹` from the right singular
/// vectors of `[Z | Y]`.
pub fn tls(z: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let (m, c) = z.shape();
    let k = y.ncols();
    assert_eq!(y.nrows(), m, "row mismatch");
    if m < c + k {
        return Err(LinalgError::Underdetermined { rows: m, cols: c + k });
    }
    if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let mut stacked = DMatrix::zeros(m, c + k);
    stacked.columns_mut(0, c).copy_from(z);
    stacked.columns_mut(c, k).copy_from(y);
    let r = stacked.qr().r();
    let svd = r.svd(false, true);
    let v = svd.v_t.as_ref().expect("v requested").transpose();

    let mut order: Vec<usize> = (0..c + k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if c == 0 {
        return Err(LinalgError::Degenerate { gap: 0.0 });
    }
    let smax = sigma[0].max(f64::MIN_POSITIVE);
    let gap = (sigma[c - 1] - sigma[c]) / smax;
    if gap < 1e-12 {
        return Err(LinalgError::Degenerate { gap });
    }
    let mut v12 = DMatrix::zeros(c, k);
    let mut v22 = DMatrix::zeros(k, k);
    for (jj, &col) in order[c..].iter().enumerate() {
        for i in 0..c {
            v12[(i, jj)] = v[(i, col)];
        }
        for i in 0..k {
            v22[(i, jj)] = v[(c + i, col)];
        }
    }
    let inv = v22.try_inverse().ok_or(LinalgError::Degenerate { gap: 0.0 })?;
    let theta = -(v12 * inv);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::Degenerate { gap });
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design() -> (DMatrix<f64>, DMatrix<f64>) {
        let z = DMatrix::from_fn(50, 3, |i, j| ((i * (j + 2)) as f64 * 0.37).sin() + j as f64);
        let truth = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 0.25, 3.0, 0.0]);
        let y = &z * &truth;
        (z, y)
    }

    #[test]
    fn exact_recovery() {
        let (z, y) = design();
        let sol = lstsq(&z, &y, 0.0).unwrap();
        assert_eq!(sol.rank, 3);
        assert!(sol.residual_norm < 1e-10);
        assert!((sol.x[(0, 1)] + 2.0).abs() < 1e-10);
        let t = tls(&z, &y).unwrap();
        assert!((&t - &sol.x).amax() < 1e-8);
    }

    #[test]
    fn ridge_matches_normal_equations() {
        let (z, y) = design();
        let ridge = 0.3;
        let sol = lstsq(&z, &y, ridge).unwrap();
        let gram = z.transpose() * &z + DMatrix::identity(3, 3) * ridge;
        let direct = gram.try_inverse().unwrap() * z.transpose() * &y;
        assert!((&sol.x - direct).amax() < 1e-10);
    }

    #[test]
    fn rank_deficiency_falls_back_to_pseudo_inverse() {
        let (mut z, _) = design();
        let c0 = z.column(0).clone_owned();
        z.set_column(2, &(c0 * 2.0));
        let y = DMatrix::from_fn(50, 1, |i, _| z[(i, 0)] + z[(i, 1)]);
        let sol = lstsq(&z, &y, 0.0).unwrap();
        assert_eq!(sol.rank, 2);
        assert_eq!(sol.warnings.len(), 1);
        assert!(sol.residual_norm < 1e-9);
        // minimum norm in equilibrated coordinates splits the weight evenly
        assert!((sol.x[(0, 0)] - 0.5).abs() < 1e-9 && (sol.x[(2, 0)] - 0.25).abs() < 1e-9);
        assert!(matches!(tls(&z, &y), Err(LinalgError::Degenerate { .. })));
    }

    #[test]
    fn underdetermined() {
        let z = DMatrix::zeros(2, 3);
        let y = DMatrix::zeros(2, 1);
        assert!(matches!(lstsq(&z, &y, 0.0), Err(LinalgError::Underdetermined { .. })));
    }
}
