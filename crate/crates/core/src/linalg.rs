use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when not positive definite.
pub fn condition_spd(m: &DMatrix<f64>) -> f64 {
    let eig = symmetrize(m).symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    symmetrize(m).cholesky()
}

/// Checks `m` is square, symmetric to a relative tolerance, and has eigenvalues >= `floor`.
pub fn check_symmetric_definite(m: &DMatrix<f64>, floor: f64) -> Result<(), String> {
    if !m.is_square() {
        return Err(format!("must be square, got {}x{}", m.nrows(), m.ncols()));
    }
    let scale = 1.0 + m.amax();
    if max_asymmetry(m) > 1e-12 * scale {
        return Err("must be symmetric".into());
    }
    let lo = min_eigenvalue(m);
    if lo < floor {
        return Err(format!("smallest eigenvalue {lo:.3e} is below {floor:.3e}"));
    }
    Ok(())
}

/// Block `[top_left, top_right; bottom_left, bottom_right]`.
pub fn block2(
    tl: &DMatrix<f64>,
    tr: &DMatrix<f64>,
    bl: &DMatrix<f64>,
    br: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (r0, c0) = tl.shape();
    let (r1, c1) = br.shape();
    let mut out = DMatrix::zeros(r0 + r1, c0 + c1);
    out.view_mut((0, 0), (r0, c0)).copy_from(tl);
    out.view_mut((0, c0), (r0, c1)).copy_from(tr);
    out.view_mut((r0, 0), (r1, c0)).copy_from(bl);
    out.view_mut((r0, c0), (r1, c1)).copy_from(br);
    out
}

pub fn stack(top: &DVector<f64>, bottom: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(top.len() + bottom.len());
    out.rows_mut(0, top.len()).copy_from(top);
    out.rows_mut(top.len(), bottom.len()).copy_from(bottom);
    out
}
