//! Row-major dense Cholesky helpers shared by the interior point solvers.

/// Pivot value substituted for a non-positive pivot. The corresponding
/// direction is effectively frozen in subsequent solves.
const HUGE_PIVOT: f64 = 1e64;

/// In-place lower Cholesky factor of the symmetric matrix stored row-major
/// in `a` (only the lower triangle is read). A pivot at or below `tiny`
/// times its own original diagonal entry, or below `1e-30` times the
/// largest diagonal, is replaced by a huge value instead of failing.
/// Returns the number of replaced pivots.
pub fn cholesky_guarded(a: &mut [f64], n: usize, tiny: f64) -> usize {
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0f64, f64::max).max(1e-300);
    let abs_floor = 1e-30 * max_diag;
    let mut replaced = 0;
    for j in 0..n {
        let orig = a[j * n + j];
        let mut d = orig;
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= (tiny * orig.abs()).max(abs_floor) || !d.is_finite() {
            d = HUGE_PIVOT;
            replaced += 1;
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / ljj;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    replaced
}

/// Strict Cholesky; `None` if the matrix is not numerically positive definite.
pub fn cholesky_strict(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = a.to_vec();
    for j in 0..n {
        let mut d = l[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut v = l[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / ljj;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            l[i * n + j] = 0.0;
        }
    }
    Some(l)
}

/// Solves `L y = b` in place.
pub fn forward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Solves `Lᵀ x = b` in place.
pub fn backward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Solves `L Lᵀ x = b` in place.
pub fn chol_solve(l: &[f64], n: usize, b: &mut [f64]) {
    forward(l, n, b);
    backward(l, n, b);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let l = cholesky_strict(&a, 3).unwrap();
        let mut b = [1.0, 2.0, 3.0];
        chol_solve(&l, 3, &mut b);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * b[j]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn strict_rejects_indefinite() {
        assert!(cholesky_strict(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn guarded_replaces_zero_pivot() {
        let mut a = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(cholesky_guarded(&mut a, 2, 1e-14), 1);
        let mut b = [2.0, 5.0];
        chol_solve(&a, 2, &mut b);
        assert!((b[0] - 2.0).abs() < 1e-15 && b[1].abs() < 1e-50);
    }
}
