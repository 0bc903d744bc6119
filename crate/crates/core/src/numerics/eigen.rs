//! Dense symmetric eigensolver.
//!
//! Householder reduction to tridiagonal form followed by the implicit QL
//! iteration with Wilkinson-type shifts (the classic `tred2`/`tql2` pair).
//! Eigenvalues come back sorted ascending with matching unit eigenvectors
//! stored as matrix columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Full eigendecomposition `M = V diag(values) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

/// Relative asymmetry tolerated before a matrix is rejected.
const SYMMETRY_TOL: f64 = 1e-9;

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            context: "symmetric eigen (square matrix)",
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::invariant(
                    "matrix symmetry",
                    format!("entries ({i},{j}) and ({j},{i}) differ"),
                ));
            }
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invariant("finite entries", "matrix contains NaN or inf"));
    }
    Ok(())
}

pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen> {
    check_symmetric(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    // Row-major working copy, symmetrized.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e);
    tql2(n, &mut v, &mut d, &mut e)?;
    let vectors = DMatrix::from_fn(n, n, |i, j| v[i * n + j]);
    Ok(SymmetricEigen { values: d, vectors })
}

/// Eigenvalues only, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(symmetric_eigen(m)?.values)
}

/// Smallest eigenvalue and a unit eigenvector.
///
/// The residual `‖Mv − λv‖` is checked against `tol·max(1, ‖M‖_max)`.
pub fn min_eigenpair(m: &DMatrix<f64>, tol: f64) -> Result<EigenPair> {
    if m.nrows() == 0 {
        return Err(Error::Dimension {
            context: "min_eigenpair (non-empty matrix)",
            expected: 1,
            actual: 0,
        });
    }
    let eig = symmetric_eigen(m)?;
    let mut vector = eig.vectors.column(0).into_owned();
    let norm = vector.norm();
    vector /= norm;
    let value = eig.values[0];
    let residual = (m * &vector - &vector * value).norm();
    if residual > tol * m.amax().max(1.0) {
        return Err(Error::NumericalFailure(format!(
            "eigenpair residual {residual:.3e} exceeds tolerance {tol:.1e}"
        )));
    }
    Ok(EigenPair { value, vector })
}

fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn tql2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let at = |i: usize, j: usize| i * n + j;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    let max_iter = 60 * n.max(1);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::NumericalFailure(
                        "implicit QL iteration did not converge".into(),
                    ));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    // selection sort keeps eigenvectors aligned
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for (j, &dj) in d.iter().enumerate().skip(i + 1) {
            if dj < p {
                k = j;
                p = dj;
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for j in 0..n {
                v.swap(at(j, i), at(j, k));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn identity_has_unit_eigenvalue() {
        let pair = min_eigenpair(&DMatrix::identity(4, 4), 1e-12).unwrap();
        assert!((pair.value - 1.0).abs() < 1e-14);
        assert!((pair.vector.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_picks_smallest_axis() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -2.0, 5.0]));
        let pair = min_eigenpair(&m, 1e-12).unwrap();
        assert_eq!(pair.value, -2.0);
        assert!((pair.vector[1].abs() - 1.0).abs() < 1e-14);
        assert!(pair.vector[0].abs() < 1e-14 && pair.vector[2].abs() < 1e-14);
    }

    #[test]
    fn reconstructs_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 3, 7, 16] {
            let m = random_symmetric(n, &mut rng);
            let eig = symmetric_eigen(&m).unwrap();
            let lam = DMatrix::from_diagonal(&DVector::from_vec(eig.values.clone()));
            let back = &eig.vectors * lam * eig.vectors.transpose();
            assert!((back - &m).amax() < 1e-12, "n = {n}");
            let orth = eig.vectors.transpose() * &eig.vectors - DMatrix::identity(n, n);
            assert!(orth.amax() < 1e-12);
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(symmetric_eigen(&m), Err(Error::Invariant { .. })));
    }

    #[test]
    fn rayleigh_quotient_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_symmetric(9, &mut rng);
        let pair = min_eigenpair(&m, 1e-10).unwrap();
        for _ in 0..500 {
            let mut u = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
            u /= u.norm();
            assert!(pair.value <= u.dot(&(&m * &u)) + 1e-12);
        }
    }
}
