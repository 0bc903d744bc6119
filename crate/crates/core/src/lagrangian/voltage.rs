//! Voltage subproblem: a homogeneous quadratic form over an annulus.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::Network;
use crate::numerics::eigen::min_eigenpair;

const EIGEN_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct VoltageSolution {
    pub value: f64,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    /// Smallest eigenvalue of the form.
    pub lambda_min: f64,
}

fn add_monomial(m: &mut DMatrix<f64>, a: usize, b: usize, c: f64) {
    if a == b {
        m[(a, a)] += c;
    } else {
        m[(a, b)] += 0.5 * c;
        m[(b, a)] += 0.5 * c;
    }
}

/// Matrix `B` with `xᵀBx` equal to the voltage part of the Lagrangian for
/// one period, `x = (e, f)`.
pub fn voltage_form(net: &Network, lambda: &[f64], gamma: &[f64], alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let n = net.n_buses();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for link in &net.links {
        for (i, j) in [(link.from, link.to), (link.to, link.from)] {
            let (ei, fi, ej, fj) = (i, n + i, j, n + j);
            let (g, b) = (link.g, link.b);
            // −λ_i P_ij
            let l = -lambda[i];
            add_monomial(&mut m, ei, ei, l * g);
            add_monomial(&mut m, fi, fi, l * g);
            add_monomial(&mut m, ei, ej, -l * g);
            add_monomial(&mut m, fi, fj, -l * g);
            add_monomial(&mut m, ei, fj, l * b);
            add_monomial(&mut m, fi, ej, -l * b);
            // −γ_i Q_ij
            let y = -gamma[i];
            add_monomial(&mut m, ei, ej, y * b);
            add_monomial(&mut m, fi, fj, y * b);
            add_monomial(&mut m, ei, ei, -y * b);
            add_monomial(&mut m, fi, fi, -y * b);
            add_monomial(&mut m, ei, fj, y * g);
            add_monomial(&mut m, fi, ej, -y * g);
        }
    }
    for i in 0..n {
        let w = beta[i] - alpha[i];
        m[(i, i)] += w;
        m[(n + i, n + i)] += w;
    }
    m
}

/// `min xᵀBx` over `r_lo ≤ ‖x‖² ≤ r_hi`.
pub fn annulus_min(b: &DMatrix<f64>, r_lo: f64, r_hi: f64) -> Result<(f64, DVector<f64>, f64)> {
    let pair = min_eigenpair(b, EIGEN_TOL)?;
    let radius = if pair.value < 0.0 { r_hi } else { r_lo };
    Ok((pair.value * radius, pair.vector * radius.sqrt(), pair.value))
}

pub fn voltage_subproblem(
    net: &Network,
    lambda: &[f64],
    gamma: &[f64],
    alpha: &[f64],
    beta: &[f64],
) -> Result<VoltageSolution> {
    let n = net.n_buses();
    let b = voltage_form(net, lambda, gamma, alpha, beta);
    let r_lo: f64 = net.buses.iter().map(|b| b.v_min * b.v_min).sum();
    let r_hi: f64 = net.buses.iter().map(|b| b.v_max * b.v_max).sum();
    let (value, x, lambda_min) = annulus_min(&b, r_lo, r_hi)?;
    Ok(VoltageSolution {
        value,
        e: x.rows(0, n).iter().copied().collect(),
        f: x.rows(n, n).iter().copied().collect(),
        lambda_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bus_flows, Bus, Link};
    use proptest::prelude::*;

    fn net3() -> Network {
        let bus = |id: &str| Bus {
            id: id.into(),
            v_min: 0.9,
            v_max: 1.1,
        };
        Network::new(
            vec![bus("a"), bus("b"), bus("c")],
            vec![
                Link { from: 0, to: 1, g: 1.0, b: -2.0 },
                Link { from: 1, to: 2, g: 0.5, b: -3.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_multipliers_give_zero() {
        let net = net3();
        let z = [0.0; 3];
        let s = voltage_subproblem(&net, &z, &z, &z, &z).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn diagonal_closed_form() {
        let mut b = DMatrix::zeros(4, 4);
        b[(0, 0)] = -2.0;
        b[(1, 1)] = 1.0;
        b[(2, 2)] = 1.0;
        b[(3, 3)] = 3.0;
        let (v, x, _) = annulus_min(&b, 1.0, 4.0).unwrap();
        assert!((v + 8.0).abs() < 1e-12);
        assert!((x[0].abs() - 2.0).abs() < 1e-12 && x[1].abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn form_matches_direct_lagrangian_terms(
            mult in proptest::collection::vec(-3.0f64..3.0, 12),
            x in proptest::collection::vec(-1.2f64..1.2, 6),
        ) {
            let net = net3();
            let (l, g, a, bt) = (&mult[0..3], &mult[3..6], &mult[6..9], &mult[9..12]);
            let m = voltage_form(&net, l, g, a, bt);
            let xv = DVector::from_vec(x.clone());
            let quad = (xv.transpose() * &m * &xv)[(0, 0)];
            let (e, f) = (&x[0..3], &x[3..6]);
            let (fp, fq) = bus_flows(&net, e, f);
            let mut direct = 0.0;
            for i in 0..3 {
                direct += -l[i] * fp[i] - g[i] * fq[i] + (bt[i] - a[i]) * (e[i] * e[i] + f[i] * f[i]);
            }
            prop_assert!((quad - direct).abs() < 1e-10 * (1.0 + direct.abs()));
        }
    }
}
