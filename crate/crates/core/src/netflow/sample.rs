//! Sampling of single-period feasible voltages: random near-flat starts
//! projected onto the magnitude and injection ranges by damped Gauss-Newton.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::envelope::Interval;
use super::reform::{link_forms, magnitude_form, QuadForm};
use super::tighten::injection_bounds;
use crate::error::Result;
use crate::model::Instance;

/// Range constraints `form(x) ∈ range` of one period.
pub struct PeriodSet {
    pub n: usize,
    pub rows: Vec<(QuadForm, Interval)>,
}

impl PeriodSet {
    pub fn new(inst: &Instance, t: usize) -> Result<Self> {
        let n = inst.n_buses();
        let forms = link_forms(&inst.network)?;
        let (pb, qb) = injection_bounds(inst, t);
        let mut p_at = vec![QuadForm::default(); n];
        let mut q_at = vec![QuadForm::default(); n];
        for (l, link) in inst.network.links.iter().enumerate() {
            p_at[link.from] = p_at[link.from].plus(&forms[l].p_ij);
            p_at[link.to] = p_at[link.to].plus(&forms[l].p_ji);
            q_at[link.from] = q_at[link.from].plus(&forms[l].q_ij);
            q_at[link.to] = q_at[link.to].plus(&forms[l].q_ji);
        }
        let mut rows = Vec::with_capacity(3 * n);
        for (i, b) in inst.network.buses.iter().enumerate() {
            rows.push((magnitude_form(n, i), Interval::new(b.v_min * b.v_min, b.v_max * b.v_max)?));
        }
        for (i, (p, q)) in p_at.into_iter().zip(q_at).enumerate() {
            rows.push((p, pb[i]));
            rows.push((q, qb[i]));
        }
        Ok(Self { n, rows })
    }

    /// Distance of each row value to its range.
    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|(f, iv)| {
                let v = f.eval(x);
                v - v.clamp(iv.lo, iv.hi)
            })
            .collect()
    }

    pub fn max_residual(&self, x: &[f64]) -> f64 {
        self.residuals(x).iter().fold(0.0f64, |m, r| m.max(r.abs()))
    }

    /// Levenberg-Marquardt on the clipped residuals. Returns the final point
    /// and its largest residual.
    pub fn project(&self, x0: &[f64], max_iter: usize) -> (Vec<f64>, f64) {
        let dim = 2 * self.n;
        let mut x = x0.to_vec();
        let mut r = self.residuals(&x);
        let mut cost: f64 = r.iter().map(|v| v * v).sum();
        let mut damp = 1e-6;
        for _ in 0..max_iter {
            if r.iter().all(|v| v.abs() <= 1e-13) {
                break;
            }
            let mut jac = DMatrix::zeros(r.len(), dim);
            for (k, ((form, _), &rk)) in self.rows.iter().zip(&r).enumerate() {
                if rk != 0.0 {
                    let mut g = vec![0.0; dim];
                    form.add_grad(&x, 1.0, &mut g);
                    for a in 0..dim {
                        jac[(k, a)] = g[a];
                    }
                }
            }
            let jt = jac.transpose();
            let jtj = &jt * &jac;
            let rhs = -(&jt * DVector::from_vec(r.clone()));
            let mut improved = false;
            for _ in 0..20 {
                let mut m = jtj.clone();
                for a in 0..dim {
                    m[(a, a)] += damp * (1.0 + jtj[(a, a)]);
                }
                let Some(ch) = m.cholesky() else {
                    damp *= 10.0;
                    continue;
                };
                let dx = ch.solve(&rhs);
                let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
                let rt = self.residuals(&trial);
                let ct: f64 = rt.iter().map(|v| v * v).sum();
                if ct < cost {
                    x = trial;
                    r = rt;
                    cost = ct;
                    damp = (damp * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
                damp *= 10.0;
            }
            if !improved {
                break;
            }
        }
        let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (x, worst)
    }
}

/// Rotates every phasor by `phi`.
pub fn rotate(x: &[f64], phi: f64) -> Vec<f64> {
    let n = x.len() / 2;
    let (c, s) = (phi.cos(), phi.sin());
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        out[i] = c * x[i] - s * x[n + i];
        out[n + i] = s * x[i] + c * x[n + i];
    }
    out
}

/// Up to `count` voltage points `(e, f)` of period `t` whose magnitudes and
/// bus flows lie in their ranges within `tol`, after at most `attempts`
/// projected starts. Each accepted point is rotated by a random angle.
pub fn sample_feasible_voltages<R: Rng>(
    inst: &Instance,
    t: usize,
    count: usize,
    attempts: usize,
    tol: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let set = PeriodSet::new(inst, t)?;
    let n = set.n;
    let buses = &inst.network.buses;
    let mut out = Vec::with_capacity(count);
    for k in 0..attempts {
        if out.len() >= count {
            break;
        }
        // spread of the start grows with the attempt index
        let spread = [0.002, 0.01, 0.05, 0.2][k % 4];
        let lo = buses.iter().map(|b| b.v_min).fold(f64::NEG_INFINITY, f64::max);
        let hi = buses.iter().map(|b| b.v_max).fold(f64::INFINITY, f64::min);
        let base = if lo < hi { rng.gen_range(lo..=hi) } else { 1.0 };
        let mut x0 = vec![0.0; 2 * n];
        for i in 0..n {
            let m = base * (1.0 + rng.gen_range(-spread..=spread));
            let th: f64 = rng.gen_range(-spread..=spread);
            x0[i] = m * th.cos();
            x0[n + i] = m * th.sin();
        }
        let (x, worst) = set.project(&x0, 60);
        if worst <= tol {
            out.push(rotate(&x, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)));
        }
    }
    Ok(out)
}
