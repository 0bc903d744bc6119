//! Proximal bundle method for maximizing a concave function known through
//! values and supergradients.
//!
//! Each iteration solves the master problem
//!
//! ```text
//! max  min_j (c_j + s_jᵀx) − (u/2)‖x − x̂‖²   s.t. x_k ≥ 0 for masked k
//! ```
//!
//! as a convex QP in `(x, r)`. The trial point is a descent (serious) step
//! when the true ascent reaches `m` times the predicted ascent; otherwise it
//! only adds a cut (null step).

use std::time::Instant;

use crate::error::Result;
use crate::numerics::qp::{solve_qp, ConvexQp, QpOutcome, QpSettings};

#[derive(Debug, Clone)]
pub struct BundleParams {
    pub max_iter: usize,
    /// Descent test fraction `m`.
    pub descent_fraction: f64,
    pub initial_weight: f64,
    pub min_weight: f64,
    pub max_weight: f64,
    pub max_cuts: usize,
    /// Stop when the predicted ascent is at most `tol·(1 + |ĝ|)`.
    pub tol: f64,
    pub time_limit_s: Option<f64>,
    pub qp: QpSettings,
}

impl Default for BundleParams {
    fn default() -> Self {
        Self {
            max_iter: 200,
            descent_fraction: 0.1,
            initial_weight: 1.0,
            min_weight: 1e-4,
            max_weight: 1e6,
            max_cuts: 100,
            tol: 1e-6,
            time_limit_s: None,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepType {
    Initial,
    Descent,
    Null,
}

impl StepType {
    pub fn as_str(self) -> &'static str {
        match self {
            StepType::Initial => "initial",
            StepType::Descent => "descent",
            StepType::Null => "null",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterLog {
    pub iter: usize,
    pub g_value: f64,
    pub best_g: f64,
    pub step: StepType,
    pub proximal_weight: f64,
    pub time_s: f64,
}

impl std::fmt::Display for IterLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:.10e} {:.10e} {} {:.3e} {:.3}",
            self.iter,
            self.g_value,
            self.best_g,
            self.step.as_str(),
            self.proximal_weight,
            self.time_s
        )
    }
}

#[derive(Debug, Clone)]
pub struct BundleResult<T> {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub best_payload: T,
    pub converged: bool,
    pub iterations: usize,
    pub log: Vec<IterLog>,
}

/// Affine upper model `c + sᵀx` of the concave function.
#[derive(Debug, Clone)]
struct Cut {
    c: f64,
    s: Vec<f64>,
}

impl Cut {
    fn eval(&self, x: &[f64]) -> f64 {
        self.c + self.s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Maximizes the concave function behind `oracle`, which returns the value,
/// a supergradient and a payload kept for the best point.
pub fn maximize<T, F>(mut oracle: F, x0: Vec<f64>, nonneg: &[bool], params: &BundleParams) -> Result<BundleResult<T>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, T)>,
{
    let start = Instant::now();
    let n = x0.len();
    let mut center: Vec<f64> = x0.iter().zip(nonneg).map(|(&v, &nn)| if nn { v.max(0.0) } else { v }).collect();
    let (g0, s0, p0) = oracle(&center)?;
    let mut g_center = g0;
    let mut best_value = g0;
    let mut best_x = center.clone();
    let mut best_payload = p0;
    let mut cuts = vec![Cut {
        c: g0 - dot(&s0, &center),
        s: s0,
    }];
    let mut u = params.initial_weight.clamp(params.min_weight, params.max_weight);
    let mut log = vec![IterLog {
        iter: 0,
        g_value: g0,
        best_g: best_value,
        step: StepType::Initial,
        proximal_weight: u,
        time_s: start.elapsed().as_secs_f64(),
    }];
    log::info!("{}", log[0]);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=params.max_iter {
        if let Some(limit) = params.time_limit_s {
            if start.elapsed().as_secs_f64() > limit {
                break;
            }
        }
        let Some((trial, theta)) = master(&cuts, &center, nonneg, u, &params.qp)? else {
            log::warn!("bundle master failed at iteration {iter}");
            break;
        };
        let model = cuts.iter().map(|c| c.eval(&trial)).fold(f64::INFINITY, f64::min);
        let predicted = model - g_center;
        if predicted <= params.tol * (1.0 + g_center.abs()) {
            converged = true;
            break;
        }
        iterations = iter;
        let (g, s, payload) = oracle(&trial)?;
        let step = if g - g_center >= params.descent_fraction * predicted {
            center.clone_from(&trial);
            g_center = g;
            u = (0.5 * u).max(params.min_weight);
            StepType::Descent
        } else {
            u = (2.0 * u).min(params.max_weight);
            StepType::Null
        };
        if g > best_value {
            best_value = g;
            best_x.clone_from(&trial);
            best_payload = payload;
        }
        let cut = Cut {
            c: g - dot(&s, &trial),
            s,
        };
        if cuts.len() >= params.max_cuts {
            compress(&mut cuts, &theta, params.max_cuts - 1, n);
        }
        cuts.push(cut);
        let entry = IterLog {
            iter,
            g_value: g,
            best_g: best_value,
            step,
            proximal_weight: u,
            time_s: start.elapsed().as_secs_f64(),
        };
        log::info!("{entry}");
        log.push(entry);
    }
    Ok(BundleResult {
        best_x,
        best_value,
        best_payload,
        converged,
        iterations,
        log,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trial point and cut multipliers (summing to one).
fn master(cuts: &[Cut], center: &[f64], nonneg: &[bool], u: f64, settings: &QpSettings) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let n = center.len();
    let mut qp = ConvexQp::new();
    for j in 0..n {
        let lo = if nonneg[j] { 0.0 } else { f64::NEG_INFINITY };
        let v = qp.add_var(lo, f64::INFINITY, -u * center[j]);
        qp.add_hessian(v, v, u);
    }
    let r = qp.add_var(f64::NEG_INFINITY, f64::INFINITY, -1.0);
    for cut in cuts {
        let mut coeffs: Vec<(usize, f64)> = cut.s.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, -v)).collect();
        coeffs.push((r, 1.0));
        qp.add_le(coeffs, cut.c);
    }
    let scale = cuts.iter().fold(1.0 + u, |m, c| m.max(c.c.abs()));
    let sol = match solve_qp(&qp, settings)? {
        QpOutcome::Optimal(sol) => sol,
        QpOutcome::NumericalFailure(sol) if sol.kkt.max() < 1e-7 * scale => sol,
        _ => return Ok(None),
    };
    let x = sol.x[..n].iter().zip(nonneg).map(|(&v, &nn)| if nn { v.max(0.0) } else { v }).collect();
    Ok(Some((x, sol.le_duals)))
}

/// Shrinks the bundle to `keep` cuts: inactive cuts go first, oldest first;
/// if the bundle is still too large the oldest cuts are replaced by their
/// aggregate under the master multipliers.
fn compress(cuts: &mut Vec<Cut>, theta: &[f64], keep: usize, n: usize) {
    let mut idx: Vec<usize> = (0..cuts.len()).collect();
    let active = |j: usize| theta.get(j).copied().unwrap_or(0.0) > 1e-10;
    let mut remove = cuts.len().saturating_sub(keep);
    let mut dropped = vec![false; cuts.len()];
    for &j in &idx {
        if remove == 0 {
            break;
        }
        if !active(j) {
            dropped[j] = true;
            remove -= 1;
        }
    }
    if remove > 0 {
        // aggregate the oldest remaining cuts into one
        let victims: Vec<usize> = idx.iter().copied().filter(|&j| !dropped[j]).take(remove + 1).collect();
        let weight: f64 = victims.iter().map(|&j| theta[j]).sum();
        let mut agg = Cut { c: 0.0, s: vec![0.0; n] };
        for &j in &victims {
            let w = theta[j] / weight;
            agg.c += w * cuts[j].c;
            for (a, b) in agg.s.iter_mut().zip(&cuts[j].s) {
                *a += w * b;
            }
            dropped[j] = true;
        }
        let first = victims[0];
        dropped[first] = false;
        cuts[first] = agg;
    }
    idx.retain(|&j| !dropped[j]);
    let mut kept = Vec::with_capacity(idx.len());
    for j in idx {
        kept.push(cuts[j].clone());
    }
    *cuts = kept;
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `g(x) = c − ½ Σ d_k (x_k − a_k)²`
    fn quad_oracle(a: Vec<f64>, d: Vec<f64>, c: f64) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>, ())> {
        move |x: &[f64]| {
            let mut g = c;
            let mut s = vec![0.0; x.len()];
            for k in 0..x.len() {
                g -= 0.5 * d[k] * (x[k] - a[k]).powi(2);
                s[k] = -d[k] * (x[k] - a[k]);
            }
            Ok((g, s, ()))
        }
    }

    #[test]
    fn concave_quadratic_toy() {
        let a = vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.0];
        let d = vec![1.0, 2.0, 0.5, 4.0, 1.5, 3.0];
        let params = BundleParams {
            tol: 1e-9,
            ..BundleParams::default()
        };
        let res = maximize(quad_oracle(a, d, 5.0), vec![0.0; 6], &[false; 6], &params).unwrap();
        assert!(res.iterations <= 200);
        assert!((res.best_value - 5.0).abs() < 1e-6, "{} after {} its", res.best_value, res.iterations);
        assert!(res.converged);
        for w in res.log.windows(2) {
            assert!(w[1].best_g >= w[0].best_g);
        }
    }

    #[test]
    fn nonnegativity_respected() {
        // maximizer of the unconstrained function has x_0 = −1 < 0
        let a = vec![-1.0, 2.0];
        let d = vec![1.0, 1.0];
        let res = maximize(quad_oracle(a, d, 0.0), vec![1.0, 1.0], &[true, false], &BundleParams::default()).unwrap();
        assert!(res.best_x[0] >= 0.0);
        assert!((res.best_value + 0.5).abs() < 1e-6, "{}", res.best_value);
    }

    #[test]
    fn piecewise_linear_with_small_bundle() {
        // g(x) = min(1 − |x_0|, 2 − |x_1 − 1|): max 1 at x_0 = 0
        let oracle = |x: &[f64]| -> Result<(f64, Vec<f64>, ())> {
            let a = 1.0 - x[0].abs();
            let b = 2.0 - (x[1] - 1.0).abs();
            if a <= b {
                Ok((a, vec![-x[0].signum(), 0.0], ()))
            } else {
                Ok((b, vec![0.0, -(x[1] - 1.0).signum()], ()))
            }
        };
        let params = BundleParams {
            max_cuts: 4,
            ..BundleParams::default()
        };
        let res = maximize(oracle, vec![3.0, -4.0], &[false, false], &params).unwrap();
        assert!((res.best_value - 1.0).abs() < 1e-5, "{}", res.best_value);
    }
}
