//! Dense-block convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! min  ½ xᵀHx + cᵀx + offset
//! s.t. A x = b,   G x ≤ h,   lb ≤ x ≤ ub
//! ```
//!
//! with `H` symmetric positive semidefinite. The solver presolves fixed
//! variables, singleton rows and opposite inequality pairs, then runs a
//! Mehrotra predictor-corrector interior point method. The reduced KKT
//! matrix is factored per connected block of variables (linked through `H`
//! or inequality rows) and equality rows are eliminated through a dense
//! Schur complement, which keeps multi-period problems cheap.
//!
//! Dual sign convention: the Lagrangian is
//! `obj + yᵀ(Ax − b) + zᵀ(Gx − h) + z_lᵀ(lb − x) + z_uᵀ(x − ub)` with
//! `z, z_l, z_u ≥ 0`.

mod ipm;
mod presolve;

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::eigen::symmetric_eigenvalues;

/// One sparse linear row `Σ coeffs·x (=|≤) rhs`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinRow {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConvexQp {
    pub n: usize,
    /// Symmetric Hessian entries `(i, j, v)` with `i ≤ j`; duplicates add up.
    pub hessian: Vec<(usize, usize, f64)>,
    pub linear: Vec<f64>,
    pub offset: f64,
    pub eq: Vec<LinRow>,
    /// Rows of `G x ≤ h`.
    pub le: Vec<LinRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConvexQp {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable and returns its index.
    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.n += 1;
        self.linear.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.n - 1
    }

    /// Adds `v` to `H[i][j]` and `H[j][i]`.
    pub fn add_hessian(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.hessian.push((i.min(j), i.max(j), v));
        }
    }

    pub fn add_linear(&mut self, i: usize, v: f64) {
        self.linear[i] += v;
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.eq.push(LinRow::new(coeffs, rhs));
        self.eq.len() - 1
    }

    pub fn add_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.le.push(LinRow::new(coeffs, rhs));
        self.le.len() - 1
    }

    /// Adds `Σ coeffs·x ≥ rhs`, stored as a negated `≤` row.
    pub fn add_ge(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        let neg = coeffs.into_iter().map(|(j, a)| (j, -a)).collect();
        self.add_le(neg, -rhs)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v = self.offset;
        for (j, &c) in self.linear.iter().enumerate() {
            v += c * x[j];
        }
        for &(i, j, h) in &self.hessian {
            if i == j {
                v += 0.5 * h * x[i] * x[i];
            } else {
                v += h * x[i] * x[j];
            }
        }
        v
    }

    /// `H x` accumulated into a fresh vector.
    pub fn hessian_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(i, j, h) in &self.hessian {
            out[i] += h * x[j];
            if i != j {
                out[j] += h * x[i];
            }
        }
        out
    }

    /// Checks indices, finiteness and positive semidefiniteness of `H`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        for (name, len) in [
            ("linear cost", self.linear.len()),
            ("lower bounds", self.lower.len()),
            ("upper bounds", self.upper.len()),
        ] {
            if len != n {
                return Err(Error::Dimension {
                    context: name_context(name),
                    expected: n,
                    actual: len,
                });
            }
        }
        let bad_index = |j: usize| j >= n;
        if self.hessian.iter().any(|&(i, j, _)| bad_index(i) || bad_index(j)) {
            return Err(Error::invariant("qp indices", "hessian index out of range"));
        }
        for row in self.eq.iter().chain(self.le.iter()) {
            if row.coeffs.iter().any(|&(j, a)| bad_index(j) || !a.is_finite()) || !row.rhs.is_finite() {
                return Err(Error::invariant("qp rows", "row index out of range or non-finite data"));
            }
        }
        if self.linear.iter().any(|v| !v.is_finite())
            || self.hessian.iter().any(|e| !e.2.is_finite())
            || self.lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
            || self.upper.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(Error::invariant("qp data", "non-finite cost or invalid bound"));
        }
        self.check_psd()
    }

    fn check_psd(&self) -> Result<()> {
        // Components of the Hessian sparsity graph are checked independently.
        let mut uf = UnionFind::new(self.n);
        let mut touched = vec![false; self.n];
        for &(i, j, _) in &self.hessian {
            uf.union(i, j);
            touched[i] = true;
            touched[j] = true;
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for j in (0..self.n).filter(|&j| touched[j]) {
            groups.entry(uf.find(j)).or_default().push(j);
        }
        let mut local = vec![usize::MAX; self.n];
        for members in groups.values() {
            for (k, &j) in members.iter().enumerate() {
                local[j] = k;
            }
            let mut m = DMatrix::<f64>::zeros(members.len(), members.len());
            for &(i, j, h) in &self.hessian {
                if uf.find(i) == uf.find(members[0]) {
                    let (a, b) = (local[i], local[j]);
                    m[(a, b)] += h;
                    if a != b {
                        m[(b, a)] += h;
                    }
                }
            }
            let scale = m.amax().max(1.0);
            let lmin = symmetric_eigenvalues(&m)?[0];
            if lmin < -1e-9 * scale {
                return Err(Error::invariant(
                    "hessian positive semidefinite",
                    format!("minimum eigenvalue {lmin:.3e}"),
                ));
            }
        }
        Ok(())
    }
}

fn name_context(name: &str) -> &'static str {
    match name {
        "linear cost" => "qp linear cost length",
        "lower bounds" => "qp lower bound length",
        _ => "qp upper bound length",
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// A run that stops short of `tol` still counts as optimal when its KKT
    /// residuals on the original problem are below this value, or when its
    /// relative residuals and its duality gap relative to the objective are.
    pub accept_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 150,
            accept_tol: 1e-5,
        }
    }
}

/// Absolute KKT residuals measured on the original (unpresolved) problem.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub dual_sign: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementarity)
            .max(self.dual_sign)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub le_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

/// Multipliers proving infeasibility: `Aᵀy + Gᵀz − z_l + z_u = 0` while
/// `bᵀy + hᵀz − lbᵀz_l + ubᵀz_u < 0`, with `z, z_l, z_u ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct FarkasCertificate {
    pub eq: Vec<f64>,
    pub le: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FarkasCertificate {
    fn zeros(qp: &ConvexQp) -> Self {
        Self {
            eq: vec![0.0; qp.eq.len()],
            le: vec![0.0; qp.le.len()],
            lower: vec![0.0; qp.n],
            upper: vec![0.0; qp.n],
        }
    }

    /// Returns `(‖Aᵀy + Gᵀz − z_l + z_u‖∞, bᵀy + hᵀz − lbᵀz_l + ubᵀz_u)`,
    /// both normalized by the multiplier magnitude.
    pub fn check(&self, qp: &ConvexQp) -> (f64, f64) {
        let mut grad = vec![0.0; qp.n];
        let mut value = 0.0;
        for (row, &y) in qp.eq.iter().zip(&self.eq) {
            for &(j, a) in &row.coeffs {
                grad[j] += a * y;
            }
            value += row.rhs * y;
        }
        for (row, &z) in qp.le.iter().zip(&self.le) {
            for &(j, a) in &row.coeffs {
                grad[j] += a * z;
            }
            value += row.rhs * z;
        }
        for j in 0..qp.n {
            if self.lower[j] != 0.0 {
                grad[j] -= self.lower[j];
                value -= qp.lower[j] * self.lower[j];
            }
            if self.upper[j] != 0.0 {
                grad[j] += self.upper[j];
                value += qp.upper[j] * self.upper[j];
            }
        }
        let scale = self
            .eq
            .iter()
            .chain(&self.le)
            .chain(&self.lower)
            .chain(&self.upper)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let stat = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (stat / scale, value / scale)
    }
}

#[derive(Debug, Clone)]
pub enum QpOutcome {
    Optimal(QpSolution),
    Infeasible(FarkasCertificate),
    Unbounded(Vec<f64>),
    /// Iteration cap reached without convergence; carries the best iterate.
    NumericalFailure(QpSolution),
}

impl QpOutcome {
    pub fn optimal(self) -> Result<QpSolution> {
        match self {
            QpOutcome::Optimal(s) => Ok(s),
            QpOutcome::Infeasible(_) => Err(Error::Infeasible("quadratic program".into())),
            QpOutcome::Unbounded(_) => Err(Error::NumericalFailure("quadratic program is unbounded".into())),
            QpOutcome::NumericalFailure(s) => Err(Error::NumericalFailure(format!(
                "interior point stalled after {} iterations (kkt {:.2e})",
                s.iterations,
                s.kkt.max()
            ))),
        }
    }

    pub fn is_optimal(&self) -> bool {
        matches!(self, QpOutcome::Optimal(_))
    }
}

/// Relative primal residual under which phase one is skipped.
const NEAR_FEASIBLE: f64 = 1e-4;

pub fn solve_qp(qp: &ConvexQp, settings: &QpSettings) -> Result<QpOutcome> {
    qp.validate()?;
    let reduced = match presolve::presolve(qp) {
        presolve::PresolveResult::Reduced(r) => r,
        presolve::PresolveResult::Infeasible(cert) => return Ok(QpOutcome::Infeasible(cert)),
    };
    let problem = reduced.ipm_problem();
    let run = ipm::solve(&problem, settings);
    match run.status {
        ipm::Status::Converged => {
            let sol = reduced.postsolve(qp, &run.point, run.iterations);
            Ok(QpOutcome::Optimal(sol))
        }
        _ => {
            let sol = reduced.postsolve(qp, &run.point, run.iterations);
            let close = run.accuracy <= settings.accept_tol && run.gap <= settings.accept_tol * (1.0 + sol.value.abs());
            if sol.kkt.max() <= settings.accept_tol || close {
                log::debug!(
                    "accepting stalled QP run with kkt {:.2e}, residual {:.2e}, gap {:.2e}",
                    sol.kkt.max(),
                    run.accuracy,
                    run.gap
                );
                return Ok(QpOutcome::Optimal(sol));
            }
            // a nearly feasible iterate makes an infeasibility certificate unlikely
            if run.primal > NEAR_FEASIBLE {
                if let Some(cert) = ipm::phase_one(&problem, settings) {
                    return Ok(QpOutcome::Infeasible(reduced.expand_certificate(qp, &cert)));
                }
            }
            if let Some(ray) = ipm::unbounded_ray(&problem, &run.point) {
                return Ok(QpOutcome::Unbounded(reduced.expand_ray(qp, &ray)));
            }
            Ok(QpOutcome::NumericalFailure(sol))
        }
    }
}

/// Widening steps tried by [`solve_qp_relaxing`].
const WIDENING: [f64; 3] = [1e-7, 1e-6, 1e-5];

impl ConvexQp {
    /// Superset of the feasible set: every finite bound and inequality
    /// right-hand side moves outward by `eps·(1 + |value|)`, and every
    /// equality row gets a slack variable limited to the same width. The
    /// slacks are appended after the original variables.
    pub fn widened(&self, eps: f64) -> ConvexQp {
        let w = |v: f64| eps * (1.0 + v.abs());
        let mut qp = self.clone();
        for j in 0..self.n {
            if qp.lower[j].is_finite() {
                qp.lower[j] -= w(qp.lower[j]);
            }
            if qp.upper[j].is_finite() {
                qp.upper[j] += w(qp.upper[j]);
            }
        }
        for row in &mut qp.le {
            row.rhs += w(row.rhs);
        }
        for r in 0..qp.eq.len() {
            let width = w(qp.eq[r].rhs);
            let s = qp.add_var(-width, width, 0.0);
            qp.eq[r].coeffs.push((s, 1.0));
        }
        qp
    }
}

/// Like [`solve_qp`], but a run that fails numerically is retried on
/// slightly [widened](ConvexQp::widened) problems. A solution of a widened
/// problem has a value no larger than the true optimum, so callers that
/// only need lower bounds stay valid; infeasibility of a widened problem
/// implies infeasibility of the original.
pub fn solve_qp_relaxing(qp: &ConvexQp, settings: &QpSettings) -> Result<QpOutcome> {
    let first = solve_qp(qp, settings)?;
    if !matches!(first, QpOutcome::NumericalFailure(_)) {
        return Ok(first);
    }
    for eps in WIDENING {
        match solve_qp(&qp.widened(eps), settings)? {
            QpOutcome::Optimal(mut sol) => {
                log::debug!("qp solved after widening by {eps:e}");
                sol.x.truncate(qp.n);
                sol.lower_duals.truncate(qp.n);
                sol.upper_duals.truncate(qp.n);
                sol.kkt = kkt_residuals(qp, &sol);
                return Ok(QpOutcome::Optimal(sol));
            }
            QpOutcome::Infeasible(mut cert) => {
                cert.lower.truncate(qp.n);
                cert.upper.truncate(qp.n);
                return Ok(QpOutcome::Infeasible(cert));
            }
            _ => {}
        }
    }
    Ok(first)
}

/// KKT residuals of a primal-dual point for the original problem.
pub fn kkt_residuals(qp: &ConvexQp, sol: &QpSolution) -> KktResiduals {
    let x = &sol.x;
    let mut grad = qp.hessian_times(x);
    for j in 0..qp.n {
        grad[j] += qp.linear[j] - sol.lower_duals[j] + sol.upper_duals[j];
    }
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut sign: f64 = 0.0;
    for (row, &y) in qp.eq.iter().zip(&sol.eq_duals) {
        for &(j, a) in &row.coeffs {
            grad[j] += a * y;
        }
        primal = primal.max((row.eval(x) - row.rhs).abs());
    }
    for (row, &z) in qp.le.iter().zip(&sol.le_duals) {
        for &(j, a) in &row.coeffs {
            grad[j] += a * z;
        }
        let slack = row.rhs - row.eval(x);
        primal = primal.max(-slack);
        comp = comp.max((z * slack).abs());
        sign = sign.max(-z);
    }
    for j in 0..qp.n {
        if qp.lower[j].is_finite() {
            let s = x[j] - qp.lower[j];
            primal = primal.max(-s);
            comp = comp.max((sol.lower_duals[j] * s).abs());
        }
        if qp.upper[j].is_finite() {
            let s = qp.upper[j] - x[j];
            primal = primal.max(-s);
            comp = comp.max((sol.upper_duals[j] * s).abs());
        }
        sign = sign.max(-sol.lower_duals[j]).max(-sol.upper_duals[j]);
    }
    KktResiduals {
        stationarity: grad.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        primal: primal.max(0.0),
        complementarity: comp,
        dual_sign: sign.max(0.0),
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

#[cfg(test)]
mod tests;
