//! Small semidefinite programs with one matrix block and nonnegative
//! scalar variables.
//!
//! ```text
//! primal:  min ⟨C, X⟩ + cᵀx   s.t. ⟨A_k, X⟩ + a_kᵀx = b_k,  X ⪰ 0, x ≥ 0
//! dual:    max bᵀy            s.t. C − Σ y_k A_k ⪰ 0,  c − Σ y_k a_k ≥ 0
//! ```
//!
//! Infeasible-start primal-dual path following with the HKM search
//! direction and Mehrotra's predictor-corrector.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::eigen::symmetric_eigenvalues;

/// Symmetric sparse matrix given by its upper triangle `(i, j, v)` with `i ≤ j`.
/// Off-diagonal entries stand for both `(i, j)` and `(j, i)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymEntries(pub Vec<(usize, usize, f64)>);

impl SymEntries {
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.0.push((i.min(j), i.max(j), v));
        }
    }

    /// `⟨A, X⟩` for symmetric `X`.
    pub fn inner(&self, x: &DMatrix<f64>) -> f64 {
        self.0
            .iter()
            .map(|&(i, j, v)| if i == j { v * x[(i, i)] } else { 2.0 * v * x[(i, j)] })
            .sum()
    }

    fn full(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.0.len());
        for &(i, j, v) in &self.0 {
            out.push((i, j, v));
            if i != j {
                out.push((j, i, v));
            }
        }
        out
    }

    pub fn add_to(&self, m: &mut DMatrix<f64>, scale: f64) {
        for &(i, j, v) in &self.0 {
            m[(i, j)] += scale * v;
            if i != j {
                m[(j, i)] += scale * v;
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SdpConstraint {
    pub mat: SymEntries,
    pub lin: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    pub dim: usize,
    pub n_lin: usize,
    pub c_mat: SymEntries,
    pub c_lin: Vec<f64>,
    pub constraints: Vec<SdpConstraint>,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub max_dim: usize,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200,
            max_dim: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// A dual ray proves the primal constraints cannot be met.
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub x_mat: DMatrix<f64>,
    pub x_lin: Vec<f64>,
    pub y: Vec<f64>,
    pub iterations: usize,
    /// Relative primal and dual infeasibility at the returned point.
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl SdpSolution {
    /// Lower bound on the optimum that absorbs the remaining duality gap
    /// and a safety margin of `10·tol·(1 + |obj|)`.
    pub fn safe_lower_bound(&self, tol: f64) -> f64 {
        let lo = self.primal_obj.min(self.dual_obj);
        let gap = (self.primal_obj - self.dual_obj).abs();
        lo - gap - 10.0 * tol * (1.0 + lo.abs())
    }
}

struct Prepared {
    full: Vec<Vec<(usize, usize, f64)>>,
    /// Distinct column indices touched by each constraint matrix.
    cols: Vec<Vec<usize>>,
}

impl SdpProblem {
    fn validate(&self, settings: &SdpSettings) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Dimension {
                context: "sdp block size (positive)",
                expected: 1,
                actual: 0,
            });
        }
        if self.dim > settings.max_dim {
            return Err(Error::Dimension {
                context: "sdp block size limit",
                expected: settings.max_dim,
                actual: self.dim,
            });
        }
        if self.c_lin.len() != self.n_lin {
            return Err(Error::Dimension {
                context: "sdp linear cost length",
                expected: self.n_lin,
                actual: self.c_lin.len(),
            });
        }
        let bad_mat = |m: &SymEntries| m.0.iter().any(|&(i, j, v)| i >= self.dim || j >= self.dim || !v.is_finite());
        if bad_mat(&self.c_mat) || self.c_lin.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("sdp data", "objective out of range or non-finite"));
        }
        for c in &self.constraints {
            if bad_mat(&c.mat) || c.lin.iter().any(|&(j, v)| j >= self.n_lin || !v.is_finite()) || !c.rhs.is_finite() {
                return Err(Error::invariant("sdp data", "constraint out of range or non-finite"));
            }
        }
        Ok(())
    }

    fn prepare(&self) -> Prepared {
        let full: Vec<_> = self.constraints.iter().map(|c| c.mat.full()).collect();
        let cols = full
            .iter()
            .map(|f| {
                let mut c: Vec<usize> = f.iter().map(|e| e.1).collect();
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        Prepared { full, cols }
    }

    /// `Σ y_k A_k` and `Σ y_k a_k`.
    fn adjoint(&self, y: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let mut v = vec![0.0; self.n_lin];
        for (c, &yk) in self.constraints.iter().zip(y) {
            if yk != 0.0 {
                c.mat.add_to(&mut m, yk);
                for &(j, a) in &c.lin {
                    v[j] += yk * a;
                }
            }
        }
        (m, v)
    }

    fn apply(&self, x: &DMatrix<f64>, xl: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| c.mat.inner(x) + c.lin.iter().map(|&(j, a)| a * xl[j]).sum::<f64>())
            .collect()
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn fro(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest step in `[0, 1/frac]` keeping `X + αΔX ⪰ 0`; `None` if `X` is not PD.
fn max_psd_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let l = x.clone().cholesky()?.l();
    let t = l.solve_lower_triangular(dx)?;
    let w = l.solve_lower_triangular(&t.transpose())?;
    let lmin = symmetric_eigenvalues(&sym(&w)).ok()?[0];
    Some(if lmin < 0.0 { -1.0 / lmin } else { f64::INFINITY })
}

fn max_pos_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

fn inverse_pd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Some(m.clone().cholesky()?.inverse())
}

struct Dirs {
    dx: DMatrix<f64>,
    dxl: Vec<f64>,
    dy: Vec<f64>,
    ds: DMatrix<f64>,
    dsl: Vec<f64>,
}

pub fn solve_sdp(p: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution> {
    p.validate(settings)?;
    let prep = p.prepare();
    let n = p.dim;
    let nl = p.n_lin;
    let m = p.constraints.len();
    let b: Vec<f64> = p.constraints.iter().map(|c| c.rhs).collect();
    let mut cmat = DMatrix::zeros(n, n);
    p.c_mat.add_to(&mut cmat, 1.0);
    let bnorm = norm2(&b);
    let cnorm = (fro(&cmat).powi(2) + norm2(&p.c_lin).powi(2)).sqrt();

    // Initial point scaled to the data.
    let anorms: Vec<f64> = p
        .constraints
        .iter()
        .map(|c| {
            let mut a = DMatrix::zeros(n, n);
            c.mat.add_to(&mut a, 1.0);
            (fro(&a).powi(2) + c.lin.iter().map(|e| e.1 * e.1).sum::<f64>()).sqrt()
        })
        .collect();
    let mut xi = 10f64.max((n as f64).sqrt());
    for k in 0..m {
        xi = xi.max((1.0 + b[k].abs()) / (1.0 + anorms[k]));
    }
    let eta = 10f64.max((n as f64).sqrt()).max(cnorm).max(anorms.iter().cloned().fold(0.0, f64::max));
    let mut x = DMatrix::identity(n, n) * xi;
    let mut xl = vec![xi; nl];
    let mut y = vec![0.0; m];
    let mut s = DMatrix::identity(n, n) * eta;
    let mut sl = vec![eta; nl];
    let pairs = (n + nl) as f64;

    let tol = settings.tol;
    let mut status = SdpStatus::IterationLimit;
    let mut iterations = 0;
    let mut best: Option<(f64, DMatrix<f64>, Vec<f64>, Vec<f64>)> = None;
    let (mut rp_rel, mut rd_rel) = (f64::INFINITY, f64::INFINITY);

    for iter in 0..=settings.max_iter {
        iterations = iter;
        let ax = p.apply(&x, &xl);
        let rp: Vec<f64> = b.iter().zip(&ax).map(|(bk, a)| bk - a).collect();
        let (aty, atyl) = p.adjoint(&y);
        let rd = &cmat - &aty - &s;
        let rdl: Vec<f64> = (0..nl).map(|j| p.c_lin[j] - atyl[j] - sl[j]).collect();
        let pobj = p.c_mat.inner(&x) + p.c_lin.iter().zip(&xl).map(|(c, v)| c * v).sum::<f64>();
        let dobj: f64 = b.iter().zip(&y).map(|(a, c)| a * c).sum();
        rp_rel = norm2(&rp) / (1.0 + bnorm);
        rd_rel = (fro(&rd).powi(2) + norm2(&rdl).powi(2)).sqrt() / (1.0 + cnorm);
        let gap_rel = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let merit = rp_rel.max(rd_rel).max(gap_rel);
        if best.as_ref().map_or(true, |b| merit < b.0) {
            best = Some((merit, x.clone(), xl.clone(), y.clone()));
        }
        if rp_rel <= tol && rd_rel <= tol && gap_rel <= tol {
            status = SdpStatus::Optimal;
            best = Some((merit, x.clone(), xl.clone(), y.clone()));
            break;
        }
        if dual_ray(p, &y, dobj, tol) {
            status = SdpStatus::Infeasible;
            best = Some((merit, x.clone(), xl.clone(), y.clone()));
            break;
        }
        if iter == settings.max_iter {
            break;
        }
        let mu = (x.dot(&s) + xl.iter().zip(&sl).map(|(a, c)| a * c).sum::<f64>()) / pairs;
        let Some(sinv) = inverse_pd(&s) else { break };

        let schur = schur_matrix(p, &prep, &x, &sinv, &xl, &sl);
        let Some(chol) = schur_factor(schur) else { break };

        let solve = |rc: &DMatrix<f64>, rcl: &[f64]| -> Dirs {
            // ΔX = (Rc − X ΔS) S⁻¹, ΔS = Rd − Σ Δy A
            // Σ_l M_kl Δy_l = rp_k − ⟨A_k, (Rc − X Rd) S⁻¹⟩ − a_kᵀ((rcl − xl∘rdl)/sl)
            let base = (rc - &x * &rd) * &sinv;
            let basel: Vec<f64> = (0..nl).map(|j| (rcl[j] - xl[j] * rdl[j]) / sl[j]).collect();
            let mut rhs = vec![0.0; m];
            for (k, c) in p.constraints.iter().enumerate() {
                let mut v = rp[k];
                for &(i, j, a) in &prep.full[k] {
                    v -= a * base[(i, j)];
                }
                for &(j, a) in &c.lin {
                    v -= a * basel[j];
                }
                rhs[k] = v;
            }
            let dy = chol.solve(&nalgebra::DVector::from_vec(rhs));
            let dy: Vec<f64> = dy.iter().cloned().collect();
            let (ady, adyl) = p.adjoint(&dy);
            let ds = &rd - &ady;
            let dsl: Vec<f64> = (0..nl).map(|j| rdl[j] - adyl[j]).collect();
            let dx = sym(&((rc - &x * &ds) * &sinv));
            let dxl: Vec<f64> = (0..nl).map(|j| (rcl[j] - xl[j] * dsl[j]) / sl[j]).collect();
            Dirs { dx, dxl, dy, ds, dsl }
        };

        // predictor
        let rc_aff = -(&x * &s);
        let rcl_aff: Vec<f64> = (0..nl).map(|j| -xl[j] * sl[j]).collect();
        let aff = solve(&rc_aff, &rcl_aff);
        let Some(ap) = max_psd_step(&x, &aff.dx) else { break };
        let Some(ad) = max_psd_step(&s, &aff.ds) else { break };
        let ap = ap.min(max_pos_step(&xl, &aff.dxl)).min(1.0);
        let ad = ad.min(max_pos_step(&sl, &aff.dsl)).min(1.0);
        let xa = &x + &aff.dx * ap;
        let sa = &s + &aff.ds * ad;
        let mut mu_aff = xa.dot(&sa);
        for j in 0..nl {
            mu_aff += (xl[j] + ap * aff.dxl[j]) * (sl[j] + ad * aff.dsl[j]);
        }
        mu_aff /= pairs;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let rc = DMatrix::identity(n, n) * (sigma * mu) - &x * &s - &aff.dx * &aff.ds;
        let rcl: Vec<f64> = (0..nl)
            .map(|j| sigma * mu - xl[j] * sl[j] - aff.dxl[j] * aff.dsl[j])
            .collect();
        let d = solve(&rc, &rcl);
        let Some(ap) = max_psd_step(&x, &d.dx) else { break };
        let Some(ad) = max_psd_step(&s, &d.ds) else { break };
        let ap = (0.95 * ap.min(max_pos_step(&xl, &d.dxl))).min(1.0);
        let ad = (0.95 * ad.min(max_pos_step(&sl, &d.dsl))).min(1.0);
        x += &d.dx * ap;
        x = sym(&x);
        for j in 0..nl {
            xl[j] += ap * d.dxl[j];
            sl[j] += ad * d.dsl[j];
        }
        for k in 0..m {
            y[k] += ad * d.dy[k];
        }
        s += &d.ds * ad;
        s = sym(&s);
    }

    let (_, x, xl, y) = best.expect("at least one iterate is recorded");
    let pobj = p.c_mat.inner(&x) + p.c_lin.iter().zip(&xl).map(|(c, v)| c * v).sum::<f64>();
    let dobj = b.iter().zip(&y).map(|(a, c)| a * c).sum();
    Ok(SdpSolution {
        status,
        primal_obj: pobj,
        dual_obj: dobj,
        x_mat: x,
        x_lin: xl,
        y,
        iterations,
        primal_residual: rp_rel,
        dual_residual: rd_rel,
    })
}

/// `M_kl = tr(A_k X A_l S⁻¹) + a_kᵀ diag(x/s) a_l`.
fn schur_matrix(
    p: &SdpProblem,
    prep: &Prepared,
    x: &DMatrix<f64>,
    sinv: &DMatrix<f64>,
    xl: &[f64],
    sl: &[f64],
) -> DMatrix<f64> {
    let n = p.dim;
    let m = p.constraints.len();
    let mut mm = DMatrix::zeros(m, m);
    let mut f = DMatrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for k in 0..m {
        // F = S⁻¹ A_k X built column-block by column-block of A_k.
        f.fill(0.0);
        for &q in &prep.cols[k] {
            col.iter_mut().for_each(|v| *v = 0.0);
            for &(pp, qq, a) in &prep.full[k] {
                if qq == q {
                    for r in 0..n {
                        col[r] += sinv[(r, pp)] * a;
                    }
                }
            }
            for c in 0..n {
                let xq = x[(q, c)];
                if xq != 0.0 {
                    for r in 0..n {
                        f[(r, c)] += col[r] * xq;
                    }
                }
            }
        }
        for l in k..m {
            // tr(A_l S⁻¹ A_k X) = Σ_{(i,j)∈A_l} A_l,ij F_ji
            let mut v = 0.0;
            for &(i, j, a) in &prep.full[l] {
                v += a * f[(j, i)];
            }
            mm[(k, l)] = v;
        }
    }
    for k in 0..m {
        for l in 0..k {
            mm[(k, l)] = mm[(l, k)];
        }
    }
    if !xl.is_empty() {
        let w: Vec<f64> = xl.iter().zip(sl).map(|(a, b)| a / b).collect();
        for k in 0..m {
            for l in k..m {
                let mut v = 0.0;
                for &(j, a) in &p.constraints[k].lin {
                    for &(j2, a2) in &p.constraints[l].lin {
                        if j == j2 {
                            v += a * a2 * w[j];
                        }
                    }
                }
                mm[(k, l)] += v;
                if k != l {
                    mm[(l, k)] += v;
                }
            }
        }
    }
    mm
}

fn schur_factor(mut mm: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let m = mm.nrows();
    let scale = (0..m).map(|i| mm[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..6 {
        if let Some(c) = mm.clone().cholesky() {
            return Some(c);
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        for i in 0..m {
            mm[(i, i)] += reg;
        }
    }
    None
}

/// Detects a normalized dual ray: `bᵀȳ > 0` with `−Σ ȳ_k A_k ⪰ −ε` and
/// `−Σ ȳ_k a_k ≥ −ε`, which certifies primal infeasibility.
fn dual_ray(p: &SdpProblem, y: &[f64], dobj: f64, tol: f64) -> bool {
    let ny = norm2(y);
    if ny < 1e6 || dobj <= 0.0 {
        return false;
    }
    let yb: Vec<f64> = y.iter().map(|v| v / ny).collect();
    let bty: f64 = p.constraints.iter().zip(&yb).map(|(c, v)| c.rhs * v).sum();
    if bty <= 1e-8 {
        return false;
    }
    let (aty, atyl) = p.adjoint(&yb);
    let neg = -aty;
    let Ok(eigs) = symmetric_eigenvalues(&sym(&neg)) else {
        return false;
    };
    let eps = tol.max(1e-8) * 10.0;
    eigs[0] >= -eps * bty.max(1.0) && atyl.iter().all(|v| -v >= -eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> SdpSettings {
        SdpSettings::default()
    }

    #[test]
    fn trace_minimization_with_fixed_entry() {
        // min tr(X) s.t. X_01 = 1, X ⪰ 0 (2x2) → optimum 2 at X = [[1,1],[1,1]].
        let mut p = SdpProblem {
            dim: 2,
            ..Default::default()
        };
        p.c_mat.push(0, 0, 1.0);
        p.c_mat.push(1, 1, 1.0);
        let mut a = SymEntries::default();
        a.push(0, 1, 0.5);
        p.constraints.push(SdpConstraint {
            mat: a,
            lin: vec![],
            rhs: 1.0,
        });
        let sol = solve_sdp(&p, &settings()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_obj - 2.0).abs() < 1e-6);
        assert!(sol.safe_lower_bound(1e-7) <= 2.0);
    }

    #[test]
    fn min_eigenvalue_as_sdp() {
        // max t s.t. B − tI ⪰ 0  ⇔  min ⟨B, X⟩ s.t. tr X = 1.
        let bm = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 1.5]);
        let mut p = SdpProblem {
            dim: 3,
            ..Default::default()
        };
        for i in 0..3 {
            for j in i..3 {
                p.c_mat.push(i, j, bm[(i, j)]);
            }
        }
        let mut tr = SymEntries::default();
        for i in 0..3 {
            tr.push(i, i, 1.0);
        }
        p.constraints.push(SdpConstraint {
            mat: tr,
            lin: vec![],
            rhs: 1.0,
        });
        let sol = solve_sdp(&p, &settings()).unwrap();
        let lmin = symmetric_eigenvalues(&bm).unwrap()[0];
        assert!((sol.primal_obj - lmin).abs() < 1e-6, "{} vs {lmin}", sol.primal_obj);
        assert!((sol.dual_obj - lmin).abs() < 1e-6);
    }

    #[test]
    fn linear_variables_are_supported() {
        // min X_00 + 2 x s.t. X_00 + x = 3, X_00 ≤ 1 (via slack) → X_00 = 1, x = 2 → obj 5.
        let mut p = SdpProblem {
            dim: 1,
            n_lin: 2,
            c_lin: vec![2.0, 0.0],
            ..Default::default()
        };
        p.c_mat.push(0, 0, 1.0);
        let mut a = SymEntries::default();
        a.push(0, 0, 1.0);
        p.constraints.push(SdpConstraint {
            mat: a.clone(),
            lin: vec![(0, 1.0)],
            rhs: 3.0,
        });
        p.constraints.push(SdpConstraint {
            mat: a,
            lin: vec![(1, 1.0)],
            rhs: 1.0,
        });
        let sol = solve_sdp(&p, &settings()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_obj - 5.0).abs() < 1e-6);
    }

    #[test]
    fn detects_infeasibility() {
        // X_00 = -1 with X ⪰ 0.
        let mut p = SdpProblem {
            dim: 1,
            ..Default::default()
        };
        let mut a = SymEntries::default();
        a.push(0, 0, 1.0);
        p.constraints.push(SdpConstraint {
            mat: a,
            lin: vec![],
            rhs: -1.0,
        });
        let sol = solve_sdp(&p, &settings()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn rejects_oversized_block() {
        let p = SdpProblem {
            dim: 65,
            ..Default::default()
        };
        assert!(matches!(solve_sdp(&p, &settings()), Err(Error::Dimension { .. })));
    }
}
