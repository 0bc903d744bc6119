//! Primal upper bounds: enumeration of the activations and, for each fixed
//! `d`, a multistart local solve of the nonconvex OPF.
//!
//! The local method is an ℓ1 penalty SQP with a box trust region on the
//! voltages. Each step solves one convex QP: the power block is exact, the
//! balance and magnitude rows are linearized at the current voltages with
//! elastic slacks priced at the penalty weight, and the voltage curvature
//! is the Lagrangian Hessian projected onto the PSD cone.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::formulation::{add_power_block, PowerVars};
use crate::mip::{solve_mixed_binary, MixedBinaryOutcome, MixedBinaryProblem, Strategy, ENUMERATION_LIMIT};
use crate::model::{infeasibility, is_feasible, objective, Instance, OperatingPoint};
use crate::netflow::{link_forms, magnitude_form, QuadForm};
use crate::numerics::eigen::symmetric_eigen;
use crate::numerics::qp::{solve_qp, solve_qp_relaxing, ConvexQp, QpOutcome, QpSettings, QpSolution};

#[derive(Debug, Clone)]
pub struct PrimalParams {
    /// Flat start plus `starts − 1` perturbed ones per activation pattern.
    pub starts: usize,
    pub seed: u64,
    /// Feasibility tolerance of the final verification.
    pub tol: f64,
    /// Half-width of the uniform perturbation of the start voltages.
    pub perturbation: f64,
    pub max_iter: usize,
    pub qp: QpSettings,
}

impl Default for PrimalParams {
    fn default() -> Self {
        Self {
            starts: 5,
            seed: 0,
            tol: 1e-6,
            perturbation: 0.05,
            max_iter: 200,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrimalResult {
    pub objective: f64,
    pub point: OperatingPoint,
    /// Activation patterns for which at least one local solve ran.
    pub patterns_solved: usize,
    pub patterns_pruned: usize,
    pub local_solves: usize,
}

/// Best verified feasible point over all activation patterns and starts.
pub fn primal_search(inst: &Instance, params: &PrimalParams) -> Result<PrimalResult> {
    let model = LocalModel::new(inst)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut candidates = Vec::new();
    for d in patterns(inst, &params.qp)? {
        if let Some(lb) = copper_plate_bound(inst, &d, &params.qp)? {
            candidates.push((lb, d));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n = inst.n_buses();
    let starts: Vec<Vec<Vec<f64>>> = (0..params.starts.max(1))
        .map(|s| {
            (0..inst.horizon)
                .map(|_| {
                    let mut v = vec![0.0; 2 * n];
                    for (i, x) in v.iter_mut().enumerate() {
                        let base = if i < n { 1.0 } else { 0.0 };
                        *x = if s == 0 { base } else { base + rng.gen_range(-1.0..=1.0) * params.perturbation };
                    }
                    v
                })
                .collect()
        })
        .collect();

    let mut best: Option<(f64, OperatingPoint)> = None;
    let (mut solved, mut pruned, mut solves) = (0, 0, 0);
    for (lb, d) in &candidates {
        if let Some((ub, _)) = &best {
            if *lb >= *ub - 1e-9 * ub.abs().max(1.0) {
                pruned += 1;
                continue;
            }
        }
        solved += 1;
        for v0 in &starts {
            solves += 1;
            let Some(point) = model.solve(inst, d, v0, params)? else {
                continue;
            };
            if !is_feasible(&point, inst, params.tol)? {
                log::debug!("{}: local solution failed verification", inst.name);
                continue;
            }
            let value = objective(&point, inst)?;
            if best.as_ref().map_or(true, |(ub, _)| value < *ub) {
                best = Some((value, point));
            }
        }
    }
    let (objective, point) = best.ok_or(Error::NoPrimalFound)?;
    log::info!(
        "{}: primal {objective:.8e} ({solved} patterns solved, {pruned} pruned, infeasibility {:.2e})",
        inst.name,
        infeasibility(&point, inst)?
    );
    Ok(PrimalResult {
        objective,
        point,
        patterns_solved: solved,
        patterns_pruned: pruned,
        local_solves: solves,
    })
}

/// One local solve with activations `d` from start voltages `v0`
/// (`[t][e_0..e_{n−1}, f_0..f_{n−1}]`). Returns the point only when it
/// passes the feasibility check at `params.tol`.
pub fn local_solve(inst: &Instance, d: &[f64], v0: &[Vec<f64>], params: &PrimalParams) -> Result<Option<OperatingPoint>> {
    let n = inst.n_buses();
    if d.len() != inst.flex.len() || v0.len() != inst.horizon || v0.iter().any(|v| v.len() != 2 * n) {
        return Err(Error::Dimension {
            context: "local solve start",
            expected: inst.horizon * 2 * n,
            actual: v0.iter().map(Vec::len).sum(),
        });
    }
    let model = LocalModel::new(inst)?;
    let point = model.solve(inst, d, v0, params)?;
    match point {
        Some(p) if is_feasible(&p, inst, params.tol)? => Ok(Some(p)),
        _ => Ok(None),
    }
}

/// Activation patterns to try: all of them up to the enumeration limit,
/// otherwise all-off plus the pattern of the copper-plate optimum.
fn patterns(inst: &Instance, settings: &QpSettings) -> Result<Vec<Vec<f64>>> {
    let nf = inst.flex.len();
    if nf <= ENUMERATION_LIMIT {
        return Ok((0..1usize << nf)
            .map(|mask| (0..nf).map(|k| ((mask >> k) & 1) as f64).collect())
            .collect());
    }
    let (qp, power) = copper_plate(inst);
    let mut out = vec![vec![0.0; nf]];
    let problem = MixedBinaryProblem::new(qp, power.d)?;
    if let MixedBinaryOutcome::Optimal(sol) = solve_mixed_binary(&problem, Strategy::Auto, settings)? {
        if sol.d != out[0] {
            out.push(sol.d);
        }
    }
    Ok(out)
}

/// Power block with the network replaced by `Σ_k P_k ≥ 0` per period
/// (total injection equals the losses, which are nonnegative).
fn copper_plate(inst: &Instance) -> (ConvexQp, PowerVars) {
    let mut qp = ConvexQp::new();
    let power = add_power_block(&mut qp, inst);
    for t in 0..inst.horizon {
        qp.add_ge(power.p[t].iter().map(|&v| (v, 1.0)).collect(), 0.0);
    }
    (qp, power)
}

/// Lower bound on the objective of pattern `d`; `None` when even the
/// copper-plate model is infeasible.
fn copper_plate_bound(inst: &Instance, d: &[f64], settings: &QpSettings) -> Result<Option<f64>> {
    let (mut qp, power) = copper_plate(inst);
    fix(&mut qp, &power, d);
    match solve_qp(&qp, settings)? {
        QpOutcome::Optimal(sol) => Ok(Some(sol.value - 1e-6 * sol.value.abs().max(1.0))),
        QpOutcome::Infeasible(_) => Ok(None),
        // Keep the pattern but give it no pruning power.
        _ => Ok(Some(f64::NEG_INFINITY)),
    }
}

fn fix(qp: &mut ConvexQp, power: &PowerVars, d: &[f64]) {
    for (&v, &val) in power.d.iter().zip(d) {
        qp.lower[v] = val;
        qp.upper[v] = val;
    }
}

/// Per-bus network forms of one period, in the voltage coordinates
/// `(e_0..e_{n−1}, f_0..f_{n−1})`.
struct LocalModel {
    n: usize,
    p_at: Vec<QuadForm>,
    q_at: Vec<QuadForm>,
    mag: Vec<QuadForm>,
    /// Devices attached to each bus.
    devices_at: Vec<Vec<usize>>,
    v_min_sq: Vec<f64>,
    v_max_sq: Vec<f64>,
}

const RADIUS_INIT: f64 = 0.1;
const RADIUS_MAX: f64 = 0.5;
const RADIUS_MIN: f64 = 1e-12;
const PENALTY_MAX: f64 = 1e12;
/// Target largest constraint violation of a converged local solve.
const FEAS_TARGET: f64 = 1e-9;

/// Row layout of one period in the step QP.
struct StepRows {
    dv: Vec<usize>,
    p_bal: Vec<usize>,
    q_bal: Vec<usize>,
    v_lo: Vec<usize>,
    v_hi: Vec<usize>,
    slacks: Vec<usize>,
}

struct Trial {
    next: Iterate,
    step: Vec<Vec<f64>>,
    step_norm: f64,
    sol: QpSolution,
    rows: Vec<StepRows>,
}

struct Iterate {
    p: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl LocalModel {
    fn new(inst: &Instance) -> Result<Self> {
        let n = inst.n_buses();
        let forms = link_forms(&inst.network)?;
        let mut p_at = vec![QuadForm::default(); n];
        let mut q_at = vec![QuadForm::default(); n];
        for (l, link) in inst.network.links.iter().enumerate() {
            p_at[link.from] = p_at[link.from].plus(&forms[l].p_ij);
            p_at[link.to] = p_at[link.to].plus(&forms[l].p_ji);
            q_at[link.from] = q_at[link.from].plus(&forms[l].q_ij);
            q_at[link.to] = q_at[link.to].plus(&forms[l].q_ji);
        }
        let mut devices_at = vec![Vec::new(); n];
        for (k, dev) in inst.devices.iter().enumerate() {
            devices_at[dev.bus].push(k);
        }
        Ok(Self {
            n,
            p_at,
            q_at,
            mag: (0..n).map(|i| magnitude_form(n, i)).collect(),
            devices_at,
            v_min_sq: inst.v_min_sq(),
            v_max_sq: inst.v_max_sq(),
        })
    }

    /// ℓ1 norm of the nonlinear constraint violations and their maximum.
    fn violation(&self, it: &Iterate) -> (f64, f64) {
        let (mut sum, mut worst) = (0.0, 0.0f64);
        for t in 0..it.v.len() {
            let v = &it.v[t];
            for i in 0..self.n {
                let inj_p: f64 = self.devices_at[i].iter().map(|&k| it.p[t][k]).sum();
                let inj_q: f64 = self.devices_at[i].iter().map(|&k| it.q[t][k]).sum();
                let m = self.mag[i].eval(v);
                let r = [
                    (inj_p - self.p_at[i].eval(v)).abs(),
                    (inj_q - self.q_at[i].eval(v)).abs(),
                    (self.v_min_sq[i] - m).max(0.0),
                    (m - self.v_max_sq[i]).max(0.0),
                ];
                for x in r {
                    sum += x;
                    worst = worst.max(x);
                }
            }
        }
        (sum, worst)
    }

    fn cost(inst: &Instance, it: &Iterate, d: &[f64]) -> f64 {
        let mut v: f64 = inst.flex.iter().zip(d).map(|(fl, d)| fl.fee * d).sum();
        for t in 0..inst.horizon {
            for k in 0..inst.n_devices() {
                let c = inst.cost_term(k, t);
                let p = it.p[t][k];
                v += c.a * p * p + c.b * p + c.c;
            }
        }
        v
    }

    /// Largest price the objective puts on one unit of injection; the
    /// initial penalty weight is a multiple of it.
    fn price_scale(inst: &Instance) -> f64 {
        let mut s: f64 = 1.0;
        for t in 0..inst.horizon {
            for (k, dev) in inst.devices.iter().enumerate() {
                let c = inst.cost_term(k, t);
                for p in [dev.p_min[t], dev.p_max[t]] {
                    s = s.max((2.0 * c.a * p + c.b).abs());
                }
            }
        }
        s
    }

    /// Builds the step QP at `v` with multipliers `duals` for the curvature
    /// term. Returns the QP, the power layout and per-period rows.
    #[allow(clippy::too_many_arguments)]
    fn step_qp(
        &self,
        inst: &Instance,
        d: &[f64],
        v: &[Vec<f64>],
        hess: &[DMatrix<f64>],
        radius: f64,
        rho: f64,
        soc: Option<&[Vec<f64>]>,
    ) -> (ConvexQp, PowerVars, Vec<StepRows>) {
        let n = self.n;
        let mut qp = ConvexQp::new();
        let power = add_power_block(&mut qp, inst);
        fix(&mut qp, &power, d);
        let mut rows = Vec::with_capacity(inst.horizon);
        for t in 0..inst.horizon {
            let x = &v[t];
            // Second-order correction: the forms are homogeneous quadratics,
            // so F(x + s) = F(x) + ∇F(x)·s + F(s) exactly.
            let curv = |form: &QuadForm| soc.map_or(0.0, |s| form.eval(&s[t]));
            let dv: Vec<usize> = (0..2 * n).map(|_| qp.add_var(-radius, radius, 0.0)).collect();
            let h = &hess[t];
            for a in 0..2 * n {
                for b in a..2 * n {
                    qp.add_hessian(dv[a], dv[b], h[(a, b)]);
                }
            }
            let mut slacks = Vec::new();
            let mut slack = |qp: &mut ConvexQp| {
                let s = qp.add_var(0.0, f64::INFINITY, rho);
                slacks.push(s);
                s
            };
            let lin = |form: &QuadForm, sign: f64| -> Vec<(usize, f64)> {
                let mut g = vec![0.0; 2 * n];
                form.add_grad(x, sign, &mut g);
                g.iter().enumerate().filter(|(_, &c)| c != 0.0).map(|(j, &c)| (dv[j], c)).collect()
            };
            let (mut p_bal, mut q_bal, mut v_lo, mut v_hi) = (vec![], vec![], vec![], vec![]);
            for i in 0..n {
                for (form, inj, out) in [(&self.p_at[i], &power.p[t], &mut p_bal), (&self.q_at[i], &power.q[t], &mut q_bal)] {
                    // Σ inj − F(x) − ∇F·dv + s⁺ − s⁻ = 0
                    let mut c = lin(form, -1.0);
                    c.extend(self.devices_at[i].iter().map(|&k| (inj[k], 1.0)));
                    c.push((slack(&mut qp), 1.0));
                    c.push((slack(&mut qp), -1.0));
                    out.push(qp.add_eq(c, form.eval(x) + curv(form)));
                }
                let m = self.mag[i].eval(x) + curv(&self.mag[i]);
                let mut c = lin(&self.mag[i], 1.0);
                c.push((slack(&mut qp), 1.0));
                v_lo.push(qp.add_ge(c, self.v_min_sq[i] - m));
                let mut c = lin(&self.mag[i], 1.0);
                c.push((slack(&mut qp), -1.0));
                v_hi.push(qp.add_le(c, self.v_max_sq[i] - m));
            }
            rows.push(StepRows {
                dv,
                p_bal,
                q_bal,
                v_lo,
                v_hi,
                slacks,
            });
        }
        (qp, power, rows)
    }

    /// PSD part of `Σ y·∇²row` over the nonlinear rows of period `t`, with
    /// rows written as `inj − F(v) = 0`, `vmin² − M ≤ 0`, `M − vmax² ≤ 0`.
    fn curvature(&self, y_p: &[f64], y_q: &[f64], z_lo: &[f64], z_hi: &[f64]) -> Result<DMatrix<f64>> {
        let n2 = 2 * self.n;
        let mut h = DMatrix::<f64>::zeros(n2, n2);
        let mut add = |form: &QuadForm, w: f64| {
            for (&(a, b), &c) in &form.terms {
                if a == b {
                    h[(a, a)] += 2.0 * w * c;
                } else {
                    h[(a, b)] += w * c;
                    h[(b, a)] += w * c;
                }
            }
        };
        for i in 0..self.n {
            add(&self.p_at[i], -y_p[i]);
            add(&self.q_at[i], -y_q[i]);
            add(&self.mag[i], z_hi[i] - z_lo[i]);
        }
        let eig = symmetric_eigen(&h)?;
        let top = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = 1e-8 * top.max(1e-6);
        let mut out = DMatrix::<f64>::zeros(n2, n2);
        for (k, &lam) in eig.values.iter().enumerate() {
            let col = eig.vectors.column(k);
            out += lam.max(floor) * col * col.transpose();
        }
        // exact symmetry for the QP input
        Ok((&out + out.transpose()) * 0.5)
    }

    /// Local solve from voltages `v0` with activations `d`. `None` when the
    /// method does not reach a feasible point.
    fn solve(&self, inst: &Instance, d: &[f64], v0: &[Vec<f64>], params: &PrimalParams) -> Result<Option<OperatingPoint>> {
        let t_len = inst.horizon;
        let n2 = 2 * self.n;
        let mut rho = 10.0 * Self::price_scale(inst);
        let mut hess = vec![DMatrix::<f64>::identity(n2, n2) * 1e-6; t_len];
        // Zero-radius step: best injections for the start voltages.
        let (qp, power, _) = self.step_qp(inst, d, v0, &hess, 0.0, rho, None);
        let Some(sol) = solve_step(&qp, &params.qp)? else {
            log::debug!("local solve: initial step QP failed");
            return Ok(None);
        };
        let (p, q, _) = power.extract(&sol.x);
        let mut it = Iterate { p, q, v: v0.to_vec() };
        let mut radius = RADIUS_INIT;

        for _ in 0..params.max_iter {
            let (viol, _) = self.violation(&it);
            let merit = Self::cost(inst, &it, d) + rho * viol;
            let Some(first) = self.trial_step(inst, d, &it, &hess, radius, rho, None, params)? else {
                radius *= 0.25;
                if radius < RADIUS_MIN {
                    break;
                }
                continue;
            };
            let predicted = merit - first.sol.value;
            let slack_sum: f64 = first.rows.iter().flat_map(|r| &r.slacks).map(|&s| first.sol.x[s]).sum();
            let scale = 1.0 + merit.abs();
            if predicted <= 1e-12 * scale {
                // Stationary for the current model.
                let (_, worst) = self.violation(&it);
                if worst <= FEAS_TARGET {
                    return Ok(Some(self.point(&it, d)));
                }
                if slack_sum > 0.0 && rho < PENALTY_MAX {
                    rho *= 10.0;
                    continue;
                }
                break;
            }
            let merit_at = |s: &Trial| Self::cost(inst, &s.next, d) + rho * self.violation(&s.next).0;
            let mut ratio = (merit - merit_at(&first)) / predicted;
            let step_norm = first.step_norm;
            let mut accepted = first;
            if ratio < 0.1 {
                // The linearization missed the curvature of the constraints
                // along the step; retry with it folded into the rows.
                if let Some(second) = self.trial_step(inst, d, &it, &hess, radius, rho, Some(&accepted.step), params)? {
                    let r2 = (merit - merit_at(&second)) / predicted;
                    if r2 >= 0.1 {
                        ratio = r2;
                        accepted = second;
                    }
                }
            }
            log::trace!("merit {merit:.8e} predicted {predicted:.2e} ratio {ratio:.3} violation {viol:.2e} radius {radius:.1e} penalty {rho:.1e}");
            if ratio >= 0.1 {
                let tworst = self.violation(&accepted.next).1;
                it = accepted.next;
                if ratio > 0.75 && step_norm > 0.9 * radius {
                    radius = (2.0 * radius).min(RADIUS_MAX);
                }
                // Multipliers for the next curvature term.
                let sol = &accepted.sol;
                for (t, r) in accepted.rows.iter().enumerate() {
                    let y_p: Vec<f64> = r.p_bal.iter().map(|&k| sol.eq_duals[k]).collect();
                    let y_q: Vec<f64> = r.q_bal.iter().map(|&k| sol.eq_duals[k]).collect();
                    let z_lo: Vec<f64> = r.v_lo.iter().map(|&k| sol.le_duals[k].max(0.0)).collect();
                    let z_hi: Vec<f64> = r.v_hi.iter().map(|&k| sol.le_duals[k].max(0.0)).collect();
                    hess[t] = self.curvature(&y_p, &y_q, &z_lo, &z_hi)?;
                }
                if tworst <= FEAS_TARGET && predicted <= 1e-10 * scale {
                    return Ok(Some(self.point(&it, d)));
                }
            } else {
                radius = 0.25 * step_norm.min(radius);
                if radius < RADIUS_MIN {
                    let (_, worst) = self.violation(&it);
                    if worst <= FEAS_TARGET {
                        return Ok(Some(self.point(&it, d)));
                    }
                    break;
                }
            }
        }
        let (_, worst) = self.violation(&it);
        log::debug!("local solve stopped: violation {worst:.2e}, radius {radius:.2e}, penalty {rho:.2e}");
        // The caller verifies at its own tolerance.
        Ok((worst <= params.tol).then(|| self.point(&it, d)))
    }

    /// Solves one step QP and applies its step.
    #[allow(clippy::too_many_arguments)]
    fn trial_step(
        &self,
        inst: &Instance,
        d: &[f64],
        it: &Iterate,
        hess: &[DMatrix<f64>],
        radius: f64,
        rho: f64,
        soc: Option<&[Vec<f64>]>,
        params: &PrimalParams,
    ) -> Result<Option<Trial>> {
        let (qp, power, rows) = self.step_qp(inst, d, &it.v, hess, radius, rho, soc);
        let Some(sol) = solve_step(&qp, &params.qp)? else {
            return Ok(None);
        };
        let (p, q, _) = power.extract(&sol.x);
        let step: Vec<Vec<f64>> = rows.iter().map(|r| r.dv.iter().map(|&j| sol.x[j]).collect()).collect();
        let v = it.v.iter().zip(&step).map(|(a, s)| a.iter().zip(s).map(|(x, y)| x + y).collect()).collect();
        let step_norm = step.iter().flatten().fold(0.0f64, |m, s| m.max(s.abs()));
        Ok(Some(Trial {
            next: Iterate { p, q, v },
            step,
            step_norm,
            sol,
            rows,
        }))
    }

    fn point(&self, it: &Iterate, d: &[f64]) -> OperatingPoint {
        OperatingPoint {
            p: it.p.clone(),
            q: it.q.clone(),
            d: d.to_vec(),
            e: it.v.iter().map(|x| x[..self.n].to_vec()).collect(),
            f: it.v.iter().map(|x| x[self.n..].to_vec()).collect(),
        }
    }
}

fn solve_step(qp: &ConvexQp, settings: &QpSettings) -> Result<Option<QpSolution>> {
    Ok(match solve_qp_relaxing(qp, settings)? {
        QpOutcome::Optimal(sol) => Some(sol),
        _ => None,
    })
}
