//! Per-period bound tightening over the Shor relaxation of the single-period
//! feasible set (injection bounds, capability rows, balances, magnitudes).
//!
//! The lifted matrix is `Y = [1 xᵀ; x X]` with `x = (e, f)`. Every bound is
//! certified from the dual iterate: for `min ⟨C, Y⟩ + cᵀs` the value
//! `bᵀy + min(0, λ_min(C − A*y))·tr_max + Σ min(0, (c − a*y)_j)·s_max_j`
//! is a lower bound whatever the accuracy of the solve, since `tr(Y)` and the
//! slacks are bounded on the feasible set.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::envelope::{mccormick, square_envelope, EnvRow, Interval};
use super::reform::{link_forms, magnitude_form, LinkForms, QuadForm};
use crate::error::Result;
use crate::model::Instance;
use crate::numerics::eigen::symmetric_eigenvalues;
use crate::numerics::qp::{solve_qp, ConvexQp, QpOutcome, QpSettings};
use crate::numerics::sdp::{solve_sdp, SdpConstraint, SdpProblem, SdpSettings, SdpStatus, SymEntries};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    Pij,
    Pji,
    Qij,
    Qji,
    Loss,
}

impl FlowKind {
    pub const ALL: [FlowKind; 5] = [FlowKind::Pij, FlowKind::Pji, FlowKind::Qij, FlowKind::Qji, FlowKind::Loss];

    pub fn as_str(self) -> &'static str {
        match self {
            FlowKind::Pij => "P_ij",
            FlowKind::Pji => "P_ji",
            FlowKind::Qij => "Q_ij",
            FlowKind::Qji => "Q_ji",
            FlowKind::Loss => "Ploss",
        }
    }

    pub fn form(self, lf: &LinkForms) -> &QuadForm {
        match self {
            FlowKind::Pij => &lf.p_ij,
            FlowKind::Pji => &lf.p_ji,
            FlowKind::Qij => &lf.q_ij,
            FlowKind::Qji => &lf.q_ji,
            FlowKind::Loss => &lf.loss,
        }
    }
}

/// Boxes of one period. `flows[l][k]` follows `FlowKind::ALL`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodBoxes {
    pub e: Vec<Interval>,
    pub f: Vec<Interval>,
    pub flows: Vec<[Interval; 5]>,
}

impl PeriodBoxes {
    /// Box of voltage coordinate `a` (`e` for `a < n`, `f` otherwise).
    pub fn voltage(&self, a: usize) -> Interval {
        let n = self.e.len();
        if a < n {
            self.e[a]
        } else {
            self.f[a - n]
        }
    }

    pub fn flow(&self, link: usize, kind: FlowKind) -> Interval {
        self.flows[link][FlowKind::ALL.iter().position(|&k| k == kind).unwrap()]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TightenParams {
    pub enabled: bool,
    pub sdp: SdpSettings,
    /// Adds the envelope rows of the voltage boxes to the SDP for the
    /// bilinear terms of the flow expressions.
    pub rlt: bool,
}

impl Default for TightenParams {
    fn default() -> Self {
        Self {
            enabled: true,
            sdp: SdpSettings::default(),
            rlt: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TightenStats {
    pub sdp_solved: usize,
    pub fallbacks: usize,
}

/// Injection bounds of every bus in one period, possibly infinite.
pub fn injection_bounds(inst: &Instance, t: usize) -> (Vec<Interval>, Vec<Interval>) {
    let nb = inst.n_buses();
    let mut p = vec![Interval::point(0.0); nb];
    for dev in &inst.devices {
        p[dev.bus] = p[dev.bus].add(&Interval {
            lo: dev.p_min[t],
            hi: dev.p_max[t],
        });
    }
    // Reactive bounds come from the capability rows: two LPs per bus.
    let mut qp = ConvexQp::new();
    let pv: Vec<usize> = inst.devices.iter().map(|d| qp.add_var(d.p_min[t], d.p_max[t], 0.0)).collect();
    let qv: Vec<usize> = inst.devices.iter().map(|_| qp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0)).collect();
    for row in &inst.capability {
        let coeffs = row.coeffs.iter().map(|&(c, a)| (if c % 2 == 0 { pv[c / 2] } else { qv[c / 2] }, a)).collect();
        qp.add_le(coeffs, row.rhs);
    }
    let settings = QpSettings::default();
    let q = (0..nb)
        .map(|i| {
            let at: Vec<usize> = (0..inst.n_devices()).filter(|&k| inst.devices[k].bus == i).collect();
            if at.is_empty() {
                return Interval::point(0.0);
            }
            let side = |sign: f64| -> f64 {
                let mut lp = qp.clone();
                for &k in &at {
                    lp.linear[qv[k]] = sign;
                }
                match solve_qp(&lp, &settings) {
                    Ok(QpOutcome::Optimal(sol)) => {
                        let v: f64 = at.iter().map(|&k| sol.x[qv[k]]).sum();
                        // LP optimum up to solver accuracy; widen slightly
                        v - sign * 1e-7 * (1.0 + v.abs())
                    }
                    _ => -sign * f64::INFINITY,
                }
            };
            Interval {
                lo: side(1.0),
                hi: side(-1.0),
            }
        })
        .collect();
    (p, q)
}

/// `|Σ c·Y_ab|` bound from `|Y_ab| ≤ r_a r_b`.
fn abs_bound(form: &QuadForm, r: &[f64]) -> f64 {
    form.terms.iter().map(|(&(a, b), c)| c.abs() * r[a] * r[b]).sum()
}

/// Lifted entries of a form; `x_a` maps to index `1 + a`.
fn lifted(form: &QuadForm, scale: f64) -> SymEntries {
    let mut s = SymEntries::default();
    for (&(a, b), &c) in &form.terms {
        let v = if a == b { c } else { 0.5 * c };
        s.push(1 + a, 1 + b, scale * v);
    }
    s
}

/// Appends `⟨mat, Y⟩ + sign·s = rhs` with a fresh slack `0 ≤ s ≤ s_max`.
fn push_row(cons: &mut Vec<SdpConstraint>, slack_max: &mut Vec<f64>, mat: SymEntries, slack: Option<(f64, f64)>, rhs: f64) {
    let lin = match slack {
        Some((sign, smax)) => {
            slack_max.push(smax);
            vec![(slack_max.len() - 1, sign)]
        }
        None => Vec::new(),
    };
    cons.push(SdpConstraint { mat, lin, rhs });
}

/// The relaxation of one period, without objective.
#[derive(Debug, Clone)]
struct PeriodSdp {
    problem: SdpProblem,
    trace_max: f64,
    slack_max: Vec<f64>,
}

impl PeriodSdp {
    fn build(inst: &Instance, t: usize, forms: &[LinkForms], vbox: Option<&[Interval]>) -> Self {
        let n = inst.n_buses();
        let dim = 1 + 2 * n;
        let net = &inst.network;
        let vmax: Vec<f64> = net.buses.iter().map(|b| b.v_max).collect();
        // radius of each lifted coordinate
        let mut r = vec![0.0; 2 * n];
        for i in 0..n {
            r[i] = vmax[i];
            r[n + i] = vmax[i];
        }
        let mut cons = Vec::new();
        let mut slack_max = Vec::new();
        let mut y00 = SymEntries::default();
        y00.push(0, 0, 1.0);
        push_row(&mut cons, &mut slack_max, y00, None, 1.0);

        let mut ranged: Vec<(QuadForm, Interval, f64)> = Vec::new();
        for i in 0..n {
            let b = &net.buses[i];
            ranged.push((magnitude_form(n, i), Interval::new(b.v_min * b.v_min, b.v_max * b.v_max).unwrap(), 0.0));
        }
        let (pb, qb) = injection_bounds(inst, t);
        let mut p_at = vec![QuadForm::default(); n];
        let mut q_at = vec![QuadForm::default(); n];
        for (l, link) in net.links.iter().enumerate() {
            p_at[link.from] = p_at[link.from].plus(&forms[l].p_ij);
            p_at[link.to] = p_at[link.to].plus(&forms[l].p_ji);
            q_at[link.from] = q_at[link.from].plus(&forms[l].q_ij);
            q_at[link.to] = q_at[link.to].plus(&forms[l].q_ji);
        }
        for i in 0..n {
            ranged.push((p_at[i].clone(), pb[i], abs_bound(&p_at[i], &r)));
            ranged.push((q_at[i].clone(), qb[i], abs_bound(&q_at[i], &r)));
        }
        for (form, iv, size) in &ranged {
            let mat = lifted(form, 1.0);
            if iv.lo.is_finite() {
                let smax = if iv.hi.is_finite() { iv.hi - iv.lo } else { size + iv.lo.abs() };
                push_row(&mut cons, &mut slack_max, mat.clone(), Some((-1.0, smax)), iv.lo);
            }
            if iv.hi.is_finite() {
                let smax = if iv.lo.is_finite() { iv.hi - iv.lo } else { size + iv.hi.abs() };
                push_row(&mut cons, &mut slack_max, mat, Some((1.0, smax)), iv.hi);
            }
        }

        if let Some(vb) = vbox {
            // envelope rows c_x·x + c_y·y + c_w·w + s = rhs, s ≥ 0
            let mut rows: Vec<(usize, usize, EnvRow)> = Vec::new();
            let mut seen = std::collections::BTreeSet::new();
            for lf in forms {
                for form in [&lf.p_ij, &lf.p_ji, &lf.q_ij, &lf.q_ji] {
                    for &(a, b) in form.terms.keys() {
                        if !seen.insert((a, b)) {
                            continue;
                        }
                        if a == b {
                            for row in square_envelope(vb[a]).unwrap() {
                                rows.push((a, a, row));
                            }
                        } else {
                            for row in mccormick(vb[a], vb[b]).unwrap() {
                                rows.push((a, b, row));
                            }
                        }
                    }
                }
            }
            for (a, b, row) in rows {
                let mut mat = SymEntries::default();
                if a == b {
                    mat.push(0, 1 + a, 0.5 * row.cx);
                    mat.push(1 + a, 1 + a, row.cw);
                } else {
                    mat.push(0, 1 + a, 0.5 * row.cx);
                    mat.push(0, 1 + b, 0.5 * row.cy);
                    mat.push(1 + a, 1 + b, 0.5 * row.cw);
                }
                let w = if a == b { vb[a].square() } else { vb[a].mul(&vb[b]) };
                let lhs = vb[a].scale(row.cx).add(&vb[b].scale(if a == b { 0.0 } else { row.cy })).add(&w.scale(row.cw));
                push_row(&mut cons, &mut slack_max, mat, Some((1.0, (row.rhs - lhs.lo).max(0.0))), row.rhs);
            }
        }

        let trace_max = 1.0 + vmax.iter().map(|v| 2.0 * v * v).sum::<f64>();
        Self {
            problem: SdpProblem {
                dim,
                n_lin: slack_max.len(),
                c_mat: SymEntries::default(),
                c_lin: vec![0.0; slack_max.len()],
                constraints: cons,
            },
            trace_max,
            slack_max,
        }
    }

    /// Certified lower bound on `min ⟨obj, Y⟩`, `None` when the solve failed.
    fn min_bound(&self, obj: SymEntries, settings: &SdpSettings) -> Option<f64> {
        let mut p = self.problem.clone();
        p.c_mat = obj;
        // The certificate holds for any dual iterate, so an iteration-limit
        // exit still yields a valid (if weaker) bound.
        let sol = solve_sdp(&p, settings).ok()?;
        if sol.status == SdpStatus::Infeasible || sol.y.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut z = DMatrix::zeros(p.dim, p.dim);
        p.c_mat.add_to(&mut z, 1.0);
        let mut zl = p.c_lin.clone();
        for (c, &y) in p.constraints.iter().zip(&sol.y) {
            c.mat.add_to(&mut z, -y);
            for &(j, a) in &c.lin {
                zl[j] -= y * a;
            }
        }
        let lmin = symmetric_eigenvalues(&z).ok()?.first().copied()?;
        let by: f64 = p.constraints.iter().zip(&sol.y).map(|(c, y)| c.rhs * y).sum();
        let mut bound = by + lmin.min(0.0) * self.trace_max;
        for (z, ub) in zl.iter().zip(&self.slack_max) {
            if *z < 0.0 {
                bound += z * ub;
            }
        }
        bound.is_finite().then(|| bound - 1e-9 * (1.0 + bound.abs()))
    }

    /// Certified `[min, max]` of a form over the relaxation.
    fn range(&self, form: &QuadForm, settings: &SdpSettings) -> (Option<f64>, Option<f64>) {
        let lo = self.min_bound(lifted(form, 1.0), settings);
        let hi = self.min_bound(lifted(form, -1.0), settings).map(|v| -v);
        (lo, hi)
    }
}

/// `x_a` as a form acting on the lifted first row.
fn linear_entries(a: usize, scale: f64) -> SymEntries {
    let mut s = SymEntries::default();
    s.push(0, 1 + a, 0.5 * scale);
    s
}

pub fn initial_voltage_boxes(inst: &Instance) -> Vec<Interval> {
    let vmax: Vec<f64> = inst.network.buses.iter().map(|b| b.v_max).collect();
    vmax.iter().chain(&vmax).map(|&v| Interval::symmetric(v)).collect()
}

/// Interval evaluation of a form over voltage boxes.
pub fn interval_eval(form: &QuadForm, vb: &[Interval]) -> Interval {
    form.terms.iter().fold(Interval::point(0.0), |acc, (&(a, b), &c)| {
        let t = if a == b { vb[a].square() } else { vb[a].mul(&vb[b]) };
        acc.add(&t.scale(c))
    })
}

/// Flow boxes implied by voltage boxes alone.
pub fn interval_flow_boxes(forms: &[LinkForms], vb: &[Interval]) -> Vec<[Interval; 5]> {
    forms
        .iter()
        .map(|lf| {
            FlowKind::ALL.map(|k| {
                let mut iv = interval_eval(k.form(lf), vb);
                if k == FlowKind::Loss {
                    iv.lo = iv.lo.max(0.0);
                }
                iv
            })
        })
        .collect()
}

fn merge(sdp: (Option<f64>, Option<f64>), fallback: Interval, stats: &mut TightenStats) -> Interval {
    let (lo, hi) = sdp;
    for v in [lo, hi] {
        if v.is_some() {
            stats.sdp_solved += 1;
        } else {
            stats.fallbacks += 1;
        }
    }
    let cand = Interval {
        lo: lo.map_or(fallback.lo, |v| v.max(fallback.lo)),
        hi: hi.map_or(fallback.hi, |v| v.min(fallback.hi)),
    };
    if cand.lo <= cand.hi {
        cand
    } else {
        // empty only through round-off on a (nearly) degenerate range
        let mid = 0.5 * (cand.lo + cand.hi);
        Interval { lo: mid, hi: mid }
    }
}

/// Voltage boxes of period `t`, indexed like the lifted coordinates.
pub fn tighten_voltage_bounds(inst: &Instance, t: usize, params: &TightenParams) -> Result<(Vec<Interval>, TightenStats)> {
    let forms = link_forms(&inst.network)?;
    let init = initial_voltage_boxes(inst);
    let mut stats = TightenStats::default();
    if !params.enabled {
        return Ok((init, stats));
    }
    let sdp = PeriodSdp::build(inst, t, &forms, params.rlt.then_some(init.as_slice()));
    let ranges: Vec<_> = (0..init.len())
        .into_par_iter()
        .map(|a| {
            let lo = sdp.min_bound(linear_entries(a, 1.0), &params.sdp);
            let hi = sdp.min_bound(linear_entries(a, -1.0), &params.sdp).map(|v| -v);
            (lo, hi)
        })
        .collect();
    let boxes = ranges
        .into_iter()
        .zip(&init)
        .enumerate()
        .map(|(a, (r, fb))| {
            if r.0.is_none() || r.1.is_none() {
                log::warn!("{}: period {t}: voltage coordinate {a}: SDP bound failed, using ±V̄", inst.name);
            }
            merge(r, *fb, &mut stats)
        })
        .collect();
    Ok((boxes, stats))
}

/// Flow boxes of period `t` given its voltage boxes.
pub fn tighten_flow_bounds(
    inst: &Instance,
    t: usize,
    vbox: &[Interval],
    params: &TightenParams,
) -> Result<(Vec<[Interval; 5]>, TightenStats)> {
    let forms = link_forms(&inst.network)?;
    let fallback = interval_flow_boxes(&forms, vbox);
    let mut stats = TightenStats::default();
    if !params.enabled {
        return Ok((fallback, stats));
    }
    let sdp = PeriodSdp::build(inst, t, &forms, params.rlt.then_some(vbox));
    let jobs: Vec<(usize, usize)> = (0..forms.len()).flat_map(|l| (0..5).map(move |k| (l, k))).collect();
    let ranges: Vec<_> = jobs
        .par_iter()
        .map(|&(l, k)| sdp.range(FlowKind::ALL[k].form(&forms[l]), &params.sdp))
        .collect();
    let mut out = fallback.clone();
    for (&(l, k), r) in jobs.iter().zip(ranges) {
        if r.0.is_none() || r.1.is_none() {
            log::warn!(
                "{}: period {t}: link {l} {}: SDP bound failed, using interval bound",
                inst.name,
                FlowKind::ALL[k].as_str()
            );
        }
        out[l][k] = merge(r, fallback[l][k], &mut stats);
        if FlowKind::ALL[k] == FlowKind::Loss {
            out[l][k].lo = out[l][k].lo.max(0.0);
            out[l][k].hi = out[l][k].hi.max(0.0);
        }
    }
    Ok((out, stats))
}

/// Boxes of every period, before and after tightening.
#[derive(Debug, Clone)]
pub struct BoxBounds {
    pub initial: Vec<PeriodBoxes>,
    pub tightened: Vec<PeriodBoxes>,
    pub stats: TightenStats,
}

fn split(v: Vec<Interval>) -> (Vec<Interval>, Vec<Interval>) {
    let n = v.len() / 2;
    (v[..n].to_vec(), v[n..].to_vec())
}

pub fn tighten_all(inst: &Instance, params: &TightenParams) -> Result<BoxBounds> {
    let forms = link_forms(&inst.network)?;
    let init_v = initial_voltage_boxes(inst);
    let init_flows = interval_flow_boxes(&forms, &init_v);
    let per: Vec<(PeriodBoxes, TightenStats)> = (0..inst.horizon)
        .into_par_iter()
        .map(|t| -> Result<_> {
            let (vb, s1) = tighten_voltage_bounds(inst, t, params)?;
            let (flows, s2) = tighten_flow_bounds(inst, t, &vb, params)?;
            let (e, f) = split(vb);
            Ok((
                PeriodBoxes { e, f, flows },
                TightenStats {
                    sdp_solved: s1.sdp_solved + s2.sdp_solved,
                    fallbacks: s1.fallbacks + s2.fallbacks,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (ie, if_) = split(init_v);
    let initial = vec![
        PeriodBoxes {
            e: ie,
            f: if_,
            flows: init_flows,
        };
        inst.horizon
    ];
    let mut stats = TightenStats::default();
    let mut tightened = Vec::with_capacity(per.len());
    for (b, s) in per {
        stats.sdp_solved += s.sdp_solved;
        stats.fallbacks += s.fallbacks;
        tightened.push(b);
    }
    Ok(BoxBounds {
        initial,
        tightened,
        stats,
    })
}

