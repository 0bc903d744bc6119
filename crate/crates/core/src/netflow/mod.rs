//! Network-flow relaxation.
//!
//! Link flows and losses are written as quadratic forms of the rectangular
//! voltages; each distinct product of a period gets one variable `w`
//! constrained by its envelope over the voltage boxes. The flows become
//! linear in `(x, w)`, so the whole model is a mixed-binary convex QP.

mod envelope;
mod reform;
pub mod sample;
mod tighten;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::formulation::{add_power_block, PowerVars};
use crate::lagrangian::DualPoint;
use crate::mip::{solve_mixed_binary, MixedBinaryOutcome, MixedBinaryProblem, Strategy};
use crate::model::{Instance, OperatingPoint};
use crate::numerics::qp::{ConvexQp, QpSettings};
use crate::relaxation::RelaxationOutcome;

pub use envelope::{mccormick, square_envelope, tangent_cuts, EnvRow, Interval};
pub use reform::{conservation_residuals, link_forms, magnitude_form, LinkForms, QuadForm};
pub use tighten::{
    initial_voltage_boxes, injection_bounds, interval_eval, interval_flow_boxes, tighten_all, tighten_flow_bounds,
    tighten_voltage_bounds, BoxBounds, FlowKind, PeriodBoxes, TightenParams, TightenStats,
};

#[derive(Debug, Clone)]
pub struct NfrParams {
    pub tighten: TightenParams,
    /// Interior tangent cuts of `w ≥ x²` per square term; 0 disables them.
    pub tangent_cuts: usize,
    pub qp: QpSettings,
    /// Replaces the computed boxes.
    pub boxes: Option<Vec<PeriodBoxes>>,
}

impl Default for NfrParams {
    fn default() -> Self {
        Self {
            tighten: TightenParams::default(),
            tangent_cuts: 16,
            qp: QpSettings::default(),
            boxes: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NfrResult {
    pub outcome: RelaxationOutcome,
    pub boxes: BoxBounds,
    /// Multipliers of the balance and magnitude rows at the optimum, in the
    /// sign convention of the Lagrangian dual.
    pub duals: DualPoint,
}

/// Variable layout of one period of the master model.
struct PeriodVars {
    x: Vec<usize>,
    w: BTreeMap<(usize, usize), usize>,
    p_balance: Vec<usize>,
    q_balance: Vec<usize>,
    v_lo: Vec<usize>,
    v_hi: Vec<usize>,
}

fn linear_in_w(form: &QuadForm, w: &BTreeMap<(usize, usize), usize>, scale: f64) -> Vec<(usize, f64)> {
    form.terms.iter().map(|(k, &c)| (w[k], scale * c)).collect()
}

fn add_range(qp: &mut ConvexQp, coeffs: Vec<(usize, f64)>, iv: Interval) {
    if iv.hi.is_finite() {
        qp.add_le(coeffs.clone(), iv.hi);
    }
    if iv.lo.is_finite() {
        qp.add_ge(coeffs, iv.lo);
    }
}

fn add_period(
    qp: &mut ConvexQp,
    inst: &Instance,
    t: usize,
    power: &PowerVars,
    forms: &[LinkForms],
    boxes: &PeriodBoxes,
    tangents: usize,
) -> Result<PeriodVars> {
    let n = inst.n_buses();
    let x: Vec<usize> = (0..2 * n)
        .map(|a| {
            let b = boxes.voltage(a);
            qp.add_var(b.lo, b.hi, 0.0)
        })
        .collect();
    let mut keys: Vec<(usize, usize)> = (0..2 * n).map(|a| (a, a)).collect();
    for lf in forms {
        for k in FlowKind::ALL {
            keys.extend(k.form(lf).terms.keys().copied());
        }
    }
    keys.sort_unstable();
    keys.dedup();
    let mut w = BTreeMap::new();
    for &(a, b) in &keys {
        let (ba, bb) = (boxes.voltage(a), boxes.voltage(b));
        let range = if a == b { ba.square() } else { ba.mul(&bb) };
        let v = qp.add_var(range.lo, range.hi, 0.0);
        w.insert((a, b), v);
        let rows: Vec<EnvRow> = if a == b {
            let mut r = square_envelope(ba)?.to_vec();
            r.extend(tangent_cuts(ba, tangents));
            r
        } else {
            mccormick(ba, bb)?.to_vec()
        };
        for r in rows {
            let mut coeffs = vec![(x[a], r.cx), (v, r.cw)];
            if a != b {
                coeffs.push((x[b], r.cy));
            }
            coeffs.retain(|c| c.1 != 0.0);
            qp.add_le(coeffs, r.rhs);
        }
    }
    // flow boxes on the linear images of the forms
    for (l, lf) in forms.iter().enumerate() {
        for k in FlowKind::ALL {
            add_range(qp, linear_in_w(k.form(lf), &w, 1.0), boxes.flow(l, k));
        }
    }
    let net = &inst.network;
    let mut v_lo = Vec::with_capacity(n);
    let mut v_hi = Vec::with_capacity(n);
    for i in 0..n {
        let mag = linear_in_w(&magnitude_form(n, i), &w, 1.0);
        let b = &net.buses[i];
        v_lo.push(qp.add_ge(mag.clone(), b.v_min * b.v_min));
        v_hi.push(qp.add_le(mag, b.v_max * b.v_max));
    }
    // balances: injections minus flows leaving the bus
    let mut p_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut q_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (k, dev) in inst.devices.iter().enumerate() {
        p_rows[dev.bus].push((power.p[t][k], 1.0));
        q_rows[dev.bus].push((power.q[t][k], 1.0));
    }
    for (l, link) in net.links.iter().enumerate() {
        let lf = &forms[l];
        p_rows[link.from].extend(linear_in_w(&lf.p_ij, &w, -1.0));
        p_rows[link.to].extend(linear_in_w(&lf.p_ji, &w, -1.0));
        q_rows[link.from].extend(linear_in_w(&lf.q_ij, &w, -1.0));
        q_rows[link.to].extend(linear_in_w(&lf.q_ji, &w, -1.0));
    }
    let merge = |row: Vec<(usize, f64)>| -> Vec<(usize, f64)> {
        let mut m: BTreeMap<usize, f64> = BTreeMap::new();
        for (j, a) in row {
            *m.entry(j).or_insert(0.0) += a;
        }
        m.into_iter().filter(|e| e.1 != 0.0).collect()
    };
    let p_balance = p_rows.into_iter().map(|r| qp.add_eq(merge(r), 0.0)).collect();
    let q_balance = q_rows.into_iter().map(|r| qp.add_eq(merge(r), 0.0)).collect();
    Ok(PeriodVars {
        x,
        w,
        p_balance,
        q_balance,
        v_lo,
        v_hi,
    })
}

/// Checks that a box override has the shape of the instance.
fn check_boxes(inst: &Instance, boxes: &[PeriodBoxes]) -> Result<()> {
    if boxes.len() != inst.horizon {
        return Err(Error::Dimension {
            context: "box override periods",
            expected: inst.horizon,
            actual: boxes.len(),
        });
    }
    for b in boxes {
        if b.e.len() != inst.n_buses() || b.f.len() != inst.n_buses() || b.flows.len() != inst.network.links.len() {
            return Err(Error::Dimension {
                context: "box override size",
                expected: inst.n_buses(),
                actual: b.e.len(),
            });
        }
        let all = b.e.iter().chain(&b.f).chain(b.flows.iter().flatten());
        for iv in all {
            Interval::new(iv.lo, iv.hi)?;
        }
    }
    Ok(())
}

/// Solves the network-flow relaxation.
pub fn solve_nfr(inst: &Instance, params: &NfrParams) -> Result<NfrResult> {
    let start = Instant::now();
    let forms = link_forms(&inst.network)?;
    let boxes = match &params.boxes {
        Some(b) => {
            check_boxes(inst, b)?;
            let mut computed = tighten_all(
                inst,
                &TightenParams {
                    enabled: false,
                    ..params.tighten
                },
            )?;
            computed.tightened = b.clone();
            computed
        }
        None => tighten_all(inst, &params.tighten)?,
    };
    let t_tighten = start.elapsed().as_secs_f64();

    let mut qp = ConvexQp::new();
    let power = add_power_block(&mut qp, inst);
    let periods: Vec<PeriodVars> = (0..inst.horizon)
        .map(|t| add_period(&mut qp, inst, t, &power, &forms, &boxes.tightened[t], params.tangent_cuts))
        .collect::<Result<_>>()?;
    let problem = MixedBinaryProblem::new(qp, power.d.clone())?;
    let sol = match solve_mixed_binary(&problem, Strategy::Auto, &params.qp)? {
        MixedBinaryOutcome::Optimal(s) => s,
        MixedBinaryOutcome::Infeasible => {
            return Err(Error::Infeasible(format!(
                "{}: network-flow relaxation has no feasible point, so neither has the original problem",
                inst.name
            )))
        }
    };

    let n = inst.n_buses();
    let (p, q, _) = power.extract(&sol.qp.x);
    let point = OperatingPoint {
        p,
        q,
        d: sol.d.clone(),
        e: periods.iter().map(|pv| pv.x[..n].iter().map(|&j| sol.qp.x[j]).collect()).collect(),
        f: periods.iter().map(|pv| pv.x[n..].iter().map(|&j| sol.qp.x[j]).collect()).collect(),
    };
    let mut duals = DualPoint::zeros(inst);
    for (t, pv) in periods.iter().enumerate() {
        for i in 0..n {
            duals.lambda[t][i] = sol.qp.eq_duals[pv.p_balance[i]];
            duals.gamma[t][i] = sol.qp.eq_duals[pv.q_balance[i]];
            duals.alpha[t][i] = sol.qp.le_duals[pv.v_lo[i]].max(0.0);
            duals.beta[t][i] = sol.qp.le_duals[pv.v_hi[i]].max(0.0);
        }
    }
    let products: usize = periods.iter().map(|pv| pv.w.len()).sum();
    let diagnostics = vec![
        format!(
            "bound tightening: {:.3} s, {} SDP bounds, {} fallbacks",
            t_tighten, boxes.stats.sdp_solved, boxes.stats.fallbacks
        ),
        format!("master: {} product variables, {} QP solves", products, sol.qp_solves),
    ];
    Ok(NfrResult {
        outcome: RelaxationOutcome {
            name: "nfr",
            dual_bound: sol.value,
            point,
            time_s: start.elapsed().as_secs_f64(),
            converged: true,
            iterations: sol.qp_solves,
            diagnostics,
        },
        boxes,
        duals,
    })
}

/// Bound of the plain network-flow model: directed flows and losses limited
/// by the same boxes and tied only by conservation, no voltages.
pub fn solve_plain_flow(inst: &Instance, boxes: &[PeriodBoxes], settings: &QpSettings) -> Result<f64> {
    check_boxes(inst, boxes)?;
    let forms = link_forms(&inst.network)?;
    let mut qp = ConvexQp::new();
    let power = add_power_block(&mut qp, inst);
    let n = inst.n_buses();
    for (t, b) in boxes.iter().enumerate() {
        let mut p_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut q_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (k, dev) in inst.devices.iter().enumerate() {
            p_rows[dev.bus].push((power.p[t][k], 1.0));
            q_rows[dev.bus].push((power.q[t][k], 1.0));
        }
        for (l, link) in inst.network.links.iter().enumerate() {
            let v: Vec<usize> = FlowKind::ALL
                .iter()
                .map(|&k| {
                    let iv = b.flow(l, k);
                    qp.add_var(iv.lo, iv.hi, 0.0)
                })
                .collect();
            let (pij, pji, qij, qji, loss) = (v[0], v[1], v[2], v[3], v[4]);
            qp.add_eq(vec![(pij, 1.0), (pji, 1.0), (loss, -1.0)], 0.0);
            qp.add_eq(vec![(qij, 1.0), (qji, 1.0), (loss, -forms[l].q_loss_ratio)], 0.0);
            p_rows[link.from].push((pij, -1.0));
            p_rows[link.to].push((pji, -1.0));
            q_rows[link.from].push((qij, -1.0));
            q_rows[link.to].push((qji, -1.0));
        }
        for r in p_rows.into_iter().chain(q_rows) {
            qp.add_eq(r, 0.0);
        }
    }
    let problem = MixedBinaryProblem::new(qp, power.d.clone())?;
    match solve_mixed_binary(&problem, Strategy::Auto, settings)? {
        MixedBinaryOutcome::Optimal(s) => Ok(s.value),
        MixedBinaryOutcome::Infeasible => Err(Error::Infeasible(format!("{}: plain network-flow model", inst.name))),
    }
}

fn element_name(inst: &Instance, kind: &str, idx: usize) -> String {
    match kind {
        "e" | "f" => inst.network.buses[idx].id.clone(),
        _ => {
            let l = &inst.network.links[idx];
            format!("{}-{}", inst.network.buses[l.from].id, inst.network.buses[l.to].id)
        }
    }
}

/// Writes the boxes before and after tightening as CSV.
pub fn write_boxes(path: &Path, inst: &Instance, boxes: &BoxBounds) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "period,variable,element,lower_before,upper_before,lower_after,upper_after").unwrap();
    for (t, (b0, b1)) in boxes.initial.iter().zip(&boxes.tightened).enumerate() {
        let mut line = |kind: &str, idx: usize, a: Interval, b: Interval| {
            writeln!(
                out,
                "{},{},{},{:e},{:e},{:e},{:e}",
                t,
                kind,
                element_name(inst, kind, idx),
                a.lo,
                a.hi,
                b.lo,
                b.hi
            )
            .unwrap();
        };
        for i in 0..b0.e.len() {
            line("e", i, b0.e[i], b1.e[i]);
        }
        for i in 0..b0.f.len() {
            line("f", i, b0.f[i], b1.f[i]);
        }
        for l in 0..b0.flows.len() {
            for (k, kind) in FlowKind::ALL.iter().enumerate() {
                line(kind.as_str(), l, b0.flows[l][k], b1.flows[l][k]);
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
