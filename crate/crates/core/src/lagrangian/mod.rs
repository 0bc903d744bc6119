//! Lagrangian relaxation of the balance and voltage-magnitude constraints.
//!
//! Dualizing them splits the problem into a power subproblem (a mixed-binary
//! QP over injections and activations) and one voltage subproblem per period
//! (a quadratic form minimized over an annulus, solved by its smallest
//! eigenpair). The dual function is maximized by a proximal bundle method.

pub mod bundle;
mod voltage;

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formulation::{add_power_block, PowerVars};
use crate::mip::{solve_mixed_binary, MixedBinaryProblem, Strategy};
use crate::model::{bus_flows, Instance, OperatingPoint};
use crate::numerics::qp::{ConvexQp, QpSettings};
use crate::relaxation::RelaxationOutcome;

pub use bundle::{BundleParams, IterLog, StepType};
pub use voltage::{annulus_min, voltage_form, voltage_subproblem, VoltageSolution};

/// Multipliers `[t][bus]` of the active and reactive balance rows and of the
/// lower and upper voltage-magnitude rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub lambda: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl DualPoint {
    pub fn zeros(inst: &Instance) -> Self {
        let z = vec![vec![0.0; inst.n_buses()]; inst.horizon];
        Self {
            lambda: z.clone(),
            gamma: z.clone(),
            alpha: z.clone(),
            beta: z,
        }
    }

    /// Flat layout `[λ | γ | α | β]`, each block period-major.
    pub fn to_vec(&self) -> Vec<f64> {
        [&self.lambda, &self.gamma, &self.alpha, &self.beta]
            .into_iter()
            .flat_map(|blk| blk.iter().flatten().copied())
            .collect()
    }

    pub fn from_vec(v: &[f64], periods: usize, buses: usize) -> Result<Self> {
        let m = periods * buses;
        if v.len() != 4 * m {
            return Err(Error::Dimension {
                context: "dual point",
                expected: 4 * m,
                actual: v.len(),
            });
        }
        let block = |k: usize| -> Vec<Vec<f64>> { v[k * m..(k + 1) * m].chunks(buses).map(|c| c.to_vec()).collect() };
        Ok(Self {
            lambda: block(0),
            gamma: block(1),
            alpha: block(2),
            beta: block(3),
        })
    }

    /// Mask of the sign-constrained coordinates in the flat layout.
    pub fn nonneg_mask(periods: usize, buses: usize) -> Vec<bool> {
        let m = periods * buses;
        (0..4 * m).map(|k| k >= 2 * m).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let s = |b: &Vec<Vec<f64>>| b.iter().map(|r| r.iter().map(|v| c * v).collect()).collect();
        Self {
            lambda: s(&self.lambda),
            gamma: s(&self.gamma),
            alpha: s(&self.alpha),
            beta: s(&self.beta),
        }
    }
}

/// Value and supergradient of the dual function at one point.
#[derive(Debug, Clone)]
pub struct Cut {
    pub point: DualPoint,
    pub value: f64,
    /// Residuals at the subproblem minimizers, same layout as `DualPoint::to_vec`.
    pub supergradient: Vec<f64>,
    /// Minimizers of the subproblems.
    pub minimizer: OperatingPoint,
    pub power_value: f64,
    pub voltage_values: Vec<f64>,
}

/// Power subproblem data, built once per instance.
#[derive(Debug, Clone)]
pub struct PowerSubproblem {
    template: ConvexQp,
    vars: PowerVars,
}

#[derive(Debug, Clone)]
pub struct PowerSolution {
    pub value: f64,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

impl PowerSubproblem {
    pub fn new(inst: &Instance) -> Self {
        let mut template = ConvexQp::new();
        let vars = add_power_block(&mut template, inst);
        Self { template, vars }
    }

    /// `min f(P) + c_f·d + Σ λ(𝕄P) + Σ γ(𝕄Q)` over the power block.
    pub fn solve(&self, inst: &Instance, lambda: &[Vec<f64>], gamma: &[Vec<f64>], settings: &QpSettings) -> Result<PowerSolution> {
        let mut qp = self.template.clone();
        for t in 0..inst.horizon {
            for (k, dev) in inst.devices.iter().enumerate() {
                qp.linear[self.vars.p[t][k]] += lambda[t][dev.bus];
                qp.linear[self.vars.q[t][k]] += gamma[t][dev.bus];
            }
        }
        let problem = MixedBinaryProblem::new(qp, self.vars.d.clone())?;
        let sol = solve_mixed_binary(&problem, Strategy::Auto, settings)?
            .optimal()
            .map_err(|_| Error::Infeasible("power subproblem: device, capability and flexibility constraints".into()))?;
        let (p, q, _) = self.vars.extract(&sol.qp.x);
        Ok(PowerSolution {
            value: sol.value,
            p,
            q,
            d: sol.d,
        })
    }
}

pub fn power_subproblem(
    mu: &DualPoint,
    inst: &Instance,
    settings: &QpSettings,
) -> Result<PowerSolution> {
    PowerSubproblem::new(inst).solve(inst, &mu.lambda, &mu.gamma, settings)
}

/// Evaluates the dual function and a supergradient.
pub fn eval_dual(mu: &DualPoint, inst: &Instance, power: &PowerSubproblem, settings: &QpSettings) -> Result<Cut> {
    let t_len = inst.horizon;
    let nb = inst.n_buses();
    for blk in [&mu.alpha, &mu.beta] {
        if blk.iter().flatten().any(|&v| v < 0.0) {
            return Err(Error::invariant("voltage multipliers are non-negative", "negative α or β"));
        }
    }
    let ps = power.solve(inst, &mu.lambda, &mu.gamma, settings)?;
    let volts: Vec<VoltageSolution> = (0..t_len)
        .into_par_iter()
        .map(|t| voltage_subproblem(&inst.network, &mu.lambda[t], &mu.gamma[t], &mu.alpha[t], &mu.beta[t]))
        .collect::<Result<_>>()?;

    let vmin = inst.v_min_sq();
    let vmax = inst.v_max_sq();
    let mut value = ps.value;
    let m = t_len * nb;
    let mut sg = vec![0.0; 4 * m];
    for t in 0..t_len {
        value += volts[t].value;
        let inj_p = inst.bus_sum(&ps.p[t]);
        let inj_q = inst.bus_sum(&ps.q[t]);
        let (fp, fq) = bus_flows(&inst.network, &volts[t].e, &volts[t].f);
        for i in 0..nb {
            value += mu.alpha[t][i] * vmin[i] - mu.beta[t][i] * vmax[i];
            let mag = volts[t].e[i].powi(2) + volts[t].f[i].powi(2);
            let k = t * nb + i;
            sg[k] = inj_p[i] - fp[i];
            sg[m + k] = inj_q[i] - fq[i];
            sg[2 * m + k] = vmin[i] - mag;
            sg[3 * m + k] = mag - vmax[i];
        }
    }
    let minimizer = OperatingPoint {
        p: ps.p,
        q: ps.q,
        d: ps.d,
        e: volts.iter().map(|v| v.e.clone()).collect(),
        f: volts.iter().map(|v| v.f.clone()).collect(),
    };
    Ok(Cut {
        point: mu.clone(),
        value,
        supergradient: sg,
        minimizer,
        power_value: ps.value,
        voltage_values: volts.iter().map(|v| v.value).collect(),
    })
}

/// Maximizes the dual function from `init` (zeros when `None`).
pub fn maximize_dual(inst: &Instance, init: Option<&DualPoint>, params: &BundleParams) -> Result<(RelaxationOutcome, Vec<IterLog>)> {
    let start = Instant::now();
    let (t_len, nb) = (inst.horizon, inst.n_buses());
    let power = PowerSubproblem::new(inst);
    let x0 = match init {
        Some(mu) => mu.to_vec(),
        None => DualPoint::zeros(inst).to_vec(),
    };
    let mask = DualPoint::nonneg_mask(t_len, nb);
    let oracle = |x: &[f64]| -> Result<(f64, Vec<f64>, OperatingPoint)> {
        let mu = DualPoint::from_vec(x, t_len, nb)?;
        let cut = eval_dual(&mu, inst, &power, &params.qp)?;
        Ok((cut.value, cut.supergradient, cut.minimizer))
    };
    let res = bundle::maximize(oracle, x0, &mask, params)?;
    let mut diagnostics = vec![format!(
        "bundle: {} iterations, {} descent steps",
        res.iterations,
        res.log.iter().filter(|l| l.step == StepType::Descent).count()
    )];
    if !res.converged {
        diagnostics.push("not converged: iteration or time cap reached".into());
    }
    Ok((
        RelaxationOutcome {
            name: "lr",
            dual_bound: res.best_value,
            point: res.best_payload,
            time_s: start.elapsed().as_secs_f64(),
            converged: res.converged,
            iterations: res.iterations,
            diagnostics,
        },
        res.log,
    ))
}

#[cfg(test)]
mod tests;
