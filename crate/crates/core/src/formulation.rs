//! The power block shared by every convex model: injections, activations,
//! the cost `f(P) + c_f·d` and the constraints that do not involve voltages
//! (device bounds, capability rows, flexible-load rows).

use crate::model::Instance;
use crate::numerics::qp::ConvexQp;

#[derive(Debug, Clone)]
pub struct PowerVars {
    /// `[t][device]`
    pub p: Vec<Vec<usize>>,
    pub q: Vec<Vec<usize>>,
    /// One activation per flexible load.
    pub d: Vec<usize>,
}

/// Adds the power block to `qp`. Activations get bounds `[0, 1]`.
pub fn add_power_block(qp: &mut ConvexQp, inst: &Instance) -> PowerVars {
    let t_len = inst.horizon;
    let nd = inst.n_devices();
    let mut p = vec![Vec::with_capacity(nd); t_len];
    let mut q = vec![Vec::with_capacity(nd); t_len];
    for t in 0..t_len {
        for (k, dev) in inst.devices.iter().enumerate() {
            let c = inst.cost_term(k, t);
            let pv = qp.add_var(dev.p_min[t], dev.p_max[t], c.b);
            if c.a != 0.0 {
                qp.add_hessian(pv, pv, 2.0 * c.a);
            }
            qp.offset += c.c;
            p[t].push(pv);
            q[t].push(qp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0));
        }
        for row in &inst.capability {
            let coeffs = row
                .coeffs
                .iter()
                .map(|&(c, a)| (if c % 2 == 0 { p[t][c / 2] } else { q[t][c / 2] }, a))
                .collect();
            qp.add_le(coeffs, row.rhs);
        }
    }
    let mut d = Vec::with_capacity(inst.flex.len());
    for fl in &inst.flex {
        let dev = &inst.devices[fl.device];
        let dv = qp.add_var(0.0, 1.0, fl.fee);
        d.push(dv);
        let energy = (0..t_len).map(|t| (p[t][fl.device], 1.0)).collect();
        qp.add_eq(energy, fl.baseline.iter().sum());
        for t in 0..t_len {
            let (pv, bl) = (p[t][fl.device], fl.baseline[t]);
            qp.add_ge(vec![(pv, 1.0), (dv, -(dev.p_min[t] - bl))], bl);
            qp.add_le(vec![(pv, 1.0), (dv, -(dev.p_max[t] - bl))], bl);
        }
    }
    PowerVars { p, q, d }
}

impl PowerVars {
    pub fn extract(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let pick = |vars: &Vec<Vec<usize>>| vars.iter().map(|row| row.iter().map(|&v| x[v]).collect()).collect();
        (pick(&self.p), pick(&self.q), self.d.iter().map(|&v| x[v]).collect())
    }
}
