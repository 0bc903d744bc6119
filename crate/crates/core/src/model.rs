//! Problem data and evaluators for the multi-period OPF with flexible loads.
//!
//! Conventions: per-unit electrical quantities; injections are positive
//! from device to network, so loads carry negative `P`. Capability rows
//! address the column `2k` for `P_k` and `2k + 1` for `Q_k`.

use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    /// Series conductance (p.u.), strictly positive.
    pub g: f64,
    /// Series susceptance (p.u.), negative for inductive links.
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub links: Vec<Link>,
    /// `neighbors[i]` lists `(j, link index)`.
    pub neighbors: Vec<Vec<(usize, usize)>>,
}

impl Network {
    pub fn new(buses: Vec<Bus>, links: Vec<Link>) -> Result<Self> {
        let n = buses.len();
        if n == 0 {
            return Err(Error::invariant("network", "no buses"));
        }
        let mut neighbors = vec![Vec::new(); n];
        let mut seen = HashSet::new();
        for (l, link) in links.iter().enumerate() {
            if link.from >= n || link.to >= n {
                return Err(Error::invariant("link endpoints", format!("link {l} references a missing bus")));
            }
            if link.from == link.to {
                return Err(Error::invariant("no self-loops", format!("link {l} connects bus {} to itself", buses[link.from].id)));
            }
            let key = (link.from.min(link.to), link.from.max(link.to));
            if !seen.insert(key) {
                return Err(Error::invariant(
                    "at most one link per bus pair",
                    format!("duplicate link between {} and {}", buses[key.0].id, buses[key.1].id),
                ));
            }
            if !(link.g > 0.0) || !link.g.is_finite() || !link.b.is_finite() {
                return Err(Error::invariant(
                    "positive link conductance (loss-flow conservation divides by g)",
                    format!("link {}-{} has g = {}", buses[link.from].id, buses[link.to].id, link.g),
                ));
            }
            neighbors[link.from].push((link.to, l));
            neighbors[link.to].push((link.from, l));
        }
        for bus in &buses {
            if !(bus.v_min > 0.0 && bus.v_min <= bus.v_max && bus.v_max.is_finite()) {
                return Err(Error::invariant(
                    "0 < V_min <= V_max",
                    format!("bus {} has limits [{}, {}]", bus.id, bus.v_min, bus.v_max),
                ));
            }
        }
        let net = Network { buses, links, neighbors };
        if !net.is_connected() {
            return Err(Error::invariant("connected network", "some buses are unreachable"));
        }
        Ok(net)
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &(j, _) in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceKind {
    Generator,
    StaticLoad,
    FlexibleLoad,
}

impl DeviceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::Generator => "generator",
            DeviceKind::StaticLoad => "static-load",
            DeviceKind::FlexibleLoad => "flexible-load",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub id: String,
    pub bus: usize,
    pub kind: DeviceKind,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    /// Counted in the curtailment term of the curtailment objective.
    pub curtailable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexLoad {
    pub device: usize,
    /// Baseline injection per period (non-positive).
    pub baseline: Vec<f64>,
    pub fee: f64,
}

/// One row of the global capability system `𝔸 (P; Q) ≤ 𝒂`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapabilityRow {
    /// `(column, coefficient)` with column `2k` for `P_k`, `2k + 1` for `Q_k`.
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostSpec {
    /// `Σ_t Σ_g a P² + b P + c`, coefficients indexed `[device][t]`
    /// (zero for non-generators).
    Gen { a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, c: Vec<Vec<f64>> },
    /// `Σ_t c_curt Σ_g (P̄ − P) + c_losses Σ_d P_d`.
    Curt { c_curt: f64, c_losses: f64 },
}

impl CostSpec {
    pub fn kind(&self) -> CostKind {
        match self {
            CostSpec::Gen { .. } => CostKind::Gen,
            CostSpec::Curt { .. } => CostKind::Curt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CostKind {
    Gen,
    Curt,
}

impl CostKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CostKind::Gen => "gen",
            CostKind::Curt => "curt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub network: Network,
    pub devices: Vec<Device>,
    pub flex: Vec<FlexLoad>,
    pub horizon: usize,
    pub capability: Vec<CapabilityRow>,
    pub cost: CostSpec,
}

/// Per-term quadratic cost `a P² + b P + c` of one device in one period.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadTerm {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Instance {
    pub fn validate(&self) -> Result<()> {
        let t = self.horizon;
        let nb = self.network.n_buses();
        let nd = self.devices.len();
        if t == 0 {
            return Err(Error::invariant("horizon >= 1", "horizon is zero"));
        }
        for dev in &self.devices {
            if dev.bus >= nb {
                return Err(Error::invariant("device bus exists", format!("device {} references a missing bus", dev.id)));
            }
            for arr in [&dev.p_min, &dev.p_max] {
                if arr.len() != t {
                    return Err(Error::Dimension {
                        context: "device per-period bounds",
                        expected: t,
                        actual: arr.len(),
                    });
                }
            }
            for k in 0..t {
                if !(dev.p_min[k] <= dev.p_max[k]) || !dev.p_min[k].is_finite() || !dev.p_max[k].is_finite() {
                    return Err(Error::invariant(
                        "P_min <= P_max",
                        format!("device {} period {k}: [{}, {}]", dev.id, dev.p_min[k], dev.p_max[k]),
                    ));
                }
            }
        }
        let mut flex_seen = HashSet::new();
        for fl in &self.flex {
            if fl.device >= nd {
                return Err(Error::invariant("flex device exists", "flexible load references a missing device"));
            }
            let dev = &self.devices[fl.device];
            if dev.kind != DeviceKind::FlexibleLoad || !flex_seen.insert(fl.device) {
                return Err(Error::invariant(
                    "flex block attached once to a flexible-load device",
                    format!("device {}", dev.id),
                ));
            }
            if fl.baseline.len() != t {
                return Err(Error::Dimension {
                    context: "flexible load baseline",
                    expected: t,
                    actual: fl.baseline.len(),
                });
            }
            for k in 0..t {
                let bl = fl.baseline[k];
                if !(dev.p_min[k] <= bl && bl <= dev.p_max[k]) {
                    return Err(Error::invariant(
                        "P_min <= baseline <= P_max",
                        format!("device {} period {k}: baseline {bl} outside [{}, {}]", dev.id, dev.p_min[k], dev.p_max[k]),
                    ));
                }
            }
            if !(fl.fee >= 0.0) || !fl.fee.is_finite() {
                return Err(Error::invariant("fee >= 0", format!("device {} has fee {}", dev.id, fl.fee)));
            }
        }
        for dev in self.devices.iter().enumerate() {
            if dev.1.kind == DeviceKind::FlexibleLoad && !flex_seen.contains(&dev.0) {
                return Err(Error::invariant("flexible load has flex block", format!("device {}", dev.1.id)));
            }
        }
        for row in &self.capability {
            if row.coeffs.iter().any(|&(c, v)| c >= 2 * nd || !v.is_finite()) || !row.rhs.is_finite() {
                return Err(Error::invariant("capability rows", "column out of range or non-finite entry"));
            }
        }
        if let CostSpec::Gen { a, b, c } = &self.cost {
            for arr in [a, b, c] {
                if arr.len() != nd || arr.iter().any(|r| r.len() != t) {
                    return Err(Error::Dimension {
                        context: "generation cost coefficients",
                        expected: nd,
                        actual: arr.len(),
                    });
                }
            }
            if a.iter().flatten().any(|&v| !(v >= 0.0)) {
                return Err(Error::invariant("convex generation cost", "negative quadratic coefficient"));
            }
        }
        Ok(())
    }

    pub fn n_buses(&self) -> usize {
        self.network.n_buses()
    }

    pub fn n_devices(&self) -> usize {
        self.devices.len()
    }

    /// Flexible-load index of every device.
    pub fn flex_index(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.devices.len()];
        for (k, fl) in self.flex.iter().enumerate() {
            out[fl.device] = Some(k);
        }
        out
    }

    pub fn n_generators(&self) -> usize {
        self.devices.iter().filter(|d| d.kind == DeviceKind::Generator).count()
    }

    /// Cost term of device `k` in period `t` (linear in `P` for the
    /// curtailment objective, constant parts folded in `c`).
    pub fn cost_term(&self, k: usize, t: usize) -> QuadTerm {
        match &self.cost {
            CostSpec::Gen { a, b, c } => QuadTerm {
                a: a[k][t],
                b: b[k][t],
                c: c[k][t],
            },
            CostSpec::Curt { c_curt, c_losses } => {
                let dev = &self.devices[k];
                let mut term = QuadTerm {
                    a: 0.0,
                    b: *c_losses,
                    c: 0.0,
                };
                if dev.kind == DeviceKind::Generator && dev.curtailable {
                    term.b -= c_curt;
                    term.c += c_curt * dev.p_max[t];
                }
                term
            }
        }
    }

    /// `(𝕄 v)_i` for a per-device vector.
    pub fn bus_sum(&self, per_device: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_buses()];
        for (dev, v) in self.devices.iter().zip(per_device) {
            out[dev.bus] += v;
        }
        out
    }

    pub fn v_min_sq(&self) -> Vec<f64> {
        self.network.buses.iter().map(|b| b.v_min * b.v_min).collect()
    }

    pub fn v_max_sq(&self) -> Vec<f64> {
        self.network.buses.iter().map(|b| b.v_max * b.v_max).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    /// `[t][device]`
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    /// Activation per flexible load; relaxed points may hold fractional values.
    pub d: Vec<f64>,
    /// `[t][bus]`
    pub e: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

impl OperatingPoint {
    /// Flat voltage `v + 0j`, zero injections and `d = 0`.
    pub fn flat(inst: &Instance, v: f64) -> Self {
        let (t, nd, nb) = (inst.horizon, inst.n_devices(), inst.n_buses());
        Self {
            p: vec![vec![0.0; nd]; t],
            q: vec![vec![0.0; nd]; t],
            d: vec![0.0; inst.flex.len()],
            e: vec![vec![v; nb]; t],
            f: vec![vec![0.0; nb]; t],
        }
    }

    pub fn check_dims(&self, inst: &Instance) -> Result<()> {
        let (t, nd, nb) = (inst.horizon, inst.n_devices(), inst.n_buses());
        let dims = [
            ("operating point periods (P)", t, self.p.len()),
            ("operating point periods (Q)", t, self.q.len()),
            ("operating point periods (e)", t, self.e.len()),
            ("operating point periods (f)", t, self.f.len()),
            ("operating point activations", inst.flex.len(), self.d.len()),
        ];
        for (ctx, expected, actual) in dims {
            if expected != actual {
                return Err(Error::Dimension {
                    context: ctx,
                    expected,
                    actual,
                });
            }
        }
        for k in 0..t {
            for (ctx, expected, actual) in [
                ("operating point devices (P)", nd, self.p[k].len()),
                ("operating point devices (Q)", nd, self.q[k].len()),
                ("operating point buses (e)", nb, self.e[k].len()),
                ("operating point buses (f)", nb, self.f[k].len()),
            ] {
                if expected != actual {
                    return Err(Error::Dimension {
                        context: ctx,
                        expected,
                        actual,
                    });
                }
            }
        }
        Ok(())
    }

    /// True when every activation is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.d.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Flows on link `(i, j)` seen from `i`: `(P_ij, Q_ij, Ploss_ij)`.
pub fn link_flows(g: f64, b: f64, ei: f64, fi: f64, ej: f64, fj: f64) -> (f64, f64, f64) {
    let sq = ei * ei + fi * fi;
    let re = ei * ej + fi * fj;
    let im = ei * fj - fi * ej;
    let p = g * (sq - re) + b * im;
    let q = b * (re - sq) + g * im;
    let loss = g * (ei * ei + ej * ej + fi * fi + fj * fj - 2.0 * ei * ej - 2.0 * fi * fj);
    (p, q, loss)
}

/// Network-side injections `(Σ_j P_ij, Σ_j Q_ij)` per bus for one period.
pub fn bus_flows(net: &Network, e: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = net.n_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for &(j, l) in &net.neighbors[i] {
            let link = &net.links[l];
            let (pij, qij, _) = link_flows(link.g, link.b, e[i], f[i], e[j], f[j]);
            p[i] += pij;
            q[i] += qij;
        }
    }
    (p, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BusResidual {
    pub p: f64,
    pub q: f64,
    pub vlo: f64,
    pub vhi: f64,
}

impl BusResidual {
    pub fn max_abs(&self) -> f64 {
        self.p.abs().max(self.q.abs()).max(self.vlo).max(self.vhi)
    }

    pub fn squared(&self) -> f64 {
        self.p * self.p + self.q * self.q + self.vlo * self.vlo + self.vhi * self.vhi
    }
}

/// Residuals of the balance and voltage-magnitude constraints, `[t][bus]`.
pub fn pf_residuals(x: &OperatingPoint, inst: &Instance) -> Result<Vec<Vec<BusResidual>>> {
    x.check_dims(inst)?;
    let vmin = inst.v_min_sq();
    let vmax = inst.v_max_sq();
    let mut out = Vec::with_capacity(inst.horizon);
    for t in 0..inst.horizon {
        let inj_p = inst.bus_sum(&x.p[t]);
        let inj_q = inst.bus_sum(&x.q[t]);
        let (fp, fq) = bus_flows(&inst.network, &x.e[t], &x.f[t]);
        let row = (0..inst.n_buses())
            .map(|i| {
                let m = x.e[t][i] * x.e[t][i] + x.f[t][i] * x.f[t][i];
                BusResidual {
                    p: inj_p[i] - fp[i],
                    q: inj_q[i] - fq[i],
                    vlo: (vmin[i] - m).max(0.0),
                    vhi: (m - vmax[i]).max(0.0),
                }
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

/// Sum of squared residuals of the balance and voltage constraints.
pub fn infeasibility(x: &OperatingPoint, inst: &Instance) -> Result<f64> {
    Ok(pf_residuals(x, inst)?.iter().flatten().map(BusResidual::squared).sum())
}

/// `f(P) + c_f · d`.
pub fn objective(x: &OperatingPoint, inst: &Instance) -> Result<f64> {
    x.check_dims(inst)?;
    let mut v = 0.0;
    for t in 0..inst.horizon {
        for k in 0..inst.n_devices() {
            let c = inst.cost_term(k, t);
            let p = x.p[t][k];
            v += c.a * p * p + c.b * p + c.c;
        }
    }
    for (fl, d) in inst.flex.iter().zip(&x.d) {
        v += fl.fee * d;
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexReport {
    /// `Σ_t (P_k − P_bl,k)` per flexible load.
    pub energy: Vec<f64>,
    /// Bound violation `[t][k]` of the modulation limits (≥ 0).
    pub bounds: Vec<Vec<f64>>,
    pub max_violation: f64,
    pub feasible: bool,
}

pub fn flex_constraints_check(x: &OperatingPoint, inst: &Instance, tol: f64) -> Result<FlexReport> {
    x.check_dims(inst)?;
    let t_len = inst.horizon;
    let mut energy = Vec::with_capacity(inst.flex.len());
    let mut bounds = vec![vec![0.0; inst.flex.len()]; t_len];
    let mut worst: f64 = 0.0;
    for (k, fl) in inst.flex.iter().enumerate() {
        let dev = &inst.devices[fl.device];
        let d = x.d[k];
        let mut sum = 0.0;
        for t in 0..t_len {
            let p = x.p[t][fl.device];
            sum += p - fl.baseline[t];
            let lo = (1.0 - d) * fl.baseline[t] + d * dev.p_min[t];
            let hi = (1.0 - d) * fl.baseline[t] + d * dev.p_max[t];
            let v = (lo - p).max(p - hi).max(0.0);
            bounds[t][k] = v;
            worst = worst.max(v);
        }
        worst = worst.max(sum.abs());
        energy.push(sum);
    }
    Ok(FlexReport {
        energy,
        bounds,
        max_violation: worst,
        feasible: worst <= tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub max_violation: f64,
    pub feasible: bool,
}

/// Largest violation of `𝔸 (P; Q) ≤ 𝒂` over all periods.
pub fn capability_check(x: &OperatingPoint, inst: &Instance, tol: f64) -> Result<CheckReport> {
    x.check_dims(inst)?;
    let mut worst: f64 = 0.0;
    for t in 0..inst.horizon {
        for row in &inst.capability {
            let lhs: f64 = row
                .coeffs
                .iter()
                .map(|&(c, a)| a * if c % 2 == 0 { x.p[t][c / 2] } else { x.q[t][c / 2] })
                .sum();
            worst = worst.max(lhs - row.rhs);
        }
    }
    Ok(CheckReport {
        max_violation: worst,
        feasible: worst <= tol,
    })
}

/// Largest violation of the active power boxes.
pub fn bounds_check(x: &OperatingPoint, inst: &Instance, tol: f64) -> Result<CheckReport> {
    x.check_dims(inst)?;
    let mut worst: f64 = 0.0;
    for t in 0..inst.horizon {
        for (k, dev) in inst.devices.iter().enumerate() {
            let p = x.p[t][k];
            worst = worst.max(dev.p_min[t] - p).max(p - dev.p_max[t]);
        }
    }
    Ok(CheckReport {
        max_violation: worst,
        feasible: worst <= tol,
    })
}

/// Full feasibility of a point for the original mixed-integer problem.
pub fn is_feasible(x: &OperatingPoint, inst: &Instance, tol: f64) -> Result<bool> {
    if !x.is_binary() {
        return Ok(false);
    }
    let pf = pf_residuals(x, inst)?
        .iter()
        .flatten()
        .all(|r| r.max_abs() <= tol);
    Ok(pf
        && bounds_check(x, inst, tol)?.feasible
        && capability_check(x, inst, tol)?.feasible
        && flex_constraints_check(x, inst, tol)?.feasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn two_bus(g: f64, b: f64) -> Instance {
        let buses = vec![
            Bus {
                id: "1".into(),
                v_min: 0.9,
                v_max: 1.1,
            },
            Bus {
                id: "2".into(),
                v_min: 0.9,
                v_max: 1.1,
            },
        ];
        let network = Network::new(buses, vec![Link { from: 0, to: 1, g, b }]).unwrap();
        Instance {
            name: "two-bus".into(),
            network,
            devices: vec![
                Device {
                    id: "g1".into(),
                    bus: 0,
                    kind: DeviceKind::Generator,
                    p_min: vec![0.0],
                    p_max: vec![1.0],
                    curtailable: true,
                },
                Device {
                    id: "l2".into(),
                    bus: 1,
                    kind: DeviceKind::StaticLoad,
                    p_min: vec![-0.0592],
                    p_max: vec![-0.0592],
                    curtailable: false,
                },
            ],
            flex: vec![],
            horizon: 1,
            capability: vec![],
            cost: CostSpec::Gen {
                a: vec![vec![1.0], vec![0.0]],
                b: vec![vec![2.0], vec![0.0]],
                c: vec![vec![3.0], vec![0.0]],
            },
        }
    }

    #[test]
    fn flat_profile_has_zero_residuals() {
        let inst = two_bus(1.0, -2.0);
        let x = OperatingPoint::flat(&inst, 1.0);
        assert_eq!(infeasibility(&x, &inst).unwrap(), 0.0);
    }

    #[test]
    fn two_bus_balance_residual() {
        let inst = two_bus(1.0, -2.0);
        let mut x = OperatingPoint::flat(&inst, 1.0);
        x.e[0] = vec![1.0, 0.98];
        x.f[0] = vec![0.0, -0.02];
        x.p[0][0] = 0.06;
        let r = pf_residuals(&x, &inst).unwrap();
        assert!(r[0][0].p.abs() < 1e-15);
        // bus 2 receives P_21 = −0.0592
        x.p[0][1] = -0.0592;
        let r = pf_residuals(&x, &inst).unwrap();
        assert!(r[0][1].p.abs() < 1e-15);
    }

    #[test]
    fn voltage_boundary_and_single_violation() {
        let inst = two_bus(1.0, -2.0);
        let mut x = OperatingPoint::flat(&inst, 1.1);
        let r = pf_residuals(&x, &inst).unwrap();
        assert_eq!(r[0][0].vhi, 0.0);
        // |V|² exceeds V̄² by exactly 0.1 at one bus
        x.e[0] = vec![(1.21f64 + 0.1).sqrt(), (1.21f64 + 0.1).sqrt()];
        x.e[0][1] = 1.1;
        let v = pf_residuals(&x, &inst).unwrap()[0][0].vhi;
        assert!((v - 0.1).abs() < 1e-12);
    }

    #[test]
    fn objective_examples() {
        let inst = two_bus(1.0, -2.0);
        let mut x = OperatingPoint::flat(&inst, 1.0);
        x.p[0][0] = 2.0;
        assert_eq!(objective(&x, &inst).unwrap(), 11.0);

        let mut curt = inst.clone();
        curt.cost = CostSpec::Curt {
            c_curt: 10.0,
            c_losses: 1.0,
        };
        x.p[0][0] = 0.8;
        x.p[0][1] = -0.85;
        assert!((objective(&x, &curt).unwrap() - 1.95).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_conductance() {
        let buses = vec![
            Bus {
                id: "a".into(),
                v_min: 1.0,
                v_max: 1.0,
            },
            Bus {
                id: "b".into(),
                v_min: 1.0,
                v_max: 1.0,
            },
        ];
        let err = Network::new(buses, vec![Link { from: 0, to: 1, g: 0.0, b: -1.0 }]).unwrap_err();
        assert!(err.to_string().contains("conductance"));
    }

    fn flex_instance() -> Instance {
        let mut inst = two_bus(1.0, -2.0);
        inst.horizon = 2;
        for dev in &mut inst.devices {
            dev.p_min = vec![dev.p_min[0]; 2];
            dev.p_max = vec![dev.p_max[0]; 2];
        }
        inst.devices.push(Device {
            id: "f2".into(),
            bus: 1,
            kind: DeviceKind::FlexibleLoad,
            p_min: vec![-0.5, -0.5],
            p_max: vec![-0.1, -0.1],
            curtailable: false,
        });
        inst.flex.push(FlexLoad {
            device: 2,
            baseline: vec![-0.3, -0.3],
            fee: 1.0,
        });
        inst.cost = CostSpec::Curt {
            c_curt: 1.0,
            c_losses: 1.0,
        };
        inst.validate().unwrap();
        inst
    }

    #[test]
    fn flex_checks() {
        let inst = flex_instance();
        let mut x = OperatingPoint::flat(&inst, 1.0);
        x.p[0][2] = -0.3;
        x.p[1][2] = -0.3;
        let rep = flex_constraints_check(&x, &inst, 1e-9).unwrap();
        assert!(rep.feasible);

        x.d[0] = 1.0;
        x.p[0][2] = -0.2;
        x.p[1][2] = -0.2;
        let rep = flex_constraints_check(&x, &inst, 1e-9).unwrap();
        assert!((rep.energy[0] - 0.2).abs() < 1e-12);

        x.d[0] = 0.0;
        x.p[0][2] = -0.3;
        x.p[1][2] = -0.2;
        let rep = flex_constraints_check(&x, &inst, 1e-9).unwrap();
        assert!((rep.bounds[1][0] - 0.1).abs() < 1e-12);
        assert_eq!(rep.bounds[0][0], 0.0);
    }

    #[test]
    fn capability_examples() {
        let mut inst = two_bus(1.0, -2.0);
        inst.capability.push(CapabilityRow {
            coeffs: vec![(0, 1.0)],
            rhs: 1.0,
        });
        let mut x = OperatingPoint::flat(&inst, 1.0);
        assert_eq!(capability_check(&x, &inst, 0.0).unwrap().max_violation, 0.0);
        x.p[0][0] = 2.0;
        assert_eq!(capability_check(&x, &inst, 0.0).unwrap().max_violation, 1.0);
    }

    #[test]
    fn objective_invariant_under_device_permutation() {
        let inst = flex_instance();
        let mut x = OperatingPoint::flat(&inst, 1.0);
        x.p = vec![vec![0.4, -0.0592, -0.25], vec![0.3, -0.0592, -0.35]];
        x.d = vec![1.0];
        let v = objective(&x, &inst).unwrap();
        // reverse device order
        let perm = [2usize, 1, 0];
        let mut inst2 = inst.clone();
        inst2.devices = perm.iter().map(|&k| inst.devices[k].clone()).collect();
        inst2.flex[0].device = 0;
        let mut x2 = x.clone();
        for t in 0..2 {
            x2.p[t] = perm.iter().map(|&k| x.p[t][k]).collect();
        }
        assert!((objective(&x2, &inst2).unwrap() - v).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn residuals_match_direct_two_bus_evaluation(
            e1 in -1.2f64..1.2, f1 in -1.2f64..1.2, e2 in -1.2f64..1.2, f2 in -1.2f64..1.2,
            g in 0.1f64..5.0, b in -5.0f64..5.0,
        ) {
            let inst = two_bus(g, b);
            let mut x = OperatingPoint::flat(&inst, 1.0);
            x.e[0] = vec![e1, e2];
            x.f[0] = vec![f1, f2];
            x.p[0] = vec![0.0, 0.0];
            let r = pf_residuals(&x, &inst).unwrap();
            // direct expansion of the bus balance at bus 1
            let p1 = g * (e1 * e1 + f1 * f1 - e1 * e2 - f1 * f2) + b * (e1 * f2 - f1 * e2);
            let q1 = b * (e1 * e2 + f1 * f2 - e1 * e1 - f1 * f1) + g * (e1 * f2 - f1 * e2);
            prop_assert!((r[0][0].p + p1).abs() < 1e-12);
            prop_assert!((r[0][0].q + q1).abs() < 1e-12);
        }

        #[test]
        fn zero_infeasibility_iff_small_residuals(v in 0.9f64..1.1, shift in -0.05f64..0.05) {
            let inst = two_bus(1.0, -2.0);
            let mut x = OperatingPoint::flat(&inst, v);
            x.p[0][0] = shift;
            x.p[0][1] = 0.0;
            let inf = infeasibility(&x, &inst).unwrap();
            let all_small = pf_residuals(&x, &inst).unwrap().iter().flatten().all(|r| r.max_abs() <= 1e-9);
            prop_assert_eq!(inf == 0.0, all_small || inf < 1e-18);
        }
    }
}
