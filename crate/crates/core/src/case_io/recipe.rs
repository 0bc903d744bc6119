//! Seeded synthesis of the shipped benchmark cases.
//!
//! Topology and branch impedances come from public test systems (Wood &
//! Wollenberg 6-bus, MATPOWER case9, IEEE 14-bus) plus a synthetic 6-bus
//! radial feeder. Everything time-dependent is synthetic:
//!
//! * load level `λ_t = 0.85 + 0.15 sin(2πt/H) + U(-0.02, 0.02)`, applied to
//!   every load's nominal `P`; reactive power follows the nominal power
//!   factor through `q_ratio`;
//! * price multiplier `m_t = 1 + 0.25 cos(2πt/H) + U(-0.05, 0.05)` scaling
//!   `a` and `b` of each generator (gen cases);
//! * renewable availability `ρ_t = 0.35 + 0.6 sin²(πt/H + φ)` with a
//!   per-unit phase `φ ~ U(0, 0.5)` (curt cases);
//! * flexible loads modulate `w ~ U(0.2, 0.4)` around their baseline, with a
//!   fee equal to `U(0.005, 0.03)` times a reference price times the
//!   baseline energy.
//!
//! Branches without resistance get `r = 0.01 x` so that every link has a
//! positive conductance. Shunts are dropped.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::case_file::*;
use crate::error::{Error, Result};

pub const RECIPE_SEED: u64 = 20_130;
pub const RECIPE_HORIZON: usize = 8;

/// `(from, to, r, x)` in per unit.
type Branch = (u32, u32, f64, f64);

struct Network {
    tag: &'static str,
    n_bus: u32,
    v: (f64, f64),
    branches: &'static [Branch],
    /// `(bus, P, Q, flexible)`
    loads: &'static [(u32, f64, f64, bool)],
    /// `(bus, p_min, p_max, q_min, q_max, a, b, c)`, the first is the slack.
    gens: &'static [(u32, f64, f64, f64, f64, f64, f64, f64)],
    /// Exchange limits of the slack in curtailment cases.
    exchange: (f64, f64),
}

const WW6: Network = Network {
    tag: "A",
    n_bus: 6,
    v: (0.9, 1.1),
    branches: &[
        (1, 2, 0.10, 0.20),
        (1, 4, 0.05, 0.20),
        (1, 5, 0.08, 0.30),
        (2, 3, 0.05, 0.25),
        (2, 4, 0.05, 0.10),
        (2, 5, 0.10, 0.30),
        (2, 6, 0.07, 0.20),
        (3, 5, 0.12, 0.26),
        (3, 6, 0.02, 0.10),
        (4, 5, 0.20, 0.40),
        (5, 6, 0.10, 0.30),
    ],
    loads: &[(4, 0.7, 0.7, true), (5, 0.7, 0.7, true), (6, 0.7, 0.7, true)],
    gens: &[
        (1, 0.5, 2.0, -1.0, 1.5, 53.3, 1166.9, 213.1),
        (2, 0.375, 1.5, -1.0, 1.5, 88.9, 1033.3, 200.0),
        (3, 0.45, 1.8, -1.0, 1.5, 74.1, 1083.3, 240.0),
    ],
    exchange: (-0.5, 2.0),
};

const CASE9: Network = Network {
    tag: "B",
    n_bus: 9,
    v: (0.9, 1.1),
    branches: &[
        (1, 4, 0.0, 0.0576),
        (4, 5, 0.017, 0.092),
        (5, 6, 0.039, 0.17),
        (3, 6, 0.0, 0.0586),
        (6, 7, 0.0119, 0.1008),
        (7, 8, 0.0085, 0.072),
        (8, 2, 0.0, 0.0625),
        (8, 9, 0.032, 0.161),
        (9, 4, 0.01, 0.085),
    ],
    loads: &[(5, 0.9, 0.3, true), (7, 1.0, 0.35, true), (9, 1.25, 0.5, true)],
    gens: &[
        (1, 0.1, 2.5, -3.0, 3.0, 1100.0, 500.0, 150.0),
        (2, 0.1, 3.0, -3.0, 3.0, 850.0, 120.0, 600.0),
        (3, 0.1, 2.7, -3.0, 3.0, 1225.0, 100.0, 335.0),
    ],
    exchange: (-0.5, 2.5),
};

const IEEE14: Network = Network {
    tag: "C",
    n_bus: 14,
    v: (0.94, 1.06),
    branches: &[
        (1, 2, 0.01938, 0.05917),
        (1, 5, 0.05403, 0.22304),
        (2, 3, 0.04699, 0.19797),
        (2, 4, 0.05811, 0.17632),
        (2, 5, 0.05695, 0.17388),
        (3, 4, 0.06701, 0.17103),
        (4, 5, 0.01335, 0.04211),
        (4, 7, 0.0, 0.20912),
        (4, 9, 0.0, 0.55618),
        (5, 6, 0.0, 0.25202),
        (6, 11, 0.09498, 0.19890),
        (6, 12, 0.12291, 0.25581),
        (6, 13, 0.06615, 0.13027),
        (7, 8, 0.0, 0.17615),
        (7, 9, 0.0, 0.11001),
        (9, 10, 0.03181, 0.08450),
        (9, 14, 0.12711, 0.27038),
        (10, 11, 0.08205, 0.19207),
        (12, 13, 0.22092, 0.19988),
        (13, 14, 0.17093, 0.34802),
    ],
    loads: &[
        (2, 0.217, 0.127, false),
        (3, 0.942, 0.19, true),
        (4, 0.478, -0.039, true),
        (5, 0.076, 0.016, false),
        (6, 0.112, 0.075, false),
        (9, 0.295, 0.166, true),
        (10, 0.09, 0.058, false),
        (11, 0.035, 0.018, false),
        (12, 0.061, 0.016, false),
        (13, 0.135, 0.058, false),
        (14, 0.149, 0.05, true),
    ],
    gens: &[
        (1, 0.0, 3.324, -1.0, 1.0, 430.293, 2000.0, 0.0),
        (2, 0.0, 1.4, -0.4, 0.5, 2500.0, 2000.0, 0.0),
        (3, 0.0, 1.0, -0.2, 0.4, 100.0, 4000.0, 0.0),
        (6, 0.0, 1.0, -0.06, 0.24, 100.0, 4000.0, 0.0),
        (8, 0.0, 1.0, -0.06, 0.24, 100.0, 4000.0, 0.0),
    ],
    exchange: (-0.5, 3.0),
};

const RADIAL6: Network = Network {
    tag: "D",
    n_bus: 6,
    v: (0.95, 1.05),
    branches: &[
        (1, 2, 0.005, 0.05),
        (2, 3, 0.03, 0.04),
        (3, 4, 0.03, 0.04),
        (4, 5, 0.04, 0.05),
        (3, 6, 0.05, 0.06),
    ],
    loads: &[(2, 0.4, 0.1, false), (4, 0.6, 0.2, true), (5, 0.3, 0.1, false), (6, 0.5, 0.15, true)],
    gens: &[
        (1, 0.0, 0.0, -2.0, 2.0, 0.0, 0.0, 0.0),
        (5, 0.0, 2.5, -0.5, 0.5, 0.0, 0.0, 0.0),
    ],
    exchange: (-1.0, 3.0),
};

const C_CURT: f64 = 100.0;
const C_LOSSES: f64 = 50.0;

fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn admittance(r: f64, x: f64) -> (f64, f64) {
    let r = if r == 0.0 { 0.01 * x } else { r };
    let den = r * r + x * x;
    (round6(r / den), round6(-x / den))
}

fn bus_id(b: u32) -> String {
    b.to_string()
}

fn build(net: &Network, gen_case: bool, seed: u64) -> CaseFile {
    let h = RECIPE_HORIZON;
    let stream = net.tag.as_bytes()[0] as u64 * 2 + gen_case as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let lambda: Vec<f64> = (0..h)
        .map(|t| 0.85 + 0.15 * (2.0 * PI * t as f64 / h as f64).sin() + rng.gen_range(-0.02..0.02))
        .collect();
    let price: Vec<f64> = (0..h)
        .map(|t| 1.0 + 0.25 * (2.0 * PI * t as f64 / h as f64).cos() + rng.gen_range(-0.05..0.05))
        .collect();
    let price_ref = net.gens.iter().map(|g| g.6).fold(0.0, f64::max).max(1.0);

    let buses = (1..=net.n_bus)
        .map(|b| BusEntry {
            id: bus_id(b),
            v_min: net.v.0,
            v_max: net.v.1,
        })
        .collect();
    let links = net
        .branches
        .iter()
        .map(|&(f, t, r, x)| {
            let (g, b) = admittance(r, x);
            LinkEntry {
                from: bus_id(f),
                to: bus_id(t),
                g,
                b,
            }
        })
        .collect();

    let mut devices = Vec::new();
    for (k, &(bus, pmin, pmax, qmin, qmax, a, b, c)) in net.gens.iter().enumerate() {
        let slack = k == 0;
        let mut d = DeviceEntry {
            id: format!("G{bus}"),
            kind: KindEntry::Generator,
            bus: bus_id(bus),
            p_min: vec![pmin; h],
            p_max: vec![pmax; h],
            q_min: Some(qmin),
            q_max: Some(qmax),
            q_ratio: None,
            curtailable: false,
            cost: None,
            flex: None,
        };
        if gen_case {
            d.cost = Some(CostEntry {
                a: price.iter().map(|m| round6(a * m)).collect(),
                b: price.iter().map(|m| round6(b * m)).collect(),
                c: vec![c; h],
            });
        } else if slack {
            d.id = format!("X{bus}");
            d.p_min = vec![net.exchange.0; h];
            d.p_max = vec![net.exchange.1; h];
        } else {
            let phase: f64 = rng.gen_range(0.0..0.5);
            d.p_min = vec![0.0; h];
            d.p_max = (0..h)
                .map(|t| {
                    let s = (PI * t as f64 / h as f64 + phase).sin();
                    round6(pmax * (0.35 + 0.6 * s * s))
                })
                .collect();
            d.curtailable = true;
        }
        devices.push(d);
    }
    for &(bus, p, q, flexible) in net.loads {
        let baseline: Vec<f64> = lambda.iter().map(|l| round6(-p * l)).collect();
        let q_ratio = Some(round6(q / p));
        if flexible {
            let w: f64 = rng.gen_range(0.2..0.4);
            let energy: f64 = baseline.iter().map(|v| -v).sum();
            let unit = if gen_case { price_ref } else { C_CURT };
            let fee = round6(rng.gen_range(0.005..0.03) * unit * energy);
            devices.push(DeviceEntry {
                id: format!("F{bus}"),
                kind: KindEntry::FlexibleLoad,
                bus: bus_id(bus),
                p_min: baseline.iter().map(|v| round6(v * (1.0 + w))).collect(),
                p_max: baseline.iter().map(|v| round6(v * (1.0 - w))).collect(),
                q_min: None,
                q_max: None,
                q_ratio,
                curtailable: false,
                cost: None,
                flex: Some(FlexEntry { baseline, fee }),
            });
        } else {
            devices.push(DeviceEntry {
                id: format!("L{bus}"),
                kind: KindEntry::StaticLoad,
                bus: bus_id(bus),
                p_min: baseline.clone(),
                p_max: baseline,
                q_min: None,
                q_max: None,
                q_ratio,
                curtailable: false,
                cost: None,
                flex: None,
            });
        }
    }

    CaseFile {
        schema_version: SCHEMA_VERSION,
        name: format!("{}_{}", net.tag, if gen_case { "gen" } else { "curt" }),
        horizon: h,
        cost: if gen_case { CostSelector::Gen } else { CostSelector::Curt },
        curtailment: (!gen_case).then_some(CurtailmentSection {
            c_curt: C_CURT,
            c_losses: C_LOSSES,
        }),
        recipe_seed: Some(seed),
        buses,
        links,
        devices,
        capability: Vec::new(),
    }
}

/// The seven (network, cost) pairs of the benchmark.
pub fn shipped_cases(seed: u64) -> Vec<CaseFile> {
    let mut out = Vec::new();
    for net in [&WW6, &CASE9, &IEEE14] {
        out.push(build(net, true, seed));
    }
    for net in [&WW6, &CASE9, &IEEE14, &RADIAL6] {
        out.push(build(net, false, seed));
    }
    out
}

/// Writes `<name>.toml` for each shipped case into `dir`.
pub fn write_cases(dir: &Path, seed: u64) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for case in shipped_cases(seed) {
        let path = dir.join(format!("{}.toml", case.name));
        std::fs::write(&path, case.to_toml_string()).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeviceKind;

    #[test]
    fn shipped_sizes() {
        let cases = shipped_cases(RECIPE_SEED);
        let names: Vec<_> = cases.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["A_gen", "B_gen", "C_gen", "A_curt", "B_curt", "C_curt", "D_curt"]);
        let expect = [(6, 3, 3), (9, 3, 3), (14, 5, 4), (6, 3, 3), (9, 3, 3), (14, 5, 4), (6, 2, 2)];
        for (case, (nb, ng, nf)) in cases.iter().zip(expect) {
            let inst = case.to_instance(None, &case.name).unwrap();
            assert_eq!(inst.n_buses(), nb, "{}", case.name);
            assert_eq!(inst.n_generators(), ng, "{}", case.name);
            assert_eq!(inst.flex.len(), nf, "{}", case.name);
            assert!(inst.devices.iter().all(|d| d.kind != DeviceKind::Generator || d.p_min.iter().all(|v| v.is_finite())));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(shipped_cases(3), shipped_cases(3));
        assert_ne!(shipped_cases(3), shipped_cases(4));
    }
}
