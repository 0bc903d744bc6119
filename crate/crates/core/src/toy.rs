//! Small hand-built instances (two periods, two or three buses) used by the
//! tests and as examples of the case format.

use crate::case_io::{
    BusEntry, CaseFile, CostEntry, CostSelector, CurtailmentSection, DeviceEntry, FlexEntry, KindEntry, LinkEntry,
    SCHEMA_VERSION,
};
use crate::model::Instance;

fn bus(id: &str, v_min: f64, v_max: f64) -> BusEntry {
    BusEntry {
        id: id.into(),
        v_min,
        v_max,
    }
}

/// Link from series resistance and reactance.
fn link(from: &str, to: &str, r: f64, x: f64) -> LinkEntry {
    let den = r * r + x * x;
    LinkEntry {
        from: from.into(),
        to: to.into(),
        g: r / den,
        b: -x / den,
    }
}

fn device(id: &str, kind: KindEntry, bus: &str, p_min: &[f64], p_max: &[f64], q: (f64, f64)) -> DeviceEntry {
    DeviceEntry {
        id: id.into(),
        kind,
        bus: bus.into(),
        p_min: p_min.to_vec(),
        p_max: p_max.to_vec(),
        q_min: Some(q.0),
        q_max: Some(q.1),
        q_ratio: None,
        curtailable: false,
        cost: None,
        flex: None,
    }
}

fn case(name: &str, cost: CostSelector, buses: Vec<BusEntry>, links: Vec<LinkEntry>, devices: Vec<DeviceEntry>) -> CaseFile {
    CaseFile {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        horizon: 2,
        curtailment: (cost == CostSelector::Curt).then_some(CurtailmentSection {
            c_curt: 1.0,
            c_losses: 0.5,
        }),
        cost,
        recipe_seed: None,
        buses,
        links,
        devices,
        capability: Vec::new(),
    }
}

/// Generator at bus 1, flexible load at bus 2; cheap energy in period 1
/// makes activation worthwhile.
pub fn two_bus_gen_case() -> CaseFile {
    let mut g = device("G", KindEntry::Generator, "1", &[0.0, 0.0], &[2.0, 2.0], (-1.0, 1.0));
    g.cost = Some(CostEntry {
        a: vec![0.5, 0.5],
        b: vec![1.0, 3.0],
        c: vec![0.0, 0.0],
    });
    let mut f = device("F", KindEntry::FlexibleLoad, "2", &[-0.8, -0.8], &[-0.2, -0.2], (-0.3, 0.3));
    f.flex = Some(FlexEntry {
        baseline: vec![-0.5, -0.5],
        fee: 0.1,
    });
    case(
        "toy2_gen",
        CostSelector::Gen,
        vec![bus("1", 0.95, 1.05), bus("2", 0.95, 1.05)],
        vec![link("1", "2", 0.05, 0.1)],
        vec![g, f],
    )
}

/// Radial 1-2-3 feeder with a static load at bus 2 and a costly flexible
/// load at the end of the line.
pub fn three_bus_gen_case() -> CaseFile {
    let mut g = device("G", KindEntry::Generator, "1", &[0.0, 0.0], &[2.0, 2.0], (-1.5, 1.5));
    g.cost = Some(CostEntry {
        a: vec![1.0, 1.0],
        b: vec![2.0, 2.5],
        c: vec![0.1, 0.1],
    });
    let l = device("L", KindEntry::StaticLoad, "2", &[-0.3, -0.4], &[-0.3, -0.4], (-0.15, -0.05));
    let mut f = device("F", KindEntry::FlexibleLoad, "3", &[-0.6, -0.6], &[-0.2, -0.2], (-0.2, 0.0));
    f.flex = Some(FlexEntry {
        baseline: vec![-0.4, -0.4],
        fee: 0.05,
    });
    case(
        "toy3_gen",
        CostSelector::Gen,
        vec![bus("1", 0.95, 1.05), bus("2", 0.9, 1.1), bus("3", 0.9, 1.1)],
        vec![link("1", "2", 0.04, 0.12), link("2", "3", 0.06, 0.1)],
        vec![g, l, f],
    )
}

/// Exchange at bus 1 with limited export; a curtailable unit and a flexible
/// load share bus 2.
pub fn two_bus_curt_case() -> CaseFile {
    let x = device("X", KindEntry::Generator, "1", &[-0.2, -0.2], &[1.0, 1.0], (-1.0, 1.0));
    let mut dg = device("W", KindEntry::Generator, "2", &[0.0, 0.0], &[0.9, 0.1], (-0.3, 0.3));
    dg.curtailable = true;
    let mut f = device("F", KindEntry::FlexibleLoad, "2", &[-0.7, -0.7], &[-0.1, -0.1], (-0.1, 0.1));
    f.flex = Some(FlexEntry {
        baseline: vec![-0.4, -0.4],
        fee: 0.05,
    });
    case(
        "toy2_curt",
        CostSelector::Curt,
        vec![bus("1", 0.95, 1.05), bus("2", 0.95, 1.05)],
        vec![link("1", "2", 0.05, 0.1)],
        vec![x, dg, f],
    )
}

pub fn two_bus_gen() -> Instance {
    two_bus_gen_case().to_instance(None, "toy2_gen").expect("toy instance is valid")
}

pub fn three_bus_gen() -> Instance {
    three_bus_gen_case().to_instance(None, "toy3_gen").expect("toy instance is valid")
}

pub fn two_bus_curt() -> Instance {
    two_bus_curt_case().to_instance(None, "toy2_curt").expect("toy instance is valid")
}

pub fn all() -> Vec<Instance> {
    vec![two_bus_gen(), three_bus_gen(), two_bus_curt()]
}
