use super::*;
use crate::case_io::{BusEntry, CostEntry, DeviceEntry, KindEntry, LinkEntry};
use crate::model::{is_feasible, objective, OperatingPoint};
use crate::toy;

#[test]
fn gap_examples() {
    assert!((gap(100.0, 102.0).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(gap(5.0, 5.0), Some(0.0));
    assert_eq!(gap(0.0, 1.0), None);
    assert_eq!(gap(-1.0, 1.0), None);
    assert_eq!(gap(f64::NEG_INFINITY, 1.0), None);
}

/// Two buses, each able to serve its own load: the flat point is feasible.
fn locally_balanced() -> Instance {
    let mut case = toy::two_bus_gen_case();
    let dev = |id: &str, kind, bus: &str, lo: f64, hi: f64| DeviceEntry {
        id: id.into(),
        kind,
        bus: bus.into(),
        p_min: vec![lo; 2],
        p_max: vec![hi; 2],
        q_min: Some(-0.5),
        q_max: Some(0.5),
        q_ratio: None,
        curtailable: false,
        cost: None,
        flex: None,
    };
    let mut g1 = dev("G1", KindEntry::Generator, "1", 0.0, 2.0);
    g1.cost = Some(CostEntry {
        a: vec![0.1, 0.1],
        b: vec![1.0, 1.0],
        c: vec![0.0, 0.0],
    });
    let mut g2 = dev("G2", KindEntry::Generator, "2", 0.0, 1.0);
    g2.cost = Some(CostEntry {
        a: vec![0.2, 0.2],
        b: vec![1.5, 1.5],
        c: vec![0.0, 0.0],
    });
    case.devices = vec![g1, g2, dev("L", KindEntry::StaticLoad, "2", -0.5, -0.5)];
    case.buses = vec![
        BusEntry {
            id: "1".into(),
            v_min: 0.95,
            v_max: 1.05,
        },
        BusEntry {
            id: "2".into(),
            v_min: 0.95,
            v_max: 1.05,
        },
    ];
    case.links = vec![LinkEntry {
        from: "1".into(),
        to: "2".into(),
        g: 4.0,
        b: -8.0,
    }];
    case.to_instance(None, "balanced").unwrap()
}

#[test]
fn primal_no_worse_than_flat_feasible_point() {
    let inst = locally_balanced();
    let mut flat = OperatingPoint::flat(&inst, 1.0);
    for t in 0..2 {
        flat.p[t] = vec![0.0, 0.5, -0.5];
    }
    assert!(is_feasible(&flat, &inst, 1e-12).unwrap());
    let flat_value = objective(&flat, &inst).unwrap();
    let res = primal_search(&inst, &PrimalParams::default()).unwrap();
    assert!(is_feasible(&res.point, &inst, 1e-6).unwrap());
    assert!(res.objective <= flat_value + 1e-9, "{} > {}", res.objective, flat_value);
    // importing from the cheaper bus pays off despite the losses
    assert!(res.objective < flat_value - 1e-3);
    assert!(infeasibility(&res.point, &inst).unwrap() <= 1e-10);
}

#[test]
fn primal_point_is_verified_on_toys() {
    for inst in toy::all() {
        let res = primal_search(&inst, &PrimalParams::default()).unwrap();
        assert!(is_feasible(&res.point, &inst, 1e-6).unwrap(), "{}", inst.name);
        assert!((objective(&res.point, &inst).unwrap() - res.objective).abs() < 1e-12);
        assert!(infeasibility(&res.point, &inst).unwrap() <= 1e-10);
    }
}

#[test]
fn infeasible_instance_reports_no_primal() {
    let mut inst = toy::two_bus_gen();
    // the generator cannot cover the smallest flexible load
    for dev in inst.devices.iter_mut().filter(|d| d.id == "G") {
        dev.p_max = vec![0.1; 2];
    }
    match primal_search(&inst, &PrimalParams::default()) {
        Err(Error::NoPrimalFound) => {}
        other => panic!("expected NoPrimalFound, got {other:?}"),
    }
}

#[test]
fn rows_sandwich_and_recompute_gap_on_toys() {
    for inst in toy::all() {
        let rows = solve_instance(&inst, &SolveOptions::default()).rows;
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!(!row.failed(), "{}: {:?}", inst.name, row.error);
            let (lb, ub) = (row.dual_bound.unwrap(), row.primal_bound.unwrap());
            assert!(lb <= ub + SANDWICH_TOL);
            assert_eq!(row.gap_pct, gap(lb, ub));
            assert!(row.time_s >= 0.0);
            assert!(row.infeasibility.unwrap() >= 0.0);
        }
    }
}

#[test]
fn selector_controls_rows() {
    let inst = toy::two_bus_gen();
    let opts = SolveOptions {
        relaxation: RelaxationSelector::Lr,
        ..SolveOptions::default()
    };
    let rows = solve_instance(&inst, &opts).rows;
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].relaxation, "lr");
}

#[test]
fn sandwich_violation_is_a_row_failure() {
    let inst = toy::two_bus_gen();
    let outcome = RelaxationOutcome {
        name: "lr",
        dual_bound: 10.0,
        point: OperatingPoint::flat(&inst, 1.0),
        time_s: 0.0,
        converged: true,
        iterations: 0,
        diagnostics: Vec::new(),
    };
    let row = make_row(&inst, "lr", Ok(outcome), Some(5.0), 0.1, 0);
    assert!(row.failed());
    let run = InstanceRun {
        instance: inst,
        rows: vec![row],
        primal: None,
        boxes: None,
        lr_trace: Vec::new(),
    };
    assert_eq!(BenchReport { runs: vec![run] }.failures(), 1);
}
