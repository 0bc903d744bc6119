use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn solve(qp: &ConvexQp) -> QpOutcome {
    solve_qp(qp, &QpSettings::default()).unwrap()
}

#[test]
fn scalar_quadratic_with_bound() {
    let mut qp = ConvexQp::new();
    let x = qp.add_var(1.0, f64::INFINITY, 0.0);
    qp.add_hessian(x, x, 2.0);
    let sol = solve(&qp).optimal().unwrap();
    assert!((sol.x[0] - 1.0).abs() < 1e-7);
    assert!((sol.lower_duals[0] - 2.0).abs() < 1e-6);
    assert!(sol.kkt.max() < 1e-7);
}

#[test]
fn inequality_constrained_quadratic() {
    // min (x-2)² + (y-1)² s.t. x + y ≤ 1
    let mut qp = ConvexQp::new();
    let x = qp.add_var(f64::NEG_INFINITY, f64::INFINITY, -4.0);
    let y = qp.add_var(f64::NEG_INFINITY, f64::INFINITY, -2.0);
    qp.add_hessian(x, x, 2.0);
    qp.add_hessian(y, y, 2.0);
    qp.offset = 5.0;
    qp.add_le(vec![(x, 1.0), (y, 1.0)], 1.0);
    let sol = solve(&qp).optimal().unwrap();
    assert!((sol.x[0] - 1.0).abs() < 1e-7 && sol.x[1].abs() < 1e-7);
    assert!((sol.value - 2.0).abs() < 1e-7);
    assert!((sol.le_duals[0] - 2.0).abs() < 1e-6);
}

/// Minimum of a box LP by enumerating vertices.
fn box_lp_oracle(c: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    c.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&ci, (&l, &u))| (ci * l).min(ci * u))
        .sum()
}

#[test]
fn box_lp_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.gen_range(1..8);
        let mut qp = ConvexQp::new();
        let mut c = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for _ in 0..n {
            let l: f64 = rng.gen_range(-3.0..1.0);
            let u = l + rng.gen_range(0.1..4.0);
            let ci = rng.gen_range(-5.0..5.0);
            qp.add_var(l, u, ci);
            c.push(ci);
            lo.push(l);
            hi.push(u);
        }
        let sol = solve(&qp).optimal().unwrap();
        assert!((sol.value - box_lp_oracle(&c, &lo, &hi)).abs() < 1e-6);
    }
}

#[test]
fn fixed_and_singleton_rows_postsolve_duals() {
    // x fixed by an equality row, y bounded by a singleton inequality.
    let mut qp = ConvexQp::new();
    let x = qp.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0);
    let y = qp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
    qp.add_hessian(y, y, 1.0);
    qp.add_hessian(x, y, 0.5);
    qp.add_hessian(x, x, 1.0);
    qp.add_eq(vec![(x, 2.0)], 3.0);
    qp.add_le(vec![(y, -1.0)], -2.0);
    qp.add_le(vec![(x, 1.0), (y, 1.0)], 10.0);
    let sol = solve(&qp).optimal().unwrap();
    assert!((sol.x[0] - 1.5).abs() < 1e-9);
    assert!((sol.x[1] - 2.0).abs() < 1e-7);
    assert!(sol.kkt.max() < 1e-6, "{:?}", sol.kkt);
}

#[test]
fn opposite_pair_becomes_equality() {
    let mut qp = ConvexQp::new();
    let x = qp.add_var(0.0, 10.0, 1.0);
    let y = qp.add_var(0.0, 10.0, 2.0);
    qp.add_le(vec![(x, 1.0), (y, 1.0)], 4.0);
    qp.add_le(vec![(x, -2.0), (y, -2.0)], -8.0);
    let sol = solve(&qp).optimal().unwrap();
    assert!((sol.value - 4.0).abs() < 1e-7);
    assert!(sol.kkt.max() < 1e-6, "{:?}", sol.kkt);
}

#[test]
fn conflicting_bounds_give_certificate() {
    let mut qp = ConvexQp::new();
    let x = qp.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0);
    qp.add_le(vec![(x, 1.0)], 0.0);
    qp.add_ge(vec![(x, 1.0)], 1.0);
    match solve(&qp) {
        QpOutcome::Infeasible(cert) => {
            let (stat, value) = cert.check(&qp);
            assert!(stat < 1e-9 && value < -1e-3, "{stat} {value}");
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn coupled_infeasibility_detected_by_phase_one() {
    // x + y = 3, x - y = 0, x + 2y ≤ 2, x, y ≥ 0
    let mut qp = ConvexQp::new();
    let x = qp.add_var(0.0, f64::INFINITY, 1.0);
    let y = qp.add_var(0.0, f64::INFINITY, 1.0);
    qp.add_eq(vec![(x, 1.0), (y, 1.0)], 3.0);
    qp.add_eq(vec![(x, 1.0), (y, -1.0)], 0.0);
    qp.add_le(vec![(x, 1.0), (y, 2.0)], 2.0);
    match solve(&qp) {
        QpOutcome::Infeasible(cert) => {
            let (stat, value) = cert.check(&qp);
            assert!(stat < 1e-6 && value < 0.0, "{stat} {value}");
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn unbounded_lp_yields_ray() {
    let mut qp = ConvexQp::new();
    let x = qp.add_var(0.0, f64::INFINITY, -1.0);
    let y = qp.add_var(0.0, 1.0, 0.0);
    qp.add_le(vec![(x, 1.0), (y, -1.0)], f64::MAX.sqrt());
    qp.le.clear();
    qp.add_le(vec![(y, 1.0), (x, -1.0)], 0.5);
    match solve(&qp) {
        QpOutcome::Unbounded(ray) => assert!(ray[0] > 0.5),
        other => panic!("expected unbounded, got {other:?}"),
    }
}

#[test]
fn rejects_indefinite_hessian() {
    let mut qp = ConvexQp::new();
    let x = qp.add_var(0.0, 1.0, 0.0);
    let y = qp.add_var(0.0, 1.0, 0.0);
    qp.add_hessian(x, y, 1.0);
    assert!(solve_qp(&qp, &QpSettings::default()).is_err());
}

/// Random feasible QP: `x0` strictly feasible, dense PSD Hessian.
fn random_qp(rng: &mut ChaCha8Rng, n: usize, me: usize, mi: usize) -> ConvexQp {
    let mut qp = ConvexQp::new();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for j in 0..n {
        let bounded = rng.gen_bool(0.6);
        let (l, u) = if bounded {
            (x0[j] - rng.gen_range(0.1..2.0), x0[j] + rng.gen_range(0.1..2.0))
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        qp.add_var(l, u, rng.gen_range(-3.0..3.0));
    }
    let k = rng.gen_range(1..=n);
    for _ in 0..k {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for i in 0..n {
            for j in i..n {
                qp.add_hessian(i, j, v[i] * v[j] * if i == j { 1.0 } else { 1.0 });
            }
        }
    }
    for j in 0..n {
        qp.add_hessian(j, j, 0.05);
    }
    for _ in 0..me {
        let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
        let rhs = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
        qp.add_eq(coeffs, rhs);
    }
    for _ in 0..mi {
        let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
        let rhs: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum::<f64>() + rng.gen_range(0.0..1.0);
        qp.add_le(coeffs, rhs);
    }
    qp
}

#[test]
fn random_qps_reach_tight_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..40 {
        let n = rng.gen_range(2..12);
        let me = rng.gen_range(0..n / 2 + 1);
        let mi = rng.gen_range(0..2 * n);
        let qp = random_qp(&mut rng, n, me, mi);
        let sol = solve(&qp).optimal().unwrap();
        let scale = 1.0 + sol.value.abs();
        assert!(sol.kkt.max() < 1e-6 * scale, "case {case}: {:?}", sol.kkt);
    }
}

#[test]
fn block_separable_problem_matches_pieces() {
    // Two independent QPs solved jointly and separately.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_qp(&mut rng, 6, 2, 5);
    let b = random_qp(&mut rng, 5, 1, 4);
    let mut joint = a.clone();
    let off = a.n;
    for j in 0..b.n {
        joint.add_var(b.lower[j], b.upper[j], b.linear[j]);
    }
    for &(i, j, h) in &b.hessian {
        joint.add_hessian(i + off, j + off, h);
    }
    for r in &b.eq {
        joint.add_eq(r.coeffs.iter().map(|&(j, v)| (j + off, v)).collect(), r.rhs);
    }
    for r in &b.le {
        joint.add_le(r.coeffs.iter().map(|&(j, v)| (j + off, v)).collect(), r.rhs);
    }
    let va = solve(&a).optimal().unwrap().value;
    let vb = solve(&b).optimal().unwrap().value;
    let vj = solve(&joint).optimal().unwrap().value;
    assert!((va + vb - vj).abs() < 1e-6 * (1.0 + vj.abs()));
}

#[test]
fn low_rank_block_path() {
    // Many diagonal-Hessian variables coupled through a handful of dense cuts.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 120;
    let mut qp = ConvexQp::new();
    for _ in 0..n {
        let j = qp.add_var(0.0, f64::INFINITY, rng.gen_range(-1.0..1.0));
        qp.add_hessian(j, j, rng.gen_range(0.5..2.0));
    }
    let r = qp.add_var(f64::NEG_INFINITY, f64::INFINITY, -1.0);
    for _ in 0..10 {
        let mut coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
        coeffs.push((r, 1.0));
        qp.add_le(coeffs, rng.gen_range(0.0..2.0));
    }
    let sol = solve(&qp).optimal().unwrap();
    assert!(sol.kkt.max() < 1e-6, "{:?}", sol.kkt);
}
