use super::*;
use crate::model::{is_feasible, link_flows, objective, CostSpec};
use crate::toy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tight() -> QpSettings {
    QpSettings {
        tol: 1e-10,
        ..QpSettings::default()
    }
}

fn random_dual(inst: &Instance, rng: &mut ChaCha8Rng, scale: f64) -> DualPoint {
    let mut mu = DualPoint::zeros(inst);
    for t in 0..inst.horizon {
        for i in 0..inst.n_buses() {
            mu.lambda[t][i] = rng.gen_range(-scale..scale);
            mu.gamma[t][i] = rng.gen_range(-scale..scale);
            mu.alpha[t][i] = rng.gen_range(0.0..scale);
            mu.beta[t][i] = rng.gen_range(0.0..scale);
        }
    }
    mu
}

/// Feasible point of the two-bus toy with loads at baseline: flat
/// magnitudes, angle of bus 2 found by bisection on the active balance.
fn two_bus_feasible() -> (Instance, OperatingPoint) {
    let inst = toy::two_bus_gen();
    let l = inst.network.links[0];
    let mut x = OperatingPoint::flat(&inst, 1.0);
    for t in 0..2 {
        let target = inst.flex[0].baseline[t];
        let p21 = |th: f64| link_flows(l.g, l.b, th.cos(), th.sin(), 1.0, 0.0).0;
        let (mut lo, mut hi) = (-1.0f64, 0.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (p21(mid) - target) * (p21(lo) - target) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let th = 0.5 * (lo + hi);
        x.e[t] = vec![1.0, th.cos()];
        x.f[t] = vec![0.0, th.sin()];
        let (p12, q12, _) = link_flows(l.g, l.b, 1.0, 0.0, th.cos(), th.sin());
        let (p21, q21, _) = link_flows(l.g, l.b, th.cos(), th.sin(), 1.0, 0.0);
        x.p[t] = vec![p12, p21];
        x.q[t] = vec![q12, q21];
    }
    assert!(is_feasible(&x, &inst, 1e-9).unwrap());
    (inst, x)
}

#[test]
fn zero_prices_push_generators_down() {
    let mut inst = toy::three_bus_gen();
    if let CostSpec::Gen { a, .. } = &mut inst.cost {
        for row in a.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    inst.flex[0].fee = 0.0;
    let sol = power_subproblem(&DualPoint::zeros(&inst), &inst, &QpSettings::default()).unwrap();
    for t in 0..2 {
        assert!((sol.p[t][0] - inst.devices[0].p_min[t]).abs() < 1e-6, "{:?}", sol.p[t]);
    }
}

#[test]
fn large_fee_pins_baseline() {
    let mut inst = toy::two_bus_gen();
    inst.flex[0].fee = 1e3;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mu = random_dual(&inst, &mut rng, 2.0);
    let sol = power_subproblem(&mu, &inst, &QpSettings::default()).unwrap();
    assert_eq!(sol.d, vec![0.0]);
    for t in 0..2 {
        assert!((sol.p[t][1] - inst.flex[0].baseline[t]).abs() < 1e-7);
    }
}

/// Grid oracle for the two-bus toy: every term of the power subproblem is
/// separable except the flexible load, whose period-1 value fixes period 2.
#[test]
fn power_subproblem_matches_grid() {
    let inst = toy::two_bus_gen();
    let (a, b) = match &inst.cost {
        CostSpec::Gen { a, b, .. } => (a.clone(), b.clone()),
        _ => unreachable!(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let mu = random_dual(&inst, &mut rng, 3.0);
        let got = power_subproblem(&mu, &inst, &QpSettings::default()).unwrap().value;

        let grid = |lo: f64, hi: f64, f: &dyn Fn(f64) -> f64| -> f64 {
            let n = ((hi - lo) / 1e-3).round() as usize;
            (0..=n).map(|k| f(lo + (hi - lo) * k as f64 / n as f64)).fold(f64::INFINITY, f64::min)
        };
        let mut gen = 0.0;
        for t in 0..2 {
            let l1 = mu.lambda[t][0];
            gen += grid(0.0, 2.0, &|p| a[0][t] * p * p + (b[0][t] + l1) * p);
            gen += grid(-1.0, 1.0, &|q| mu.gamma[t][0] * q);
            gen += grid(-0.3, 0.3, &|q| mu.gamma[t][1] * q);
        }
        let flex_d0 = mu.lambda[0][1] * -0.5 + mu.lambda[1][1] * -0.5;
        let flex_d1 = 0.1 + grid(-0.8, -0.2, &|p1| mu.lambda[0][1] * p1 + mu.lambda[1][1] * (-1.0 - p1));
        let oracle = gen + flex_d0.min(flex_d1);
        assert!((got - oracle).abs() < 1e-3, "{got} vs {oracle}");
        assert!(got <= oracle + 1e-7);
    }
}

#[test]
fn weak_duality_on_constructed_point() {
    let (inst, x) = two_bus_feasible();
    let obj = objective(&x, &inst).unwrap();
    let power = PowerSubproblem::new(&inst);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for scale in [0.1, 1.0, 10.0] {
        for _ in 0..10 {
            let mu = random_dual(&inst, &mut rng, scale);
            let cut = eval_dual(&mu, &inst, &power, &QpSettings::default()).unwrap();
            assert!(cut.value <= obj + 1e-7, "{} > {obj}", cut.value);
        }
    }
}

#[test]
fn zero_multipliers_reduce_to_power_problem() {
    let inst = toy::three_bus_gen();
    let power = PowerSubproblem::new(&inst);
    let mu = DualPoint::zeros(&inst);
    let cut = eval_dual(&mu, &inst, &power, &QpSettings::default()).unwrap();
    assert!(cut.voltage_values.iter().all(|v| *v == 0.0));
    assert_eq!(cut.value, cut.power_value);
}

#[test]
fn supergradient_matches_finite_differences() {
    let inst = toy::two_bus_gen();
    let power = PowerSubproblem::new(&inst);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mu = random_dual(&inst, &mut rng, 1.0);
    let x0 = mu.to_vec();
    let g = |x: &[f64]| eval_dual(&DualPoint::from_vec(x, 2, 2).unwrap(), &inst, &power, &tight()).unwrap();
    let base = g(&x0);
    let h = 1e-5;
    for _ in 0..5 {
        let dir: Vec<f64> = (0..x0.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plus: Vec<f64> = x0.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x0.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
        let fd = (g(&plus).value - g(&minus).value) / (2.0 * h);
        let an: f64 = base.supergradient.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((fd - an).abs() < 1e-4 * (1.0 + an.abs()), "fd {fd} vs {an}");
    }
}

#[test]
fn voltage_part_is_positively_homogeneous() {
    let inst = toy::three_bus_gen();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mu = random_dual(&inst, &mut rng, 2.0);
    let lv = |m: &DualPoint| -> f64 {
        (0..2)
            .map(|t| voltage_subproblem(&inst.network, &m.lambda[t], &m.gamma[t], &m.alpha[t], &m.beta[t]).unwrap().value)
            .sum()
    };
    let base = lv(&mu);
    for c in [0.5, 2.0, 10.0] {
        assert!((lv(&mu.scaled(c)) - c * base).abs() < 1e-9 * (1.0 + c * base.abs()));
    }
}

#[test]
fn cuts_are_consistent_with_concavity() {
    let inst = toy::two_bus_curt();
    let power = PowerSubproblem::new(&inst);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cuts: Vec<Cut> = (0..8)
        .map(|_| eval_dual(&random_dual(&inst, &mut rng, 1.0), &inst, &power, &QpSettings::default()).unwrap())
        .collect();
    for a in &cuts {
        let xa = a.point.to_vec();
        for b in &cuts {
            let xb = b.point.to_vec();
            let lin: f64 = a.value + a.supergradient.iter().zip(xb.iter().zip(&xa)).map(|(s, (p, q))| s * (p - q)).sum::<f64>();
            assert!(b.value <= lin + 1e-7, "{} > {lin}", b.value);
        }
    }
}

#[test]
fn bundle_on_toy_is_monotone_and_valid() {
    let (inst, x) = two_bus_feasible();
    let obj = objective(&x, &inst).unwrap();
    let params = BundleParams {
        max_iter: 60,
        ..BundleParams::default()
    };
    let (out, log) = maximize_dual(&inst, None, &params).unwrap();
    assert!(out.dual_bound <= obj + 1e-7);
    for w in log.windows(2) {
        assert!(w[1].best_g >= w[0].best_g);
    }
    assert!(out.dual_bound > log[0].g_value);
}
