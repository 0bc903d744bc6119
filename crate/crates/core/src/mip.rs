//! Mixed-binary convex quadratic programs.
//!
//! A [`MixedBinaryProblem`] is a [`ConvexQp`] in which a few variables are
//! declared binary. Their bounds in the core problem are `[0, 1]` and their
//! linear cost carries the activation fee. Fixing a binary means collapsing
//! its bounds, so the core for a given `d` is built deterministically.
//!
//! The problem is first split into independent components (variables linked
//! through the Hessian or a shared row). Each component is solved on its own:
//! by enumeration when it holds at most [`ENUMERATION_LIMIT`] binaries,
//! otherwise by best-first branch and bound on the continuous relaxation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::qp::{kkt_residuals, solve_qp_relaxing, ConvexQp, KktResiduals, LinRow, QpOutcome, QpSettings, QpSolution};
use crate::numerics::qp::UnionFind;

pub const ENUMERATION_LIMIT: usize = 12;
pub const MAX_BINARIES: usize = 30;
const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct MixedBinaryProblem {
    pub core: ConvexQp,
    pub binaries: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Enumeration up to the limit, branch and bound above it.
    #[default]
    Auto,
    Enumerate,
    BranchAndBound,
}

#[derive(Debug, Clone)]
pub struct MixedBinarySolution {
    /// Values of the binaries, in the order of `MixedBinaryProblem::binaries`.
    pub d: Vec<f64>,
    /// Primal-dual solution of the core with `d` fixed.
    pub qp: QpSolution,
    pub value: f64,
    /// Number of QPs solved.
    pub qp_solves: usize,
}

#[derive(Debug, Clone)]
pub enum MixedBinaryOutcome {
    Optimal(MixedBinarySolution),
    Infeasible,
}

impl MixedBinaryOutcome {
    pub fn optimal(self) -> Result<MixedBinarySolution> {
        match self {
            MixedBinaryOutcome::Optimal(s) => Ok(s),
            MixedBinaryOutcome::Infeasible => Err(Error::Infeasible("no binary assignment is feasible".into())),
        }
    }
}

impl MixedBinaryProblem {
    pub fn new(core: ConvexQp, binaries: Vec<usize>) -> Result<Self> {
        for &b in &binaries {
            if b >= core.n {
                return Err(Error::Dimension {
                    context: "binary variable index",
                    expected: core.n,
                    actual: b,
                });
            }
            if core.lower[b] > 0.0 || core.upper[b] < 1.0 {
                return Err(Error::invariant("binary bounds contain [0, 1]", format!("variable {b}")));
            }
        }
        Ok(Self { core, binaries })
    }

    /// Core problem with every binary fixed to the given value.
    pub fn with_fixed(&self, d: &[f64]) -> ConvexQp {
        let mut qp = self.core.clone();
        for (&b, &v) in self.binaries.iter().zip(d) {
            qp.lower[b] = v;
            qp.upper[b] = v;
        }
        qp
    }

    /// Core problem with binaries relaxed to `[0, 1]`.
    pub fn relaxed(&self) -> ConvexQp {
        let mut qp = self.core.clone();
        for &b in &self.binaries {
            qp.lower[b] = 0.0;
            qp.upper[b] = 1.0;
        }
        qp
    }
}

pub fn solve_mixed_binary(p: &MixedBinaryProblem, strategy: Strategy, settings: &QpSettings) -> Result<MixedBinaryOutcome> {
    if p.binaries.len() > MAX_BINARIES {
        return Err(Error::SearchSpace {
            binaries: p.binaries.len(),
            limit: MAX_BINARIES,
        });
    }
    let mut core = p.relaxed();
    core.validate()?;
    let comps = components(&core);

    let mut x = vec![0.0; core.n];
    let mut eq_duals = vec![0.0; core.eq.len()];
    let mut le_duals = vec![0.0; core.le.len()];
    let mut lower_duals = vec![0.0; core.n];
    let mut upper_duals = vec![0.0; core.n];
    let mut d = vec![0.0; p.binaries.len()];
    let mut iterations = 0;
    let mut solves = 0;
    let offset = core.offset;
    core.offset = 0.0;

    for comp in &comps {
        let (sub, local_bins) = comp.extract(&core, &p.binaries);
        let sub = MixedBinaryProblem {
            core: sub,
            binaries: local_bins.iter().map(|&(_, l)| l).collect(),
        };
        let sol = match solve_component(&sub, strategy, settings)? {
            MixedBinaryOutcome::Optimal(s) => s,
            MixedBinaryOutcome::Infeasible => return Ok(MixedBinaryOutcome::Infeasible),
        };
        solves += sol.qp_solves;
        iterations += sol.qp.iterations;
        for (l, &g) in comp.vars.iter().enumerate() {
            x[g] = sol.qp.x[l];
            lower_duals[g] = sol.qp.lower_duals[l];
            upper_duals[g] = sol.qp.upper_duals[l];
        }
        for (l, &g) in comp.eq.iter().enumerate() {
            eq_duals[g] = sol.qp.eq_duals[l];
        }
        for (l, &g) in comp.le.iter().enumerate() {
            le_duals[g] = sol.qp.le_duals[l];
        }
        for (&(k, _), &v) in local_bins.iter().zip(&sol.d) {
            d[k] = v;
        }
    }

    let fixed = p.with_fixed(&d);
    let mut qp = QpSolution {
        value: fixed.objective(&x),
        x,
        eq_duals,
        le_duals,
        lower_duals,
        upper_duals,
        iterations,
        kkt: KktResiduals::default(),
    };
    qp.kkt = kkt_residuals(&fixed, &qp);
    debug_assert!((qp.value - offset - core.objective(&qp.x)).abs() <= 1e-9 * (1.0 + qp.value.abs()));
    Ok(MixedBinaryOutcome::Optimal(MixedBinarySolution {
        d,
        value: qp.value,
        qp,
        qp_solves: solves,
    }))
}

fn solve_component(p: &MixedBinaryProblem, strategy: Strategy, settings: &QpSettings) -> Result<MixedBinaryOutcome> {
    let nb = p.binaries.len();
    let enumerate = match strategy {
        Strategy::Auto => nb <= ENUMERATION_LIMIT,
        Strategy::Enumerate => true,
        Strategy::BranchAndBound => false,
    };
    if enumerate {
        enumerate_all(p, settings)
    } else {
        branch_and_bound(p, settings)
    }
}

fn solve_fixed(p: &MixedBinaryProblem, d: &[f64], settings: &QpSettings) -> Result<Option<QpSolution>> {
    match solve_qp_relaxing(&p.with_fixed(d), settings)? {
        QpOutcome::Optimal(s) => Ok(Some(s)),
        QpOutcome::Infeasible(_) => Ok(None),
        other => other.optimal().map(Some),
    }
}

fn enumerate_all(p: &MixedBinaryProblem, settings: &QpSettings) -> Result<MixedBinaryOutcome> {
    let nb = p.binaries.len();
    let count = 1usize << nb;
    let decode = |mask: usize| -> Vec<f64> { (0..nb).map(|i| ((mask >> i) & 1) as f64).collect() };
    let results: Vec<Result<Option<(usize, QpSolution)>>> = (0..count)
        .into_par_iter()
        .map(|mask| Ok(solve_fixed(p, &decode(mask), settings)?.map(|s| (mask, s))))
        .collect();
    let mut best: Option<(usize, QpSolution)> = None;
    for r in results {
        if let Some((mask, s)) = r? {
            // ties keep the lowest mask, which is the first one visited
            if best.as_ref().map_or(true, |(_, b)| s.value < b.value) {
                best = Some((mask, s));
            }
        }
    }
    Ok(match best {
        Some((mask, qp)) => MixedBinaryOutcome::Optimal(MixedBinarySolution {
            d: decode(mask),
            value: qp.value,
            qp,
            qp_solves: count,
        }),
        None => MixedBinaryOutcome::Infeasible,
    })
}

struct Node {
    bound: f64,
    /// `None` free, `Some(v)` fixed.
    fixed: Vec<Option<f64>>,
    seq: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap on (-bound, -seq): smallest bound first, oldest first on ties
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn branch_and_bound(p: &MixedBinaryProblem, settings: &QpSettings) -> Result<MixedBinaryOutcome> {
    let nb = p.binaries.len();
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        fixed: vec![None; nb],
        seq: 0,
    });
    let mut seq = 1;
    let mut solves = 0;
    let mut incumbent: Option<(Vec<f64>, QpSolution)> = None;
    let prune_tol = |v: f64| 1e-9 * (1.0 + v.abs());

    while let Some(node) = heap.pop() {
        if let Some((_, inc)) = &incumbent {
            if node.bound >= inc.value - prune_tol(inc.value) {
                continue;
            }
        }
        let mut qp = p.core.clone();
        for (i, &b) in p.binaries.iter().enumerate() {
            let (lo, hi) = node.fixed[i].map_or((0.0, 1.0), |v| (v, v));
            qp.lower[b] = lo;
            qp.upper[b] = hi;
        }
        solves += 1;
        let sol = match solve_qp_relaxing(&qp, settings)? {
            QpOutcome::Optimal(s) => s,
            QpOutcome::Infeasible(_) => continue,
            other => other.optimal()?,
        };
        if let Some((_, inc)) = &incumbent {
            if sol.value >= inc.value - prune_tol(inc.value) {
                continue;
            }
        }
        // most fractional, lowest index on ties
        let mut branch: Option<(usize, f64)> = None;
        for (i, &b) in p.binaries.iter().enumerate() {
            let frac = (sol.x[b] - sol.x[b].round()).abs();
            if frac > INTEGRALITY_TOL && branch.map_or(true, |(_, f)| frac > f + 1e-12) {
                branch = Some((i, frac));
            }
        }
        match branch {
            None => {
                let d: Vec<f64> = p.binaries.iter().map(|&b| sol.x[b].round().clamp(0.0, 1.0)).collect();
                solves += 1;
                if let Some(exact) = solve_fixed(p, &d, settings)? {
                    if incumbent.as_ref().map_or(true, |(_, inc)| exact.value < inc.value) {
                        incumbent = Some((d, exact));
                    }
                }
            }
            Some((i, _)) => {
                for v in [0.0, 1.0] {
                    let mut fixed = node.fixed.clone();
                    fixed[i] = Some(v);
                    heap.push(Node {
                        bound: sol.value,
                        fixed,
                        seq,
                    });
                    seq += 1;
                }
            }
        }
    }
    Ok(match incumbent {
        Some((d, qp)) => MixedBinaryOutcome::Optimal(MixedBinarySolution {
            d,
            value: qp.value,
            qp,
            qp_solves: solves,
        }),
        None => MixedBinaryOutcome::Infeasible,
    })
}

struct Component {
    vars: Vec<usize>,
    eq: Vec<usize>,
    le: Vec<usize>,
}

impl Component {
    /// Sub-problem over the component, plus `(global binary position, local
    /// variable)` for its binaries.
    fn extract(&self, qp: &ConvexQp, binaries: &[usize]) -> (ConvexQp, Vec<(usize, usize)>) {
        let mut local = vec![usize::MAX; qp.n];
        for (l, &g) in self.vars.iter().enumerate() {
            local[g] = l;
        }
        let remap = |row: &LinRow| LinRow::new(row.coeffs.iter().map(|&(j, a)| (local[j], a)).collect(), row.rhs);
        let sub = ConvexQp {
            n: self.vars.len(),
            hessian: qp
                .hessian
                .iter()
                .filter(|&&(i, _, _)| local[i] != usize::MAX)
                .map(|&(i, j, v)| (local[i], local[j], v))
                .collect(),
            linear: self.vars.iter().map(|&g| qp.linear[g]).collect(),
            offset: 0.0,
            eq: self.eq.iter().map(|&r| remap(&qp.eq[r])).collect(),
            le: self.le.iter().map(|&r| remap(&qp.le[r])).collect(),
            lower: self.vars.iter().map(|&g| qp.lower[g]).collect(),
            upper: self.vars.iter().map(|&g| qp.upper[g]).collect(),
        };
        let bins = binaries
            .iter()
            .enumerate()
            .filter(|&(_, &b)| local[b] != usize::MAX)
            .map(|(k, &b)| (k, local[b]))
            .collect();
        (sub, bins)
    }
}

fn components(qp: &ConvexQp) -> Vec<Component> {
    let mut uf = UnionFind::new(qp.n);
    for &(i, j, _) in &qp.hessian {
        uf.union(i, j);
    }
    for row in qp.eq.iter().chain(&qp.le) {
        if let Some(&(first, _)) = row.coeffs.first() {
            for &(j, _) in &row.coeffs[1..] {
                uf.union(first, j);
            }
        }
    }
    let mut id = vec![usize::MAX; qp.n];
    let mut comps: Vec<Component> = Vec::new();
    for v in 0..qp.n {
        let r = uf.find(v);
        if id[r] == usize::MAX {
            id[r] = comps.len();
            comps.push(Component {
                vars: Vec::new(),
                eq: Vec::new(),
                le: Vec::new(),
            });
        }
        comps[id[r]].vars.push(v);
    }
    let mut empty_eq = Vec::new();
    let mut empty_le = Vec::new();
    for (r, row) in qp.eq.iter().enumerate() {
        match row.coeffs.first() {
            Some(&(j, _)) => {
                let c = id[uf.find(j)];
                comps[c].eq.push(r);
            }
            None => empty_eq.push(r),
        }
    }
    for (r, row) in qp.le.iter().enumerate() {
        match row.coeffs.first() {
            Some(&(j, _)) => {
                let c = id[uf.find(j)];
                comps[c].le.push(r);
            }
            None => empty_le.push(r),
        }
    }
    // empty rows only matter for feasibility; keep them with the first component
    if let Some(c) = comps.first_mut() {
        c.eq.extend(empty_eq);
        c.le.extend(empty_le);
    }
    comps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::qp::solve_qp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings() -> QpSettings {
        QpSettings::default()
    }

    #[test]
    fn no_binaries_is_one_qp() {
        let mut qp = ConvexQp::new();
        let x = qp.add_var(-10.0, 10.0, -2.0);
        qp.add_hessian(x, x, 1.0);
        let p = MixedBinaryProblem::new(qp, vec![]).unwrap();
        let s = solve_mixed_binary(&p, Strategy::Auto, &settings()).unwrap().optimal().unwrap();
        assert!((s.value + 2.0).abs() < 1e-7);
        assert!(s.d.is_empty());
    }

    #[test]
    fn fee_trade_off() {
        // core value 10 at d = 0 and 3 at d = 1; fee 5
        let mut qp = ConvexQp::new();
        let d = qp.add_var(0.0, 1.0, 5.0);
        let x = qp.add_var(0.0, 100.0, 1.0);
        qp.add_ge(vec![(x, 1.0), (d, 7.0)], 10.0);
        let p = MixedBinaryProblem::new(qp, vec![d]).unwrap();
        for strat in [Strategy::Enumerate, Strategy::BranchAndBound] {
            let s = solve_mixed_binary(&p, strat, &settings()).unwrap().optimal().unwrap();
            assert_eq!(s.d, vec![1.0]);
            assert!((s.value - 8.0).abs() < 1e-6, "{}", s.value);
        }
    }

    #[test]
    fn infeasible_for_every_assignment() {
        let mut qp = ConvexQp::new();
        let d = qp.add_var(0.0, 1.0, 0.0);
        let x = qp.add_var(0.0, 1.0, 0.0);
        qp.add_ge(vec![(x, 1.0), (d, 1.0)], 3.0);
        let p = MixedBinaryProblem::new(qp, vec![d]).unwrap();
        assert!(matches!(
            solve_mixed_binary(&p, Strategy::Auto, &settings()).unwrap(),
            MixedBinaryOutcome::Infeasible
        ));
    }

    #[test]
    fn too_many_binaries() {
        let mut qp = ConvexQp::new();
        let bins: Vec<_> = (0..31).map(|_| qp.add_var(0.0, 1.0, 0.0)).collect();
        let p = MixedBinaryProblem::new(qp, bins).unwrap();
        assert!(matches!(
            solve_mixed_binary(&p, Strategy::Auto, &settings()),
            Err(Error::SearchSpace { binaries: 31, .. })
        ));
    }

    /// Flexible-load shaped problem: each binary gates the modulation range of a
    /// block of continuous variables, with a coupling row across blocks when
    /// `coupled`.
    fn random_problem(rng: &mut ChaCha8Rng, nb: usize, coupled: bool) -> MixedBinaryProblem {
        let mut qp = ConvexQp::new();
        let mut bins = Vec::new();
        let mut all = Vec::new();
        for _ in 0..nb {
            let d = qp.add_var(0.0, 1.0, rng.gen_range(0.0..3.0));
            bins.push(d);
            let mut xs = Vec::new();
            for _ in 0..3 {
                let base = rng.gen_range(-1.0..1.0);
                let x = qp.add_var(-5.0, 5.0, rng.gen_range(-3.0..3.0));
                qp.add_hessian(x, x, rng.gen_range(0.1..2.0));
                let w = rng.gen_range(0.2..1.0);
                qp.add_le(vec![(x, 1.0), (d, -w)], base);
                qp.add_ge(vec![(x, 1.0), (d, w)], base);
                xs.push((x, 1.0));
                all.push(x);
            }
            qp.add_eq(xs, 0.0);
        }
        if coupled {
            let coeffs = all.iter().map(|&x| (x, rng.gen_range(-1.0..1.0))).collect();
            qp.add_le(coeffs, rng.gen_range(0.0..1.0));
        }
        MixedBinaryProblem::new(qp, bins).unwrap()
    }

    fn brute_force(p: &MixedBinaryProblem) -> Option<f64> {
        let nb = p.binaries.len();
        let mut best: Option<f64> = None;
        for mask in 0..(1usize << nb) {
            let d: Vec<f64> = (0..nb).map(|i| ((mask >> i) & 1) as f64).collect();
            if let QpOutcome::Optimal(s) = solve_qp(&p.with_fixed(&d), &settings()).unwrap() {
                best = Some(best.map_or(s.value, |b: f64| b.min(s.value)));
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..12 {
            let p = random_problem(&mut rng, 3, case % 2 == 0);
            let oracle = brute_force(&p);
            for strat in [Strategy::Auto, Strategy::BranchAndBound] {
                let got = solve_mixed_binary(&p, strat, &settings()).unwrap();
                match (oracle, got) {
                    (Some(v), MixedBinaryOutcome::Optimal(s)) => {
                        assert!((s.value - v).abs() < 1e-6 * (1.0 + v.abs()), "case {case} {strat:?}: {} vs {v}", s.value);
                        assert!(s.qp.kkt.max() < 1e-6);
                    }
                    (None, MixedBinaryOutcome::Infeasible) => {}
                    (o, g) => panic!("case {case}: oracle {o:?}, got {g:?}"),
                }
            }
        }
    }

    #[test]
    fn fee_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, 4, true);
        let base = solve_mixed_binary(&p, Strategy::Auto, &settings()).unwrap().optimal().unwrap().value;
        let mut q = p.clone();
        q.core.linear[q.binaries[2]] += 1.5;
        let more = solve_mixed_binary(&q, Strategy::Auto, &settings()).unwrap().optimal().unwrap().value;
        assert!(more >= base - 1e-8);
    }
}
