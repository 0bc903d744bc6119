//! Presolve and postsolve for [`ConvexQp`].
//!
//! Every bound that presolve derives from a row carries a derivation: a
//! combination of original constraints (written as `… ≤ 0`) whose linear
//! part is exactly `±x_j`. Conflicting bounds and violated empty rows thus
//! come with a Farkas certificate in terms of the original problem.

use std::collections::HashMap;

use super::ipm::IpmProblem;
use super::{ConvexQp, FarkasCertificate, LinRow, QpSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(super) enum CRef {
    Eq(usize),
    Le(usize),
    Lower(usize),
    Upper(usize),
}

type Deriv = Vec<(CRef, f64)>;

#[derive(Debug, Clone, Copy)]
enum BoundSrc {
    Original,
    Le { row: usize, coef: f64 },
    Eq { row: usize, coef: f64 },
}

#[derive(Debug, Clone, Copy)]
enum EqOrigin {
    Eq(usize),
    /// `up: g·x ≤ h` and `down: −κ g·x ≤ −κ h` merged into `g·x = h`.
    Pair { up: usize, down: usize, kappa: f64 },
}

pub(super) enum PresolveResult {
    Reduced(Reduced),
    Infeasible(FarkasCertificate),
}

pub(super) struct Reduced {
    n_orig: usize,
    /// Reduced index per original variable, `None` if fixed.
    map: Vec<Option<usize>>,
    orig_of: Vec<usize>,
    fixed_value: Vec<f64>,
    fix_order: Vec<usize>,
    lb_src: Vec<BoundSrc>,
    ub_src: Vec<BoundSrc>,
    lb_der: Vec<Option<Deriv>>,
    ub_der: Vec<Option<Deriv>>,
    hess: Vec<(usize, usize, f64)>,
    c: Vec<f64>,
    eq_rows: Vec<LinRow>,
    eq_origin: Vec<EqOrigin>,
    le_rows: Vec<LinRow>,
    le_origin: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

const FIX_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

struct State<'a> {
    qp: &'a ConvexQp,
    lb: Vec<f64>,
    ub: Vec<f64>,
    lb_src: Vec<BoundSrc>,
    ub_src: Vec<BoundSrc>,
    lb_der: Vec<Option<Deriv>>,
    ub_der: Vec<Option<Deriv>>,
    fixed: Vec<Option<f64>>,
    fix_order: Vec<usize>,
    eq_active: Vec<bool>,
    le_active: Vec<bool>,
}

impl<'a> State<'a> {
    fn new(qp: &'a ConvexQp) -> Self {
        let n = qp.n;
        Self {
            qp,
            lb: qp.lower.clone(),
            ub: qp.upper.clone(),
            lb_src: vec![BoundSrc::Original; n],
            ub_src: vec![BoundSrc::Original; n],
            lb_der: (0..n)
                .map(|j| qp.lower[j].is_finite().then(|| vec![(CRef::Lower(j), 1.0)]))
                .collect(),
            ub_der: (0..n)
                .map(|j| qp.upper[j].is_finite().then(|| vec![(CRef::Upper(j), 1.0)]))
                .collect(),
            fixed: vec![None; n],
            fix_order: Vec::new(),
            eq_active: vec![true; qp.eq.len()],
            le_active: vec![true; qp.le.len()],
        }
    }

    /// Free coefficients (merged duplicates) and the rhs with fixed terms removed.
    fn reduce_row(&self, row: &LinRow) -> (Vec<(usize, f64)>, f64) {
        let mut rhs = row.rhs;
        let mut free: Vec<(usize, f64)> = Vec::with_capacity(row.coeffs.len());
        for &(j, a) in &row.coeffs {
            match self.fixed[j] {
                Some(v) => rhs -= a * v,
                None => free.push((j, a)),
            }
        }
        free.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(free.len());
        for (j, a) in free {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        (merged, rhs)
    }

    /// Combination `m·row` with every fixed variable eliminated by its bound derivations.
    fn row_combination(&self, cref: CRef, row: &LinRow, m: f64, skip: Option<usize>) -> Deriv {
        let mut out = vec![(cref, m)];
        let mut coef: HashMap<usize, f64> = HashMap::new();
        for &(j, a) in &row.coeffs {
            if Some(j) != skip && self.fixed[j].is_some() {
                *coef.entry(j).or_insert(0.0) += m * a;
            }
        }
        let mut keys: Vec<_> = coef.into_iter().collect();
        keys.sort_by_key(|e| e.0);
        for (j, c) in keys {
            if c > 0.0 {
                extend_scaled(&mut out, self.lb_der[j].as_ref().expect("fixed var has bounds"), c);
            } else if c < 0.0 {
                extend_scaled(&mut out, self.ub_der[j].as_ref().expect("fixed var has bounds"), -c);
            }
        }
        out
    }

    fn certificate(&self, comb: &Deriv) -> FarkasCertificate {
        let mut cert = FarkasCertificate::zeros(self.qp);
        accumulate(&mut cert, comb);
        cert
    }

    fn fix(&mut self, j: usize, v: f64) {
        self.fixed[j] = Some(v);
        self.fix_order.push(j);
    }

    fn run(&mut self) -> Result<(), FarkasCertificate> {
        let qp = self.qp;
        loop {
            let mut changed = false;
            for r in 0..qp.eq.len() {
                if !self.eq_active[r] {
                    continue;
                }
                let (free, rhs) = self.reduce_row(&qp.eq[r]);
                match free.len() {
                    0 => {
                        if rhs.abs() > FEAS_TOL * (1.0 + qp.eq[r].rhs.abs()) {
                            let m = if rhs > 0.0 { -1.0 } else { 1.0 };
                            let comb = self.row_combination(CRef::Eq(r), &qp.eq[r], m, None);
                            return Err(self.certificate(&comb));
                        }
                        self.eq_active[r] = false;
                        changed = true;
                    }
                    1 => {
                        let (j, a) = free[0];
                        let v = rhs / a;
                        let up = self.row_combination(CRef::Eq(r), &qp.eq[r], 1.0 / a, Some(j));
                        let lo = self.row_combination(CRef::Eq(r), &qp.eq[r], -1.0 / a, Some(j));
                        if v > self.ub[j] + FEAS_TOL * (1.0 + v.abs()) {
                            let mut comb = lo;
                            extend_scaled(&mut comb, self.ub_der[j].as_ref().unwrap(), 1.0);
                            return Err(self.certificate(&comb));
                        }
                        if v < self.lb[j] - FEAS_TOL * (1.0 + v.abs()) {
                            let mut comb = up;
                            extend_scaled(&mut comb, self.lb_der[j].as_ref().unwrap(), 1.0);
                            return Err(self.certificate(&comb));
                        }
                        self.lb[j] = v;
                        self.ub[j] = v;
                        self.lb_src[j] = BoundSrc::Eq { row: r, coef: a };
                        self.ub_src[j] = BoundSrc::Eq { row: r, coef: a };
                        self.lb_der[j] = Some(lo);
                        self.ub_der[j] = Some(up);
                        self.fix(j, v);
                        self.eq_active[r] = false;
                        changed = true;
                    }
                    _ => {}
                }
            }
            for r in 0..qp.le.len() {
                if !self.le_active[r] {
                    continue;
                }
                let (free, rhs) = self.reduce_row(&qp.le[r]);
                match free.len() {
                    0 => {
                        if rhs < -FEAS_TOL * (1.0 + qp.le[r].rhs.abs()) {
                            let comb = self.row_combination(CRef::Le(r), &qp.le[r], 1.0, None);
                            return Err(self.certificate(&comb));
                        }
                        self.le_active[r] = false;
                        changed = true;
                    }
                    1 => {
                        let (j, a) = free[0];
                        let v = rhs / a;
                        let comb = self.row_combination(CRef::Le(r), &qp.le[r], 1.0 / a.abs(), Some(j));
                        if a > 0.0 {
                            if v < self.ub[j] {
                                self.ub[j] = v;
                                self.ub_src[j] = BoundSrc::Le { row: r, coef: a };
                                self.ub_der[j] = Some(comb);
                            }
                        } else if v > self.lb[j] {
                            self.lb[j] = v;
                            self.lb_src[j] = BoundSrc::Le { row: r, coef: a };
                            self.lb_der[j] = Some(comb);
                        }
                        self.le_active[r] = false;
                        changed = true;
                    }
                    _ => {}
                }
            }
            for j in 0..qp.n {
                if self.fixed[j].is_some() {
                    continue;
                }
                let (l, u) = (self.lb[j], self.ub[j]);
                if l > u + FEAS_TOL * (1.0 + l.abs().max(u.abs())) {
                    let mut comb = self.lb_der[j].clone().unwrap();
                    extend_scaled(&mut comb, self.ub_der[j].as_ref().unwrap(), 1.0);
                    return Err(self.certificate(&comb));
                }
                if l.is_finite() && u.is_finite() && u - l <= FIX_TOL * (1.0 + l.abs()) {
                    self.fix(j, 0.5 * (l + u));
                    changed = true;
                }
            }
            if !changed {
                return Ok(());
            }
        }
    }
}

fn extend_scaled(out: &mut Deriv, d: &Deriv, s: f64) {
    out.extend(d.iter().map(|&(c, m)| (c, m * s)));
}

fn accumulate(cert: &mut FarkasCertificate, comb: &Deriv) {
    for &(c, m) in comb {
        match c {
            CRef::Eq(r) => cert.eq[r] += m,
            CRef::Le(r) => cert.le[r] += m,
            CRef::Lower(j) => cert.lower[j] += m,
            CRef::Upper(j) => cert.upper[j] += m,
        }
    }
}

fn pair_key(coeffs: &[(usize, f64)]) -> (Vec<(usize, i64)>, f64) {
    let s = coeffs[0].1;
    let key = coeffs
        .iter()
        .map(|&(j, a)| (j, ((a / s) * 1e10).round() as i64))
        .collect();
    (key, s)
}

pub(super) fn presolve(qp: &ConvexQp) -> PresolveResult {
    let mut st = State::new(qp);
    if let Err(cert) = st.run() {
        return PresolveResult::Infeasible(cert);
    }

    let n = qp.n;
    let mut map = vec![None; n];
    let mut orig_of = Vec::new();
    for j in 0..n {
        if st.fixed[j].is_none() {
            map[j] = Some(orig_of.len());
            orig_of.push(j);
        }
    }
    let fixed_value: Vec<f64> = (0..n).map(|j| st.fixed[j].unwrap_or(0.0)).collect();
    let nr = orig_of.len();

    let mut c: Vec<f64> = orig_of.iter().map(|&j| qp.linear[j]).collect();
    let mut hess = Vec::new();
    for &(i, j, h) in &qp.hessian {
        match (map[i], map[j]) {
            (Some(a), Some(b)) => hess.push((a.min(b), a.max(b), h)),
            (Some(a), None) => c[a] += h * fixed_value[j],
            (None, Some(b)) => c[b] += h * fixed_value[i],
            (None, None) => {}
        }
    }

    let remap = |coeffs: Vec<(usize, f64)>| -> Vec<(usize, f64)> {
        coeffs.into_iter().map(|(j, a)| (map[j].unwrap(), a)).collect()
    };

    let mut eq_rows = Vec::new();
    let mut eq_origin = Vec::new();
    for r in 0..qp.eq.len() {
        if st.eq_active[r] {
            let (free, rhs) = st.reduce_row(&qp.eq[r]);
            eq_rows.push(LinRow::new(remap(free), rhs));
            eq_origin.push(EqOrigin::Eq(r));
        }
    }

    // Opposite inequality pairs with matching right-hand sides become equalities.
    let mut reduced_le: Vec<Option<(Vec<(usize, f64)>, f64)>> = vec![None; qp.le.len()];
    let mut groups: HashMap<Vec<(usize, i64)>, Vec<(usize, f64)>> = HashMap::new();
    for r in 0..qp.le.len() {
        if st.le_active[r] {
            let (free, rhs) = st.reduce_row(&qp.le[r]);
            let (key, s) = pair_key(&free);
            groups.entry(key).or_default().push((r, s));
            reduced_le[r] = Some((free, rhs));
        }
    }
    let mut paired = vec![false; qp.le.len()];
    let mut group_list: Vec<_> = groups.into_values().collect();
    group_list.sort_by_key(|g| g[0].0);
    for group in group_list {
        for a in 0..group.len() {
            let (ra, sa) = group[a];
            if paired[ra] || sa < 0.0 {
                continue;
            }
            let ha = reduced_le[ra].as_ref().unwrap().1 / sa;
            for &(rb, sb) in group.iter().skip(a + 1).chain(group.iter().take(a)) {
                if paired[rb] || sb > 0.0 {
                    continue;
                }
                let hb = reduced_le[rb].as_ref().unwrap().1 / sb;
                if (ha - hb).abs() <= FEAS_TOL * (1.0 + ha.abs()) {
                    paired[ra] = true;
                    paired[rb] = true;
                    let (free, rhs) = reduced_le[ra].clone().unwrap();
                    eq_rows.push(LinRow::new(remap(free), rhs));
                    eq_origin.push(EqOrigin::Pair {
                        up: ra,
                        down: rb,
                        kappa: -sb / sa,
                    });
                    break;
                }
            }
        }
    }
    let mut le_rows = Vec::new();
    let mut le_origin = Vec::new();
    for r in 0..qp.le.len() {
        if st.le_active[r] && !paired[r] {
            let (free, rhs) = reduced_le[r].take().unwrap();
            le_rows.push(LinRow::new(remap(free), rhs));
            le_origin.push(r);
        }
    }

    let lower = orig_of.iter().map(|&j| st.lb[j]).collect();
    let upper = orig_of.iter().map(|&j| st.ub[j]).collect();
    debug_assert_eq!(c.len(), nr);
    PresolveResult::Reduced(Reduced {
        n_orig: n,
        map,
        orig_of,
        fixed_value,
        fix_order: st.fix_order,
        lb_src: st.lb_src,
        ub_src: st.ub_src,
        lb_der: st.lb_der,
        ub_der: st.ub_der,
        hess,
        c,
        eq_rows,
        eq_origin,
        le_rows,
        le_origin,
        lower,
        upper,
    })
}

/// Reduced-space primal-dual point.
#[derive(Debug, Clone, Default)]
pub(super) struct ReducedPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub zl: Vec<f64>,
    pub zu: Vec<f64>,
}

impl Reduced {
    pub(super) fn ipm_problem(&self) -> IpmProblem {
        IpmProblem {
            n: self.orig_of.len(),
            hess: self.hess.clone(),
            c: self.c.clone(),
            eq: self.eq_rows.clone(),
            le: self.le_rows.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }

    fn full_x(&self, xr: &[f64]) -> Vec<f64> {
        (0..self.n_orig)
            .map(|j| match self.map[j] {
                Some(k) => xr[k],
                None => self.fixed_value[j],
            })
            .collect()
    }

    pub(super) fn postsolve(&self, qp: &ConvexQp, p: &ReducedPoint, iterations: usize) -> QpSolution {
        let x = self.full_x(&p.x);
        let mut eq = vec![0.0; qp.eq.len()];
        let mut le = vec![0.0; qp.le.len()];
        let mut lower = vec![0.0; qp.n];
        let mut upper = vec![0.0; qp.n];
        for (k, origin) in self.eq_origin.iter().enumerate() {
            let y = p.y[k];
            match *origin {
                EqOrigin::Eq(r) => eq[r] = y,
                EqOrigin::Pair { up, down, kappa } => {
                    if y >= 0.0 {
                        le[up] += y;
                    } else {
                        le[down] += -y / kappa;
                    }
                }
            }
        }
        for (k, &r) in self.le_origin.iter().enumerate() {
            le[r] = p.z[k];
        }
        for (k, &j) in self.orig_of.iter().enumerate() {
            assign_lower(self.lb_src[j], j, p.zl[k], &mut eq, &mut le, &mut lower);
            assign_upper(self.ub_src[j], j, p.zu[k], &mut eq, &mut le, &mut upper);
        }

        if !self.fix_order.is_empty() {
            let mut eq_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); qp.n];
            for (r, row) in qp.eq.iter().enumerate() {
                for &(j, a) in &row.coeffs {
                    eq_cols[j].push((r, a));
                }
            }
            let mut le_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); qp.n];
            for (r, row) in qp.le.iter().enumerate() {
                for &(j, a) in &row.coeffs {
                    le_cols[j].push((r, a));
                }
            }
            let hx = qp.hessian_times(&x);
            for &j in self.fix_order.iter().rev() {
                let mut rc = hx[j] + qp.linear[j] - lower[j] + upper[j];
                rc += eq_cols[j].iter().map(|&(r, a)| a * eq[r]).sum::<f64>();
                rc += le_cols[j].iter().map(|&(r, a)| a * le[r]).sum::<f64>();
                if let BoundSrc::Eq { row, coef } = self.lb_src[j] {
                    eq[row] -= rc / coef;
                } else if rc > 0.0 {
                    assign_lower(self.lb_src[j], j, rc, &mut eq, &mut le, &mut lower);
                } else if rc < 0.0 {
                    assign_upper(self.ub_src[j], j, -rc, &mut eq, &mut le, &mut upper);
                }
            }
        }

        let mut sol = QpSolution {
            value: qp.objective(&x),
            x,
            eq_duals: eq,
            le_duals: le,
            lower_duals: lower,
            upper_duals: upper,
            iterations,
            kkt: Default::default(),
        };
        sol.kkt = super::kkt_residuals(qp, &sol);
        sol
    }

    pub(super) fn expand_certificate(&self, qp: &ConvexQp, p: &ReducedPoint) -> FarkasCertificate {
        let mut comb: Deriv = Vec::new();
        let mut fixed_coef: HashMap<usize, f64> = HashMap::new();
        let mut add_row = |comb: &mut Deriv, cref: CRef, row: &LinRow, m: f64| {
            comb.push((cref, m));
            for &(j, a) in &row.coeffs {
                if self.map[j].is_none() {
                    *fixed_coef.entry(j).or_insert(0.0) += m * a;
                }
            }
        };
        for (k, origin) in self.eq_origin.iter().enumerate() {
            let y = p.y[k];
            match *origin {
                EqOrigin::Eq(r) => add_row(&mut comb, CRef::Eq(r), &qp.eq[r], y),
                EqOrigin::Pair { up, down, kappa } => {
                    if y >= 0.0 {
                        add_row(&mut comb, CRef::Le(up), &qp.le[up], y);
                    } else {
                        add_row(&mut comb, CRef::Le(down), &qp.le[down], -y / kappa);
                    }
                }
            }
        }
        for (k, &r) in self.le_origin.iter().enumerate() {
            add_row(&mut comb, CRef::Le(r), &qp.le[r], p.z[k]);
        }
        for (k, &j) in self.orig_of.iter().enumerate() {
            if p.zl[k] > 0.0 {
                if let Some(d) = &self.lb_der[j] {
                    extend_scaled(&mut comb, d, p.zl[k]);
                }
            }
            if p.zu[k] > 0.0 {
                if let Some(d) = &self.ub_der[j] {
                    extend_scaled(&mut comb, d, p.zu[k]);
                }
            }
        }
        let mut keys: Vec<_> = fixed_coef.into_iter().collect();
        keys.sort_by_key(|e| e.0);
        for (j, cj) in keys {
            if cj > 0.0 {
                extend_scaled(&mut comb, self.lb_der[j].as_ref().unwrap(), cj);
            } else if cj < 0.0 {
                extend_scaled(&mut comb, self.ub_der[j].as_ref().unwrap(), -cj);
            }
        }
        let mut cert = FarkasCertificate::zeros(qp);
        accumulate(&mut cert, &comb);
        cert
    }

    pub(super) fn expand_ray(&self, qp: &ConvexQp, ray: &[f64]) -> Vec<f64> {
        (0..qp.n).map(|j| self.map[j].map_or(0.0, |k| ray[k])).collect()
    }
}

fn assign_lower(src: BoundSrc, j: usize, v: f64, eq: &mut [f64], le: &mut [f64], lower: &mut [f64]) {
    if v == 0.0 {
        return;
    }
    match src {
        BoundSrc::Original => lower[j] += v,
        BoundSrc::Le { row, coef } => le[row] += v / coef.abs(),
        BoundSrc::Eq { row, coef } => eq[row] += v / coef,
    }
}

fn assign_upper(src: BoundSrc, j: usize, v: f64, eq: &mut [f64], le: &mut [f64], upper: &mut [f64]) {
    if v == 0.0 {
        return;
    }
    match src {
        BoundSrc::Original => upper[j] += v,
        BoundSrc::Le { row, coef } => le[row] += v / coef.abs(),
        BoundSrc::Eq { row, coef } => eq[row] -= v / coef,
    }
}
