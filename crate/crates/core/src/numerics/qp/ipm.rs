//! Mehrotra predictor-corrector interior point method on the presolved
//! problem.
//!
//! Rows are equilibrated and the objective is scaled before iterating; the
//! returned point is in the unscaled reduced space.

use std::collections::BTreeMap;

use super::presolve::ReducedPoint;
use super::{LinRow, QpSettings, UnionFind};
use crate::numerics::dense::{chol_solve, cholesky_guarded};

#[derive(Debug, Clone)]
pub(super) struct IpmProblem {
    pub n: usize,
    pub hess: Vec<(usize, usize, f64)>,
    pub c: Vec<f64>,
    pub eq: Vec<LinRow>,
    pub le: Vec<LinRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Status {
    Converged,
    IterationLimit,
    Diverged,
}

pub(super) struct Run {
    pub status: Status,
    pub point: ReducedPoint,
    pub iterations: usize,
    /// Largest relative primal and dual residual of `point`.
    pub accuracy: f64,
    /// Relative primal residual of `point`.
    pub primal: f64,
    /// Total complementarity of `point` in objective units.
    pub gap: f64,
}

const STALL_ITERS: usize = 30;
const CORRECTORS: usize = 2;
const REG_PRIMAL: f64 = 1e-9;
const REG_DUAL: f64 = 1e-9;
const TINY_PIVOT: f64 = 1e-15;
const DIVERGED: f64 = 1e12;
const STEP_FRACTION: f64 = 0.995;

struct Scaled {
    n: usize,
    hess: Vec<(usize, usize, f64)>,
    c: Vec<f64>,
    eq: Vec<LinRow>,
    le: Vec<LinRow>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    eq_scale: Vec<f64>,
    le_scale: Vec<f64>,
    cost_scale: f64,
}

fn row_scale(row: &LinRow) -> f64 {
    let m = row.coeffs.iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
    if m > 0.0 {
        1.0 / m
    } else {
        1.0
    }
}

impl Scaled {
    fn new(p: &IpmProblem) -> Self {
        let scale_rows = |rows: &[LinRow]| -> (Vec<LinRow>, Vec<f64>) {
            let scales: Vec<f64> = rows.iter().map(row_scale).collect();
            let scaled = rows
                .iter()
                .zip(&scales)
                .map(|(r, &s)| LinRow::new(r.coeffs.iter().map(|&(j, a)| (j, a * s)).collect(), r.rhs * s))
                .collect();
            (scaled, scales)
        };
        let (eq, eq_scale) = scale_rows(&p.eq);
        let (le, le_scale) = scale_rows(&p.le);
        let cmax = p.c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let hmax = p.hess.iter().fold(0.0f64, |m, e| m.max(e.2.abs()));
        let cost_scale = 1.0 / cmax.max(hmax).max(1.0);
        Self {
            n: p.n,
            hess: p.hess.iter().map(|&(i, j, h)| (i, j, h * cost_scale)).collect(),
            c: p.c.iter().map(|v| v * cost_scale).collect(),
            eq,
            le,
            lower: p.lower.clone(),
            upper: p.upper.clone(),
            eq_scale,
            le_scale,
            cost_scale,
        }
    }

    fn hess_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(i, j, h) in &self.hess {
            out[i] += h * x[j];
            if i != j {
                out[j] += h * x[i];
            }
        }
        out
    }
}

/// Block decomposition of the reduced KKT matrix.
struct Structure {
    blocks: Vec<Vec<usize>>,
    block_hess: Vec<Vec<(usize, usize, f64)>>,
    block_diag_only: Vec<bool>,
    block_le: Vec<Vec<usize>>,
    le_local: Vec<Vec<(usize, f64)>>,
    /// Per eq row: (block, local coefficients).
    eq_parts: Vec<Vec<(usize, Vec<(usize, f64)>)>>,
    block_eq: Vec<Vec<usize>>,
    eq_groups: Vec<Vec<usize>>,
    eq_group_of: Vec<usize>,
    eq_pos: Vec<usize>,
}

impl Structure {
    fn new(sc: &Scaled) -> Self {
        let n = sc.n;
        let mut uf = UnionFind::new(n);
        for &(i, j, _) in &sc.hess {
            uf.union(i, j);
        }
        for row in &sc.le {
            for w in row.coeffs.windows(2) {
                uf.union(w[0].0, w[1].0);
            }
        }
        let mut root_block: BTreeMap<usize, usize> = BTreeMap::new();
        let mut block_of = vec![0; n];
        let mut local = vec![0; n];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for j in 0..n {
            let r = uf.find(j);
            let b = *root_block.entry(r).or_insert_with(|| {
                blocks.push(Vec::new());
                blocks.len() - 1
            });
            block_of[j] = b;
            local[j] = blocks[b].len();
            blocks[b].push(j);
        }
        let nb = blocks.len();
        let mut block_hess = vec![Vec::new(); nb];
        let mut block_diag_only = vec![true; nb];
        for &(i, j, h) in &sc.hess {
            let b = block_of[i];
            block_hess[b].push((local[i], local[j], h));
            if i != j {
                block_diag_only[b] = false;
            }
        }
        let mut block_le = vec![Vec::new(); nb];
        let mut le_local = Vec::with_capacity(sc.le.len());
        for (r, row) in sc.le.iter().enumerate() {
            if let Some(&(j0, _)) = row.coeffs.first() {
                block_le[block_of[j0]].push(r);
            }
            le_local.push(row.coeffs.iter().map(|&(j, a)| (local[j], a)).collect());
        }
        let mut eq_parts = Vec::with_capacity(sc.eq.len());
        let mut block_eq = vec![Vec::new(); nb];
        for (r, row) in sc.eq.iter().enumerate() {
            let mut parts: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
            for &(j, a) in &row.coeffs {
                parts.entry(block_of[j]).or_default().push((local[j], a));
            }
            for &b in parts.keys() {
                block_eq[b].push(r);
            }
            eq_parts.push(parts.into_iter().collect::<Vec<_>>());
        }
        // Equality rows sharing a block land in the same Schur group.
        let me = sc.eq.len();
        let mut guf = UnionFind::new(me);
        for rows in &block_eq {
            for w in rows.windows(2) {
                guf.union(w[0], w[1]);
            }
        }
        let mut root_group: BTreeMap<usize, usize> = BTreeMap::new();
        let mut eq_groups: Vec<Vec<usize>> = Vec::new();
        let mut eq_group_of = vec![0; me];
        let mut eq_pos = vec![0; me];
        for r in 0..me {
            let root = guf.find(r);
            let g = *root_group.entry(root).or_insert_with(|| {
                eq_groups.push(Vec::new());
                eq_groups.len() - 1
            });
            eq_group_of[r] = g;
            eq_pos[r] = eq_groups[g].len();
            eq_groups[g].push(r);
        }
        Self {
            blocks,
            block_hess,
            block_diag_only,
            block_le,
            le_local,
            eq_parts,
            block_eq,
            eq_groups,
            eq_group_of,
            eq_pos,
        }
    }
}

enum BlockFactor {
    Dense {
        n: usize,
        l: Vec<f64>,
    },
    LowRank(LowRank),
}

/// `D + Gᵀ W G` with diagonal `D`. Variables with a well-sized diagonal are
/// handled through the Woodbury identity; the few with a vanishing diagonal
/// (free epigraph variables, say) are eliminated through a small Schur
/// complement.
struct LowRank {
    /// Zero on the vanishing set.
    dinv: Vec<f64>,
    rows: Vec<usize>,
    m: Vec<f64>,
    small: Vec<usize>,
    /// `K₁₁⁻¹ K₁₂` columns, one per vanishing variable.
    kinv_k12: Vec<Vec<f64>>,
    /// `W G₂` coefficients per row and vanishing variable.
    wg2: Vec<Vec<f64>>,
    s2: Vec<f64>,
}

const MAX_SMALL: usize = 8;

impl LowRank {
    fn build(st: &Structure, b: usize, wt: &Weights) -> Option<Self> {
        let vars = &st.blocks[b];
        let nb = vars.len();
        let mut d: Vec<f64> = vars.iter().map(|&j| wt.dbound[j] + REG_PRIMAL).collect();
        for &(i, _, h) in &st.block_hess[b] {
            d[i] += h;
        }
        let dmax = d.iter().cloned().fold(0.0f64, f64::max);
        let small: Vec<usize> = (0..nb).filter(|&i| d[i] < 1e-6 * dmax).collect();
        if small.len() > MAX_SMALL {
            return None;
        }
        let mut pos2 = vec![usize::MAX; nb];
        for (q, &i) in small.iter().enumerate() {
            pos2[i] = q;
        }
        let dinv: Vec<f64> = (0..nb)
            .map(|i| if pos2[i] == usize::MAX { 1.0 / d[i] } else { 0.0 })
            .collect();
        let rows = st.block_le[b].clone();
        let k = rows.len();
        // M = W⁻¹ + G₁ D₁⁻¹ G₁ᵀ
        let mut dense_rows = vec![vec![0.0; nb]; k];
        for (a, &r) in rows.iter().enumerate() {
            for &(j, v) in &st.le_local[r] {
                dense_rows[a][j] += v;
            }
        }
        let mut m = vec![0.0; k * k];
        for a in 0..k {
            for bb in 0..=a {
                let mut v = 0.0;
                for &(j, g) in &st.le_local[rows[a]] {
                    v += g * dinv[j] * dense_rows[bb][j];
                }
                m[a * k + bb] = v;
                m[bb * k + a] = v;
            }
            m[a * k + a] += 1.0 / wt.w[rows[a]];
        }
        cholesky_guarded(&mut m, k, TINY_PIVOT);
        let p = small.len();
        let wg2: Vec<Vec<f64>> = rows
            .iter()
            .enumerate()
            .map(|(a, &r)| small.iter().map(|&i| wt.w[r] * dense_rows[a][i]).collect())
            .collect();
        let mut lr = LowRank {
            dinv,
            rows,
            m,
            small,
            kinv_k12: Vec::new(),
            wg2,
            s2: Vec::new(),
        };
        let mut k12 = Vec::with_capacity(p);
        for q in 0..p {
            let mut col = vec![0.0; nb];
            for (a, &r) in lr.rows.iter().enumerate() {
                let c = lr.wg2[a][q];
                if c != 0.0 {
                    for &(j, g) in &st.le_local[r] {
                        if pos2[j] == usize::MAX {
                            col[j] += g * c;
                        }
                    }
                }
            }
            k12.push(col);
        }
        let mut kinv = Vec::with_capacity(p);
        for col in &k12 {
            let mut v = col.clone();
            lr.woodbury(st, &mut v);
            kinv.push(v);
        }
        let mut s2 = vec![0.0; p * p];
        for q in 0..p {
            for q2 in 0..p {
                let mut v = 0.0;
                for (a, _) in lr.rows.iter().enumerate() {
                    v += lr.wg2[a][q] * dense_rows[a][lr.small[q2]];
                }
                v -= k12[q].iter().zip(&kinv[q2]).map(|(x, y)| x * y).sum::<f64>();
                s2[q * p + q2] = v;
            }
            s2[q * p + q] += d[lr.small[q]];
        }
        for q in 0..p {
            for q2 in 0..q {
                let avg = 0.5 * (s2[q * p + q2] + s2[q2 * p + q]);
                s2[q * p + q2] = avg;
                s2[q2 * p + q] = avg;
            }
        }
        cholesky_guarded(&mut s2, p, TINY_PIVOT);
        lr.s2 = s2;
        lr.kinv_k12 = kinv;
        Some(lr)
    }

    /// `K₁₁⁻¹ v`; entries on the vanishing set come back zero.
    fn woodbury(&self, st: &Structure, v: &mut [f64]) {
        for (x, d) in v.iter_mut().zip(&self.dinv) {
            *x *= d;
        }
        let k = self.rows.len();
        let mut u: Vec<f64> = self
            .rows
            .iter()
            .map(|&r| st.le_local[r].iter().map(|&(j, g)| g * v[j]).sum())
            .collect();
        chol_solve(&self.m, k, &mut u);
        for (a, &r) in self.rows.iter().enumerate() {
            for &(j, g) in &st.le_local[r] {
                v[j] -= self.dinv[j] * g * u[a];
            }
        }
    }

    fn solve(&self, st: &Structure, v: &mut [f64]) {
        let p = self.small.len();
        let r2: Vec<f64> = self.small.iter().map(|&i| v[i]).collect();
        self.woodbury(st, v);
        if p == 0 {
            return;
        }
        // rhs₂ = r₂ − K₂₁ t₁ with K₂₁ = G₂ᵀ W G₁
        let mut x2 = r2;
        for (a, &r) in self.rows.iter().enumerate() {
            let gt: f64 = st.le_local[r].iter().map(|&(j, g)| g * v[j]).sum();
            for q in 0..p {
                x2[q] -= self.wg2[a][q] * gt;
            }
        }
        chol_solve(&self.s2, p, &mut x2);
        for q in 0..p {
            for (x, c) in v.iter_mut().zip(&self.kinv_k12[q]) {
                *x -= c * x2[q];
            }
            v[self.small[q]] = x2[q];
        }
    }
}

struct Factor {
    blocks: Vec<BlockFactor>,
    schur: Vec<Vec<f64>>,
}

/// Scaling state of the current iterate (diagonal parts of the reduced matrix).
struct Weights {
    w: Vec<f64>,
    dbound: Vec<f64>,
}

impl Factor {
    fn build(st: &Structure, wt: &Weights) -> Self {
        let mut blocks = Vec::with_capacity(st.blocks.len());
        for (b, vars) in st.blocks.iter().enumerate() {
            let nb = vars.len();
            let nrows = st.block_le[b].len();
            let low_rank = st.block_diag_only[b] && nb > 40 && 2 * nrows < nb;
            let low = if low_rank { LowRank::build(st, b, wt) } else { None };
            if let Some(lr) = low {
                blocks.push(BlockFactor::LowRank(lr));
            } else {
                let mut k = vec![0.0; nb * nb];
                for (i, &j) in vars.iter().enumerate() {
                    k[i * nb + i] += wt.dbound[j] + REG_PRIMAL;
                }
                for &(i, j, h) in &st.block_hess[b] {
                    k[i * nb + j] += h;
                    if i != j {
                        k[j * nb + i] += h;
                    }
                }
                for &r in &st.block_le[b] {
                    let w = wt.w[r];
                    let coeffs = &st.le_local[r];
                    for &(i, a) in coeffs {
                        for &(j, g) in coeffs {
                            k[i * nb + j] += w * a * g;
                        }
                    }
                }
                cholesky_guarded(&mut k, nb, TINY_PIVOT);
                blocks.push(BlockFactor::Dense { n: nb, l: k });
            }
        }
        let mut f = Factor {
            blocks,
            schur: Vec::new(),
        };
        let mut schur: Vec<Vec<f64>> = st.eq_groups.iter().map(|g| vec![0.0; g.len() * g.len()]).collect();
        for (b, rows) in st.block_eq.iter().enumerate() {
            let nb = st.blocks[b].len();
            for &r in rows {
                let mut v = vec![0.0; nb];
                for (bb, coeffs) in &st.eq_parts[r] {
                    if *bb == b {
                        for &(j, a) in coeffs {
                            v[j] += a;
                        }
                    }
                }
                f.block_solve(st, b, &mut v);
                let g = st.eq_group_of[r];
                let gsize = st.eq_groups[g].len();
                let pr = st.eq_pos[r];
                for &q in rows {
                    let mut s = 0.0;
                    for (bb, coeffs) in &st.eq_parts[q] {
                        if *bb == b {
                            for &(j, a) in coeffs {
                                s += a * v[j];
                            }
                        }
                    }
                    schur[g][st.eq_pos[q] * gsize + pr] += s;
                }
            }
        }
        for (g, m) in schur.iter_mut().enumerate() {
            let k = st.eq_groups[g].len();
            for i in 0..k {
                m[i * k + i] += REG_DUAL * m[i * k + i].max(1e-6);
            }
            cholesky_guarded(m, k, TINY_PIVOT);
        }
        f.schur = schur;
        f
    }

    fn block_solve(&self, st: &Structure, b: usize, v: &mut [f64]) {
        match &self.blocks[b] {
            BlockFactor::Dense { n, l } => chol_solve(l, *n, v),
            BlockFactor::LowRank(lr) => lr.solve(st, v),
        }
    }

    /// `K⁻¹ r` for a full-length vector.
    fn k_solve(&self, st: &Structure, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; r.len()];
        for (b, vars) in st.blocks.iter().enumerate() {
            let mut v: Vec<f64> = vars.iter().map(|&j| r[j]).collect();
            self.block_solve(st, b, &mut v);
            for (i, &j) in vars.iter().enumerate() {
                out[j] = v[i];
            }
        }
        out
    }

    /// Solves `K dx + Aᵀ dy = rx`, `A dx − δ dy = ry`.
    fn solve(&self, sc: &Scaled, st: &Structure, rx: &[f64], ry: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let t = self.k_solve(st, rx);
        let me = sc.eq.len();
        let mut rhs = vec![0.0; me];
        for (r, row) in sc.eq.iter().enumerate() {
            rhs[r] = row.eval(&t) - ry[r];
        }
        let mut dy = vec![0.0; me];
        for (g, rows) in st.eq_groups.iter().enumerate() {
            let mut v: Vec<f64> = rows.iter().map(|&r| rhs[r]).collect();
            chol_solve(&self.schur[g], rows.len(), &mut v);
            for (i, &r) in rows.iter().enumerate() {
                dy[r] = v[i];
            }
        }
        let mut rx2 = rx.to_vec();
        for (row, &y) in sc.eq.iter().zip(&dy) {
            for &(j, a) in &row.coeffs {
                rx2[j] -= a * y;
            }
        }
        (self.k_solve(st, &rx2), dy)
    }
}

#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
    sl: Vec<f64>,
    zl: Vec<f64>,
    su: Vec<f64>,
    zu: Vec<f64>,
}

struct Residuals {
    rd: Vec<f64>,
    rp: Vec<f64>,
    rg: Vec<f64>,
    rl: Vec<f64>,
    ru: Vec<f64>,
}

struct Masks {
    has_l: Vec<bool>,
    has_u: Vec<bool>,
    pairs: usize,
}

/// Infinity norm; NaN entries give `+∞` so they never pass a convergence test.
fn inf_norm(v: &[f64]) -> f64 {
    v.iter()
        .fold(0.0f64, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
}

fn residuals(sc: &Scaled, mk: &Masks, it: &Iterate) -> Residuals {
    let mut rd = sc.hess_times(&it.x);
    for j in 0..sc.n {
        rd[j] += sc.c[j] - it.zl[j] + it.zu[j];
    }
    let rp: Vec<f64> = sc.eq.iter().map(|r| r.eval(&it.x) - r.rhs).collect();
    for (row, &y) in sc.eq.iter().zip(&it.y) {
        for &(j, a) in &row.coeffs {
            rd[j] += a * y;
        }
    }
    let mut rg = Vec::with_capacity(sc.le.len());
    for (i, row) in sc.le.iter().enumerate() {
        rg.push(row.eval(&it.x) + it.s[i] - row.rhs);
        for &(j, a) in &row.coeffs {
            rd[j] += a * it.z[i];
        }
    }
    let rl = (0..sc.n)
        .map(|j| if mk.has_l[j] { it.x[j] - sc.lower[j] - it.sl[j] } else { 0.0 })
        .collect();
    let ru = (0..sc.n)
        .map(|j| if mk.has_u[j] { it.x[j] + it.su[j] - sc.upper[j] } else { 0.0 })
        .collect();
    Residuals { rd, rp, rg, rl, ru }
}

fn max_comp(mk: &Masks, it: &Iterate) -> f64 {
    let mut prods: Vec<f64> = it.s.iter().zip(&it.z).map(|(a, b)| a * b).collect();
    for j in 0..it.x.len() {
        if mk.has_l[j] {
            prods.push(it.sl[j] * it.zl[j]);
        }
        if mk.has_u[j] {
            prods.push(it.su[j] * it.zu[j]);
        }
    }
    inf_norm(&prods)
}

fn mu(mk: &Masks, it: &Iterate) -> f64 {
    if mk.pairs == 0 {
        return 0.0;
    }
    let mut t: f64 = it.s.iter().zip(&it.z).map(|(a, b)| a * b).sum();
    for j in 0..it.x.len() {
        if mk.has_l[j] {
            t += it.sl[j] * it.zl[j];
        }
        if mk.has_u[j] {
            t += it.su[j] * it.zu[j];
        }
    }
    t / mk.pairs as f64
}

struct Dir {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dz: Vec<f64>,
    dsl: Vec<f64>,
    dzl: Vec<f64>,
    dsu: Vec<f64>,
    dzu: Vec<f64>,
}

struct Ctx<'a> {
    sc: &'a Scaled,
    st: &'a Structure,
    mk: &'a Masks,
}

impl Ctx<'_> {
    fn k_times(&self, wt: &Weights, v: &[f64]) -> Vec<f64> {
        let mut out = self.sc.hess_times(v);
        for j in 0..self.sc.n {
            out[j] += wt.dbound[j] * v[j];
        }
        for (r, row) in self.sc.le.iter().enumerate() {
            let gv = row.eval(v) * wt.w[r];
            for &(j, a) in &row.coeffs {
                out[j] += a * gv;
            }
        }
        out
    }

    /// Solves the reduced system with iterative refinement against the
    /// unregularized matrix.
    fn reduced_solve(&self, f: &Factor, wt: &Weights, rx: &[f64], ry: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sc = self.sc;
        let (mut dx, mut dy) = f.solve(sc, self.st, rx, ry);
        let residual = |dx: &[f64], dy: &[f64]| -> (Vec<f64>, Vec<f64>, f64) {
            let mut ex = self.k_times(wt, dx);
            for (row, &y) in sc.eq.iter().zip(dy) {
                for &(j, a) in &row.coeffs {
                    ex[j] += a * y;
                }
            }
            for j in 0..ex.len() {
                ex[j] = rx[j] - ex[j];
            }
            let ey: Vec<f64> = sc.eq.iter().zip(ry).map(|(row, &r)| r - row.eval(dx)).collect();
            let norm = inf_norm(&ex).max(inf_norm(&ey));
            (ex, ey, norm)
        };
        let (mut ex, mut ey, mut norm) = residual(&dx, &dy);
        for _ in 0..3 {
            if norm < 1e-14 {
                break;
            }
            let (cx, cy) = f.solve(sc, self.st, &ex, &ey);
            let nx: Vec<f64> = dx.iter().zip(&cx).map(|(a, b)| a + b).collect();
            let ny: Vec<f64> = dy.iter().zip(&cy).map(|(a, b)| a + b).collect();
            let (ex2, ey2, norm2) = residual(&nx, &ny);
            if !(norm2 < norm) {
                break;
            }
            dx = nx;
            dy = ny;
            ex = ex2;
            ey = ey2;
            norm = norm2;
        }
        (dx, dy)
    }

    /// Gondzio centrality corrector: pushes the complementarity products at
    /// an enlarged trial step back into `[0.1, 10]·target`.
    fn centrality_corrector(&self, f: &Factor, wt: &Weights, it: &Iterate, d: &Dir, alpha: f64, target: f64) -> Option<Dir> {
        if !(target > 0.0) {
            return None;
        }
        let trial = (alpha + 0.2).min(1.0);
        let (lo, hi) = (0.1 * target, 10.0 * target);
        let adjust = |s: f64, ds: f64, z: f64, dz: f64| {
            let v = (s + trial * ds) * (z + trial * dz);
            if v < lo {
                lo - v
            } else if v > hi {
                (hi - v).max(-hi)
            } else {
                0.0
            }
        };
        let n = self.sc.n;
        let mi = self.sc.le.len();
        // the direction solves s·dz + z·ds = −rc
        let rc: Vec<f64> = (0..mi).map(|i| -adjust(it.s[i], d.ds[i], it.z[i], d.dz[i])).collect();
        let rcl: Vec<f64> = (0..n)
            .map(|j| if self.mk.has_l[j] { -adjust(it.sl[j], d.dsl[j], it.zl[j], d.dzl[j]) } else { 0.0 })
            .collect();
        let rcu: Vec<f64> = (0..n)
            .map(|j| if self.mk.has_u[j] { -adjust(it.su[j], d.dsu[j], it.zu[j], d.dzu[j]) } else { 0.0 })
            .collect();
        let zero = Residuals {
            rd: vec![0.0; n],
            rp: vec![0.0; self.sc.eq.len()],
            rg: vec![0.0; mi],
            rl: vec![0.0; n],
            ru: vec![0.0; n],
        };
        let c = self.direction(f, wt, it, &zero, &rc, &rcl, &rcu);
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
        Some(Dir {
            dx: add(&d.dx, &c.dx),
            dy: add(&d.dy, &c.dy),
            ds: add(&d.ds, &c.ds),
            dz: add(&d.dz, &c.dz),
            dsl: add(&d.dsl, &c.dsl),
            dzl: add(&d.dzl, &c.dzl),
            dsu: add(&d.dsu, &c.dsu),
            dzu: add(&d.dzu, &c.dzu),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        f: &Factor,
        wt: &Weights,
        it: &Iterate,
        res: &Residuals,
        rc: &[f64],
        rcl: &[f64],
        rcu: &[f64],
    ) -> Dir {
        let sc = self.sc;
        let mk = self.mk;
        let n = sc.n;
        let mut rx: Vec<f64> = res.rd.iter().map(|v| -v).collect();
        for (i, row) in sc.le.iter().enumerate() {
            let t = wt.w[i] * res.rg[i] - rc[i] / it.s[i];
            for &(j, a) in &row.coeffs {
                rx[j] -= a * t;
            }
        }
        for j in 0..n {
            if mk.has_l[j] {
                rx[j] -= rcl[j] / it.sl[j] + it.zl[j] / it.sl[j] * res.rl[j];
            }
            if mk.has_u[j] {
                rx[j] += rcu[j] / it.su[j] - it.zu[j] / it.su[j] * res.ru[j];
            }
        }
        let ry: Vec<f64> = res.rp.iter().map(|v| -v).collect();
        let (dx, dy) = self.reduced_solve(f, wt, &rx, &ry);
        let mi = sc.le.len();
        let mut ds = vec![0.0; mi];
        let mut dz = vec![0.0; mi];
        for (i, row) in sc.le.iter().enumerate() {
            let gdx = row.eval(&dx);
            ds[i] = -res.rg[i] - gdx;
            dz[i] = (-rc[i] - it.z[i] * ds[i]) / it.s[i];
        }
        let mut dsl = vec![0.0; n];
        let mut dzl = vec![0.0; n];
        let mut dsu = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        for j in 0..n {
            if mk.has_l[j] {
                dsl[j] = dx[j] + res.rl[j];
                dzl[j] = (-rcl[j] - it.zl[j] * dsl[j]) / it.sl[j];
            }
            if mk.has_u[j] {
                dsu[j] = -res.ru[j] - dx[j];
                dzu[j] = (-rcu[j] - it.zu[j] * dsu[j]) / it.su[j];
            }
        }
        Dir {
            dx,
            dy,
            ds,
            dz,
            dsl,
            dzl,
            dsu,
            dzu,
        }
    }
}

fn max_step(v: &[f64], dv: &[f64], mask: Option<&[bool]>) -> f64 {
    let mut a: f64 = 1.0;
    for i in 0..v.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

fn step_limits(mk: &Masks, it: &Iterate, d: &Dir) -> (f64, f64) {
    let ap = max_step(&it.s, &d.ds, None)
        .min(max_step(&it.sl, &d.dsl, Some(&mk.has_l)))
        .min(max_step(&it.su, &d.dsu, Some(&mk.has_u)));
    let ad = max_step(&it.z, &d.dz, None)
        .min(max_step(&it.zl, &d.dzl, Some(&mk.has_l)))
        .min(max_step(&it.zu, &d.dzu, Some(&mk.has_u)));
    (ap, ad)
}

fn axpy(v: &mut [f64], a: f64, d: &[f64]) {
    for (x, dx) in v.iter_mut().zip(d) {
        *x += a * dx;
    }
}

fn initial_point(sc: &Scaled, mk: &Masks) -> Iterate {
    let n = sc.n;
    let mut x = vec![0.0; n];
    for j in 0..n {
        x[j] = match (mk.has_l[j], mk.has_u[j]) {
            (true, true) => 0.5 * (sc.lower[j] + sc.upper[j]),
            (true, false) => sc.lower[j] + 1.0,
            (false, true) => sc.upper[j] - 1.0,
            (false, false) => 0.0,
        };
    }
    let s: Vec<f64> = sc.le.iter().map(|r| (r.rhs - r.eval(&x)).max(1.0)).collect();
    let sl = (0..n)
        .map(|j| if mk.has_l[j] { (x[j] - sc.lower[j]).max(1.0) } else { 1.0 })
        .collect();
    let su = (0..n)
        .map(|j| if mk.has_u[j] { (sc.upper[j] - x[j]).max(1.0) } else { 1.0 })
        .collect();
    Iterate {
        x,
        y: vec![0.0; sc.eq.len()],
        z: vec![1.0; sc.le.len()],
        s,
        sl,
        zl: mk.has_l.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect(),
        su,
        zu: mk.has_u.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect(),
    }
}

fn unscale(sc: &Scaled, mk: &Masks, it: &Iterate) -> ReducedPoint {
    let cs = sc.cost_scale;
    ReducedPoint {
        x: it.x.clone(),
        y: it.y.iter().zip(&sc.eq_scale).map(|(y, d)| y * d / cs).collect(),
        z: it.z.iter().zip(&sc.le_scale).map(|(z, d)| z * d / cs).collect(),
        zl: (0..sc.n).map(|j| if mk.has_l[j] { it.zl[j] / cs } else { 0.0 }).collect(),
        zu: (0..sc.n).map(|j| if mk.has_u[j] { it.zu[j] / cs } else { 0.0 }).collect(),
    }
}

pub(super) fn solve(p: &IpmProblem, settings: &QpSettings) -> Run {
    let sc = Scaled::new(p);
    let st = Structure::new(&sc);
    let n = sc.n;
    let has_l: Vec<bool> = sc.lower.iter().map(|v| v.is_finite()).collect();
    let has_u: Vec<bool> = sc.upper.iter().map(|v| v.is_finite()).collect();
    let pairs = sc.le.len() + has_l.iter().filter(|&&h| h).count() + has_u.iter().filter(|&&h| h).count();
    let mk = Masks { has_l, has_u, pairs };
    let ctx = Ctx { sc: &sc, st: &st, mk: &mk };

    let bnorm = sc
        .eq
        .iter()
        .chain(&sc.le)
        .fold(0.0f64, |m, r| m.max(r.rhs.abs()))
        .max(sc.lower.iter().chain(&sc.upper).filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs())));
    let cnorm = inf_norm(&sc.c);
    let tol = settings.tol;

    let mut it = initial_point(&sc, &mk);
    let mut best = it.clone();
    let mut best_merit = f64::INFINITY;
    let mut best_iter = 0;
    // (relative primal-dual residual, relative primal residual, total complementarity)
    let mut best_parts = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut status = Status::IterationLimit;
    let mut iterations = 0;
    let mut stall_ref = f64::INFINITY;
    let mut stall_iter = 0;

    for iter in 0..=settings.max_iter {
        iterations = iter;
        let res = residuals(&sc, &mk, &it);
        let pres = inf_norm(&res.rp)
            .max(inf_norm(&res.rg))
            .max(inf_norm(&res.rl))
            .max(inf_norm(&res.ru));
        let dres = inf_norm(&res.rd);
        let m = mu(&mk, &it);
        let hx = sc.hess_times(&it.x);
        let obj: f64 = it.x.iter().zip(&sc.c).zip(&hx).map(|((x, c), h)| x * (c + 0.5 * h)).sum();
        let merit = pres / (1.0 + bnorm) + dres / (1.0 + cnorm) + m * mk.pairs as f64 / (1.0 + obj.abs());
        let infeas = pres / (1.0 + bnorm) + dres / (1.0 + cnorm);
        if infeas < 0.5 * stall_ref {
            stall_ref = infeas;
            stall_iter = iter;
        } else if iter - stall_iter >= STALL_ITERS && m < tol {
            // complementarity collapsed while the residuals stopped moving
            break;
        }
        let comp = max_comp(&mk, &it);
        if merit < best_merit {
            best_merit = merit;
            best_iter = iter;
            best = it.clone();
            best_parts = (
                (pres / (1.0 + bnorm)).max(dres / (1.0 + cnorm)),
                pres / (1.0 + bnorm),
                m * mk.pairs as f64 / sc.cost_scale,
            );
        } else if best_merit < tol.sqrt() && (merit > 1e4 * best_merit || iter - best_iter >= 5) {
            // the factorization lost accuracy near the solution
            break;
        }
        if pres <= tol * (1.0 + bnorm) && dres <= tol * (1.0 + cnorm) && comp <= tol {
            status = Status::Converged;
            best = it.clone();
            best_parts = (0.0, 0.0, 0.0);
            break;
        }
        if iter == settings.max_iter {
            break;
        }
        let big = inf_norm(&it.x).max(inf_norm(&it.y)).max(inf_norm(&it.z));
        if !big.is_finite() || big > DIVERGED {
            status = Status::Diverged;
            break;
        }

        let mut w = vec![0.0; sc.le.len()];
        for i in 0..sc.le.len() {
            w[i] = it.z[i] / it.s[i];
        }
        let mut dbound = vec![0.0; n];
        for j in 0..n {
            if mk.has_l[j] {
                dbound[j] += it.zl[j] / it.sl[j];
            }
            if mk.has_u[j] {
                dbound[j] += it.zu[j] / it.su[j];
            }
        }
        let wt = Weights { w, dbound };
        let f = Factor::build(&st, &wt);

        // predictor
        let rc: Vec<f64> = it.s.iter().zip(&it.z).map(|(a, b)| a * b).collect();
        let rcl: Vec<f64> = (0..n).map(|j| if mk.has_l[j] { it.sl[j] * it.zl[j] } else { 0.0 }).collect();
        let rcu: Vec<f64> = (0..n).map(|j| if mk.has_u[j] { it.su[j] * it.zu[j] } else { 0.0 }).collect();
        let aff = ctx.direction(&f, &wt, &it, &res, &rc, &rcl, &rcu);
        let (ap, ad) = step_limits(&mk, &it, &aff);
        let a_aff = ap.min(ad);

        let sigma = if mk.pairs == 0 || m == 0.0 {
            0.0
        } else {
            let mut t = 0.0;
            for i in 0..sc.le.len() {
                t += (it.s[i] + a_aff * aff.ds[i]) * (it.z[i] + a_aff * aff.dz[i]);
            }
            for j in 0..n {
                if mk.has_l[j] {
                    t += (it.sl[j] + a_aff * aff.dsl[j]) * (it.zl[j] + a_aff * aff.dzl[j]);
                }
                if mk.has_u[j] {
                    t += (it.su[j] + a_aff * aff.dsu[j]) * (it.zu[j] + a_aff * aff.dzu[j]);
                }
            }
            let mu_aff = t / mk.pairs as f64;
            (mu_aff / m).powi(3).clamp(0.0, 1.0)
        };

        // corrector
        let target = sigma * m;
        let rc: Vec<f64> = (0..sc.le.len())
            .map(|i| it.s[i] * it.z[i] + aff.ds[i] * aff.dz[i] - target)
            .collect();
        let rcl: Vec<f64> = (0..n)
            .map(|j| {
                if mk.has_l[j] {
                    it.sl[j] * it.zl[j] + aff.dsl[j] * aff.dzl[j] - target
                } else {
                    0.0
                }
            })
            .collect();
        let rcu: Vec<f64> = (0..n)
            .map(|j| {
                if mk.has_u[j] {
                    it.su[j] * it.zu[j] + aff.dsu[j] * aff.dzu[j] - target
                } else {
                    0.0
                }
            })
            .collect();
        let mut d = ctx.direction(&f, &wt, &it, &res, &rc, &rcl, &rcu);
        let (mut ap, mut ad) = step_limits(&mk, &it, &d);
        for _ in 0..CORRECTORS {
            let Some(next) = ctx.centrality_corrector(&f, &wt, &it, &d, ap.min(ad), target) else {
                break;
            };
            let (np, nd) = step_limits(&mk, &it, &next);
            if np.min(nd) < ap.min(ad) + 0.01 {
                break;
            }
            d = next;
            (ap, ad) = (np, nd);
        }
        let alpha = (STEP_FRACTION * ap.min(ad)).min(1.0);
        if !alpha.is_finite() || alpha <= 0.0 {
            status = Status::Diverged;
            break;
        }
        axpy(&mut it.x, alpha, &d.dx);
        axpy(&mut it.y, alpha, &d.dy);
        axpy(&mut it.s, alpha, &d.ds);
        axpy(&mut it.z, alpha, &d.dz);
        axpy(&mut it.sl, alpha, &d.dsl);
        axpy(&mut it.zl, alpha, &d.dzl);
        axpy(&mut it.su, alpha, &d.dsu);
        axpy(&mut it.zu, alpha, &d.dzu);
        for j in 0..n {
            if !mk.has_l[j] {
                it.sl[j] = 1.0;
                it.zl[j] = 0.0;
            }
            if !mk.has_u[j] {
                it.su[j] = 1.0;
                it.zu[j] = 0.0;
            }
        }
    }
    Run {
        status,
        point: unscale(&sc, &mk, &best),
        iterations,
        accuracy: best_parts.0,
        primal: best_parts.1,
        gap: best_parts.2,
    }
}

/// Elastic phase-one LP. Returns reduced-space Farkas multipliers when the
/// minimum total violation is clearly positive.
pub(super) fn phase_one(p: &IpmProblem, settings: &QpSettings) -> Option<ReducedPoint> {
    let n = p.n;
    let mut lp = IpmProblem {
        n,
        hess: Vec::new(),
        c: vec![0.0; n],
        eq: Vec::with_capacity(p.eq.len()),
        le: Vec::with_capacity(p.le.len()),
        lower: p.lower.clone(),
        upper: p.upper.clone(),
    };
    let add = |lp: &mut IpmProblem| {
        lp.n += 1;
        lp.c.push(1.0);
        lp.lower.push(0.0);
        lp.upper.push(f64::INFINITY);
        lp.n - 1
    };
    for row in &p.eq {
        let ep = add(&mut lp);
        let em = add(&mut lp);
        let mut coeffs = row.coeffs.clone();
        coeffs.push((ep, 1.0));
        coeffs.push((em, -1.0));
        lp.eq.push(LinRow::new(coeffs, row.rhs));
    }
    for row in &p.le {
        let t = add(&mut lp);
        let mut coeffs = row.coeffs.clone();
        coeffs.push((t, -1.0));
        lp.le.push(LinRow::new(coeffs, row.rhs));
    }
    let run = solve(&lp, settings);
    if run.status != Status::Converged {
        return None;
    }
    let violation: f64 = run.point.x[n..].iter().sum();
    let scale = 1.0
        + p.eq
            .iter()
            .chain(&p.le)
            .fold(0.0f64, |m, r| m.max(r.rhs.abs()));
    if violation <= 1e-6 * scale {
        return None;
    }
    let mut pt = run.point;
    pt.x.truncate(n);
    pt.zl.truncate(n);
    pt.zu.truncate(n);
    // Dual value of the elastic LP equals the violation; the certificate
    // value is its negation.
    let mut value = 0.0;
    for (row, y) in p.eq.iter().zip(&pt.y) {
        value += row.rhs * y;
    }
    for (row, z) in p.le.iter().zip(&pt.z) {
        value += row.rhs * z;
    }
    for j in 0..n {
        if p.lower[j].is_finite() {
            value -= p.lower[j] * pt.zl[j];
        }
        if p.upper[j].is_finite() {
            value += p.upper[j] * pt.zu[j];
        }
    }
    (value < 0.0).then_some(pt)
}

/// Recession direction of a diverging iterate, if it certifies unboundedness.
pub(super) fn unbounded_ray(p: &IpmProblem, point: &ReducedPoint) -> Option<Vec<f64>> {
    let norm = inf_norm(&point.x);
    if !(norm > 1e6) || !norm.is_finite() {
        return None;
    }
    let ray: Vec<f64> = point.x.iter().map(|v| v / norm).collect();
    let tol = 1e-5;
    let mut hr = vec![0.0; p.n];
    for &(i, j, h) in &p.hess {
        hr[i] += h * ray[j];
        if i != j {
            hr[j] += h * ray[i];
        }
    }
    let hscale = p.hess.iter().fold(1.0f64, |m, e| m.max(e.2.abs()));
    if inf_norm(&hr) > tol * hscale {
        return None;
    }
    for row in &p.eq {
        if row.eval(&ray).abs() > tol * row_scale(row).recip() {
            return None;
        }
    }
    for row in &p.le {
        if row.eval(&ray) > tol * row_scale(row).recip() {
            return None;
        }
    }
    for j in 0..p.n {
        if (p.lower[j].is_finite() && ray[j] < -tol) || (p.upper[j].is_finite() && ray[j] > tol) {
            return None;
        }
    }
    let slope: f64 = p.c.iter().zip(&ray).map(|(c, r)| c * r).sum();
    (slope < -1e-9).then_some(ray)
}
