//! Link flows as quadratic forms in the rectangular voltages.
//!
//! Voltage coordinates are indexed `0..n` for `e` and `n..2n` for `f`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Link, Network};

/// `Σ c·x_a·x_b` over unordered pairs `a ≤ b`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadForm {
    pub terms: BTreeMap<(usize, usize), f64>,
}

impl QuadForm {
    pub fn add(&mut self, a: usize, b: usize, c: f64) {
        let key = (a.min(b), a.max(b));
        *self.terms.entry(key).or_insert(0.0) += c;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(&(a, b), &c)| c * x[a] * x[b]).sum()
    }

    /// Adds `s·∇(form)(x)` to `out`.
    pub fn add_grad(&self, x: &[f64], s: f64, out: &mut [f64]) {
        for (&(a, b), &c) in &self.terms {
            out[a] += s * c * x[b];
            out[b] += s * c * x[a];
        }
    }

    pub fn scaled(&self, s: f64) -> QuadForm {
        QuadForm {
            terms: self.terms.iter().map(|(&k, &c)| (k, s * c)).collect(),
        }
    }

    pub fn plus(&self, other: &QuadForm) -> QuadForm {
        let mut out = self.clone();
        for (&(a, b), &c) in &other.terms {
            out.add(a, b, c);
        }
        out
    }
}

/// Quadratic forms of one link: flows leaving each end and the active loss.
#[derive(Debug, Clone)]
pub struct LinkForms {
    pub p_ij: QuadForm,
    pub p_ji: QuadForm,
    pub q_ij: QuadForm,
    pub q_ji: QuadForm,
    pub loss: QuadForm,
    /// Ratio `−b/g` mapping active to reactive loss.
    pub q_loss_ratio: f64,
}

fn p_form(n: usize, i: usize, j: usize, g: f64, b: f64) -> QuadForm {
    let (ei, fi, ej, fj) = (i, n + i, j, n + j);
    let mut q = QuadForm::default();
    q.add(ei, ei, g);
    q.add(fi, fi, g);
    q.add(ei, ej, -g);
    q.add(fi, fj, -g);
    q.add(ei, fj, b);
    q.add(fi, ej, -b);
    q
}

fn q_form(n: usize, i: usize, j: usize, g: f64, b: f64) -> QuadForm {
    let (ei, fi, ej, fj) = (i, n + i, j, n + j);
    let mut q = QuadForm::default();
    q.add(ei, ej, b);
    q.add(fi, fj, b);
    q.add(ei, ei, -b);
    q.add(fi, fi, -b);
    q.add(ei, fj, g);
    q.add(fi, ej, -g);
    q
}

impl LinkForms {
    pub fn new(n: usize, link: &Link) -> Result<Self> {
        if !(link.g > 0.0) {
            return Err(Error::invariant(
                "positive link conductance (loss-flow conservation divides by g)",
                format!("link {}-{} has g = {}", link.from, link.to, link.g),
            ));
        }
        let (i, j, g, b) = (link.from, link.to, link.g, link.b);
        let mut loss = QuadForm::default();
        for (a, c) in [(i, j), (n + i, n + j)] {
            loss.add(a, a, g);
            loss.add(c, c, g);
            loss.add(a, c, -2.0 * g);
        }
        Ok(Self {
            p_ij: p_form(n, i, j, g, b),
            p_ji: p_form(n, j, i, g, b),
            q_ij: q_form(n, i, j, g, b),
            q_ji: q_form(n, j, i, g, b),
            loss,
            q_loss_ratio: -b / g,
        })
    }
}

pub fn link_forms(net: &Network) -> Result<Vec<LinkForms>> {
    let n = net.n_buses();
    net.links.iter().map(|l| LinkForms::new(n, l)).collect()
}

/// `|V_i|²` as a form.
pub fn magnitude_form(n: usize, i: usize) -> QuadForm {
    let mut q = QuadForm::default();
    q.add(i, i, 1.0);
    q.add(n + i, n + i, 1.0);
    q
}

/// Residuals of the two conservation identities at a voltage point.
pub fn conservation_residuals(lf: &LinkForms, x: &[f64]) -> (f64, f64) {
    let loss = lf.loss.eval(x);
    let rp = lf.p_ij.eval(x) + lf.p_ji.eval(x) - loss;
    let rq = lf.q_ij.eval(x) + lf.q_ji.eval(x) - lf.q_loss_ratio * loss;
    (rp, rq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::link_flows;
    use proptest::prelude::*;

    #[test]
    fn hand_evaluated_two_bus_case() {
        let link = Link { from: 0, to: 1, g: 1.0, b: -2.0 };
        let lf = LinkForms::new(2, &link).unwrap();
        let x = [1.0, 0.98, 0.0, -0.02];
        assert!((lf.p_ij.eval(&x) - 0.06).abs() < 1e-12);
        assert!((lf.p_ji.eval(&x) + 0.0592).abs() < 1e-12);
        assert!((lf.loss.eval(&x) - 0.0008).abs() < 1e-12);
        let (rp, rq) = conservation_residuals(&lf, &x);
        assert!(rp.abs() < 1e-15 && rq.abs() < 1e-15);
    }

    #[test]
    fn equal_voltages_carry_nothing() {
        let link = Link { from: 0, to: 1, g: 2.0, b: -5.0 };
        let lf = LinkForms::new(2, &link).unwrap();
        let x = [0.9, 0.9, 0.3, 0.3];
        for q in [&lf.p_ij, &lf.p_ji, &lf.loss] {
            assert!(q.eval(&x).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let lf = LinkForms::new(2, &Link { from: 0, to: 1, g: 1.5, b: -4.0 }).unwrap();
        let x = [1.01, 0.97, 0.05, -0.08];
        let mut g = [0.0; 4];
        lf.q_ji.add_grad(&x, 1.0, &mut g);
        for a in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += 1e-6;
            xm[a] -= 1e-6;
            let fd = (lf.q_ji.eval(&xp) - lf.q_ji.eval(&xm)) / 2e-6;
            assert!((fd - g[a]).abs() < 1e-8);
        }
    }

    #[test]
    fn lossless_link_rejected() {
        let link = Link { from: 0, to: 1, g: 0.0, b: -5.0 };
        assert!(LinkForms::new(2, &link).is_err());
    }

    proptest! {
        #[test]
        fn forms_match_direct_flows(
            g in 0.1f64..20.0, b in -40.0f64..0.0,
            v in proptest::collection::vec(-1.2f64..1.2, 4),
        ) {
            let lf = LinkForms::new(2, &Link { from: 0, to: 1, g, b }).unwrap();
            let (p, q, l) = link_flows(g, b, v[0], v[2], v[1], v[3]);
            let (pr, qr, _) = link_flows(g, b, v[1], v[3], v[0], v[2]);
            let scale = 1.0 + g.abs() + b.abs();
            prop_assert!((lf.p_ij.eval(&v) - p).abs() < 1e-12 * scale);
            prop_assert!((lf.q_ij.eval(&v) - q).abs() < 1e-12 * scale);
            prop_assert!((lf.p_ji.eval(&v) - pr).abs() < 1e-12 * scale);
            prop_assert!((lf.q_ji.eval(&v) - qr).abs() < 1e-12 * scale);
            prop_assert!((lf.loss.eval(&v) - l).abs() < 1e-12 * scale);
            let (rp, rq) = conservation_residuals(&lf, &v);
            prop_assert!(rp.abs() < 1e-12 * scale && rq.abs() < 1e-12 * scale);
        }
    }
}
