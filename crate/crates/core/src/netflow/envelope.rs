//! Linear envelopes of bilinear and square terms over boxes.

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::invariant("interval lower ≤ upper", format!("[{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(r: f64) -> Self {
        Self { lo: -r, hi: r }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn add(&self, o: &Interval) -> Interval {
        Interval {
            lo: self.lo + o.lo,
            hi: self.hi + o.hi,
        }
    }

    pub fn scale(&self, c: f64) -> Interval {
        if c >= 0.0 {
            Interval {
                lo: c * self.lo,
                hi: c * self.hi,
            }
        } else {
            Interval {
                lo: c * self.hi,
                hi: c * self.lo,
            }
        }
    }

    pub fn mul(&self, o: &Interval) -> Interval {
        let c = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        Interval {
            lo: c.iter().copied().fold(f64::INFINITY, f64::min),
            hi: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn square(&self) -> Interval {
        let (a, b) = (self.lo * self.lo, self.hi * self.hi);
        if self.lo <= 0.0 && self.hi >= 0.0 {
            Interval { lo: 0.0, hi: a.max(b) }
        } else {
            Interval {
                lo: a.min(b),
                hi: a.max(b),
            }
        }
    }
}

/// Row `cx·x + cy·y + cw·w ≤ rhs`. For square terms `y` is unused (`cy = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvRow {
    pub cx: f64,
    pub cy: f64,
    pub cw: f64,
    pub rhs: f64,
}

impl EnvRow {
    pub fn violation(&self, x: f64, y: f64, w: f64) -> f64 {
        (self.cx * x + self.cy * y + self.cw * w - self.rhs).max(0.0)
    }
}

/// `w ≥ a·x + b·y − c` as a `≤` row.
fn lower(a: f64, b: f64, c: f64) -> EnvRow {
    EnvRow {
        cx: a,
        cy: b,
        cw: -1.0,
        rhs: c,
    }
}

/// `w ≤ a·x + b·y − c` as a `≤` row.
fn upper(a: f64, b: f64, c: f64) -> EnvRow {
    EnvRow {
        cx: -a,
        cy: -b,
        cw: 1.0,
        rhs: -c,
    }
}

/// Convex hull of `w = x·y` over `x ∈ bx`, `y ∈ by`: two under- and two
/// over-estimators.
pub fn mccormick(bx: Interval, by: Interval) -> Result<[EnvRow; 4]> {
    for b in [bx, by] {
        Interval::new(b.lo, b.hi)?;
    }
    let (lx, ux, ly, uy) = (bx.lo, bx.hi, by.lo, by.hi);
    Ok([
        lower(uy, ux, ux * uy),
        lower(ly, lx, lx * ly),
        upper(ly, ux, ux * ly),
        upper(uy, lx, lx * uy),
    ])
}

/// Envelope of `w = x²` over `x ∈ b`: tangents at both ends and the secant.
pub fn square_envelope(b: Interval) -> Result<[EnvRow; 3]> {
    Interval::new(b.lo, b.hi)?;
    let (l, u) = (b.lo, b.hi);
    Ok([lower(2.0 * u, 0.0, u * u), lower(2.0 * l, 0.0, l * l), upper(l + u, 0.0, l * u)])
}

/// Tangents `w ≥ 2x₀x − x₀²` at `count` interior points of `b`, strengthening
/// the square envelope towards `w ≥ x²`.
pub fn tangent_cuts(b: Interval, count: usize) -> Vec<EnvRow> {
    (1..=count)
        .map(|k| {
            let x0 = b.lo + b.width() * k as f64 / (count + 1) as f64;
            lower(2.0 * x0, 0.0, x0 * x0)
        })
        .filter(|_| b.width() > 0.0)
        .collect()
}
