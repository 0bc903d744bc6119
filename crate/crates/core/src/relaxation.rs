//! Common result type of the relaxations.

use crate::model::OperatingPoint;

#[derive(Debug, Clone)]
pub struct RelaxationOutcome {
    pub name: &'static str,
    /// Valid lower bound on the optimal value; `-∞` when nothing was proven.
    pub dual_bound: f64,
    /// Relaxed solution used for the infeasibility metric.
    pub point: OperatingPoint,
    pub time_s: f64,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: Vec<String>,
}
