//! Primal bounds, gap metrics and the benchmark driver.

mod primal;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::case_io::{parse_case, write_results, Format, RelaxationSelector, ResultRow, RunConfig};
use crate::error::{Error, Result};
use crate::lagrangian::{maximize_dual, BundleParams, DualPoint};
use crate::model::{infeasibility, CostKind, Instance};
use crate::netflow::{solve_nfr, write_boxes, BoxBounds, NfrParams};
use crate::numerics::qp::QpSettings;
use crate::relaxation::RelaxationOutcome;

pub use primal::{local_solve, primal_search, PrimalParams, PrimalResult};

/// Slack of the weak-duality check `dual ≤ primal + SANDWICH_TOL`.
pub const SANDWICH_TOL: f64 = 1e-6;

/// Relative gap in percent, `100 (ub − lb) / lb`; `None` when `lb ≤ 0` or
/// either bound is not finite.
pub fn gap(lb: f64, ub: f64) -> Option<f64> {
    (lb > 0.0 && lb.is_finite() && ub.is_finite()).then(|| 100.0 * (ub - lb) / lb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub case: String,
    pub cost_kind: CostKind,
    pub periods: usize,
    pub relaxation: String,
    pub dual_bound: Option<f64>,
    pub primal_bound: Option<f64>,
    pub gap_pct: Option<f64>,
    pub time_s: f64,
    /// Sum of squared balance and magnitude residuals of the relaxed point.
    pub infeasibility: Option<f64>,
    pub seed: u64,
    /// Why the row is incomplete, if it is.
    pub error: Option<String>,
}

impl BenchRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn to_result_row(&self) -> ResultRow {
        ResultRow {
            case: self.case.clone(),
            relaxation: self.relaxation.clone(),
            periods: self.periods,
            dual_bound: self.dual_bound,
            primal_bound: self.primal_bound,
            gap_pct: self.gap_pct,
            time_s: self.time_s,
            infeasibility: self.infeasibility,
            seed: self.seed,
        }
    }
}

/// Everything needed to run the relaxations and the primal search on one
/// instance.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub relaxation: RelaxationSelector,
    pub seed: u64,
    pub nfr: NfrParams,
    pub bundle: BundleParams,
    pub primal: PrimalParams,
    /// Start the bundle method from the flow relaxation's multipliers when
    /// both relaxations run.
    pub warm_start_lr: bool,
    pub dump_boxes: Option<PathBuf>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            relaxation: RelaxationSelector::Both,
            seed: 0,
            nfr: NfrParams::default(),
            bundle: BundleParams::default(),
            primal: PrimalParams::default(),
            warm_start_lr: true,
            dump_boxes: None,
        }
    }
}

impl SolveOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        let qp = QpSettings {
            tol: cfg.tolerances.qp,
            ..QpSettings::default()
        };
        let mut nfr = NfrParams {
            qp,
            tangent_cuts: if cfg.sdp.tangent_cuts { NfrParams::default().tangent_cuts } else { 0 },
            ..NfrParams::default()
        };
        nfr.tighten.sdp.tol = cfg.tolerances.sdp;
        nfr.tighten.sdp.max_iter = cfg.sdp.max_iter;
        let b = &cfg.bundle;
        Self {
            relaxation: cfg.relaxation,
            seed: cfg.seed,
            nfr,
            bundle: BundleParams {
                max_iter: b.max_iter,
                descent_fraction: b.descent_fraction,
                initial_weight: b.initial_weight,
                min_weight: b.min_weight,
                max_weight: b.max_weight,
                max_cuts: b.max_cuts,
                tol: b.tol,
                time_limit_s: None,
                qp,
            },
            primal: PrimalParams {
                starts: cfg.primal.starts,
                seed: cfg.seed,
                tol: cfg.tolerances.feasibility,
                qp,
                ..PrimalParams::default()
            },
            warm_start_lr: true,
            dump_boxes: None,
        }
    }
}

/// Everything one instance produced: the table rows plus the artifacts the
/// rows summarize.
#[derive(Debug, Clone)]
pub struct InstanceRun {
    pub instance: Instance,
    pub rows: Vec<BenchRow>,
    pub primal: Option<PrimalResult>,
    /// Voltage and flow boxes of the flow relaxation.
    pub boxes: Option<BoxBounds>,
    /// Best dual value after each bundle iteration.
    pub lr_trace: Vec<f64>,
}

/// Runs the primal search once and every selected relaxation on `inst`.
/// Failures are recorded in the rows, never returned.
pub fn solve_instance(inst: &Instance, opts: &SolveOptions) -> InstanceRun {
    let primal = primal_search(inst, &opts.primal);
    if let Err(e) = &primal {
        log::warn!("{}: primal search failed: {e}", inst.name);
    }
    let ub = primal.as_ref().ok().map(|p| p.objective);
    let mut rows = Vec::new();
    let mut nfr_duals: Option<DualPoint> = None;
    let mut boxes = None;
    let mut lr_trace = Vec::new();

    if opts.relaxation.wants_nfr() {
        let start = Instant::now();
        let res = solve_nfr(inst, &opts.nfr);
        let time_s = start.elapsed().as_secs_f64();
        let outcome = res.and_then(|r| {
            if let Some(path) = &opts.dump_boxes {
                write_boxes(path, inst, &r.boxes)?;
            }
            nfr_duals = Some(r.duals);
            boxes = Some(r.boxes);
            Ok(r.outcome)
        });
        rows.push(make_row(inst, "nfr", outcome, ub, time_s, opts.seed));
    }
    if opts.relaxation.wants_lr() {
        let init = nfr_duals.as_ref().filter(|_| opts.warm_start_lr);
        let start = Instant::now();
        let res = maximize_dual(inst, init, &opts.bundle).map(|(o, log)| {
            lr_trace = log.iter().map(|l| l.best_g).collect();
            o
        });
        let time_s = start.elapsed().as_secs_f64();
        rows.push(make_row(inst, "lr", res, ub, time_s, opts.seed));
    }
    if let Err(e) = &primal {
        for row in &mut rows {
            row.error.get_or_insert_with(|| format!("primal search: {e}"));
        }
    }
    InstanceRun {
        instance: inst.clone(),
        rows,
        primal: primal.ok(),
        boxes,
        lr_trace,
    }
}

fn make_row(inst: &Instance, name: &str, res: Result<RelaxationOutcome>, ub: Option<f64>, time_s: f64, seed: u64) -> BenchRow {
    let mut row = BenchRow {
        case: inst.name.clone(),
        cost_kind: inst.cost.kind(),
        periods: inst.horizon,
        relaxation: name.to_string(),
        dual_bound: None,
        primal_bound: ub,
        gap_pct: None,
        time_s,
        infeasibility: None,
        seed,
        error: None,
    };
    match res {
        Ok(out) => {
            let lb = out.dual_bound;
            row.dual_bound = lb.is_finite().then_some(lb);
            row.infeasibility = infeasibility(&out.point, inst).ok();
            if let Some(ub) = ub {
                row.gap_pct = gap(lb, ub);
                if lb > ub + SANDWICH_TOL {
                    row.error = Some(format!("weak duality violated: dual {lb:.10e} > primal {ub:.10e}"));
                }
            }
            if !lb.is_finite() {
                row.error = Some("no finite dual bound".into());
            }
        }
        Err(e) => {
            log::warn!("{}: {name} failed: {e}", inst.name);
            row.error = Some(e.to_string());
        }
    }
    row
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub runs: Vec<InstanceRun>,
}

impl BenchReport {
    pub fn rows(&self) -> impl Iterator<Item = &BenchRow> {
        self.runs.iter().flat_map(|r| &r.rows)
    }

    pub fn failures(&self) -> usize {
        self.rows().filter(|r| r.failed()).count()
    }

    pub fn result_rows(&self) -> Vec<ResultRow> {
        self.rows().map(BenchRow::to_result_row).collect()
    }

    pub fn write(&self, path: &Path, format: Format) -> Result<()> {
        write_results(&self.result_rows(), path, format)
    }
}

/// Runs every `(case, periods)` pair of the config and writes the
/// configured result files. Only unreadable cases and output failures are
/// errors; solver failures end up in the rows.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchReport> {
    let mut jobs = Vec::new();
    for path in &cfg.cases {
        for &t in &cfg.periods {
            let inst = parse_case(path, Some(t)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            jobs.push(inst);
        }
    }
    let base = SolveOptions::from_config(cfg);
    if let Some(dir) = &cfg.output.boxes_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let options = |inst: &Instance| SolveOptions {
        dump_boxes: cfg
            .output
            .boxes_dir
            .as_ref()
            .map(|dir| dir.join(format!("{}_T{}_boxes.csv", inst.name, inst.horizon))),
        ..base.clone()
    };
    let run = || -> Vec<InstanceRun> {
        jobs.par_iter()
            .map(|inst| {
                log::info!("running {} with T = {}", inst.name, inst.horizon);
                solve_instance(inst, &options(inst))
            })
            .collect()
    };
    let runs = if cfg.single_core {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(run)
    } else {
        run()
    };
    let report = BenchReport { runs };
    if let Some(p) = &cfg.output.csv {
        report.write(p, Format::Csv)?;
    }
    if let Some(p) = &cfg.output.markdown {
        report.write(p, Format::Markdown)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
