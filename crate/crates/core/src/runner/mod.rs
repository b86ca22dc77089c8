//! Experiment harness: configs, runs, CSV output, comparisons and the
//! formula checks behind `verify-theory`.

mod compare;
mod config;
mod experiment;
mod output;

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::theory::{check_grid, corollary2_gamma, default_grid, min_iterations, GridCheck, TheoryParams};

pub use compare::{compare_policies, Comparison, ComparisonCell, ComparisonRow, ComparisonTable};
pub use config::{
    ClusterSpec, ConvergenceMetric, DataSpec, ExperimentConfig, TheorySettings, DEFAULT_BASE_BATCH_TIME, DEFAULT_COMM_ALPHA,
    DEFAULT_THRESHOLD,
};
pub use experiment::{build_setup, run_experiment, theory_report, Setup, Summary};
pub use output::{emit_csv, read_csv};

/// Formula grid: the fixed points plus points shaped like `cfg`'s cluster
/// and reference batch.
pub fn theory_grid(cfg: &ExperimentConfig) -> Result<Vec<TheoryParams>> {
    let workers = cfg.cluster.profiles()?.len();
    let mut grid = default_grid();
    for &(l, s2, delta) in &[(0.25, 1.0, 1.0), (1.0, 0.5, 2.0)] {
        for k in [workers, workers * 4] {
            let mut p = TheoryParams {
                lipschitz: l,
                sigma_sq: s2,
                suboptimality: delta,
                workers,
                envelope: k,
                reference_batch: cfg.hyper.reference_batch,
                iterations: cfg.hyper.iterations,
                gamma: 1.0,
            };
            p.iterations = p.iterations.max(min_iterations(&p));
            p.gamma = corollary2_gamma(&p);
            grid.push(p);
            // smallest admissible T, where the step-size condition is tightest
            p.iterations = min_iterations(&p);
            p.gamma = corollary2_gamma(&p);
            grid.push(p);
        }
    }
    Ok(grid)
}

/// Runs the grid checks and renders one `key=value` line per point plus
/// totals. Fails if any feasible point breaks the closed-form rate.
pub fn verify_theory(cfg: &ExperimentConfig) -> Result<(Vec<GridCheck>, String)> {
    let checks = check_grid(&theory_grid(cfg)?)?;
    let mut s = String::new();
    for (i, c) in checks.iter().enumerate() {
        let p = &c.params;
        let _ = writeln!(
            s,
            "point={i} L={} sigma_sq={} delta={} N={} K={} M_r={} T={} min_T={} gamma={} feasible={} bound={} rate={} consistent={}",
            p.lipschitz,
            p.sigma_sq,
            p.suboptimality,
            p.workers,
            p.envelope,
            p.reference_batch,
            p.iterations,
            c.min_iterations,
            c.gamma,
            c.feasible,
            c.bound.map_or_else(|| "n/a".to_string(), |b| b.to_string()),
            c.rate,
            c.consistent
        );
    }
    let infeasible = checks.iter().filter(|c| !c.feasible).count();
    let inconsistent = checks.iter().filter(|c| !c.consistent).count();
    let _ = writeln!(s, "points={} infeasible={infeasible} inconsistent={inconsistent}", checks.len());
    if inconsistent > 0 {
        return Err(Error::Contract(format!("{inconsistent} grid points exceed the closed-form rate")));
    }
    Ok((checks, s))
}
