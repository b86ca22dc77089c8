//! Training policies driven by the simulated cluster clock.
//!
//! * [`abs`]: adaptive-batch delayed synchronous SGD.
//! * [`sync`]: bulk-synchronous SGD and its throughput-balanced variant (DBS).
//! * [`asynchronous`]: parameter-server ASP and bounded-staleness SSP.

pub mod abs;
pub mod asynchronous;
pub mod sync;

use std::fmt;
use std::str::FromStr;

use crate::cluster::ClusterState;
use crate::error::{Error, Result};
use crate::model::{full_loss_and_gradient, Dataset, Model};
use crate::numeric::{hadamard, l2_norm_sq, ParamVector};

pub use abs::{abs_sgd_iteration, AbsState, DelayAudit};
pub use asynchronous::{asp_step, ssp_step, AsyncState};
pub use sync::{bsp_iteration, dbs_iteration, dbs_reallocate, BspState, DbsState};

/// Model plus the training data it is fitted to.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Model,
    pub data: Dataset,
}

impl Problem {
    pub fn new(model: Model, data: Dataset) -> Result<Self> {
        model.check_data(&data)?;
        Ok(Problem { model, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    /// Reference batch size `M_r`; also the per-worker batch of the baselines.
    pub reference_batch: usize,
    pub learning_rate: f64,
    /// Delayed-gradient compensation coefficient `λ`.
    pub compensation: f64,
    pub iterations: usize,
    /// SSP staleness threshold.
    pub staleness: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            reference_batch: 32,
            learning_rate: 0.01,
            compensation: 0.5,
            iterations: 6200,
            staleness: 10,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.reference_batch == 0 {
            return Err(Error::contract("reference batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(self.compensation >= 0.0 && self.compensation.is_finite()) {
            return Err(Error::contract("compensation coefficient must be >= 0"));
        }
        if self.iterations == 0 {
            return Err(Error::contract("iteration count must be >= 1"));
        }
        Ok(())
    }
}

/// Telemetry for one global update.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: u64,
    /// Simulated instant at which the update is complete.
    pub sim_time: f64,
    /// Samples whose gradients were computed in this iteration (`M_t`).
    pub total_batch: usize,
    /// Full training loss after the update.
    pub train_loss: f64,
    /// Squared norm of the full gradient after the update.
    pub grad_norm_sq: f64,
    /// Gradient computations each worker contributed: reference batches for
    /// ABS, one per worker for BSP/DBS, one-hot for ASP/SSP.
    pub per_worker: Vec<usize>,
}

pub(crate) fn make_record(
    problem: &Problem,
    params: &ParamVector,
    t: u64,
    sim_time: f64,
    total_batch: usize,
    per_worker: Vec<usize>,
) -> Result<IterationRecord> {
    let (train_loss, grad) = full_loss_and_gradient(&problem.model, params, &problem.data)?;
    if !train_loss.is_finite() || !params.is_finite() {
        return Err(Error::contract(format!("iteration {t} produced non-finite parameters or loss")));
    }
    Ok(IterationRecord {
        t,
        sim_time,
        total_batch,
        train_loss,
        grad_norm_sq: l2_norm_sq(&grad),
        per_worker,
    })
}

/// A worker's accumulated gradient sum `G` and the batch size `M` behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub grad_sum: ParamVector,
    pub batch_size: usize,
    /// Checksum of the parameters the gradients were evaluated at.
    pub evaluated_at: u64,
}

/// `Σ G_i / Σ M_i`: every sample counts equally regardless of which worker
/// computed it.
pub fn weighted_average(bundles: &[GradientBundle]) -> Result<ParamVector> {
    let total: usize = bundles.iter().map(|b| b.batch_size).sum();
    if total == 0 {
        return Err(Error::contract("weighted average over a zero total batch size"));
    }
    let mut acc = ParamVector::zeros(bundles[0].grad_sum.len());
    for b in bundles {
        acc.add_scaled(1.0, &b.grad_sum)?;
    }
    acc.scale(1.0 / total as f64);
    Ok(acc)
}

/// First-order correction of a one-step-stale gradient:
/// `g + λ · g ⊙ g ⊙ (x_t − x_{t−1})`.
pub fn compensate(g_prev: &ParamVector, x_t: &ParamVector, x_prev: &ParamVector, lambda: f64) -> Result<ParamVector> {
    let shift = x_t.sub(x_prev)?;
    let mut out = g_prev.clone();
    out.add_scaled(lambda, &hadamard(&hadamard(g_prev, g_prev)?, &shift)?)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Abs,
    Bsp,
    Dbs,
    Asp,
    Ssp,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [PolicyKind::Abs, PolicyKind::Bsp, PolicyKind::Dbs, PolicyKind::Asp, PolicyKind::Ssp];

    /// Column heading used in comparison tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            PolicyKind::Abs => "ABS-SGD",
            PolicyKind::Bsp => "BSP-SGD",
            PolicyKind::Dbs => "DBS-SGD",
            PolicyKind::Asp => "ASP-SGD",
            PolicyKind::Ssp => "SSP-SGD",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Abs => "abs",
            PolicyKind::Bsp => "bsp",
            PolicyKind::Dbs => "dbs",
            PolicyKind::Asp => "asp",
            PolicyKind::Ssp => "ssp",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(PolicyKind::Abs),
            "bsp" => Ok(PolicyKind::Bsp),
            "dbs" => Ok(PolicyKind::Dbs),
            "asp" => Ok(PolicyKind::Asp),
            "ssp" => Ok(PolicyKind::Ssp),
            other => Err(Error::config(format!("unknown policy '{other}' (expected abs|bsp|dbs|asp|ssp)"))),
        }
    }
}

/// Any policy's state, stepped one global update at a time.
#[derive(Debug, Clone)]
pub enum PolicyState {
    Abs(AbsState),
    Bsp(BspState),
    Dbs(DbsState),
    Async(AsyncState),
}

impl PolicyState {
    pub fn new(
        kind: PolicyKind,
        init: ParamVector,
        cluster: &ClusterState,
        hp: &HyperParams,
        seed: u64,
        dbs_epoch_iters: usize,
    ) -> Result<Self> {
        hp.validate()?;
        Ok(match kind {
            PolicyKind::Abs => PolicyState::Abs(AbsState::new(init, seed)),
            PolicyKind::Bsp => PolicyState::Bsp(BspState::new(init, seed)),
            PolicyKind::Dbs => PolicyState::Dbs(DbsState::new(init, seed, cluster.workers(), hp, dbs_epoch_iters)?),
            PolicyKind::Asp => PolicyState::Async(AsyncState::new(init, seed, cluster, None)?),
            PolicyKind::Ssp => PolicyState::Async(AsyncState::new(init, seed, cluster, Some(hp.staleness))?),
        })
    }

    pub fn step(&mut self, cluster: &mut ClusterState, problem: &Problem, hp: &HyperParams) -> Result<IterationRecord> {
        match self {
            PolicyState::Abs(s) => abs_sgd_iteration(s, cluster, problem, hp),
            PolicyState::Bsp(s) => bsp_iteration(s, cluster, problem, hp),
            PolicyState::Dbs(s) => dbs_iteration(s, cluster, problem, hp),
            PolicyState::Async(s) => s.step(cluster, problem, hp),
        }
    }

    pub fn params(&self) -> &ParamVector {
        match self {
            PolicyState::Abs(s) => s.params(),
            PolicyState::Bsp(s) => s.params(),
            PolicyState::Dbs(s) => s.params(),
            PolicyState::Async(s) => s.params(),
        }
    }
}
