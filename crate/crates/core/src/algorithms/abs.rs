//! Adaptive-batch delayed synchronous SGD.
//!
//! Each iteration runs two things side by side on every worker: the
//! collective that averages the gradients produced in the previous
//! iteration, and back-to-back reference batches at the current parameters
//! that continue until that collective finishes. Fast workers therefore
//! contribute more reference batches. The averaged (one iteration stale)
//! gradient is compensated for the parameter shift and applied.

use crate::cluster::{iteration_span, sync_duration, ClusterState};
use crate::error::Result;
use crate::model::{accumulate_grad, SampleBatch};
use crate::numeric::{axpy, ParamVector, RngStream, StreamTag};

use super::{compensate, make_record, weighted_average, GradientBundle, HyperParams, IterationRecord, Problem};

/// What one iteration consumed, for auditing the one-step delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayAudit {
    pub t: u64,
    /// Checksums of the parameters each consumed bundle was evaluated at;
    /// empty at `t = 0`.
    pub consumed: Vec<u64>,
    /// Checksum of `x̄_{t−1}`, or `None` at `t = 0`.
    pub previous_params: Option<u64>,
    /// Total batch size behind the applied gradient; 0 for the null update.
    pub applied_batch: usize,
}

#[derive(Debug, Clone)]
pub struct AbsState {
    params: ParamVector,
    prev_params: ParamVector,
    /// Bundles from iteration `t − 1`; `None` stands for `G_{−1} = 0`.
    pending: Option<Vec<GradientBundle>>,
    t: u64,
    seed: u64,
    last_audit: Option<DelayAudit>,
    had_previous: bool,
}

impl AbsState {
    pub fn new(init: ParamVector, seed: u64) -> Self {
        AbsState {
            prev_params: init.clone(),
            params: init,
            pending: None,
            t: 0,
            seed,
            last_audit: None,
            had_previous: false,
        }
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn previous_params(&self) -> &ParamVector {
        &self.prev_params
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn pending(&self) -> Option<&[GradientBundle]> {
        self.pending.as_deref()
    }

    pub fn last_audit(&self) -> Option<&DelayAudit> {
        self.last_audit.as_ref()
    }
}

/// One iteration: compute until the delayed-gradient collective completes,
/// then compensate and apply the delayed average.
pub fn abs_sgd_iteration(
    state: &mut AbsState,
    cluster: &mut ClusterState,
    problem: &Problem,
    hp: &HyperParams,
) -> Result<IterationRecord> {
    let model = &problem.model;
    let data = &problem.data;
    let t = state.t;
    let start = cluster.clock();
    let window = sync_duration(cluster.comm(), model.dim())?;
    let sync_done_at = start + window;
    let here = state.params.checksum();

    let mut traces = Vec::with_capacity(cluster.workers());
    let mut fresh = Vec::with_capacity(cluster.workers());
    for worker in 0..cluster.workers() {
        let trace = cluster.compute_until_sync(worker, t, start, window)?;
        let mut rng = RngStream::derive(state.seed, StreamTag::Sampling, worker as u64, t);
        let batch = SampleBatch::draw(data.len(), trace.k() * hp.reference_batch, &mut rng);
        let mut grad_sum = ParamVector::zeros(model.dim());
        // reference batches are drawn consecutively from the same substream,
        // so one pass over the concatenation is the accumulated sum
        accumulate_grad(model, &state.params, &batch.indices, data, &mut grad_sum);
        fresh.push(GradientBundle {
            grad_sum,
            batch_size: batch.len(),
            evaluated_at: here,
        });
        traces.push(trace);
    }

    let (delayed, audit) = match &state.pending {
        None => (
            ParamVector::zeros(model.dim()),
            DelayAudit {
                t,
                consumed: Vec::new(),
                previous_params: None,
                applied_batch: 0,
            },
        ),
        Some(bundles) => (
            weighted_average(bundles)?,
            DelayAudit {
                t,
                consumed: bundles.iter().map(|b| b.evaluated_at).collect(),
                previous_params: state.had_previous.then(|| state.prev_params.checksum()),
                applied_batch: bundles.iter().map(|b| b.batch_size).sum(),
            },
        ),
    };
    let corrected = compensate(&delayed, &state.params, &state.prev_params, hp.compensation)?;
    let next = axpy(-hp.learning_rate, &corrected, &state.params)?;

    state.prev_params = std::mem::replace(&mut state.params, next);
    state.had_previous = true;
    state.pending = Some(fresh);
    state.last_audit = Some(audit);
    state.t += 1;

    let end = iteration_span(&traces, sync_done_at)?;
    cluster.advance_to(end)?;
    let per_worker: Vec<usize> = traces.iter().map(|tr| tr.k()).collect();
    let total_batch = per_worker.iter().sum::<usize>() * hp.reference_batch;
    make_record(problem, &state.params, t, end, total_batch, per_worker)
}
