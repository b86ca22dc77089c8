//! Bulk-synchronous baselines.
//!
//! BSP: every worker computes one fixed-size batch at `x_t`, then a barrier
//! and an all-reduce. DBS: the same, but per-worker batch sizes are
//! re-balanced at each epoch boundary in proportion to the throughput each
//! worker showed over the previous epoch.

use crate::cluster::{sync_duration, ClusterState};
use crate::error::{Error, Result};
use crate::model::{accumulate_grad, SampleBatch};
use crate::numeric::{ParamVector, RngStream, StreamTag};

use super::{make_record, weighted_average, GradientBundle, HyperParams, IterationRecord, Problem};

#[derive(Debug, Clone)]
pub struct BspState {
    params: ParamVector,
    t: u64,
    seed: u64,
}

impl BspState {
    pub fn new(init: ParamVector, seed: u64) -> Self {
        BspState { params: init, t: 0, seed }
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }
}

/// One synchronous step with per-worker batch sizes `batches`. Returns the
/// per-worker compute times.
fn synchronous_step(
    params: &mut ParamVector,
    t: u64,
    seed: u64,
    batches: &[usize],
    cluster: &mut ClusterState,
    problem: &Problem,
    hp: &HyperParams,
) -> Result<(Vec<f64>, f64)> {
    let model = &problem.model;
    let data = &problem.data;
    let start = cluster.clock();
    let here = params.checksum();
    let mut bundles = Vec::with_capacity(batches.len());
    let mut times = Vec::with_capacity(batches.len());
    for (worker, &size) in batches.iter().enumerate() {
        let units = size as f64 / hp.reference_batch as f64;
        times.push(cluster.compute_time(worker, t, units));
        let mut rng = RngStream::derive(seed, StreamTag::Sampling, worker as u64, t);
        let batch = SampleBatch::draw(data.len(), size, &mut rng);
        let mut grad_sum = ParamVector::zeros(model.dim());
        accumulate_grad(model, params, &batch.indices, data, &mut grad_sum);
        bundles.push(GradientBundle {
            grad_sum,
            batch_size: size,
            evaluated_at: here,
        });
    }
    let mean = weighted_average(&bundles)?;
    params.add_scaled(-hp.learning_rate, &mean)?;
    let slowest = times.iter().copied().fold(0.0, f64::max);
    let end = start + slowest + sync_duration(cluster.comm(), model.dim())?;
    cluster.advance_to(end)?;
    Ok((times, end))
}

pub fn bsp_iteration(
    state: &mut BspState,
    cluster: &mut ClusterState,
    problem: &Problem,
    hp: &HyperParams,
) -> Result<IterationRecord> {
    let batches = vec![hp.reference_batch; cluster.workers()];
    let t = state.t;
    let (_, end) = synchronous_step(&mut state.params, t, state.seed, &batches, cluster, problem, hp)?;
    state.t += 1;
    make_record(
        problem,
        &state.params,
        t,
        end,
        batches.iter().sum(),
        vec![1; cluster.workers()],
    )
}

#[derive(Debug, Clone)]
pub struct DbsState {
    params: ParamVector,
    t: u64,
    seed: u64,
    batches: Vec<usize>,
    epoch_iters: usize,
    epoch_samples: Vec<f64>,
    epoch_time: Vec<f64>,
}

impl DbsState {
    pub fn new(init: ParamVector, seed: u64, workers: usize, hp: &HyperParams, epoch_iters: usize) -> Result<Self> {
        if epoch_iters == 0 {
            return Err(Error::contract("DBS epoch length must be >= 1 iteration"));
        }
        Ok(DbsState {
            params: init,
            t: 0,
            seed,
            batches: vec![hp.reference_batch; workers],
            epoch_iters,
            epoch_samples: vec![0.0; workers],
            epoch_time: vec![0.0; workers],
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Current per-worker batch allocation.
    pub fn batches(&self) -> &[usize] {
        &self.batches
    }
}

pub fn dbs_iteration(
    state: &mut DbsState,
    cluster: &mut ClusterState,
    problem: &Problem,
    hp: &HyperParams,
) -> Result<IterationRecord> {
    let t = state.t;
    let batches = state.batches.clone();
    let (times, end) = synchronous_step(&mut state.params, t, state.seed, &batches, cluster, problem, hp)?;
    for (w, (&b, &dt)) in batches.iter().zip(&times).enumerate() {
        state.epoch_samples[w] += b as f64;
        state.epoch_time[w] += dt;
    }
    state.t += 1;
    if state.t.is_multiple_of(state.epoch_iters as u64) {
        let throughputs: Vec<f64> = state
            .epoch_samples
            .iter()
            .zip(&state.epoch_time)
            .map(|(s, dt)| s / dt)
            .collect();
        let total = hp.reference_batch * cluster.workers();
        state.batches = dbs_reallocate(&throughputs, total)?;
        state.epoch_samples.iter_mut().for_each(|v| *v = 0.0);
        state.epoch_time.iter_mut().for_each(|v| *v = 0.0);
    }
    make_record(
        problem,
        &state.params,
        t,
        end,
        batches.iter().sum(),
        vec![1; cluster.workers()],
    )
}

/// Splits `total_batch` in proportion to `throughputs` with largest-remainder
/// rounding (ties to the lower worker id). Every worker gets at least one
/// sample.
pub fn dbs_reallocate(throughputs: &[f64], total_batch: usize) -> Result<Vec<usize>> {
    let n = throughputs.len();
    if n == 0 {
        return Err(Error::contract("dbs_reallocate needs at least one worker"));
    }
    if throughputs.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::contract("throughputs must be positive and finite"));
    }
    if total_batch < n {
        return Err(Error::contract(format!(
            "total batch {total_batch} cannot give each of {n} workers a sample"
        )));
    }
    let sum: f64 = throughputs.iter().sum();
    let ideal: Vec<f64> = throughputs.iter().map(|v| total_batch as f64 * v / sum).collect();
    let mut alloc: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &w in order.iter().take(total_batch.saturating_sub(assigned)) {
        alloc[w] += 1;
    }
    while let Some(starved) = alloc.iter().position(|&b| b == 0) {
        let donor = (0..n)
            .filter(|&w| alloc[w] > 1)
            .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
            .expect("total >= n guarantees a donor");
        alloc[donor] -= 1;
        alloc[starved] = 1;
    }
    Ok(alloc)
}
