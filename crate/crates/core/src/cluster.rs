//! Discrete-event timing model for a heterogeneous cluster.
//!
//! A worker's time for one reference batch is its base time, stretched by a
//! fixed static factor and by a uniform random dynamic factor. Collective
//! synchronization of `n` parameters takes `alpha + beta * n` seconds.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{RngStream, StreamTag};

/// Default cap on reference batches per worker per iteration.
pub const DEFAULT_K_MAX: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerProfile {
    /// Seconds per reference batch before any prolongation.
    pub base_batch_time: f64,
    /// Fractional static prolongation; `3.0` means +300%.
    pub static_factor: f64,
    /// Upper end of the uniform fractional dynamic prolongation.
    pub dynamic_range: f64,
}

impl WorkerProfile {
    pub fn new(base_batch_time: f64, static_factor: f64, dynamic_range: f64) -> Result<Self> {
        let p = WorkerProfile {
            base_batch_time,
            static_factor,
            dynamic_range,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_batch_time > 0.0 && self.base_batch_time.is_finite()) {
            return Err(Error::contract(format!(
                "base_batch_time must be positive, got {}",
                self.base_batch_time
            )));
        }
        if !(self.static_factor >= 0.0 && self.static_factor.is_finite()) {
            return Err(Error::contract(format!(
                "static_factor must be >= 0, got {}",
                self.static_factor
            )));
        }
        if !(self.dynamic_range >= 0.0 && self.dynamic_range.is_finite()) {
            return Err(Error::contract(format!(
                "dynamic_range must be >= 0, got {}",
                self.dynamic_range
            )));
        }
        Ok(())
    }

    /// Batch time with the static prolongation only.
    pub fn static_batch_time(&self) -> f64 {
        self.base_batch_time * (1.0 + self.static_factor)
    }

    /// Expected batch time including the mean dynamic prolongation.
    pub fn mean_batch_time(&self) -> f64 {
        self.static_batch_time() * (1.0 + 0.5 * self.dynamic_range)
    }
}

/// `base · (1 + static) · (1 + U[0, dynamic_range))`
pub fn sample_batch_time(profile: &WorkerProfile, rng: &mut RngStream) -> f64 {
    let jitter = if profile.dynamic_range > 0.0 {
        profile.dynamic_range * rng.next_unit()
    } else {
        0.0
    };
    profile.static_batch_time() * (1.0 + jitter)
}

/// Synchronization cost model: `alpha + beta · n` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommModel {
    pub alpha: f64,
    pub beta: f64,
}

impl CommModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let c = CommModel { alpha, beta };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::contract("comm model needs alpha >= 0 and beta >= 0"));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::contract("comm model alpha and beta cannot both be zero"));
        }
        Ok(())
    }
}

pub fn sync_duration(comm: &CommModel, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::contract("sync_duration needs n >= 1"));
    }
    Ok(comm.alpha + comm.beta * n as f64)
}

/// Reference batches one worker completed within one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTrace {
    pub worker: usize,
    pub iteration: u64,
    /// Absolute completion instants, strictly increasing.
    pub completions: Vec<f64>,
}

impl BatchTrace {
    /// Number of reference batches computed.
    pub fn k(&self) -> usize {
        self.completions.len()
    }

    pub fn last_completion(&self) -> f64 {
        *self.completions.last().expect("trace holds at least one batch")
    }
}

/// Computes reference batches back to back from `start` until one completes
/// at or after `sync_done_at`, or `k_max` batches are done. At least one batch
/// is always computed.
pub fn run_compute_until_sync(
    profile: &WorkerProfile,
    start: f64,
    sync_done_at: f64,
    k_max: usize,
    rng: &mut RngStream,
) -> Result<BatchTrace> {
    run_compute_until_sync_with(start, sync_done_at, k_max, || sample_batch_time(profile, rng))
}

/// As [`run_compute_until_sync`] with an arbitrary batch-time source.
pub fn run_compute_until_sync_with(
    start: f64,
    sync_done_at: f64,
    k_max: usize,
    next_batch_time: impl FnMut() -> f64,
) -> Result<BatchTrace> {
    if !(sync_done_at >= start) {
        return Err(Error::contract(format!(
            "sync completes at {sync_done_at}, before compute starts at {start}"
        )));
    }
    compute_for_window(start, sync_done_at - start, k_max, next_batch_time)
}

/// Batches run from `start` while a synchronization of length `window` is in
/// flight. Elapsed time is accumulated from zero, so whether a batch ties
/// with the end of the window does not depend on how far the clock has run.
pub fn compute_for_window(
    start: f64,
    window: f64,
    k_max: usize,
    mut next_batch_time: impl FnMut() -> f64,
) -> Result<BatchTrace> {
    if !(window >= 0.0) {
        return Err(Error::contract(format!("negative sync window {window}")));
    }
    if k_max == 0 {
        return Err(Error::contract("k_max must be at least 1"));
    }
    let mut completions = Vec::new();
    let mut elapsed = 0.0;
    loop {
        let dt = next_batch_time();
        if !(dt > 0.0) {
            return Err(Error::contract(format!("non-positive batch time {dt}")));
        }
        elapsed += dt;
        completions.push(start + elapsed);
        // tie: a batch finishing exactly at sync completion ends the loop
        if elapsed >= window || completions.len() >= k_max {
            break;
        }
    }
    Ok(BatchTrace {
        worker: 0,
        iteration: 0,
        completions,
    })
}

/// Instant at which both synchronization and every worker's compute are done.
pub fn iteration_span(traces: &[BatchTrace], sync_done_at: f64) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::contract("iteration_span needs at least one trace"));
    }
    Ok(traces
        .iter()
        .map(BatchTrace::last_completion)
        .fold(sync_done_at, f64::max))
}

/// How dynamic prolongation is resampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JitterMode {
    /// A fresh draw for every reference batch.
    #[default]
    PerBatch,
    /// One draw per worker per iteration, reused for all its batches.
    PerIteration,
}

impl FromStr for JitterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-batch" => Ok(JitterMode::PerBatch),
            "per-iteration" => Ok(JitterMode::PerIteration),
            other => Err(Error::config(format!("unknown jitter mode '{other}'"))),
        }
    }
}

/// Named heterogeneity presets for a four-worker cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterPreset {
    /// Static prolongation 0%, 100%, 200%, 300%: iteration times 1:2:3:4.
    Static1234,
    /// Uniform random prolongation in [0%, 50%) on every worker.
    Dynamic50,
    /// Both of the above; the random part applies to the prolonged time.
    Both,
}

impl ClusterPreset {
    pub fn profiles(&self, base_batch_time: f64) -> Result<Vec<WorkerProfile>> {
        let (factors, range): ([f64; 4], f64) = match self {
            ClusterPreset::Static1234 => ([0.0, 1.0, 2.0, 3.0], 0.0),
            ClusterPreset::Dynamic50 => ([0.0; 4], 0.5),
            ClusterPreset::Both => ([0.0, 1.0, 2.0, 3.0], 0.5),
        };
        factors
            .iter()
            .map(|&f| WorkerProfile::new(base_batch_time, f, range))
            .collect()
    }

    /// Row label used in comparison tables.
    pub fn label(&self) -> &'static str {
        match self {
            ClusterPreset::Static1234 => "Only static",
            ClusterPreset::Dynamic50 => "Only dynamic",
            ClusterPreset::Both => "Both static and dynamic",
        }
    }
}

impl fmt::Display for ClusterPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterPreset::Static1234 => "static-1234",
            ClusterPreset::Dynamic50 => "dynamic-50",
            ClusterPreset::Both => "both",
        })
    }
}

impl FromStr for ClusterPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static-1234" => Ok(ClusterPreset::Static1234),
            "dynamic-50" => Ok(ClusterPreset::Dynamic50),
            "both" => Ok(ClusterPreset::Both),
            other => Err(Error::config(format!("unknown cluster preset '{other}'"))),
        }
    }
}

/// Worker profiles, the comm model and the global simulated clock.
///
/// Timing draws for `(worker, iteration)` come from their own substream, so
/// the order in which a policy visits workers does not change any timing.
#[derive(Debug, Clone)]
pub struct ClusterState {
    profiles: Vec<WorkerProfile>,
    comm: CommModel,
    clock: f64,
    seed: u64,
    k_max: usize,
    jitter: JitterMode,
}

impl ClusterState {
    pub fn new(profiles: Vec<WorkerProfile>, comm: CommModel, seed: u64) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::contract("a cluster needs at least one worker"));
        }
        for p in &profiles {
            p.validate()?;
        }
        comm.validate()?;
        Ok(ClusterState {
            profiles,
            comm,
            clock: 0.0,
            seed,
            k_max: DEFAULT_K_MAX,
            jitter: JitterMode::PerBatch,
        })
    }

    pub fn with_k_max(mut self, k_max: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::contract("k_max must be at least 1"));
        }
        self.k_max = k_max;
        Ok(self)
    }

    pub fn with_jitter(mut self, jitter: JitterMode) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn workers(&self) -> usize {
        self.profiles.len()
    }

    pub fn profiles(&self) -> &[WorkerProfile] {
        &self.profiles
    }

    pub fn comm(&self) -> &CommModel {
        &self.comm
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Moves the clock forward; it never runs backwards.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if !(t >= self.clock) {
            return Err(Error::contract(format!(
                "clock cannot move backwards from {} to {t}",
                self.clock
            )));
        }
        self.clock = t;
        Ok(())
    }

    pub fn timing_stream(&self, worker: usize, iteration: u64) -> RngStream {
        RngStream::derive(self.seed, StreamTag::Timing, worker as u64, iteration)
    }

    /// Reference-batch compute for `worker` in `iteration` while a sync of
    /// length `window` that began at `start` is in flight.
    pub fn compute_until_sync(&self, worker: usize, iteration: u64, start: f64, window: f64) -> Result<BatchTrace> {
        let profile = &self.profiles[worker];
        let mut rng = self.timing_stream(worker, iteration);
        let mut trace = match self.jitter {
            JitterMode::PerBatch => compute_for_window(start, window, self.k_max, || sample_batch_time(profile, &mut rng))?,
            JitterMode::PerIteration => {
                let dt = sample_batch_time(profile, &mut rng);
                compute_for_window(start, window, self.k_max, || dt)?
            }
        };
        trace.worker = worker;
        trace.iteration = iteration;
        Ok(trace)
    }

    /// Time for `worker` to process `units` reference batches' worth of
    /// samples in one go (its `iteration`-th computation).
    pub fn compute_time(&self, worker: usize, iteration: u64, units: f64) -> f64 {
        let mut rng = self.timing_stream(worker, iteration);
        units * sample_batch_time(&self.profiles[worker], &mut rng)
    }
}
