//! Parameter-server baselines: ASP and bounded-staleness SSP.
//!
//! Workers run independently against a single parameter server. A worker
//! computes one batch at its parameter snapshot, then performs an exchange
//! with the server (push the gradient, pull fresh parameters). The server
//! link is one FIFO resource: an exchange occupies it for two transfers of
//! the full parameter vector, and a bare pull for one. Updates are applied to
//! the current global parameters when the exchange completes, whatever the
//! snapshot age.
//!
//! Under SSP a worker that has completed `c_i` updates may only start its
//! next computation while `c_i − min_j c_j ≤ s`; otherwise it waits and pulls
//! fresh parameters once admitted. Per-worker iteration counters count
//! admitted computations, and their spread never exceeds `s`.

use crate::cluster::{sync_duration, ClusterState};
use crate::error::{Error, Result};
use crate::model::{accumulate_grad, SampleBatch};
use crate::numeric::{ParamVector, RngStream, StreamTag};

use super::{make_record, HyperParams, IterationRecord, Problem};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Computing { done_at: f64 },
    Exchanging { done_at: f64 },
    Pulling { done_at: f64 },
    Blocked,
}

impl Phase {
    fn due(&self) -> Option<f64> {
        match *self {
            Phase::Computing { done_at } | Phase::Exchanging { done_at } | Phase::Pulling { done_at } => Some(done_at),
            Phase::Blocked => None,
        }
    }
}

#[derive(Debug, Clone)]
struct Worker {
    phase: Phase,
    snapshot: ParamVector,
    /// Mean gradient waiting to be pushed.
    gradient: Option<ParamVector>,
    started: u64,
    completed: u64,
}

#[derive(Debug, Clone)]
pub struct AsyncState {
    params: ParamVector,
    workers: Vec<Worker>,
    staleness: Option<usize>,
    seed: u64,
    t: u64,
    now: f64,
    server_free: f64,
    max_spread: u64,
    decisions: u64,
}

impl AsyncState {
    /// `staleness = None` is ASP; `Some(s)` is SSP with threshold `s`.
    pub fn new(init: ParamVector, seed: u64, cluster: &ClusterState, staleness: Option<usize>) -> Result<Self> {
        let now = cluster.clock();
        let workers = (0..cluster.workers())
            .map(|w| Worker {
                phase: Phase::Computing {
                    done_at: now + cluster.compute_time(w, 0, 1.0),
                },
                snapshot: init.clone(),
                gradient: None,
                started: 1,
                completed: 0,
            })
            .collect();
        Ok(AsyncState {
            params: init,
            workers,
            staleness,
            seed,
            t: 0,
            now,
            server_free: now,
            max_spread: 0,
            decisions: 0,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn staleness(&self) -> Option<usize> {
        self.staleness
    }

    /// Iterations each worker has entered (admitted computations).
    pub fn counters(&self) -> Vec<u64> {
        self.workers.iter().map(|w| w.started).collect()
    }

    /// Updates each worker has had applied.
    pub fn completed(&self) -> Vec<u64> {
        self.workers.iter().map(|w| w.completed).collect()
    }

    /// Largest counter spread seen after any scheduling decision.
    pub fn max_spread(&self) -> u64 {
        self.max_spread
    }

    /// Number of scheduling decisions processed so far.
    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    fn spread(&self) -> u64 {
        let max = self.workers.iter().map(|w| w.started).max().unwrap_or(0);
        let min = self.workers.iter().map(|w| w.started).min().unwrap_or(0);
        max - min
    }

    fn min_completed(&self) -> u64 {
        self.workers.iter().map(|w| w.completed).min().unwrap_or(0)
    }

    fn admissible(&self, w: usize) -> bool {
        match self.staleness {
            None => true,
            Some(s) => self.workers[w].completed - self.min_completed() <= s as u64,
        }
    }

    fn reserve_server(&mut self, duration: f64) -> f64 {
        let start = self.server_free.max(self.now);
        self.server_free = start + duration;
        self.server_free
    }

    fn start_compute(&mut self, w: usize, cluster: &ClusterState) {
        let index = self.workers[w].started - 1;
        let done_at = self.now + cluster.compute_time(w, index, 1.0);
        self.workers[w].phase = Phase::Computing { done_at };
    }

    /// Processes events until the next global update lands.
    pub fn step(&mut self, cluster: &mut ClusterState, problem: &Problem, hp: &HyperParams) -> Result<IterationRecord> {
        let transfer = sync_duration(cluster.comm(), problem.model.dim())?;
        loop {
            let (w, due) = self
                .workers
                .iter()
                .enumerate()
                .filter_map(|(i, wk)| wk.phase.due().map(|d| (i, d)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .ok_or_else(|| Error::contract("no runnable worker: scheduler deadlock"))?;
            self.now = due;
            cluster.advance_to(due)?;

            let applied = match self.workers[w].phase {
                Phase::Computing { .. } => {
                    let index = self.workers[w].started - 1;
                    let mut rng = RngStream::derive(self.seed, StreamTag::Sampling, w as u64, index);
                    let batch = SampleBatch::draw(problem.data.len(), hp.reference_batch, &mut rng);
                    let mut g = ParamVector::zeros(problem.model.dim());
                    accumulate_grad(&problem.model, &self.workers[w].snapshot, &batch.indices, &problem.data, &mut g);
                    g.scale(1.0 / batch.len() as f64);
                    self.workers[w].gradient = Some(g);
                    let done_at = self.reserve_server(2.0 * transfer);
                    self.workers[w].phase = Phase::Exchanging { done_at };
                    false
                }
                Phase::Exchanging { .. } => {
                    let g = self.workers[w]
                        .gradient
                        .take()
                        .expect("an exchange always carries a gradient");
                    self.params.add_scaled(-hp.learning_rate, &g)?;
                    self.workers[w].completed += 1;
                    self.workers[w].snapshot = self.params.clone();
                    self.workers[w].phase = Phase::Blocked;
                    if self.admissible(w) {
                        self.workers[w].started += 1;
                        self.start_compute(w, cluster);
                    }
                    for other in 0..self.workers.len() {
                        if other != w && self.workers[other].phase == Phase::Blocked && self.admissible(other) {
                            self.workers[other].started += 1;
                            let done_at = self.reserve_server(transfer);
                            self.workers[other].phase = Phase::Pulling { done_at };
                        }
                    }
                    true
                }
                Phase::Pulling { .. } => {
                    self.workers[w].snapshot = self.params.clone();
                    self.start_compute(w, cluster);
                    false
                }
                Phase::Blocked => unreachable!("blocked workers have no pending event"),
            };

            self.decisions += 1;
            let spread = self.spread();
            self.max_spread = self.max_spread.max(spread);
            if let Some(s) = self.staleness {
                if spread > s as u64 {
                    return Err(Error::contract(format!(
                        "staleness bound violated: counter spread {spread} > {s}"
                    )));
                }
            }

            if applied {
                let t = self.t;
                self.t += 1;
                let mut per_worker = vec![0; self.workers.len()];
                per_worker[w] = 1;
                return make_record(problem, &self.params, t, self.now, hp.reference_batch, per_worker);
            }
        }
    }
}

/// One ASP update.
pub fn asp_step(state: &mut AsyncState, cluster: &mut ClusterState, problem: &Problem, hp: &HyperParams) -> Result<IterationRecord> {
    if state.staleness.is_some() {
        return Err(Error::contract("asp_step called on an SSP state"));
    }
    state.step(cluster, problem, hp)
}

/// One SSP update.
pub fn ssp_step(state: &mut AsyncState, cluster: &mut ClusterState, problem: &Problem, hp: &HyperParams) -> Result<IterationRecord> {
    if state.staleness.is_none() {
        return Err(Error::contract("ssp_step called on an ASP state"));
    }
    state.step(cluster, problem, hp)
}
