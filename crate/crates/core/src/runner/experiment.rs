use std::fmt::Write as _;

use crate::algorithms::{IterationRecord, PolicyKind, PolicyState, Problem};
use crate::cluster::ClusterState;
use crate::error::Result;
use crate::model::{
    accuracy, estimate_lipschitz, estimate_sigma_sq, full_loss, generate_synthetic_with_clean_labels, minimize_full_batch,
    Dataset, Model, ModelKind,
};
use crate::numeric::{ParamVector, RngStream, StreamTag};
use crate::theory::{verify_bound, BoundReport, TheoryParams, TrajectoryStats};

use super::config::{ConvergenceMetric, ExperimentConfig};

/// Everything a run needs, built deterministically from the config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: Problem,
    pub holdout: Option<Dataset>,
    pub init: ParamVector,
    pub cluster: ClusterState,
}

pub fn build_setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let d = &cfg.data;
    let mut data_rng = RngStream::derive(cfg.seed, StreamTag::Data, 0, 0);
    let (full, _, _) = generate_synthetic_with_clean_labels(d.features, d.samples, d.label_noise, d.feature_scale, &mut data_rng)?;
    let (train, holdout) = full.split_holdout(d.holdout_fraction)?;
    let model = match d.model {
        ModelKind::LogisticRegression => Model::LogisticRegression { dim: d.features },
        ModelKind::TwoLayerMlp => Model::TwoLayerMlp {
            input: d.features,
            hidden: d.hidden,
        },
        ModelKind::Quadratic => {
            let mut rng = RngStream::derive(cfg.seed, StreamTag::Data, 1, 0);
            let curvature = (0..d.features)
                .map(|_| rng.draw_uniform(0.5, 2.0))
                .collect::<Result<Vec<_>>>()?;
            Model::Quadratic { curvature }
        }
    };
    let init = model.init_params(&mut RngStream::derive(cfg.seed, StreamTag::Init, 0, 0));
    let cluster = ClusterState::new(cfg.cluster.profiles()?, cfg.comm, cfg.seed)?
        .with_k_max(cfg.k_max)?
        .with_jitter(cfg.jitter);
    Ok(Setup {
        problem: Problem::new(model, train)?,
        holdout,
        init,
        cluster,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub policy: PolicyKind,
    pub cluster: String,
    pub iterations_run: usize,
    /// Simulated time at which the threshold was first met.
    pub convergence_time: Option<f64>,
    pub converged_at: Option<u64>,
    pub final_loss: f64,
    pub final_sim_time: f64,
    pub final_accuracy: Option<f64>,
    /// Largest `M_t / M_r` over the run, rounded up.
    pub observed_k: usize,
    /// Largest SSP/ASP counter spread.
    pub max_spread: Option<u64>,
    pub theory: Option<BoundReport>,
    /// Why the bound could not be evaluated, if it could not.
    pub theory_error: Option<String>,
}

impl Summary {
    /// Flat `key=value` lines, theory report last.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "not reached".to_string(), |v| v.to_string());
        let _ = writeln!(s, "policy={}", self.policy);
        let _ = writeln!(s, "cluster={}", self.cluster);
        let _ = writeln!(s, "iterations={}", self.iterations_run);
        let _ = writeln!(s, "convergence_time={}", opt(self.convergence_time));
        if let Some(t) = self.converged_at {
            let _ = writeln!(s, "converged_at={t}");
        }
        let _ = writeln!(s, "final_loss={}", self.final_loss);
        let _ = writeln!(s, "final_sim_time={}", self.final_sim_time);
        if let Some(a) = self.final_accuracy {
            let _ = writeln!(s, "final_accuracy={a}");
        }
        let _ = writeln!(s, "observed_K={}", self.observed_k);
        if let Some(m) = self.max_spread {
            let _ = writeln!(s, "max_spread={m}");
        }
        if let Some(r) = &self.theory {
            s.push_str(&r.to_key_values());
        }
        if let Some(e) = &self.theory_error {
            let _ = writeln!(s, "theory.error={e}");
        }
        s
    }
}

fn meets(metric: ConvergenceMetric, threshold: f64, rec: &IterationRecord, acc: Option<f64>) -> bool {
    match metric {
        ConvergenceMetric::TrainLoss => rec.train_loss <= threshold,
        ConvergenceMetric::GradNormSq => rec.grad_norm_sq <= threshold,
        ConvergenceMetric::TestAccuracy => acc.is_some_and(|a| a >= threshold),
    }
}

/// Runs one policy and returns every iteration's record with a summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<IterationRecord>, Summary)> {
    let Setup {
        problem,
        holdout,
        init,
        mut cluster,
    } = build_setup(cfg)?;
    let hp = cfg.hyper;
    let mut state = PolicyState::new(cfg.policy, init.clone(), &cluster, &hp, cfg.seed, cfg.dbs_epoch_len(problem.data.len(), cluster.workers()))?;
    let mut records = Vec::with_capacity(hp.iterations);
    let mut converged: Option<(f64, u64)> = None;
    let mut last_acc = None;
    for _ in 0..hp.iterations {
        let rec = state.step(&mut cluster, &problem, &hp)?;
        if cfg.metric == ConvergenceMetric::TestAccuracy {
            let h = holdout.as_ref().expect("validated: accuracy metric has a holdout");
            last_acc = Some(accuracy(&problem.model, state.params(), h)?);
        }
        if converged.is_none() && meets(cfg.metric, cfg.threshold, &rec, last_acc) {
            converged = Some((rec.sim_time, rec.t));
        }
        let over_budget = cfg.time_budget.is_some_and(|b| rec.sim_time >= b);
        records.push(rec);
        if over_budget || (cfg.stop_at_threshold && converged.is_some()) {
            break;
        }
    }

    let last = records.last().expect("iterations >= 1");
    let observed_k = records
        .iter()
        .map(|r| r.total_batch.div_ceil(hp.reference_batch))
        .max()
        .unwrap_or(0);
    let final_accuracy = match &holdout {
        Some(h) => Some(accuracy(&problem.model, state.params(), h)?),
        None => None,
    };
    let max_spread = match &state {
        PolicyState::Async(s) => Some(s.max_spread()),
        _ => None,
    };
    let (theory, theory_error) = if cfg.policy == PolicyKind::Abs && cfg.theory.enabled {
        match theory_report(cfg, &problem, &init, &records) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    let summary = Summary {
        policy: cfg.policy,
        cluster: cfg.cluster.label(),
        iterations_run: records.len(),
        convergence_time: converged.map(|c| c.0),
        converged_at: converged.map(|c| c.1),
        final_loss: last.train_loss,
        final_sim_time: last.sim_time,
        final_accuracy,
        observed_k,
        max_spread,
        theory,
        theory_error,
    };
    Ok((records, summary))
}

/// Measures `L`, `σ²` and the initial suboptimality, then checks the run's
/// ergodic criterion against its bound.
pub fn theory_report(
    cfg: &ExperimentConfig,
    problem: &Problem,
    init: &ParamVector,
    records: &[IterationRecord],
) -> Result<BoundReport> {
    let t = &cfg.theory;
    let model = &problem.model;
    let data = &problem.data;
    let lipschitz = estimate_lipschitz(
        model,
        data,
        t.lipschitz_probes,
        t.lipschitz_radius,
        &mut RngStream::derive(cfg.seed, StreamTag::Probe, 0, 0),
    )?;
    let sigma_sq = estimate_sigma_sq(
        model,
        init,
        data,
        t.sigma_samples,
        &mut RngStream::derive(cfg.seed, StreamTag::Estimation, 0, 0),
    )?;
    let (_, f_oracle) = minimize_full_batch(model, data, init, t.oracle_step, t.oracle_iters, 1e-24)?;
    let f_start = full_loss(model, init, data)?;
    let f_best = records.iter().map(|r| r.train_loss).fold(f_oracle, f64::min);
    let stats = TrajectoryStats::from_abs_records(records, cfg.hyper.learning_rate)?;
    let workers = cfg.cluster.profiles()?.len();
    let envelope = stats.observed_envelope(cfg.hyper.reference_batch).max(workers);
    let params = TheoryParams {
        lipschitz,
        sigma_sq,
        suboptimality: (f_start - f_best).max(f64::MIN_POSITIVE),
        workers,
        envelope,
        reference_batch: cfg.hyper.reference_batch,
        iterations: stats.len().max(1),
        gamma: cfg.hyper.learning_rate / (envelope * cfg.hyper.reference_batch) as f64,
    };
    verify_bound(&stats, &params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterPreset;

    fn small(policy: PolicyKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(policy, ClusterPreset::Static1234, 11);
        cfg.hyper.iterations = 30;
        cfg.data.samples = 300;
        cfg.theory.oracle_iters = 2000;
        cfg
    }

    #[test]
    fn infinite_threshold_converges_at_first_record() {
        let mut cfg = small(PolicyKind::Bsp);
        cfg.threshold = f64::INFINITY;
        let (records, summary) = run_experiment(&cfg).unwrap();
        assert_eq!(summary.convergence_time, Some(records[0].sim_time));
        assert_eq!(summary.converged_at, Some(0));
    }

    #[test]
    fn unreachable_threshold_is_reported() {
        let mut cfg = small(PolicyKind::Dbs);
        cfg.threshold = -1.0;
        let (_, summary) = run_experiment(&cfg).unwrap();
        assert_eq!(summary.convergence_time, None);
        assert!(summary.to_key_values().contains("convergence_time=not reached"));
    }

    #[test]
    fn abs_summary_carries_theory_report() {
        let (records, summary) = run_experiment(&small(PolicyKind::Abs)).unwrap();
        let report = summary.theory.clone().expect("abs run has a report");
        let k = records.iter().map(|r| r.total_batch / 32).max().unwrap();
        assert_eq!(report.envelope, k);
        assert_eq!(summary.observed_k, k);
        assert!(summary.to_key_values().contains("theory.bound="));
    }

    #[test]
    fn time_budget_stops_early() {
        let mut cfg = small(PolicyKind::Asp);
        cfg.time_budget = Some(1.0);
        let (records, _) = run_experiment(&cfg).unwrap();
        assert!(records.len() < 30);
        assert!(records.last().unwrap().sim_time >= 1.0);
    }

    #[test]
    fn accuracy_metric_uses_holdout() {
        let mut cfg = small(PolicyKind::Bsp);
        cfg.data.holdout_fraction = 0.2;
        cfg.metric = ConvergenceMetric::TestAccuracy;
        cfg.threshold = 0.0;
        let (records, summary) = run_experiment(&cfg).unwrap();
        assert_eq!(summary.convergence_time, Some(records[0].sim_time));
        assert!(summary.final_accuracy.is_some());
    }

    #[test]
    fn sim_time_strictly_increases_for_every_policy() {
        for p in PolicyKind::ALL {
            let (records, _) = run_experiment(&small(p)).unwrap();
            assert!(records.windows(2).all(|w| w[1].sim_time > w[0].sim_time), "{p}");
        }
    }
}
