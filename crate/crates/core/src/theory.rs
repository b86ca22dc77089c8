//! Convergence-analysis formulas and their evaluation on recorded runs.
//!
//! The analysis writes an update as `x − γ Σ g` over the `M_t` samples of an
//! iteration, while the trainers apply `x − η · mean(g)`. A run with learning
//! rate `η` therefore corresponds to the per-iteration analysis step
//! `γ_t = η / M_t`; [`TrajectoryStats::from_abs_records`] performs that
//! mapping.

use std::fmt::Write as _;

use crate::algorithms::IterationRecord;
use crate::error::{Error, Result};

/// Constants of the analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    /// Smoothness constant `L`.
    pub lipschitz: f64,
    /// Per-sample gradient variance bound `σ²`.
    pub sigma_sq: f64,
    /// Initial suboptimality `f(x₁) − f(x*)`.
    pub suboptimality: f64,
    pub workers: usize,
    /// Batch envelope `K` in units of the reference batch.
    pub envelope: usize,
    pub reference_batch: usize,
    pub iterations: usize,
    pub gamma: f64,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("lipschitz", self.lipschitz),
            ("sigma_sq", self.sigma_sq),
            ("suboptimality", self.suboptimality),
            ("gamma", self.gamma),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.workers == 0 || self.reference_batch == 0 || self.iterations == 0 {
            return Err(Error::contract("workers, reference batch and iterations must be >= 1"));
        }
        if self.envelope < self.workers {
            return Err(Error::contract(format!(
                "envelope K = {} must be >= worker count {}",
                self.envelope, self.workers
            )));
        }
        Ok(())
    }

    /// `K · M_r`.
    pub fn envelope_batch(&self) -> usize {
        self.envelope * self.reference_batch
    }
}

/// Per-iteration `(γ_t, M_t, ‖∇f(x_t)‖²)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryStats {
    pub gammas: Vec<f64>,
    pub batches: Vec<usize>,
    pub grad_norms_sq: Vec<f64>,
}

impl TrajectoryStats {
    pub fn new(gammas: Vec<f64>, batches: Vec<usize>, grad_norms_sq: Vec<f64>) -> Result<Self> {
        if gammas.len() != batches.len() || gammas.len() != grad_norms_sq.len() {
            return Err(Error::contract(format!(
                "trajectory lengths differ: {} step sizes, {} batches, {} norms",
                gammas.len(),
                batches.len(),
                grad_norms_sq.len()
            )));
        }
        if gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::contract("trajectory step sizes must be finite and >= 0"));
        }
        if grad_norms_sq.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::contract("trajectory gradient norms must be finite and >= 0"));
        }
        Ok(TrajectoryStats {
            gammas,
            batches,
            grad_norms_sq,
        })
    }

    /// Builds the trajectory of an ABS run trained with learning rate
    /// `learning_rate`.
    ///
    /// Record `t` carries the metrics of the parameters entering iteration
    /// `t + 1` and the batch whose gradients that iteration applies, so every
    /// record but the last contributes one entry. The leading null update
    /// leaves the initial parameters unchanged and needs no entry of its own.
    pub fn from_abs_records(records: &[IterationRecord], learning_rate: f64) -> Result<Self> {
        let used = records.len().saturating_sub(1);
        let mut gammas = Vec::with_capacity(used);
        let mut batches = Vec::with_capacity(used);
        let mut norms = Vec::with_capacity(used);
        for rec in &records[..used] {
            if rec.total_batch == 0 {
                return Err(Error::contract(format!("record {} has an empty batch", rec.t)));
            }
            gammas.push(learning_rate / rec.total_batch as f64);
            batches.push(rec.total_batch);
            norms.push(rec.grad_norm_sq);
        }
        TrajectoryStats::new(gammas, batches, norms)
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// Largest `M_t / M_r`, rounded up.
    pub fn observed_envelope(&self, reference_batch: usize) -> usize {
        self.batches
            .iter()
            .map(|&m| m.div_ceil(reference_batch))
            .max()
            .unwrap_or(0)
    }
}

/// `γ²LM² + LγM ≤ 1`.
pub fn check_lr_condition(gamma: f64, lipschitz: f64, batch: usize) -> bool {
    let gm = gamma * batch as f64;
    lipschitz * gm * gm + lipschitz * gm <= 1.0
}

/// `sqrt(Δ / (K M_r L T σ²))`.
pub fn corollary2_gamma(p: &TheoryParams) -> f64 {
    let denom = p.envelope_batch() as f64 * p.lipschitz * p.iterations as f64 * p.sigma_sq;
    (p.suboptimality / denom).sqrt()
}

/// Smallest `T` for which the closed-form rate applies, at least 1.
pub fn min_iterations(p: &TheoryParams) -> usize {
    let rhs = p.suboptimality * p.envelope_batch() as f64 / (9.0 * p.sigma_sq * p.lipschitz);
    (rhs.ceil() as usize).max(1)
}

/// `6σ · sqrt(Δ L / (T K M_r))`.
pub fn closed_form_rate(p: &TheoryParams) -> f64 {
    6.0 * p.sigma_sq.sqrt() * (p.suboptimality * p.lipschitz / (p.iterations as f64 * p.envelope_batch() as f64)).sqrt()
}

/// `Σ γ_t ‖∇f(x_t)‖² / Σ γ_t`.
pub fn ergodic_criterion(stats: &TrajectoryStats) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::contract("ergodic criterion of an empty trajectory"));
    }
    let weight: f64 = stats.gammas.iter().sum();
    if weight <= 0.0 {
        return Err(Error::contract("ergodic criterion needs a positive total step size"));
    }
    let num: f64 = stats.gammas.iter().zip(&stats.grad_norms_sq).map(|(g, n)| g * n).sum();
    Ok(num / weight)
}

/// Upper bound on the ergodic criterion for the step sizes `gammas`. Every
/// step must satisfy the feasibility condition at `M = K · M_r`.
pub fn theorem1_bound(p: &TheoryParams, gammas: &[f64]) -> Result<f64> {
    p.validate()?;
    if gammas.is_empty() {
        return Err(Error::contract("bound over an empty step-size sequence"));
    }
    let km = p.envelope_batch() as f64;
    let mut acc = 0.0;
    let mut weight = 0.0;
    for (t, &g) in gammas.iter().enumerate() {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::contract(format!("step size {g} at position {t} is not positive")));
        }
        if !check_lr_condition(g, p.lipschitz, p.envelope_batch()) {
            return Err(Error::contract(format!(
                "step size {g} at position {t} violates γ²LM² + LγM ≤ 1 for M = {}",
                p.envelope_batch()
            )));
        }
        acc += km * g.powi(3) * p.lipschitz * p.sigma_sq + p.lipschitz * g * g * p.sigma_sq;
        weight += g;
    }
    Ok((acc + 2.0 * p.suboptimality / km) / weight)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub criterion: f64,
    pub bound: f64,
    pub satisfied: bool,
    /// Envelope used for the bound.
    pub envelope: usize,
    pub iterations: usize,
    pub lipschitz: f64,
    pub sigma_sq: f64,
    pub suboptimality: f64,
}

impl BoundReport {
    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "theory.criterion={}", self.criterion);
        let _ = writeln!(s, "theory.bound={}", self.bound);
        let _ = writeln!(s, "theory.satisfied={}", self.satisfied);
        let _ = writeln!(s, "theory.K={}", self.envelope);
        let _ = writeln!(s, "theory.T={}", self.iterations);
        let _ = writeln!(s, "theory.L={}", self.lipschitz);
        let _ = writeln!(s, "theory.sigma_sq={}", self.sigma_sq);
        let _ = writeln!(s, "theory.suboptimality={}", self.suboptimality);
        s
    }
}

/// Compares a run's ergodic criterion with the bound at its own step sizes.
/// The run's envelope replaces `p.envelope` when larger. A violated bound is
/// reported, not raised.
pub fn verify_bound(run: &TrajectoryStats, p: &TheoryParams) -> Result<BoundReport> {
    let mut params = *p;
    params.envelope = params.envelope.max(run.observed_envelope(p.reference_batch));
    params.iterations = run.len();
    let criterion = ergodic_criterion(run)?;
    let bound = theorem1_bound(&params, &run.gammas)?;
    Ok(BoundReport {
        criterion,
        bound,
        satisfied: criterion <= bound,
        envelope: params.envelope,
        iterations: params.iterations,
        lipschitz: params.lipschitz,
        sigma_sq: params.sigma_sq,
        suboptimality: params.suboptimality,
    })
}

/// One row of the pure-formula grid check.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCheck {
    pub params: TheoryParams,
    pub gamma: f64,
    pub min_iterations: usize,
    pub feasible: bool,
    /// `None` when the step size is infeasible.
    pub bound: Option<f64>,
    pub rate: f64,
    pub consistent: bool,
}

/// Parameter grid with `T` at or above the iteration threshold. `gamma` of
/// each point is the closed-form step size.
pub fn default_grid() -> Vec<TheoryParams> {
    let points: [(f64, f64, f64, usize, usize, usize, usize); 10] = [
        (1.0, 1.0, 1.0, 4, 4, 32, 1000),
        (1.0, 1.0, 9.0, 4, 4, 32, 3200),
        (0.25, 2.0, 0.7, 4, 8, 32, 5000),
        (2.0, 0.5, 3.0, 4, 16, 32, 20000),
        (0.5, 4.0, 0.1, 8, 8, 16, 2000),
        (10.0, 1.0, 5.0, 2, 2, 64, 1_000_000),
        (0.1, 0.1, 2.0, 4, 4, 32, 100_000),
        (1.0, 10.0, 1.0, 16, 32, 8, 3000),
        (3.0, 0.2, 0.5, 4, 6, 32, 50_000),
        (0.05, 1.5, 20.0, 4, 64, 32, 40_000),
    ];
    points
        .iter()
        .map(|&(l, s2, delta, n, k, mr, t)| {
            let mut p = TheoryParams {
                lipschitz: l,
                sigma_sq: s2,
                suboptimality: delta,
                workers: n,
                envelope: k,
                reference_batch: mr,
                iterations: t,
                gamma: 1.0,
            };
            p.iterations = p.iterations.max(min_iterations(&p));
            p.gamma = corollary2_gamma(&p);
            p
        })
        .collect()
}

/// Closed-form step size, feasibility and rate consistency at each point.
pub fn check_grid(grid: &[TheoryParams]) -> Result<Vec<GridCheck>> {
    grid.iter()
        .map(|p| {
            p.validate()?;
            let gamma = corollary2_gamma(p);
            let feasible = check_lr_condition(gamma, p.lipschitz, p.envelope_batch());
            let rate = closed_form_rate(p);
            let bound = if feasible {
                Some(theorem1_bound(p, &vec![gamma; p.iterations])?)
            } else {
                None
            };
            let consistent = p.iterations >= min_iterations(p) && bound.is_none_or(|b| b <= rate + 1e-9);
            Ok(GridCheck {
                params: *p,
                gamma,
                min_iterations: min_iterations(p),
                feasible,
                bound,
                rate,
                consistent,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> TheoryParams {
        TheoryParams {
            lipschitz: 1.0,
            sigma_sq: 1.0,
            suboptimality: 1.0,
            workers: 4,
            envelope: 4,
            reference_batch: 32,
            iterations: 1000,
            gamma: 1e-3,
        }
    }

    #[test]
    fn lr_condition_examples() {
        assert!(check_lr_condition(0.0, 1.0, 1));
        assert!(check_lr_condition(0.6, 1.0, 1));
        assert!(!check_lr_condition(0.7, 1.0, 1));
        assert!(check_lr_condition(1e-4, 1.0, 128));
    }

    #[test]
    fn closed_form_step_size() {
        let p = params();
        assert!((corollary2_gamma(&p) - (1.0f64 / 128_000.0).sqrt()).abs() < 1e-15);
        assert!((corollary2_gamma(&p) - 2.795e-3).abs() < 1e-6);
        let quad = TheoryParams { iterations: 4000, ..p };
        assert!((corollary2_gamma(&quad) * 2.0 - corollary2_gamma(&p)).abs() < 1e-15);
        let wide = TheoryParams { envelope: 16, ..p };
        assert!((corollary2_gamma(&wide) * 2.0 - corollary2_gamma(&p)).abs() < 1e-15);
    }

    #[test]
    fn iteration_threshold_examples() {
        let p = TheoryParams {
            suboptimality: 9.0,
            ..params()
        };
        assert_eq!(min_iterations(&p), 128);
        let tiny = TheoryParams {
            suboptimality: 1e-300,
            ..params()
        };
        assert_eq!(min_iterations(&tiny), 1);
        let doubled = TheoryParams {
            reference_batch: 64,
            ..p
        };
        assert_eq!(min_iterations(&doubled), 256);
    }

    #[test]
    fn ergodic_examples() {
        let s = TrajectoryStats::new(vec![1.0, 1.0, 2.0], vec![1; 3], vec![4.0, 4.0, 1.0]).unwrap();
        assert!((ergodic_criterion(&s).unwrap() - 2.5).abs() < 1e-15);
        let c = TrajectoryStats::new(vec![0.1; 5], vec![1; 5], vec![3.0; 5]).unwrap();
        assert!((ergodic_criterion(&c).unwrap() - 3.0).abs() < 1e-15);
        let one = TrajectoryStats::new(vec![0.3], vec![1], vec![7.0]).unwrap();
        assert!((ergodic_criterion(&one).unwrap() - 7.0).abs() < 1e-14);
        assert!(ergodic_criterion(&TrajectoryStats::default()).is_err());
        assert!(TrajectoryStats::new(vec![1.0], vec![], vec![1.0]).is_err());
    }

    #[test]
    fn constant_step_bound_collapses() {
        let p = params();
        let g = 1e-4;
        let t = 50;
        let km = 128.0;
        let expected = (t as f64 * (km * g * g * g + g * g) + 2.0 / km) / (t as f64 * g);
        let got = theorem1_bound(&p, &vec![g; t]).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn bound_grows_as_step_shrinks() {
        let p = params();
        let a = theorem1_bound(&p, &[1e-4; 10]).unwrap();
        let b = theorem1_bound(&p, &[1e-8; 10]).unwrap();
        assert!(b > 1e3 * a);
    }

    #[test]
    fn infeasible_step_is_rejected() {
        assert!(theorem1_bound(&params(), &[1e-4, 0.5]).is_err());
    }

    #[test]
    fn zero_gradients_always_satisfy() {
        let run = TrajectoryStats::new(vec![1e-4; 10], vec![128; 10], vec![0.0; 10]).unwrap();
        let r = verify_bound(&run, &params()).unwrap();
        assert_eq!(r.criterion, 0.0);
        assert!(r.satisfied);
    }

    #[test]
    fn report_uses_observed_envelope() {
        let run = TrajectoryStats::new(vec![1e-5; 3], vec![128, 288, 160], vec![1.0; 3]).unwrap();
        let r = verify_bound(&run, &params()).unwrap();
        assert_eq!(r.envelope, 9);
        assert!(r.to_key_values().contains("theory.K=9\n"));
    }

    #[test]
    fn abs_records_map_to_per_sample_steps() {
        let rec = |t, m, n| IterationRecord {
            t,
            sim_time: t as f64 + 1.0,
            total_batch: m,
            train_loss: 0.0,
            grad_norm_sq: n,
            per_worker: vec![],
        };
        let stats = TrajectoryStats::from_abs_records(&[rec(0, 100, 4.0), rec(1, 200, 3.0), rec(2, 50, 2.0)], 0.5).unwrap();
        assert_eq!(stats.gammas, vec![0.005, 0.0025]);
        assert_eq!(stats.batches, vec![100, 200]);
        assert_eq!(stats.grad_norms_sq, vec![4.0, 3.0]);
    }

    #[test]
    fn default_grid_is_consistent() {
        let checks = check_grid(&default_grid()).unwrap();
        assert_eq!(checks.len(), 10);
        for c in &checks {
            assert!(c.consistent && c.feasible, "{c:?}");
        }
    }

    #[test]
    fn closed_form_step_at_iteration_threshold() {
        // at T = min_iterations the closed-form step gives γ·K·M_r = 3
        for l in [1.0, 0.05] {
            let mut p = params();
            p.lipschitz = l;
            p.suboptimality = 9.0 * l;
            p.iterations = min_iterations(&p);
            let g = corollary2_gamma(&p);
            assert!((g * p.envelope_batch() as f64 - 3.0).abs() < 1e-12);
            assert_eq!(check_lr_condition(g, l, p.envelope_batch()), 12.0 * l <= 1.0);
        }
    }

    proptest! {
        #[test]
        fn closed_form_rate_dominates_bound(
            l in 0.01f64..10.0,
            s2 in 0.01f64..10.0,
            delta in 0.01f64..10.0,
            k in 1usize..16,
            mr in 1usize..64,
            extra in 0usize..5000,
        ) {
            let mut p = TheoryParams {
                lipschitz: l, sigma_sq: s2, suboptimality: delta,
                workers: 1, envelope: k, reference_batch: mr, iterations: 1, gamma: 1.0,
            };
            p.iterations = min_iterations(&p) + extra;
            let g = corollary2_gamma(&p);
            prop_assume!(check_lr_condition(g, l, p.envelope_batch()));
            prop_assume!(p.iterations <= 200_000);
            let bound = theorem1_bound(&p, &vec![g; p.iterations]).unwrap();
            let rate = 6.0 * s2.sqrt() * (delta * l / (p.iterations as f64 * (k * mr) as f64)).sqrt();
            prop_assert!(bound <= rate + 1e-9);
        }

        #[test]
        fn step_size_scaling_law(k in 1usize..20, t in 1usize..100_000, f in 2usize..5) {
            let p = TheoryParams { envelope: k, iterations: t, ..params() };
            let q = TheoryParams { envelope: k * f, ..p };
            let ratio = corollary2_gamma(&p) / corollary2_gamma(&q);
            prop_assert!((ratio - (f as f64).sqrt()).abs() < 1e-12);
        }
    }
}
