use std::fmt::Write as _;

use rayon::prelude::*;

use crate::algorithms::{IterationRecord, PolicyKind};
use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, Summary};

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonCell {
    pub policy: PolicyKind,
    pub convergence_time: Option<f64>,
    /// This member's time over the time of its row's first member.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub cells: Vec<ComparisonCell>,
}

/// Convergence times grouped by cluster, one column per policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<PolicyKind>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn cell(&self, label: &str, policy: PolicyKind) -> Option<&ComparisonCell> {
        self.rows
            .iter()
            .find(|r| r.label == label)?
            .cells
            .iter()
            .find(|c| c.policy == policy)
    }

    /// Pipe-separated text, cells formatted as `time(speedup×)`.
    pub fn render(&self) -> String {
        let mut s = String::from("Cluster heterogeneity");
        for c in &self.columns {
            let _ = write!(s, " | {}", c.display_name());
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.label);
            for col in &self.columns {
                let text = match row.cells.iter().find(|c| c.policy == *col) {
                    None => "-".to_string(),
                    Some(cell) => {
                        let time = cell
                            .convergence_time
                            .map_or_else(|| "not reached".to_string(), |t| format!("{t:.3}"));
                        let speed = cell.speedup.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}×"));
                        format!("{time}({speed})")
                    }
                };
                let _ = write!(s, " | {text}");
            }
            s.push('\n');
        }
        s
    }
}

/// Result of a comparison: the table plus each member's run, in input order.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub table: ComparisonTable,
    pub runs: Vec<(Vec<IterationRecord>, Summary)>,
}

fn check_comparable(configs: &[ExperimentConfig]) -> Result<()> {
    let first = configs
        .first()
        .ok_or_else(|| Error::Comparison("nothing to compare".into()))?;
    for (i, c) in configs.iter().enumerate().skip(1) {
        let mismatch = |what: &str| Err(Error::Comparison(format!("config {i} differs from config 0 in {what}")));
        if c.data != first.data {
            return mismatch("model/dataset");
        }
        if c.seed != first.seed {
            return mismatch("seed");
        }
        if c.threshold.to_bits() != first.threshold.to_bits() || c.metric != first.metric {
            return mismatch("convergence threshold");
        }
    }
    Ok(())
}

/// Runs every config (in parallel) and tabulates time to threshold.
/// Members sharing a cluster label form one row; speedups are relative to
/// the row's first member.
pub fn compare_policies(configs: &[ExperimentConfig]) -> Result<Comparison> {
    check_comparable(configs)?;
    for c in configs {
        c.validate()?;
    }
    let runs = configs
        .par_iter()
        .map(run_experiment)
        .collect::<Result<Vec<_>>>()?;

    let mut columns: Vec<PolicyKind> = Vec::new();
    let mut rows: Vec<ComparisonRow> = Vec::new();
    for (cfg, (_, summary)) in configs.iter().zip(&runs) {
        if !columns.contains(&cfg.policy) {
            columns.push(cfg.policy);
        }
        let label = cfg.cluster.label();
        let idx = match rows.iter().position(|r| r.label == label) {
            Some(i) => i,
            None => {
                rows.push(ComparisonRow { label, cells: Vec::new() });
                rows.len() - 1
            }
        };
        let row = &mut rows[idx];
        if row.cells.iter().any(|c| c.policy == cfg.policy) {
            return Err(Error::Comparison(format!(
                "policy {} appears twice for cluster '{}'",
                cfg.policy, row.label
            )));
        }
        let reference = row.cells.first().map_or(summary.convergence_time, |c| c.convergence_time);
        let speedup = match (summary.convergence_time, reference) {
            (Some(t), Some(r)) if r > 0.0 => Some(t / r),
            _ => None,
        };
        row.cells.push(ComparisonCell {
            policy: cfg.policy,
            convergence_time: summary.convergence_time,
            speedup,
        });
    }
    Ok(Comparison {
        table: ComparisonTable { columns, rows },
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterPreset;

    fn cfg(policy: PolicyKind, preset: ClusterPreset) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(policy, preset, 5);
        c.hyper.iterations = 20;
        c.data.samples = 200;
        c.threshold = f64::INFINITY;
        c.theory.enabled = false;
        c
    }

    #[test]
    fn self_comparison_is_unit_speedup() {
        let c = cfg(PolicyKind::Bsp, ClusterPreset::Static1234);
        let cmp = compare_policies(&[c]).unwrap();
        assert_eq!(cmp.table.rows[0].cells[0].speedup, Some(1.0));
        assert!(cmp.table.render().contains("(1.00×)"));
        assert!(cmp.table.render().starts_with("Cluster heterogeneity | BSP-SGD\nOnly static | "));
    }

    #[test]
    fn unreached_threshold_shows_na() {
        let mut a = cfg(PolicyKind::Abs, ClusterPreset::Static1234);
        let mut b = cfg(PolicyKind::Asp, ClusterPreset::Static1234);
        a.threshold = -1.0;
        b.threshold = -1.0;
        let cmp = compare_policies(&[a, b]).unwrap();
        let text = cmp.table.render();
        assert!(text.contains("not reached(n/a)"));
        assert!(!text.contains("inf"));
    }

    #[test]
    fn mismatched_keys_are_rejected() {
        let a = cfg(PolicyKind::Abs, ClusterPreset::Static1234);
        let mut b = cfg(PolicyKind::Bsp, ClusterPreset::Static1234);
        b.seed = 6;
        assert_eq!(compare_policies(&[a.clone(), b]).unwrap_err().kind(), "comparison");
        let mut c = cfg(PolicyKind::Bsp, ClusterPreset::Static1234);
        c.data.samples = 201;
        assert!(compare_policies(&[a.clone(), c]).is_err());
        let mut d = cfg(PolicyKind::Bsp, ClusterPreset::Static1234);
        d.threshold = 0.5;
        assert!(compare_policies(&[a, d]).is_err());
        assert!(compare_policies(&[]).is_err());
    }

    #[test]
    fn rows_follow_cluster_labels() {
        let configs = vec![
            cfg(PolicyKind::Abs, ClusterPreset::Static1234),
            cfg(PolicyKind::Bsp, ClusterPreset::Static1234),
            cfg(PolicyKind::Abs, ClusterPreset::Dynamic50),
            cfg(PolicyKind::Bsp, ClusterPreset::Dynamic50),
        ];
        let cmp = compare_policies(&configs).unwrap();
        let labels: Vec<_> = cmp.table.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["Only static", "Only dynamic"]);
        assert_eq!(cmp.table.columns, vec![PolicyKind::Abs, PolicyKind::Bsp]);
        let bsp = cmp.table.cell("Only dynamic", PolicyKind::Bsp).unwrap();
        let abs = cmp.table.cell("Only dynamic", PolicyKind::Abs).unwrap();
        assert_eq!(bsp.speedup, Some(bsp.convergence_time.unwrap() / abs.convergence_time.unwrap()));
    }
}
