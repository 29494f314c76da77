//! Reconstruction accuracy, the page-wise paired t-test and
//! stage-segmented timing reports.

use crate::docproc::ReconstructionInstance;
use crate::solver::Solution;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("solution has {got} entries for an instance of {want} shreds")]
    Mismatch { got: usize, want: usize },
    #[error("paired vectors must have equal length >= 2")]
    BadVectors,
    #[error("degenerate paired test: differences have zero variance")]
    DegenerateVariance,
    #[error("timer scope error: {0}")]
    TimerScope(String),
}

/// Fraction of adjacent placements that are positive.
///
/// Strict: shred j must be the same page's ground-truth right neighbor
/// of shred i. Relaxed additionally accepts a page's last shred
/// followed by a different page's first shred, making the page order
/// irrelevant for multi-page instances.
pub fn accuracy(
    solution: &Solution,
    instance: &ReconstructionInstance,
    relaxed: bool,
) -> Result<f64, MetricsError> {
    let n = instance.len();
    if solution.order.len() != n {
        return Err(MetricsError::Mismatch { got: solution.order.len(), want: n });
    }
    let mut positive = 0usize;
    for w in solution.order.windows(2) {
        let a = &instance.shreds[w[0]];
        let b = &instance.shreds[w[1]];
        let strict_hit = a.page_id == b.page_id && b.gt_index == a.gt_index + 1;
        let relaxed_hit =
            relaxed && a.is_page_last && b.is_page_first && a.page_id != b.page_id;
        if strict_hit || relaxed_hit {
            positive += 1;
        }
    }
    Ok(positive as f64 / (n - 1) as f64)
}

/// Two-sided p-value of the paired-samples t statistic with n-1 degrees
/// of freedom; the t CDF goes through the regularized incomplete beta
/// function.
pub fn paired_t_test(acc_a: &[f64], acc_b: &[f64]) -> Result<f64, MetricsError> {
    if acc_a.len() != acc_b.len() || acc_a.len() < 2 {
        return Err(MetricsError::BadVectors);
    }
    let n = acc_a.len() as f64;
    let diffs: Vec<f64> = acc_a.iter().zip(acc_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    // all-equal differences up to rounding noise count as degenerate
    if var == 0.0 || var.sqrt() <= 1e-12 * mean.abs() {
        return Err(MetricsError::DegenerateVariance);
    }
    let t = mean / (var / n).sqrt();
    let dof = n - 1.0;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let dist = StudentsT::new(0.0, 1.0, dof).expect("valid dof");
    Ok(2.0 * dist.cdf(-t.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Boundary projection (all embed calls).
    Projection,
    /// Pairwise compatibility evaluation (cost matrix build).
    Pairwise,
    /// Optimization search.
    Optimization,
}

impl Stage {
    fn slot(self) -> usize {
        match self {
            Stage::Projection => 0,
            Stage::Pairwise => 1,
            Stage::Optimization => 2,
        }
    }
}

/// Wall-clock seconds per reconstruction stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub pro_s: f64,
    pub pw_s: f64,
    pub opt_s: f64,
}

/// Scoped monotonic timer; stages must not overlap.
#[derive(Debug, Default)]
pub struct StageTimer {
    seconds: [f64; 3],
    active: Option<(Stage, Instant)>,
}

impl StageTimer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self, stage: Stage) -> Result<(), MetricsError> {
        if let Some((open, _)) = self.active {
            return Err(MetricsError::TimerScope(format!(
                "cannot start {stage:?} while {open:?} is open"
            )));
        }
        self.active = Some((stage, Instant::now()));
        Ok(())
    }

    pub fn stop(&mut self, stage: Stage) -> Result<(), MetricsError> {
        match self.active {
            Some((open, t0)) if open == stage => {
                self.seconds[stage.slot()] += t0.elapsed().as_secs_f64();
                self.active = None;
                Ok(())
            }
            Some((open, _)) => Err(MetricsError::TimerScope(format!(
                "stop {stage:?} does not match open {open:?}"
            ))),
            None => Err(MetricsError::TimerScope(format!("stop {stage:?} without start"))),
        }
    }

    /// Runs `f` inside the stage scope.
    pub fn scope<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> Result<T, MetricsError> {
        self.start(stage)?;
        let out = f();
        self.stop(stage)?;
        Ok(out)
    }

    pub fn timings(&self) -> StageTimings {
        StageTimings {
            pro_s: self.seconds[0],
            pw_s: self.seconds[1],
            opt_s: self.seconds[2],
        }
    }
}

/// Full record of one reconstruction run. Timings are optional so that
/// reproducibility checks can compare reports byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub n: usize,
    pub multi_page: bool,
    pub accuracy_strict: f64,
    pub accuracy_relaxed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
    pub inference_count: u64,
    /// Shred keys in presentation order; `solution.order` indexes this.
    pub presented: Vec<String>,
    pub solution: Solution,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub config: serde_json::Value,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Least-squares slope of log(time) against log(n); the scaling
/// exponent of a timing column.
pub fn log_log_slope(ns: &[usize], times: &[f64]) -> f64 {
    assert_eq!(ns.len(), times.len());
    assert!(ns.len() >= 2);
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|&t| t.max(1e-12).ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}
