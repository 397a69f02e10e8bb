//! Human-effort accounting: autonomous collection against manual
//! demonstration with manual resets.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::events::{EventKind, EventLog};

/// Time costs in arbitrary units (seconds in the shipped calibration).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    /// One human demonstration.
    pub t_demo: f64,
    /// One manual scene reset between demonstrations.
    pub t_manual_reset: f64,
    /// One call-human intervention during autonomous collection.
    pub t_intervention: f64,
    /// One-off setup of the autonomous loop.
    pub t_setup: f64,
    /// Human interventions one manually collected trajectory takes.
    pub interventions_per_manual_trajectory: f64,
    /// Demonstrations recorded before autonomous collection starts.
    pub seed_demos: u64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            t_demo: 1.0,
            t_manual_reset: 1.0,
            t_intervention: 1.0,
            t_setup: 0.0,
            interventions_per_manual_trajectory: 2.0,
            seed_demos: 0,
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let times = [
            self.t_demo,
            self.t_manual_reset,
            self.t_intervention,
            self.t_setup,
        ];
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(HarnessError::InvalidParams(
                "time costs must be finite and non-negative".into(),
            ));
        }
        if !(self.interventions_per_manual_trajectory.is_finite()
            && self.interventions_per_manual_trajectory > 0.0)
        {
            return Err(HarnessError::InvalidParams(
                "interventions_per_manual_trajectory must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Effort comparison; "ours" is the unit both ratios are normalized to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffortReport {
    pub n_trajectories: u64,
    pub interventions: u64,
    pub manual_time: f64,
    pub ours_time: f64,
    pub manual_interventions: f64,
    pub human_time_ratio: f64,
    pub intervention_ratio: f64,
}

/// Effort ratios from raw counts.
///
/// `manual = n (t_demo + t_manual_reset)`,
/// `ours = t_setup + seed_demos t_demo + interventions t_intervention`,
/// and the intervention ratio is `n k / interventions` with `k` the
/// interventions one manual trajectory takes.
pub fn effort_from_counts(
    costs: &CostConfig,
    n_trajectories: u64,
    interventions: u64,
) -> Result<EffortReport, HarnessError> {
    costs.validate()?;
    let n = n_trajectories as f64;
    let manual_time = n * (costs.t_demo + costs.t_manual_reset);
    let ours_time = costs.t_setup
        + costs.seed_demos as f64 * costs.t_demo
        + interventions as f64 * costs.t_intervention;
    let manual_interventions = n * costs.interventions_per_manual_trajectory;
    if ours_time <= 0.0 {
        return Err(HarnessError::DegenerateConfig(
            "autonomous collection took no human time".into(),
        ));
    }
    if interventions == 0 {
        return Err(HarnessError::DegenerateConfig(
            "autonomous collection needed no interventions".into(),
        ));
    }
    Ok(EffortReport {
        n_trajectories,
        interventions,
        manual_time,
        ours_time,
        manual_interventions,
        human_time_ratio: manual_time / ours_time,
        intervention_ratio: manual_interventions / interventions as f64,
    })
}

/// Effort ratios of a collection run that produced `n_trajectories`,
/// counting intervention events across `logs`.
pub fn effort_accounting(
    logs: &[EventLog],
    costs: &CostConfig,
    n_trajectories: u64,
) -> Result<EffortReport, HarnessError> {
    let interventions = logs.iter().map(|l| l.count(EventKind::Intervention)).sum();
    effort_from_counts(costs, n_trajectories, interventions)
}
