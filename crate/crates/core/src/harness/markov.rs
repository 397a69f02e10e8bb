//! Exact success probability of the supervised attempt chain, plus a
//! synthetic scenario that realizes any chain in the simulator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::orchestrator::TaskPlan;
use crate::policypool::{LearningCurve, PolicyPool, PolicySpec, StepRange};
use crate::runtime::HumanConfig;
use crate::simenv::{Direction, Scenario};

/// Parameters of one subtask's attempt chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubtaskChain {
    /// Single-attempt success probability `p`.
    pub success_prob: f64,
    /// Fraction `β` of failures that stay in the precondition region.
    pub nondegrading_fraction: f64,
    /// Recovery success `r`; `None` when no recovery skill is mapped.
    #[serde(default)]
    pub recovery_success: Option<f64>,
    pub max_attempts: u32,
    /// One human-assisted final attempt when the chain is exhausted.
    pub human_retry: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub subtasks: Vec<SubtaskChain>,
}

impl SubtaskChain {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let probs = [
            Some(self.success_prob),
            Some(self.nondegrading_fraction),
            self.recovery_success,
        ];
        if let Some(p) = probs
            .into_iter()
            .flatten()
            .find(|p| !(0.0..=1.0).contains(p))
        {
            return Err(HarnessError::InvalidParams(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        if self.max_attempts == 0 {
            return Err(HarnessError::InvalidParams(
                "max_attempts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Probability that the subtask ends done.
    ///
    /// Walks the attempt tree. Attempt `a` succeeds with `p`. A
    /// non-degrading failure retries while `a < M`. A degrading failure runs
    /// recovery while `a < M`; a recovered scene retries. Every other branch
    /// ends at the human, who grants one last attempt if enabled.
    pub fn success(&self) -> f64 {
        let p = self.success_prob;
        let q = 1.0 - p;
        let beta = self.nondegrading_fraction;
        let human = if self.human_retry { p } else { 0.0 };
        let m = self.max_attempts;
        // s[a] = success probability entering attempt a (1-based).
        let mut next = human;
        for a in (1..=m).rev() {
            let cont = if a < m { next } else { human };
            let degrade = match self.recovery_success {
                Some(r) if a < m => r * next + (1.0 - r) * human,
                _ => human,
            };
            next = p + q * beta * cont + q * (1.0 - beta) * degrade;
        }
        next
    }
}

impl ChainParams {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.subtasks.is_empty() {
            return Err(HarnessError::InvalidParams("chain has no subtasks".into()));
        }
        self.subtasks.iter().try_for_each(SubtaskChain::validate)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let p: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Schema(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

/// Task success: the product of the per-subtask chain probabilities.
pub fn markov_success(params: &ChainParams) -> Result<f64, HarnessError> {
    params.validate()?;
    Ok(params.subtasks.iter().map(SubtaskChain::success).product())
}

/// Simulator objects realizing a chain: one independent subtask per entry.
#[derive(Debug, Clone)]
pub struct ChainSetup {
    pub scenario: Scenario,
    pub pool: PolicyPool,
    pub plan: TaskPlan,
    pub human: HumanConfig,
}

fn chain_subtask_id(i: usize) -> String {
    format!("step_{i}")
}

/// Builds a scenario, pool, plan and operator whose deployment success has
/// exactly the distribution described by `params`.
pub fn chain_scenario(params: &ChainParams) -> Result<ChainSetup, HarnessError> {
    params.validate()?;
    let mut subtasks = Vec::new();
    let mut outcome_params = serde_json::Map::new();
    let mut specs = Vec::new();
    let mut plan = TaskPlan::new(Vec::new());
    let mut human = HumanConfig::single_retry();
    human.steps = 1;
    for (i, c) in params.subtasks.iter().enumerate() {
        let id = chain_subtask_id(i);
        let obj = format!("object_{i}");
        subtasks.push(serde_json::json!({
            "subtask_id": id,
            "object_id": obj,
            "forward_text": format!("move object {i} to its goal"),
            "inverse_text": format!("move object {i} back"),
            "goal_predicate": {"op": "object", "object": obj, "in": ["AtGoal"]},
            "precondition_predicate": {"op": "object", "object": obj, "in": ["AtStart"]},
            "degrade_targets": ["Displaced"],
        }));
        outcome_params.insert(
            id.clone(),
            serde_json::json!({"nondegrading_fraction": c.nondegrading_fraction}),
        );
        let spec = |suffix: &str, direction, rate| PolicySpec {
            policy_id: format!("{id}_{suffix}"),
            subtask_id: id.clone(),
            direction,
            curve: LearningCurve::constant(rate),
            steps: StepRange { min: 1, max: 1 },
        };
        specs.push(spec("fwd", Direction::Forward, c.success_prob));
        specs.push(spec("inv", Direction::Inverse, 1.0));
        if let Some(r) = c.recovery_success {
            specs.push(spec("rec", Direction::Recovery, r));
            plan.recovery_map.insert(id.clone(), format!("{id}_rec"));
        }
        plan.max_attempts.insert(id.clone(), c.max_attempts);
        if !c.human_retry {
            human.budget_overrides.insert(id.clone(), 0);
        }
        plan.subtasks.push(id);
    }
    let objects: Vec<String> = (0..params.subtasks.len())
        .map(|i| format!("object_{i}"))
        .collect();
    let scenario = serde_json::json!({
        "name": "chain",
        "objects": objects,
        "subtasks": subtasks,
        "outcome_params": outcome_params,
    });
    let scenario = Scenario::from_json(&scenario.to_string())?;
    let pool = PolicyPool::new(specs, 0)?;
    Ok(ChainSetup {
        scenario,
        pool,
        plan,
        human,
    })
}

/// Chain parameters of a deployment configuration, read off the pool's
/// current rates.
pub fn chain_params_for(
    scenario: &Scenario,
    pool: &PolicyPool,
    plan: &TaskPlan,
    human: &HumanConfig,
) -> Result<ChainParams, HarnessError> {
    let mut subtasks = Vec::new();
    for id in &plan.subtasks {
        let fwd = pool
            .find(id, Direction::Forward)
            .ok_or_else(|| HarnessError::InvalidParams(format!("no forward policy for `{id}`")))?;
        let recovery_success = match plan.recovery_map.get(id) {
            Some(rec) => Some(pool.current_rate(rec)?),
            None => None,
        };
        let budget = human
            .budget_overrides
            .get(id)
            .copied()
            .or(human.budget_per_subtask);
        subtasks.push(SubtaskChain {
            success_prob: pool.current_rate(&fwd.policy_id)?,
            nondegrading_fraction: scenario.beta(id),
            recovery_success,
            max_attempts: plan.max_attempts_for(id),
            human_retry: human.enabled && budget != Some(0),
        });
    }
    Ok(ChainParams { subtasks })
}

/// Per-subtask probabilities, keyed by subtask id.
pub fn per_subtask(plan: &TaskPlan, params: &ChainParams) -> BTreeMap<String, f64> {
    plan.subtasks
        .iter()
        .zip(&params.subtasks)
        .map(|(id, c)| (id.clone(), c.success()))
        .collect()
}
