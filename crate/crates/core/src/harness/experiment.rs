//! End-to-end experiment: learning-curve tables, long-horizon comparison
//! and effort ratios, written as a JSON report plus a text table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::effort::{effort_accounting, CostConfig, EffortReport};
use super::markov::{chain_params_for, markov_success};
use super::HarnessError;
use crate::collector::{collect_pairs, CollectConfig, CollectError, Dataset};
use crate::events::EventLog;
use crate::orchestrator::{deploy, DeployConfig, DeployReport, TaskPlan};
use crate::policypool::{PolicyPool, DEFAULT_SEED_DEMOS};
use crate::runtime::HumanConfig;
use crate::simenv::{human_restore, Direction, Scenario};
use crate::util::{canonical_json, episode_rng, mix64};

/// Episodes per parallel work unit in rate estimation. Fixed, so results
/// never depend on the thread count.
const RATE_CHUNK: u64 = 250;

fn default_iterations() -> u64 {
    5
}

fn default_seed_demos() -> u64 {
    DEFAULT_SEED_DEMOS
}

fn default_human() -> HumanConfig {
    HumanConfig::single_retry()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSettings {
    pub pairs_per_subtask: usize,
    /// Pairs per collection episode; the pool carries over between chunks.
    pub chunk_pairs: usize,
    /// Forward counters start at `50 * start_iteration`.
    pub start_iteration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: PathBuf,
    pub policies: PathBuf,
    pub plan: PathBuf,
    #[serde(default = "default_seed_demos")]
    pub seed_demos: u64,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    /// Monte-Carlo episodes per long-horizon configuration and iteration.
    pub deploy_episodes: u64,
    /// Single-attempt episodes per learning-curve cell.
    pub rate_episodes: u64,
    #[serde(default = "default_human")]
    pub human: HumanConfig,
    pub collection: CollectionSettings,
    pub costs: CostConfig,
}

impl ExperimentConfig {
    /// Reads a config; relative paths are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.scenario, &mut cfg.policies, &mut cfg.plan] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.iterations == 0 || self.deploy_episodes == 0 || self.rate_episodes == 0 {
            return Err(HarnessError::Schema(
                "iterations and episode counts must be positive".into(),
            ));
        }
        if self.collection.chunk_pairs == 0 || self.collection.start_iteration == 0 {
            return Err(HarnessError::Schema(
                "chunk_pairs and start_iteration must be positive".into(),
            ));
        }
        self.costs.validate()
    }
}

/// Inputs of an experiment, loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct ExperimentInputs {
    pub scenario: Arc<Scenario>,
    pub pool: PolicyPool,
    pub plan: TaskPlan,
}

impl ExperimentInputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let scenario = Scenario::load(&cfg.scenario)?;
        let pool = PolicyPool::load(&cfg.policies, cfg.seed_demos)?;
        pool.check_against(&scenario)?;
        let plan = TaskPlan::load(&cfg.plan).map_err(|e| HarnessError::Schema(e.to_string()))?;
        plan.validate(&scenario, &pool)
            .map_err(|e| HarnessError::Schema(e.to_string()))?;
        Ok(Self {
            scenario: Arc::new(scenario),
            pool,
            plan,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub policy_id: String,
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    /// Rate the policy's learning curve predicts.
    pub expected: f64,
}

impl RateEstimate {
    /// Half-width of the normal-approximation 95% interval around `expected`.
    pub fn ci95(&self) -> f64 {
        1.96 * (self.expected * (1.0 - self.expected) / self.trials as f64).sqrt()
    }

    pub fn within_ci95(&self) -> bool {
        (self.rate - self.expected).abs() <= self.ci95()
    }
}

/// Single-attempt success estimate of `policy_id` from its precondition
/// region, through the pool's own execution path.
pub fn single_attempt_rate(
    scenario: &Scenario,
    pool: &PolicyPool,
    policy_id: &str,
    episodes: u64,
    seed: u64,
) -> Result<RateEstimate, HarnessError> {
    let spec = pool.spec(policy_id)?.clone();
    let st = scenario.require(&spec.subtask_id)?.clone();
    let mut start = scenario.initial_state();
    match spec.direction {
        Direction::Forward => {}
        Direction::Inverse => start = human_restore(&start, scenario, &st, Direction::Inverse),
        Direction::Recovery => {
            let degraded = *st.degrade_targets.first().ok_or_else(|| {
                HarnessError::InvalidParams(format!("`{}` has no degraded state", st.subtask_id))
            })?;
            start.objects.insert(st.object_id.clone(), degraded);
        }
    }
    let instruction = crate::agentcore::instruction_for(scenario, &st.subtask_id, spec.direction)
        .map_err(|e| HarnessError::InvalidParams(e.to_string()))?;
    let chunks = episodes.div_ceil(RATE_CHUNK);
    let successes = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut pool = pool.clone();
            let mut hits = 0u64;
            for i in c * RATE_CHUNK..((c + 1) * RATE_CHUNK).min(episodes) {
                let mut env = start.clone();
                let mut rng = episode_rng(seed, i);
                let h = pool.start(policy_id, instruction.clone())?;
                let ex = pool.execute(h.handle_id, &mut env, scenario, &mut rng)?;
                hits += u64::from(ex.outcome.is_success());
            }
            Ok(hits)
        })
        .collect::<Result<Vec<u64>, crate::policypool::PoolError>>()?
        .into_iter()
        .sum();
    Ok(RateEstimate {
        policy_id: policy_id.to_string(),
        successes,
        trials: episodes,
        rate: successes as f64 / episodes as f64,
        expected: pool.current_rate(policy_id)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRates {
    pub iteration: u64,
    pub n: u64,
    /// One estimate per subtask, in scenario order.
    pub forward: Vec<RateEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongHorizon {
    pub iteration: u64,
    pub orchestrated: DeployReport,
    pub product_baseline: DeployReport,
    /// Exact expectations of the two configurations.
    pub oracle_orchestrated: f64,
    pub oracle_product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSummary {
    pub pairs: u64,
    pub attempts: u64,
    pub interventions: u64,
    pub effort: EffortReport,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub scenario: String,
    pub labels: Vec<String>,
    pub success_rates: Vec<IterationRates>,
    pub inverse_rates: Vec<RateEstimate>,
    pub long_horizon: Vec<LongHorizon>,
    pub collection: CollectionSummary,
    /// Manual over ours; ours is 1.
    pub human_time_ratio: f64,
    pub intervention_ratio: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = canonical_json(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    mix64(seed, stream.wrapping_mul(1 << 32) ^ index)
}

/// Single-attempt learning-curve table: one row per iteration.
pub fn learning_curve_table(
    inputs: &ExperimentInputs,
    iterations: u64,
    episodes: u64,
    seed: u64,
) -> Result<Vec<IterationRates>, HarnessError> {
    let s = &inputs.scenario;
    (1..=iterations)
        .map(|i| {
            let mut pool = inputs.pool.clone();
            pool.set_iteration(i);
            let forward = s
                .subtasks
                .iter()
                .enumerate()
                .map(|(k, st)| {
                    let p = pool
                        .find(&st.subtask_id, Direction::Forward)
                        .ok_or_else(|| {
                            HarnessError::InvalidParams(format!(
                                "no forward policy for `{}`",
                                st.subtask_id
                            ))
                        })?;
                    single_attempt_rate(
                        s,
                        &pool,
                        &p.policy_id,
                        episodes,
                        sub_seed(seed, 1, i * 64 + k as u64),
                    )
                })
                .collect::<Result<_, _>>()?;
            Ok(IterationRates {
                iteration: i,
                n: crate::policypool::SAMPLES_PER_ITERATION * i,
                forward,
            })
        })
        .collect()
}

/// Single-attempt inverse rates, in scenario order.
pub fn inverse_rate_row(
    inputs: &ExperimentInputs,
    episodes: u64,
    seed: u64,
) -> Result<Vec<RateEstimate>, HarnessError> {
    let s = &inputs.scenario;
    s.subtasks
        .iter()
        .enumerate()
        .map(|(k, st)| {
            let p = inputs
                .pool
                .find(&st.subtask_id, Direction::Inverse)
                .ok_or_else(|| {
                    HarnessError::InvalidParams(format!(
                        "no inverse policy for `{}`",
                        st.subtask_id
                    ))
                })?;
            single_attempt_rate(
                s,
                &inputs.pool,
                &p.policy_id,
                episodes,
                sub_seed(seed, 2, k as u64),
            )
        })
        .collect()
}

/// Orchestrated and retries-off deployments at one iteration, with the
/// exact expectations of both.
pub fn long_horizon(
    inputs: &ExperimentInputs,
    human: &HumanConfig,
    iteration: u64,
    episodes: u64,
    seed: u64,
) -> Result<LongHorizon, HarnessError> {
    let baseline_plan = inputs.plan.without_retries();
    let run = |plan: &TaskPlan, human: &HumanConfig, stream: u64| {
        deploy(
            &inputs.scenario,
            &inputs.pool,
            plan,
            &DeployConfig {
                episodes,
                seed: sub_seed(seed, stream, iteration),
                human: human.clone(),
                iteration: Some(iteration),
            },
        )
        .map_err(|e| HarnessError::Schema(e.to_string()))
    };
    let orchestrated = run(&inputs.plan, human, 3)?;
    let product_baseline = run(&baseline_plan, &HumanConfig::disabled(), 4)?;
    let mut pool = inputs.pool.clone();
    pool.set_iteration(iteration);
    let oracle_orchestrated = markov_success(&chain_params_for(
        &inputs.scenario,
        &pool,
        &inputs.plan,
        human,
    )?)?;
    let oracle_product = markov_success(&chain_params_for(
        &inputs.scenario,
        &pool,
        &baseline_plan,
        &HumanConfig::disabled(),
    )?)?;
    Ok(LongHorizon {
        iteration,
        orchestrated,
        product_baseline,
        oracle_orchestrated,
        oracle_product,
    })
}

/// Autonomous collection of `pairs_per_subtask` pairs for every subtask,
/// in chunks, with effort accounting over all of it.
pub fn collection_effort(
    inputs: &ExperimentInputs,
    settings: &CollectionSettings,
    costs: &CostConfig,
    seed: u64,
) -> Result<CollectionSummary, HarnessError> {
    let s = &inputs.scenario;
    let per_subtask: Vec<(u64, u64, Vec<EventLog>)> = s
        .subtasks
        .par_iter()
        .enumerate()
        .map(|(k, st)| {
            let mut pool = inputs.pool.clone();
            pool.set_iteration(settings.start_iteration);
            let mut logs = Vec::new();
            let mut done = 0usize;
            let mut attempts = 0u64;
            let mut chunk = 0u64;
            while done < settings.pairs_per_subtask {
                let n = settings.chunk_pairs.min(settings.pairs_per_subtask - done);
                let cfg = CollectConfig {
                    subtask_id: st.subtask_id.clone(),
                    n_pairs: n,
                    budget: u64::MAX,
                    seed: sub_seed(seed, 5, k as u64),
                    episode: chunk,
                    human: HumanConfig::unlimited(),
                };
                let run = collect_pairs(
                    s.clone(),
                    pool,
                    Dataset::null(),
                    &cfg,
                    EventLog::digest_only(),
                )?;
                done += run.pairs.len();
                attempts += run.attempts;
                pool = run.pool;
                logs.push(run.log);
                chunk += 1;
            }
            Ok((done as u64, attempts, logs))
        })
        .collect::<Result<_, CollectError>>()
        .map_err(|e| HarnessError::Schema(e.to_string()))?;
    let mut h = Sha256::new();
    let mut pairs = 0;
    let mut attempts = 0;
    let mut logs = Vec::new();
    for (p, a, l) in per_subtask {
        pairs += p;
        attempts += a;
        for log in &l {
            h.update(log.digest().as_bytes());
        }
        logs.extend(l);
    }
    let effort = effort_accounting(&logs, costs, pairs)?;
    Ok(CollectionSummary {
        pairs,
        attempts,
        interventions: effort.interventions,
        effort,
        digest: hex::encode(h.finalize()),
    })
}

/// Runs every part of the experiment. Deterministic per seed and
/// independent of the thread count.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<MetricsReport, HarnessError> {
    cfg.validate()?;
    let inputs = ExperimentInputs::load(cfg)?;
    let success_rates = learning_curve_table(&inputs, cfg.iterations, cfg.rate_episodes, seed)?;
    let inverse_rates = inverse_rate_row(&inputs, cfg.rate_episodes, seed)?;
    let long = (1..=cfg.iterations)
        .map(|i| long_horizon(&inputs, &cfg.human, i, cfg.deploy_episodes, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let collection = collection_effort(&inputs, &cfg.collection, &cfg.costs, seed)?;
    Ok(MetricsReport {
        seed,
        scenario: inputs.scenario.name.clone(),
        labels: inputs
            .scenario
            .subtasks
            .iter()
            .map(|s| s.label().to_string())
            .collect(),
        success_rates,
        inverse_rates,
        long_horizon: long,
        human_time_ratio: collection.effort.human_time_ratio,
        intervention_ratio: collection.effort.intervention_ratio,
        collection,
    })
}

/// Plain-text tables: forward rates by iteration, inverse rates, the
/// long-horizon comparison and the effort ratios.
pub fn render_text(report: &MetricsReport) -> String {
    let mut out = String::new();
    let width = report
        .labels
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(18);
    let _ = writeln!(
        out,
        "Forward policy success rate by rollout iteration (single attempt)"
    );
    let _ = write!(out, "{:<10}", "Iteration");
    for l in &report.labels {
        let _ = write!(out, "{l:>width$}");
    }
    out.push('\n');
    for row in &report.success_rates {
        let _ = write!(out, "{:<10}", row.iteration);
        for r in &row.forward {
            let _ = write!(
                out,
                "{:>width$}",
                format!("{}/{} {:.3}", r.successes, r.trials, r.rate)
            );
        }
        out.push('\n');
    }
    let _ = writeln!(out, "\nInverse reset policy success rate");
    let _ = write!(out, "{:<10}", "");
    for l in &report.labels {
        let _ = write!(out, "{l:>width$}");
    }
    out.push('\n');
    let _ = write!(out, "{:<10}", "Rate");
    for r in &report.inverse_rates {
        let _ = write!(
            out,
            "{:>width$}",
            format!("{}/{} {:.3}", r.successes, r.trials, r.rate)
        );
    }
    out.push('\n');
    let _ = writeln!(out, "\nLong-horizon success (Monte-Carlo / exact)");
    let _ = writeln!(
        out,
        "{:<10}{:>24}{:>24}",
        "Iteration", "Orchestrated", "Product baseline"
    );
    for l in &report.long_horizon {
        let _ = writeln!(
            out,
            "{:<10}{:>24}{:>24}",
            l.iteration,
            format!(
                "{:.4} / {:.4}",
                l.orchestrated.success_rate, l.oracle_orchestrated
            ),
            format!(
                "{:.4} / {:.4}",
                l.product_baseline.success_rate, l.oracle_product
            ),
        );
    }
    let e = &report.collection.effort;
    let _ = writeln!(
        out,
        "\nHuman effort over {} pairs (ours = 1)",
        report.collection.pairs
    );
    let _ = writeln!(out, "human time ratio    {:.3}", report.human_time_ratio);
    let _ = writeln!(out, "intervention ratio  {:.3}", report.intervention_ratio);
    let _ = writeln!(out, "interventions       {}", e.interventions);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn inputs() -> ExperimentInputs {
        ExperimentInputs {
            scenario: Arc::new(fixtures::vanity_scenario()),
            pool: fixtures::vanity_pool(),
            plan: fixtures::vanity_plan(),
        }
    }

    #[test]
    fn rate_estimate_is_deterministic_and_sane() {
        let i = inputs();
        let a = single_attempt_rate(&i.scenario, &i.pool, "lotion_inv", 1000, 3).unwrap();
        let b = single_attempt_rate(&i.scenario, &i.pool, "lotion_inv", 1000, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.expected, 0.72);
        assert!((a.rate - 0.72).abs() < 0.06);
    }

    #[test]
    fn recovery_rates_start_from_a_degraded_scene() {
        let i = inputs();
        let r = single_attempt_rate(&i.scenario, &i.pool, "primer_rec", 500, 1).unwrap();
        assert!((r.rate - r.expected).abs() < 0.08);
    }

    #[test]
    fn small_collection_counts_interventions() {
        let i = inputs();
        let settings = CollectionSettings {
            pairs_per_subtask: 30,
            chunk_pairs: 7,
            start_iteration: 1,
        };
        let costs = CostConfig {
            t_demo: 60.0,
            t_manual_reset: 30.0,
            t_intervention: 60.0,
            t_setup: 0.0,
            interventions_per_manual_trajectory: 4.0,
            seed_demos: 200,
        };
        let a = collection_effort(&i, &settings, &costs, 9).unwrap();
        let b = collection_effort(&i, &settings, &costs, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pairs, 120);
        assert!(a.interventions > 0);
        assert!(a.attempts >= 240);
    }
}
