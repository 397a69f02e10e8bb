//! The vanity-table fixture compiled into the library, so tests, benches and
//! the CLI share one copy.

use crate::orchestrator::TaskPlan;
use crate::policypool::{PolicyPool, DEFAULT_SEED_DEMOS};
use crate::simenv::Scenario;

pub const VANITY_SCENARIO: &str = include_str!("../fixtures/vanity.json");
pub const VANITY_POLICIES: &str = include_str!("../fixtures/vanity_policies.json");
pub const VANITY_PLAN: &str = include_str!("../fixtures/vanity_plan.json");

pub fn vanity_scenario() -> Scenario {
    Scenario::from_json(VANITY_SCENARIO).expect("vanity fixture parses")
}

/// Vanity policies with forward counters at the seed-demo count (iteration 1).
pub fn vanity_pool() -> PolicyPool {
    PolicyPool::from_json(VANITY_POLICIES, DEFAULT_SEED_DEMOS).expect("vanity policies parse")
}

pub fn vanity_plan() -> TaskPlan {
    TaskPlan::from_json(VANITY_PLAN).expect("vanity plan parses")
}
