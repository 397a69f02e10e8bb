//! Symbolic manipulation scenes with seeded stochastic policy outcomes.
//!
//! A [`Scenario`] declares objects, subtasks and the predicates that define
//! each subtask's goal and precondition region. The simulator never looks at
//! geometry: objects are in one of five statuses, plus a drawer and a spill.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agentcore::FailureClass;
use crate::util::{episode_rng, EpisodeRng};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario schema: {0}")]
    Schema(String),
    #[error("precondition of `{subtask}` ({direction:?}) does not hold")]
    Precondition {
        subtask: String,
        direction: Direction,
    },
    #[error("unknown subtask `{0}`")]
    UnknownSubtask(String),
    #[error("probability out of range: {0}")]
    Probability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectStatus {
    AtStart,
    Grasped,
    AtGoal,
    Displaced,
    Tipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DrawerState {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpillState {
    Present,
    Wiped,
    #[serde(rename = "None")]
    Absent,
}

/// Which way a skill drives a subtask. Recovery skills bring a degraded
/// object back into the forward precondition region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Inverse,
    Recovery,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub objects: BTreeMap<String, ObjectStatus>,
    pub drawer: DrawerState,
    pub spill: SpillState,
    pub tick: u64,
}

impl EnvState {
    pub fn status(&self, object: &str) -> Option<ObjectStatus> {
        self.objects.get(object).copied()
    }

    /// Same scene, ignoring the clock.
    pub fn same_scene(&self, other: &EnvState) -> bool {
        self.objects == other.objects && self.drawer == other.drawer && self.spill == other.spill
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSummary {
    pub structured: EnvState,
    pub text: String,
}

/// Boolean condition over an [`EnvState`], stored in scenario files as
/// `{"op": "all", "of": [...]}`, `{"op": "object", "object": "primer", "in": ["AtGoal"]}`,
/// `{"op": "drawer", "is": "Closed"}`, `{"op": "spill", "is": "Wiped"}`,
/// `{"op": "any", ...}` or `{"op": "not", "of": {...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    All {
        of: Vec<Predicate>,
    },
    Any {
        of: Vec<Predicate>,
    },
    Not {
        of: Box<Predicate>,
    },
    Object {
        object: String,
        #[serde(rename = "in")]
        statuses: Vec<ObjectStatus>,
    },
    Drawer {
        is: DrawerState,
    },
    Spill {
        is: SpillState,
    },
}

impl Predicate {
    pub fn eval(&self, env: &EnvState) -> bool {
        match self {
            Predicate::All { of } => of.iter().all(|p| p.eval(env)),
            Predicate::Any { of } => of.iter().any(|p| p.eval(env)),
            Predicate::Not { of } => !of.eval(env),
            Predicate::Object { object, statuses } => {
                env.status(object).is_some_and(|s| statuses.contains(&s))
            }
            Predicate::Drawer { is } => env.drawer == *is,
            Predicate::Spill { is } => env.spill == *is,
        }
    }

    /// Plain-English rendering, used in reasoning traces.
    pub fn describe(&self) -> String {
        match self {
            Predicate::All { of } => join_desc(of, " and "),
            Predicate::Any { of } => join_desc(of, " or "),
            Predicate::Not { of } => format!("not ({})", of.describe()),
            Predicate::Object { object, statuses } => {
                let s: Vec<String> = statuses
                    .iter()
                    .map(|s| status_words(*s).to_string())
                    .collect();
                format!("{object} is {}", s.join(" or "))
            }
            Predicate::Drawer { is } => format!("drawer is {}", drawer_words(*is)),
            Predicate::Spill { is } => format!("spill is {}", spill_words(*is)),
        }
    }

    fn objects(&self, out: &mut BTreeSet<String>) {
        match self {
            Predicate::All { of } | Predicate::Any { of } => of.iter().for_each(|p| p.objects(out)),
            Predicate::Not { of } => of.objects(out),
            Predicate::Object { object, .. } => {
                out.insert(object.clone());
            }
            Predicate::Drawer { .. } | Predicate::Spill { .. } => {}
        }
    }
}

fn join_desc(ps: &[Predicate], sep: &str) -> String {
    if ps.is_empty() {
        return "always".to_string();
    }
    ps.iter()
        .map(Predicate::describe)
        .collect::<Vec<_>>()
        .join(sep)
}

fn status_words(s: ObjectStatus) -> &'static str {
    match s {
        ObjectStatus::AtStart => "at start",
        ObjectStatus::Grasped => "grasped",
        ObjectStatus::AtGoal => "at goal",
        ObjectStatus::Displaced => "displaced",
        ObjectStatus::Tipped => "tipped",
    }
}

fn drawer_words(d: DrawerState) -> &'static str {
    match d {
        DrawerState::Open => "open",
        DrawerState::Closed => "closed",
    }
}

fn spill_words(s: SpillState) -> &'static str {
    match s {
        SpillState::Present => "present",
        SpillState::Wiped => "wiped",
        SpillState::Absent => "none",
    }
}

/// Side effects of a successful forward execution beyond moving the object.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Effects {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drawer: Option<DrawerState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spill: Option<SpillState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    pub subtask_id: String,
    /// Column label for reports, e.g. "Body Lotion".
    #[serde(default)]
    pub label: Option<String>,
    pub object_id: String,
    pub forward_text: String,
    pub inverse_text: String,
    #[serde(default)]
    pub recovery_text: Option<String>,
    pub goal_predicate: Predicate,
    pub precondition_predicate: Predicate,
    #[serde(default)]
    pub on_success: Effects,
    pub degrade_targets: Vec<ObjectStatus>,
}

impl SubtaskSpec {
    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.subtask_id)
    }

    pub fn recovery_text(&self) -> String {
        self.recovery_text.clone().unwrap_or_else(|| {
            format!(
                "restore the {} to its start position",
                self.object_id.replace('_', " ")
            )
        })
    }

    /// Goal region reached by a successful forward run.
    pub fn goal_holds(&self, env: &EnvState) -> bool {
        self.goal_predicate.eval(env)
    }

    /// Precondition region of the skill driving this subtask in `direction`.
    /// The inverse starts from the goal region; recovery starts from any
    /// degraded status of the object.
    pub fn precondition_holds(&self, env: &EnvState, direction: Direction) -> bool {
        match direction {
            Direction::Forward => self.precondition_predicate.eval(env),
            Direction::Inverse => self.goal_predicate.eval(env),
            Direction::Recovery => env
                .status(&self.object_id)
                .is_some_and(|s| self.degrade_targets.contains(&s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeParams {
    /// Fraction of failures that leave the scene retryable (β).
    pub nondegrading_fraction: f64,
}

impl Default for OutcomeParams {
    fn default() -> Self {
        Self {
            nondegrading_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDefaults {
    pub drawer: DrawerState,
    pub spill: SpillState,
}

impl Default for SceneDefaults {
    fn default() -> Self {
        Self {
            drawer: DrawerState::Open,
            spill: SpillState::Absent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub objects: Vec<String>,
    #[serde(default)]
    pub defaults: SceneDefaults,
    pub subtasks: Vec<SubtaskSpec>,
    #[serde(default)]
    pub outcome_params: BTreeMap<String, OutcomeParams>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Schema(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn subtask(&self, subtask_id: &str) -> Option<&SubtaskSpec> {
        self.subtasks.iter().find(|s| s.subtask_id == subtask_id)
    }

    pub fn require(&self, subtask_id: &str) -> Result<&SubtaskSpec, SimError> {
        self.subtask(subtask_id)
            .ok_or_else(|| SimError::UnknownSubtask(subtask_id.to_string()))
    }

    pub fn beta(&self, subtask_id: &str) -> f64 {
        self.outcome_params
            .get(subtask_id)
            .copied()
            .unwrap_or_default()
            .nondegrading_fraction
    }

    pub fn initial_state(&self) -> EnvState {
        EnvState {
            objects: self
                .objects
                .iter()
                .map(|o| (o.clone(), ObjectStatus::AtStart))
                .collect(),
            drawer: self.defaults.drawer,
            spill: self.defaults.spill,
            tick: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Schema(m));
        if self.objects.is_empty() {
            return err("scenario declares no objects".into());
        }
        let objects: BTreeSet<&String> = self.objects.iter().collect();
        if objects.len() != self.objects.len() {
            return err("duplicate object id".into());
        }
        let mut ids = BTreeSet::new();
        let reset = self.initial_state();
        for st in &self.subtasks {
            if !ids.insert(st.subtask_id.as_str()) {
                return err(format!("duplicate subtask id `{}`", st.subtask_id));
            }
            if !objects.contains(&st.object_id) {
                return err(format!(
                    "subtask `{}` names undeclared object `{}`",
                    st.subtask_id, st.object_id
                ));
            }
            let mut refs = BTreeSet::new();
            st.goal_predicate.objects(&mut refs);
            st.precondition_predicate.objects(&mut refs);
            if let Some(bad) = refs.iter().find(|o| !objects.contains(o)) {
                return err(format!(
                    "subtask `{}` predicate names undeclared object `{bad}`",
                    st.subtask_id
                ));
            }
            if st.degrade_targets.is_empty() {
                return err(format!(
                    "subtask `{}` has no degrade targets",
                    st.subtask_id
                ));
            }
            for t in &st.degrade_targets {
                let mut s = reset.clone();
                s.objects.insert(st.object_id.clone(), *t);
                if st.precondition_holds(&s, Direction::Forward) {
                    return err(format!(
                        "subtask `{}`: degrade target {t:?} stays inside the precondition region",
                        st.subtask_id
                    ));
                }
            }
        }
        for (id, p) in &self.outcome_params {
            if !ids.contains(id.as_str()) {
                return err(format!("outcome params for unknown subtask `{id}`"));
            }
            if !(0.0..=1.0).contains(&p.nondegrading_fraction) {
                return err(format!("nondegrading_fraction for `{id}` outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    pub failure_class: Option<FailureClass>,
    pub steps_taken: u32,
    /// Status a degrading failure leaves the object in.
    pub degraded_to: Option<ObjectStatus>,
}

impl Outcome {
    pub fn success(steps_taken: u32) -> Self {
        Self {
            kind: OutcomeKind::Success,
            failure_class: None,
            steps_taken,
            degraded_to: None,
        }
    }

    pub fn is_success(&self) -> bool {
        self.kind == OutcomeKind::Success
    }
}

/// Fresh scene for `scenario` plus the episode RNG seeded by `seed`.
pub fn reset(scenario: &Scenario, seed: u64) -> Result<(EnvState, EpisodeRng), SimError> {
    scenario.validate()?;
    Ok((scenario.initial_state(), episode_rng(seed, 0)))
}

pub fn in_precondition(env: &EnvState, subtask: &SubtaskSpec, direction: Direction) -> bool {
    subtask.precondition_holds(env, direction)
}

/// Draws the outcome of one attempt.
///
/// Always consumes exactly two uniforms: `u1` decides success (`u1 < p`),
/// `u2` decides the failure class (`u2 < β` is non-degrading) and, for
/// degrading failures, which degrade target is hit. `u2` is drawn even on
/// success so streams stay aligned when parameters change.
pub fn sample_outcome<R: Rng + ?Sized>(
    env: &EnvState,
    subtask: &SubtaskSpec,
    direction: Direction,
    success_prob: f64,
    beta: f64,
    rng: &mut R,
) -> Result<Outcome, SimError> {
    for p in [success_prob, beta] {
        if !(0.0..=1.0).contains(&p) {
            return Err(SimError::Probability(p));
        }
    }
    if !subtask.precondition_holds(env, direction) {
        return Err(SimError::Precondition {
            subtask: subtask.subtask_id.clone(),
            direction,
        });
    }
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    if u1 < success_prob {
        return Ok(Outcome::success(1));
    }
    if u2 < beta {
        return Ok(Outcome {
            kind: OutcomeKind::Failure,
            failure_class: Some(FailureClass::NonDegrading),
            steps_taken: 1,
            degraded_to: None,
        });
    }
    let n = subtask.degrade_targets.len();
    let frac = ((u2 - beta) / (1.0 - beta)).clamp(0.0, 1.0);
    let idx = ((frac * n as f64) as usize).min(n - 1);
    Ok(Outcome {
        kind: OutcomeKind::Failure,
        failure_class: Some(FailureClass::Degrading),
        steps_taken: 1,
        degraded_to: Some(subtask.degrade_targets[idx]),
    })
}

/// Applies a sampled outcome to the scene and advances the clock.
pub fn apply_outcome(
    env: &EnvState,
    scenario: &Scenario,
    subtask: &SubtaskSpec,
    direction: Direction,
    outcome: &Outcome,
) -> EnvState {
    let mut next = env.clone();
    let obj = subtask.object_id.clone();
    match (outcome.kind, direction) {
        (OutcomeKind::Success, Direction::Forward) => {
            next.objects.insert(obj, ObjectStatus::AtGoal);
            if let Some(d) = subtask.on_success.drawer {
                next.drawer = d;
            }
            if let Some(s) = subtask.on_success.spill {
                next.spill = s;
            }
        }
        (OutcomeKind::Success, Direction::Inverse) => {
            next.objects.insert(obj, ObjectStatus::AtStart);
            restore_defaults(&mut next, scenario, subtask);
        }
        (OutcomeKind::Success, Direction::Recovery) => {
            next.objects.insert(obj, ObjectStatus::AtStart);
        }
        (OutcomeKind::Failure, _) => {
            if outcome.failure_class == Some(FailureClass::Degrading) {
                if let Some(t) = outcome.degraded_to {
                    next.objects.insert(obj, t);
                }
            }
        }
    }
    next.tick += u64::from(outcome.steps_taken);
    next
}

/// Puts back the scene fields a subtask's forward success changes.
pub fn restore_defaults(env: &mut EnvState, scenario: &Scenario, subtask: &SubtaskSpec) {
    if subtask.on_success.drawer.is_some() {
        env.drawer = scenario.defaults.drawer;
    }
    if subtask.on_success.spill.is_some() {
        env.spill = scenario.defaults.spill;
    }
}

/// Brings the scene back into `direction`'s precondition region for
/// `subtask`, the way a human operator would.
pub fn human_restore(
    env: &EnvState,
    scenario: &Scenario,
    subtask: &SubtaskSpec,
    direction: Direction,
) -> EnvState {
    let mut next = env.clone();
    match direction {
        Direction::Inverse => {
            next.objects
                .insert(subtask.object_id.clone(), ObjectStatus::AtGoal);
            if let Some(d) = subtask.on_success.drawer {
                next.drawer = d;
            }
            if let Some(s) = subtask.on_success.spill {
                next.spill = s;
            }
        }
        Direction::Forward | Direction::Recovery => {
            next.objects
                .insert(subtask.object_id.clone(), ObjectStatus::AtStart);
            restore_defaults(&mut next, scenario, subtask);
        }
    }
    next
}

pub fn summarize(env: &EnvState) -> EnvSummary {
    let mut text = format!(
        "tick {}; drawer {}; spill {}",
        env.tick,
        drawer_words(env.drawer),
        spill_words(env.spill)
    );
    for (name, status) in &env.objects {
        let _ = write!(text, "; {name}: {}", status_words(*status));
    }
    EnvSummary {
        structured: env.clone(),
        text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn vanity() -> Scenario {
        fixtures::vanity_scenario()
    }

    #[test]
    fn vanity_resets_four_objects_at_start() {
        let (env, _) = reset(&vanity(), 3).unwrap();
        assert_eq!(env.objects.len(), 4);
        assert!(env.objects.values().all(|s| *s == ObjectStatus::AtStart));
        assert_eq!(env.tick, 0);
        assert_eq!(env.drawer, DrawerState::Open);
        assert_eq!(env.spill, SpillState::Present);
    }

    #[test]
    fn reset_is_deterministic() {
        let (a, mut ra) = reset(&vanity(), 11).unwrap();
        let (b, mut rb) = reset(&vanity(), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.random::<u64>(), rb.random::<u64>());
    }

    #[test]
    fn malformed_scenarios_are_schema_errors() {
        assert!(matches!(
            Scenario::from_json("{\"name\": 3}"),
            Err(SimError::Schema(_))
        ));
        let mut s = vanity();
        s.subtasks[0].object_id = "ghost".into();
        assert!(matches!(s.validate(), Err(SimError::Schema(_))));
        let mut s = vanity();
        s.subtasks[1].subtask_id = s.subtasks[0].subtask_id.clone();
        assert!(matches!(reset(&s, 0), Err(SimError::Schema(_))));
    }

    #[test]
    fn certain_outcomes() {
        let s = vanity();
        let st = s.subtask("place_lotion").unwrap();
        let (env, mut rng) = reset(&s, 1).unwrap();
        for _ in 0..100 {
            assert!(
                sample_outcome(&env, st, Direction::Forward, 1.0, 0.5, &mut rng)
                    .unwrap()
                    .is_success()
            );
            let o = sample_outcome(&env, st, Direction::Forward, 0.0, 1.0, &mut rng).unwrap();
            assert_eq!(o.failure_class, Some(FailureClass::NonDegrading));
        }
    }

    #[test]
    fn sampling_outside_precondition_is_rejected() {
        let s = vanity();
        let st = s.subtask("place_lotion").unwrap();
        let (mut env, mut rng) = reset(&s, 1).unwrap();
        env.objects
            .insert("body_lotion".into(), ObjectStatus::Tipped);
        assert!(matches!(
            sample_outcome(&env, st, Direction::Forward, 0.5, 0.5, &mut rng),
            Err(SimError::Precondition { .. })
        ));
    }

    #[test]
    fn sample_consumes_two_draws_on_every_branch() {
        let s = vanity();
        let st = s.subtask("place_lotion").unwrap();
        let env = s.initial_state();
        for p in [0.0, 0.5, 1.0] {
            let mut a = episode_rng(5, 0);
            let mut b = episode_rng(5, 0);
            sample_outcome(&env, st, Direction::Forward, p, 0.3, &mut a).unwrap();
            let _: f64 = b.random();
            let _: f64 = b.random();
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn outcome_effects() {
        let s = vanity();
        let lotion = s.subtask("place_lotion").unwrap();
        let env = s.initial_state();
        let after = apply_outcome(&env, &s, lotion, Direction::Forward, &Outcome::success(7));
        assert_eq!(after.status("body_lotion"), Some(ObjectStatus::AtGoal));
        assert_eq!(after.tick, 7);

        let mut tipping = lotion.clone();
        tipping.degrade_targets = vec![ObjectStatus::Tipped];
        let mut rng = episode_rng(1, 0);
        let o = sample_outcome(&env, &tipping, Direction::Forward, 0.0, 0.0, &mut rng).unwrap();
        let after = apply_outcome(&env, &s, &tipping, Direction::Forward, &o);
        assert_eq!(after.status("body_lotion"), Some(ObjectStatus::Tipped));
        assert!(!in_precondition(&after, &tipping, Direction::Forward));

        let nd = Outcome {
            kind: OutcomeKind::Failure,
            failure_class: Some(FailureClass::NonDegrading),
            steps_taken: 3,
            degraded_to: None,
        };
        let after = apply_outcome(&env, &s, lotion, Direction::Forward, &nd);
        assert!(after.same_scene(&env));
        assert_eq!(after.tick, 3);
    }

    #[test]
    fn primer_and_tissue_side_effects() {
        let s = vanity();
        let env = s.initial_state();
        let primer = s.subtask("place_primer").unwrap();
        let a = apply_outcome(&env, &s, primer, Direction::Forward, &Outcome::success(1));
        assert_eq!(a.drawer, DrawerState::Closed);
        assert!(primer.goal_holds(&a));
        let tissue = s.subtask("wipe_spill").unwrap();
        let b = apply_outcome(&env, &s, tissue, Direction::Forward, &Outcome::success(1));
        assert_eq!(b.spill, SpillState::Wiped);
    }

    #[test]
    fn forward_then_inverse_restores_reset_state() {
        let s = vanity();
        let env = s.initial_state();
        for st in &s.subtasks {
            let a = apply_outcome(&env, &s, st, Direction::Forward, &Outcome::success(2));
            assert!(in_precondition(&a, st, Direction::Inverse));
            assert!(!in_precondition(&a, st, Direction::Forward));
            let b = apply_outcome(&a, &s, st, Direction::Inverse, &Outcome::success(2));
            assert!(b.same_scene(&env), "{}", st.subtask_id);
            assert!(in_precondition(&b, st, Direction::Forward));
        }
    }

    #[test]
    fn precondition_table() {
        let s = vanity();
        let st = s.subtask("place_lotion").unwrap();
        let mut env = s.initial_state();
        for other in &s.subtasks {
            assert!(in_precondition(&env, other, Direction::Forward));
        }
        env.objects
            .insert("body_lotion".into(), ObjectStatus::Tipped);
        assert!(!in_precondition(&env, st, Direction::Forward));
        assert!(in_precondition(&env, st, Direction::Recovery));
        env.objects
            .insert("body_lotion".into(), ObjectStatus::AtGoal);
        assert!(in_precondition(&env, st, Direction::Inverse));
        assert!(!in_precondition(&env, st, Direction::Forward));
    }

    #[test]
    fn summary_mirrors_state_and_names_each_object_once() {
        let s = vanity();
        let env = s.initial_state();
        let sum = summarize(&env);
        assert_eq!(sum.structured, env);
        for o in &s.objects {
            assert_eq!(sum.text.matches(o.as_str()).count(), 1, "{o}");
        }
        assert_eq!(summarize(&env).text, sum.text);
    }

    #[test]
    fn human_restore_reenters_precondition() {
        let s = vanity();
        for st in &s.subtasks {
            let mut env = s.initial_state();
            env.objects
                .insert(st.object_id.clone(), st.degrade_targets[0]);
            let fixed = human_restore(&env, &s, st, Direction::Forward);
            assert!(in_precondition(&fixed, st, Direction::Forward));
            let inv = human_restore(&env, &s, st, Direction::Inverse);
            assert!(in_precondition(&inv, st, Direction::Inverse));
        }
    }
}
