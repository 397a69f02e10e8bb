//! Forward, inverse and recovery skills with learning curves and the
//! single-robot start/terminate/change lifecycle.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agentcore::Instruction;
use crate::collector::{Trajectory, TrajectoryDirection, TrajectoryStep};
use crate::simenv::{
    apply_outcome, sample_outcome, Direction, EnvState, Outcome, Scenario, SimError,
};
use crate::util::{fnv1a64, hex64, splitmix64};

/// Trajectories added per rollout iteration.
pub const SAMPLES_PER_ITERATION: u64 = 50;

/// Human demonstrations each forward policy starts from.
pub const DEFAULT_SEED_DEMOS: u64 = 50;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("a policy is already active (handle {0})")]
    PolicyBusy(u64),
    #[error("no active policy handle")]
    PolicyNotActive,
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("duplicate policy for ({0}, {1:?})")]
    Duplicate(String, Direction),
    #[error("invalid learning curve: {0}")]
    InvalidCurve(String),
    #[error("policy file: {0}")]
    Schema(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveAnchor {
    pub n: u64,
    pub rate: f64,
}

/// Success rate as a function of accumulated training trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub anchors: Vec<CurveAnchor>,
}

impl LearningCurve {
    pub fn new(anchors: Vec<CurveAnchor>) -> Result<Self, PoolError> {
        let c = Self { anchors };
        c.validate()?;
        Ok(c)
    }

    pub fn constant(rate: f64) -> Self {
        Self {
            anchors: vec![CurveAnchor { n: 0, rate }],
        }
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        if self.anchors.is_empty() {
            return Err(PoolError::InvalidCurve("no anchors".into()));
        }
        if self.anchors.windows(2).any(|w| w[1].n <= w[0].n) {
            return Err(PoolError::InvalidCurve(
                "anchors must be strictly increasing in n".into(),
            ));
        }
        if let Some(a) = self.anchors.iter().find(|a| !(0.0..=1.0).contains(&a.rate)) {
            return Err(PoolError::InvalidCurve(format!(
                "rate {} outside [0, 1]",
                a.rate
            )));
        }
        Ok(())
    }

    /// Piecewise-linear between anchors, clamped to the end anchors.
    pub fn success_rate(&self, n: u64) -> f64 {
        let first = self.anchors[0];
        let last = self.anchors[self.anchors.len() - 1];
        if n <= first.n {
            return first.rate;
        }
        if n >= last.n {
            return last.rate;
        }
        let i = self.anchors.partition_point(|a| a.n <= n);
        let (lo, hi) = (self.anchors[i - 1], self.anchors[i]);
        let t = (n - lo.n) as f64 / (hi.n - lo.n) as f64;
        lo.rate + t * (hi.rate - lo.rate)
    }
}

pub fn success_rate(curve: &LearningCurve, n_trajectories: u64) -> f64 {
    curve.success_rate(n_trajectories)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRange {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub policy_id: String,
    pub subtask_id: String,
    pub direction: Direction,
    pub curve: LearningCurve,
    pub steps: StepRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandleState {
    Active,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyHandle {
    pub handle_id: u64,
    pub policy_id: String,
    pub instruction: Instruction,
    pub state: HandleState,
}

/// Result of running the active policy for one attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub outcome: Outcome,
    pub trajectory: Trajectory,
    pub state_before: EnvState,
}

/// Registry of skills for one robot. At most one handle is Active.
#[derive(Debug, Clone)]
pub struct PolicyPool {
    specs: BTreeMap<String, PolicySpec>,
    counts: BTreeMap<String, u64>,
    handles: Vec<PolicyHandle>,
    next_handle: u64,
    next_trajectory: u64,
    episode: u64,
}

impl PolicyPool {
    /// Builds a pool; forward policies start at `seed_demos` trajectories.
    pub fn new(specs: Vec<PolicySpec>, seed_demos: u64) -> Result<Self, PoolError> {
        let mut map = BTreeMap::new();
        let mut seen = BTreeMap::new();
        for s in specs {
            s.curve.validate()?;
            if s.steps.min == 0 || s.steps.max < s.steps.min {
                return Err(PoolError::Schema(format!(
                    "bad step range for `{}`",
                    s.policy_id
                )));
            }
            if seen
                .insert((s.subtask_id.clone(), s.direction), ())
                .is_some()
            {
                return Err(PoolError::Duplicate(s.subtask_id.clone(), s.direction));
            }
            if map.contains_key(&s.policy_id) {
                return Err(PoolError::Schema(format!(
                    "duplicate policy id `{}`",
                    s.policy_id
                )));
            }
            map.insert(s.policy_id.clone(), s);
        }
        let counts = map
            .values()
            .map(|s| {
                let n = if s.direction == Direction::Forward {
                    seed_demos
                } else {
                    0
                };
                (s.policy_id.clone(), n)
            })
            .collect();
        Ok(Self {
            specs: map,
            counts,
            handles: Vec::new(),
            next_handle: 1,
            next_trajectory: 0,
            episode: 0,
        })
    }

    pub fn from_json(text: &str, seed_demos: u64) -> Result<Self, PoolError> {
        let specs: Vec<PolicySpec> =
            serde_json::from_str(text).map_err(|e| PoolError::Schema(e.to_string()))?;
        Self::new(specs, seed_demos)
    }

    pub fn load(path: impl AsRef<Path>, seed_demos: u64) -> Result<Self, PoolError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PoolError::Schema(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, seed_demos)
    }

    /// Checks every policy targets a subtask of `scenario`.
    pub fn check_against(&self, scenario: &Scenario) -> Result<(), PoolError> {
        for s in self.specs.values() {
            scenario.require(&s.subtask_id)?;
        }
        Ok(())
    }

    pub fn specs(&self) -> impl Iterator<Item = &PolicySpec> {
        self.specs.values()
    }

    pub fn spec(&self, policy_id: &str) -> Result<&PolicySpec, PoolError> {
        self.specs
            .get(policy_id)
            .ok_or_else(|| PoolError::UnknownPolicy(policy_id.to_string()))
    }

    pub fn find(&self, subtask_id: &str, direction: Direction) -> Option<&PolicySpec> {
        self.specs
            .values()
            .find(|s| s.subtask_id == subtask_id && s.direction == direction)
    }

    pub fn trajectory_count(&self, policy_id: &str) -> u64 {
        self.counts.get(policy_id).copied().unwrap_or(0)
    }

    pub fn set_trajectory_count(&mut self, policy_id: &str, n: u64) -> Result<(), PoolError> {
        self.spec(policy_id)?;
        self.counts.insert(policy_id.to_string(), n);
        Ok(())
    }

    /// Puts every forward policy at `n = 50 * iteration`.
    pub fn set_iteration(&mut self, iteration: u64) {
        let ids: Vec<String> = self
            .specs
            .values()
            .filter(|s| s.direction == Direction::Forward)
            .map(|s| s.policy_id.clone())
            .collect();
        for id in ids {
            self.counts.insert(id, SAMPLES_PER_ITERATION * iteration);
        }
    }

    /// One more training trajectory for `policy_id`.
    pub fn record_trajectory(&mut self, policy_id: &str) {
        if let Some(c) = self.counts.get_mut(policy_id) {
            *c += 1;
        }
    }

    /// Current single-attempt success probability of `policy_id`.
    pub fn current_rate(&self, policy_id: &str) -> Result<f64, PoolError> {
        Ok(self
            .spec(policy_id)?
            .curve
            .success_rate(self.trajectory_count(policy_id)))
    }

    pub fn set_episode(&mut self, episode: u64) {
        self.episode = episode;
        self.next_trajectory = 0;
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    /// Allocates a trajectory id unique within the episode.
    pub fn next_trajectory_id(&mut self) -> String {
        let id = format!("e{}-t{}", self.episode, self.next_trajectory);
        self.next_trajectory += 1;
        id
    }

    pub fn active(&self) -> Option<&PolicyHandle> {
        self.handles
            .iter()
            .rev()
            .find(|h| h.state == HandleState::Active)
    }

    pub fn handle(&self, handle_id: u64) -> Option<&PolicyHandle> {
        self.handles.iter().find(|h| h.handle_id == handle_id)
    }

    pub fn start(
        &mut self,
        policy_id: &str,
        instruction: Instruction,
    ) -> Result<PolicyHandle, PoolError> {
        if let Some(h) = self.active() {
            return Err(PoolError::PolicyBusy(h.handle_id));
        }
        self.spec(policy_id)?;
        let handle = PolicyHandle {
            handle_id: self.next_handle,
            policy_id: policy_id.to_string(),
            instruction,
            state: HandleState::Active,
        };
        self.next_handle += 1;
        self.handles.push(handle.clone());
        // Only the latest handles matter; keep the list short in long runs.
        if self.handles.len() > 64 {
            self.handles.drain(..32);
        }
        Ok(handle)
    }

    pub fn terminate(&mut self, handle_id: u64) -> Result<PolicyHandle, PoolError> {
        let h = self
            .handles
            .iter_mut()
            .find(|h| h.handle_id == handle_id && h.state == HandleState::Active)
            .ok_or(PoolError::PolicyNotActive)?;
        h.state = HandleState::Terminated;
        Ok(h.clone())
    }

    /// Swaps the active handle for a new one on another policy.
    pub fn change(
        &mut self,
        handle_id: u64,
        policy_id: &str,
        instruction: Instruction,
    ) -> Result<PolicyHandle, PoolError> {
        if self
            .handle(handle_id)
            .is_none_or(|h| h.state != HandleState::Active)
        {
            return Err(PoolError::PolicyNotActive);
        }
        self.spec(policy_id)?;
        self.terminate(handle_id)?;
        self.start(policy_id, instruction)
    }

    /// Runs the active handle for one subtask attempt.
    ///
    /// Draw order on `rng`: the two outcome uniforms, then the step count.
    /// The handle is terminated afterwards; on a precondition error it stays
    /// active and the scene is untouched.
    pub fn execute<R: Rng + ?Sized>(
        &mut self,
        handle_id: u64,
        env: &mut EnvState,
        scenario: &Scenario,
        rng: &mut R,
    ) -> Result<Execution, PoolError> {
        let handle = self
            .handle(handle_id)
            .filter(|h| h.state == HandleState::Active)
            .cloned()
            .ok_or(PoolError::PolicyNotActive)?;
        let spec = self.spec(&handle.policy_id)?.clone();
        let subtask = scenario.require(&spec.subtask_id)?;
        let p = spec
            .curve
            .success_rate(self.trajectory_count(&spec.policy_id));
        let mut outcome = sample_outcome(
            env,
            subtask,
            spec.direction,
            p,
            scenario.beta(&spec.subtask_id),
            rng,
        )?;
        outcome.steps_taken = rng.random_range(spec.steps.min..=spec.steps.max);
        let before = env.clone();
        *env = apply_outcome(&before, scenario, subtask, spec.direction, &outcome);
        self.terminate(handle_id)?;
        let trajectory = Trajectory {
            trajectory_id: self.next_trajectory_id(),
            policy_id: spec.policy_id.clone(),
            direction: TrajectoryDirection::from(spec.direction),
            instruction: handle.instruction,
            steps: synth_steps(&before, &spec.policy_id, outcome.steps_taken),
            outcome,
            episode: self.episode,
            ext: None,
        };
        Ok(Execution {
            outcome,
            trajectory,
            state_before: before,
        })
    }
}

/// Digest of the symbolic scene, clock excluded.
pub fn scene_digest(env: &EnvState) -> u64 {
    let mut h = fnv1a64(format!("{:?}{:?}", env.drawer, env.spill).as_bytes());
    for (k, v) in &env.objects {
        h = splitmix64(h ^ fnv1a64(k.as_bytes()) ^ (*v as u64));
    }
    h
}

/// Per-step digests for a symbolic execution starting at `before.tick`.
pub fn synth_steps(before: &EnvState, actor: &str, steps: u32) -> Vec<TrajectoryStep> {
    let scene = scene_digest(before);
    let act = fnv1a64(actor.as_bytes());
    (0..u64::from(steps))
        .map(|k| {
            let t = before.tick + k;
            TrajectoryStep {
                t,
                obs_digest: hex64(splitmix64(scene ^ t)),
                q_digest: hex64(splitmix64(scene.rotate_left(17) ^ t)),
                a_digest: hex64(splitmix64(act ^ t)),
            }
        })
        .collect()
}
