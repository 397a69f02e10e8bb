//! Planar place task: move the gripper to the object, grasp it, carry it to
//! the goal. Includes the scripted expert and the learned chunked policy.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flow::{sample_chunk, train, TrainConfig, TrainResult};
use super::mlp::VelocityField;
use super::{ActionChunk, FmError};
use crate::util::episode_rng;

/// Subtask tags; the one-hot over this list is the language conditioning.
pub const TASK_TAGS: [&str; 1] = ["place"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarConfig {
    /// Chunk length H.
    pub h: usize,
    /// Largest gripper displacement per step.
    pub max_step: f64,
    /// Gripper-object distance at which the object is picked up.
    pub grasp_radius: f64,
    /// Object-goal distance that counts as success.
    pub success_radius: f64,
    /// Chunk budget per episode.
    pub max_chunks: usize,
    /// Euler steps per sampled chunk.
    pub inference_steps: usize,
    /// Gain on the relative vectors in the state encoding, so that
    /// distances near the grasp radius are not lost in the inputs.
    pub relative_scale: f64,
}

impl Default for PlanarConfig {
    fn default() -> Self {
        Self {
            h: 8,
            max_step: 0.05,
            grasp_radius: 0.04,
            success_radius: 0.05,
            max_chunks: 40,
            inference_steps: 3,
            relative_scale: 10.0,
        }
    }
}

impl PlanarConfig {
    /// Width of [`PlanarState::encode`].
    pub fn state_dim(&self) -> usize {
        7 + TASK_TAGS.len()
    }

    pub fn validate(&self) -> Result<(), FmError> {
        let radii = [
            self.max_step,
            self.grasp_radius,
            self.success_radius,
            self.relative_scale,
        ];
        if self.h == 0
            || self.max_chunks == 0
            || self.inference_steps == 0
            || radii.iter().any(|r| !(r.is_finite() && *r > 0.0))
        {
            return Err(FmError::Format(format!("invalid planar config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarState {
    pub gripper: [f64; 2],
    pub object: [f64; 2],
    pub goal: [f64; 2],
    pub holding: bool,
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Scales `v` down to norm `max` if it is longer.
fn clip(v: [f64; 2], max: f64) -> [f64; 2] {
    let n = norm(v);
    if n > max {
        [v[0] * max / n, v[1] * max / n]
    } else {
        v
    }
}

impl PlanarState {
    /// Uniform positions in the inner square `[0.1, 0.9]²`, object not held,
    /// with the object and goal at least a success radius apart.
    pub fn random<R: Rng + ?Sized>(cfg: &PlanarConfig, rng: &mut R) -> Self {
        let mut point = || [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        let gripper = point();
        let object = point();
        let mut goal = point();
        while norm(sub(goal, object)) <= cfg.success_radius {
            goal = point();
        }
        Self {
            gripper,
            object,
            goal,
            holding: false,
        }
    }

    /// `[object - gripper, goal - object, gripper, holding, one-hot tag]`,
    /// with both relative vectors multiplied by the configured scale.
    pub fn encode(&self, cfg: &PlanarConfig, tag: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(7 + TASK_TAGS.len());
        v.extend(sub(self.object, self.gripper).map(|x| x * cfg.relative_scale));
        v.extend(sub(self.goal, self.object).map(|x| x * cfg.relative_scale));
        v.extend(self.gripper);
        v.push(if self.holding { 1.0 } else { 0.0 });
        v.extend((0..TASK_TAGS.len()).map(|i| if i == tag { 1.0 } else { 0.0 }));
        v
    }

    /// Applies one displacement, clipped to the max step and kept inside
    /// the unit square. A held object moves with the gripper; a free one
    /// is grasped once the gripper comes within the grasp radius.
    pub fn step(&mut self, action: [f64; 2], cfg: &PlanarConfig) {
        let a = clip(action, cfg.max_step);
        let next = [
            (self.gripper[0] + a[0]).clamp(0.0, 1.0),
            (self.gripper[1] + a[1]).clamp(0.0, 1.0),
        ];
        let moved = sub(next, self.gripper);
        self.gripper = next;
        if self.holding {
            self.object = [
                (self.object[0] + moved[0]).clamp(0.0, 1.0),
                (self.object[1] + moved[1]).clamp(0.0, 1.0),
            ];
        } else if norm(sub(self.object, self.gripper)) <= cfg.grasp_radius {
            self.holding = true;
        }
    }

    pub fn success(&self, cfg: &PlanarConfig) -> bool {
        norm(sub(self.object, self.goal)) <= cfg.success_radius
    }
}

/// Proportional controller: head for the object, then carry it to the goal.
pub fn expert_action(state: &PlanarState, cfg: &PlanarConfig) -> [f64; 2] {
    let target = if state.holding {
        sub(state.goal, state.object)
    } else {
        sub(state.object, state.gripper)
    };
    clip(target, cfg.max_step)
}

/// Runs the expert from `start` until success, sliced into H-step chunks
/// each paired with the state it starts from. The last chunk is padded
/// with zeros.
pub fn expert_demo(start: &PlanarState, cfg: &PlanarConfig) -> Vec<(PlanarState, ActionChunk)> {
    let budget = cfg.h * cfg.max_chunks;
    let mut state = *start;
    let mut out = Vec::new();
    let mut t = 0;
    while !state.success(cfg) && t < budget {
        let chunk_start = state;
        let mut rows = Vec::with_capacity(cfg.h);
        for _ in 0..cfg.h {
            if state.success(cfg) {
                rows.push([0.0, 0.0]);
                continue;
            }
            let a = expert_action(&state, cfg);
            state.step(a, cfg);
            rows.push(a);
            t += 1;
        }
        out.push((chunk_start, ActionChunk::from_rows(&rows)));
    }
    out
}

/// Chunks from `n` expert demos; demo `i` starts from stream `i` of `seed`.
pub fn expert_dataset(cfg: &PlanarConfig, n: u64, seed: u64) -> Vec<(PlanarState, ActionChunk)> {
    (0..n)
        .flat_map(|i| {
            let mut rng = episode_rng(seed, i);
            expert_demo(&PlanarState::random(cfg, &mut rng), cfg)
        })
        .collect()
}

/// Learned chunked policy. The field sees and emits actions divided by
/// the max step, so its targets are of unit scale.
#[derive(Debug, Clone)]
pub struct PlanarTask {
    pub config: PlanarConfig,
    pub field: VelocityField,
    pub tag: usize,
}

impl PlanarTask {
    /// Trains a field on `(state, chunk)` demos in environment units.
    pub fn fit(
        demos: &[(PlanarState, ActionChunk)],
        config: PlanarConfig,
        train_cfg: &TrainConfig,
    ) -> Result<(Self, TrainResult), FmError> {
        config.validate()?;
        let scaled: Vec<(Vec<f64>, ActionChunk)> = demos
            .iter()
            .map(|(s, a)| {
                let data = a.as_slice().iter().map(|x| x / config.max_step).collect();
                Ok((s.encode(&config, 0), ActionChunk::from_vec(a.h(), data)?))
            })
            .collect::<Result<_, FmError>>()?;
        if scaled.iter().any(|(_, a)| a.h() != config.h) {
            return Err(FmError::Shape(format!(
                "demo chunks must have H = {}",
                config.h
            )));
        }
        let result = train(&scaled, train_cfg)?;
        let task = Self {
            config,
            field: result.field.clone(),
            tag: 0,
        };
        Ok((task, result))
    }

    /// Samples one chunk and maps it back to bounded displacements.
    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &PlanarState,
        rng: &mut R,
    ) -> Result<ActionChunk, FmError> {
        let raw = sample_chunk(
            &self.field,
            &state.encode(&self.config, self.tag),
            self.config.h,
            self.config.inference_steps,
            rng,
        )?;
        let rows: Vec<[f64; 2]> = raw
            .rows()
            .map(|[x, y]| {
                clip(
                    [x * self.config.max_step, y * self.config.max_step],
                    self.config.max_step,
                )
            })
            .collect();
        Ok(ActionChunk::from_rows(&rows))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub success: bool,
    pub chunks: usize,
    pub final_state: PlanarState,
}

/// Executes sampled chunks open-loop within a chunk and replans between
/// chunks until success or the chunk budget runs out.
pub fn rollout<R: Rng + ?Sized>(
    task: &PlanarTask,
    start: &PlanarState,
    rng: &mut R,
) -> Result<RolloutResult, FmError> {
    let cfg = &task.config;
    let mut state = *start;
    for chunk_idx in 0..cfg.max_chunks {
        let chunk = task.act(&state, rng)?;
        for a in chunk.rows() {
            state.step(a, cfg);
            if state.success(cfg) {
                return Ok(RolloutResult {
                    success: true,
                    chunks: chunk_idx + 1,
                    final_state: state,
                });
            }
        }
    }
    Ok(RolloutResult {
        success: false,
        chunks: cfg.max_chunks,
        final_state: state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_chunks: f64,
}

/// Runs `episodes` rollouts in parallel; episode `i` draws its start state
/// and noise from its own stream of `seed`.
pub fn evaluate(task: &PlanarTask, episodes: usize, seed: u64) -> Result<EvalReport, FmError> {
    let results: Vec<RolloutResult> = (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = episode_rng(seed, i);
            let start = PlanarState::random(&task.config, &mut rng);
            rollout(task, &start, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let successes = results.iter().filter(|r| r.success).count();
    let n = episodes.max(1) as f64;
    Ok(EvalReport {
        episodes,
        successes,
        success_rate: successes as f64 / n,
        mean_chunks: results.iter().map(|r| r.chunks as f64).sum::<f64>() / n,
    })
}
