//! Persistence: trained fields as a JSON header line followed by raw
//! little-endian `f64` parameters, demos as collector trajectories.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::mlp::VelocityField;
use super::planar::{PlanarState, TASK_TAGS};
use super::{ActionChunk, FmError};
use crate::agentcore::{Instruction, InstructionDirection};
use crate::collector::{Trajectory, TrajectoryDirection, TrajectoryExt, TrajectoryStep};
use crate::simenv::Outcome;
use crate::util::{fnv1a64, hex64};

pub const FIELD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub layer_sizes: Vec<usize>,
    pub h: usize,
    pub version: u32,
}

pub fn write_field<W: Write>(mut w: W, field: &VelocityField, h: usize) -> Result<(), FmError> {
    let header = FieldHeader {
        layer_sizes: field.sizes().to_vec(),
        h,
        version: FIELD_FORMAT_VERSION,
    };
    let line = serde_json::to_string(&header).map_err(|e| FmError::Format(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    for p in field.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field<R: BufRead>(mut r: R) -> Result<(FieldHeader, VelocityField), FmError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: FieldHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| FmError::Format(e.to_string()))?;
    if header.version != FIELD_FORMAT_VERSION {
        return Err(FmError::Format(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(FmError::Format(
            "parameter block is not a whole number of f64".into(),
        ));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let field = VelocityField::from_params(&header.layer_sizes, params)?;
    if field.output_dim() != 2 * header.h {
        return Err(FmError::Shape(format!(
            "output width {} for H = {}",
            field.output_dim(),
            header.h
        )));
    }
    if !field.is_finite() {
        return Err(FmError::Numerical("parameters"));
    }
    Ok((header, field))
}

fn raw_state(s: &PlanarState) -> Vec<f64> {
    vec![
        s.gripper[0],
        s.gripper[1],
        s.object[0],
        s.object[1],
        s.goal[0],
        s.goal[1],
        if s.holding { 1.0 } else { 0.0 },
    ]
}

fn digest(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    hex64(fnv1a64(&bytes))
}

/// Packs one expert demo into a forward trajectory. Each step is one
/// chunk; the raw states and flattened chunks go into the extension field.
pub fn demo_to_trajectory(
    id: &str,
    episode: u64,
    demo: &[(PlanarState, ActionChunk)],
) -> Trajectory {
    let states: Vec<Vec<f64>> = demo.iter().map(|(s, _)| raw_state(s)).collect();
    let actions: Vec<Vec<f64>> = demo.iter().map(|(_, a)| a.as_slice().to_vec()).collect();
    let steps = states
        .iter()
        .zip(&actions)
        .enumerate()
        .map(|(t, (s, a))| TrajectoryStep {
            t: t as u64,
            obs_digest: digest(s),
            q_digest: digest(&s[..2]),
            a_digest: digest(a),
        })
        .collect();
    Trajectory {
        trajectory_id: id.to_string(),
        policy_id: "planar_expert".into(),
        direction: TrajectoryDirection::Forward,
        instruction: Instruction {
            text: "place the object on the goal".into(),
            subtask_id: TASK_TAGS[0].into(),
            direction: InstructionDirection::Forward,
        },
        steps,
        outcome: Outcome::success((demo.len() * demo.first().map_or(0, |(_, a)| a.h())) as u32),
        episode,
        ext: Some(TrajectoryExt { states, actions }),
    }
}

pub fn demo_from_trajectory(
    t: &Trajectory,
    h: usize,
) -> Result<Vec<(PlanarState, ActionChunk)>, FmError> {
    let ext = t
        .ext
        .as_ref()
        .ok_or_else(|| FmError::Format(format!("trajectory {} has no vectors", t.trajectory_id)))?;
    if ext.states.len() != ext.actions.len() {
        return Err(FmError::Format("state and action counts differ".into()));
    }
    ext.states
        .iter()
        .zip(&ext.actions)
        .map(|(s, a)| {
            if s.len() != 7 {
                return Err(FmError::Shape(format!(
                    "state has {} values, expected 7",
                    s.len()
                )));
            }
            let state = PlanarState {
                gripper: [s[0], s[1]],
                object: [s[2], s[3]],
                goal: [s[4], s[5]],
                holding: s[6] != 0.0,
            };
            Ok((state, ActionChunk::from_vec(h, a.clone())?))
        })
        .collect()
}
