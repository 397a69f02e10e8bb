//! Toy conditional flow-matching action policy on a planar place task.
//!
//! A small MLP velocity field `v(A_τ, τ, s)` is trained to match the
//! straight-line target `A - ε` between Gaussian noise `ε` and expert
//! action chunks `A`, and is sampled with a fixed-step Euler integrator
//! from `τ = 0` (noise) to `τ = 1`.

mod flow;
mod io;
mod mlp;
mod planar;

pub use flow::{
    fm_grad, fm_loss, fm_loss_and_grad, sample_chunk, sample_chunk_from, standard_normal_chunk,
    train, FlowItem, TrainConfig, TrainResult,
};
pub use io::{
    demo_from_trajectory, demo_to_trajectory, read_field, write_field, FieldHeader,
    FIELD_FORMAT_VERSION,
};
pub use mlp::VelocityField;
pub use planar::{
    evaluate, expert_action, expert_dataset, expert_demo, rollout, EvalReport, PlanarConfig,
    PlanarState, PlanarTask, RolloutResult, TASK_TAGS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    Numerical(&'static str),
    #[error("empty batch or dataset")]
    Empty,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

/// `H × 2` matrix of planar gripper displacements, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    h: usize,
    data: Vec<f64>,
}

impl ActionChunk {
    pub fn zeros(h: usize) -> Self {
        Self {
            h,
            data: vec![0.0; 2 * h],
        }
    }

    pub fn from_vec(h: usize, data: Vec<f64>) -> Result<Self, FmError> {
        if data.len() != 2 * h {
            return Err(FmError::Shape(format!(
                "expected {} values for H = {h}, got {}",
                2 * h,
                data.len()
            )));
        }
        Ok(Self { h, data })
    }

    pub fn from_rows(rows: &[[f64; 2]]) -> Self {
        Self {
            h: rows.len(),
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> [f64; 2] {
        [self.data[2 * i], self.data[2 * i + 1]]
    }

    pub fn rows(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.h).map(|i| self.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest Euclidean norm over the rows.
    pub fn max_step(&self) -> f64 {
        self.rows().map(|[x, y]| x.hypot(y)).fold(0.0, f64::max)
    }

    fn check_shape(&self, other: &ActionChunk) -> Result<(), FmError> {
        if self.h != other.h {
            return Err(FmError::Shape(format!("H = {} vs H = {}", self.h, other.h)));
        }
        Ok(())
    }
}

/// `(1 - τ) ε + τ A`, elementwise.
pub fn interpolate(eps: &ActionChunk, a: &ActionChunk, tau: f64) -> Result<ActionChunk, FmError> {
    eps.check_shape(a)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(FmError::Shape(format!("τ = {tau} outside [0, 1]")));
    }
    let data = eps
        .data
        .iter()
        .zip(&a.data)
        .map(|(e, x)| (1.0 - tau) * e + tau * x)
        .collect();
    Ok(ActionChunk { h: a.h, data })
}

/// `A - ε`: the time derivative of the interpolation path.
pub fn target_velocity(eps: &ActionChunk, a: &ActionChunk) -> Result<ActionChunk, FmError> {
    eps.check_shape(a)?;
    let data = a.data.iter().zip(&eps.data).map(|(x, e)| x - e).collect();
    Ok(ActionChunk { h: a.h, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(vals: &[f64]) -> ActionChunk {
        ActionChunk::from_vec(vals.len() / 2, vals.to_vec()).unwrap()
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let e = chunk(&[0.3, -1.0, 2.0, 0.5]);
        let a = chunk(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(interpolate(&e, &a, 0.0).unwrap(), e);
        assert_eq!(interpolate(&e, &a, 1.0).unwrap(), a);
        let z = ActionChunk::zeros(2);
        assert_eq!(interpolate(&z, &a, 0.5).unwrap(), chunk(&[0.5; 4]));
    }

    #[test]
    fn target_velocity_cases() {
        let a = chunk(&[0.1, 0.2, -0.3, 0.4]);
        assert_eq!(target_velocity(&a, &a).unwrap(), ActionChunk::zeros(2));
        assert_eq!(target_velocity(&ActionChunk::zeros(2), &a).unwrap(), a);
    }

    #[test]
    fn velocity_is_the_path_derivative() {
        let e = chunk(&[0.3, -1.0, 2.0, 0.5]);
        let a = chunk(&[0.7, 0.1, -0.2, 1.5]);
        let h = 1e-6;
        let lo = interpolate(&e, &a, 0.3 - h).unwrap();
        let hi = interpolate(&e, &a, 0.3 + h).unwrap();
        let u = target_velocity(&e, &a).unwrap();
        for i in 0..4 {
            let d = (hi.as_slice()[i] - lo.as_slice()[i]) / (2.0 * h);
            assert!((d - u.as_slice()[i]).abs() <= 1e-8);
        }
    }

    #[test]
    fn shape_errors() {
        let a = ActionChunk::zeros(2);
        let b = ActionChunk::zeros(3);
        assert!(matches!(interpolate(&a, &b, 0.5), Err(FmError::Shape(_))));
        assert!(matches!(target_velocity(&a, &b), Err(FmError::Shape(_))));
        assert!(ActionChunk::from_vec(2, vec![0.0; 3]).is_err());
        assert!(interpolate(&a, &a, 1.5).is_err());
    }
}
