//! Flow-matching objective, its gradient, the Euler sampler and training.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::VelocityField;
use super::{interpolate, target_velocity, ActionChunk, FmError};
use crate::util::EpisodeRng;

/// One training sample: conditioning vector, expert chunk, noise draw and
/// interpolation time.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowItem {
    pub cond: Vec<f64>,
    pub action: ActionChunk,
    pub eps: ActionChunk,
    pub tau: f64,
}

/// Network input: flattened `A_τ`, then `τ`, then the conditioning vector.
fn field_input(a_tau: &ActionChunk, tau: f64, cond: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(a_tau.as_slice().len() + 1 + cond.len());
    x.extend_from_slice(a_tau.as_slice());
    x.push(tau);
    x.extend_from_slice(cond);
    x
}

fn check(field: &VelocityField, batch: &[FlowItem]) -> Result<(), FmError> {
    if batch.is_empty() {
        return Err(FmError::Empty);
    }
    if !field.is_finite() {
        return Err(FmError::Numerical("parameters"));
    }
    for item in batch {
        let width = 2 * item.action.h() + 1 + item.cond.len();
        if width != field.input_dim() || 2 * item.action.h() != field.output_dim() {
            return Err(FmError::Shape(format!(
                "sample needs a {width} -> {} field, got {} -> {}",
                2 * item.action.h(),
                field.input_dim(),
                field.output_dim()
            )));
        }
        if !(item.action.is_finite()
            && item.eps.is_finite()
            && item.cond.iter().all(|c| c.is_finite())
            && item.tau.is_finite())
        {
            return Err(FmError::Numerical("batch"));
        }
    }
    Ok(())
}

/// Residual `v(A_τ, τ, s) - (A - ε)` of one sample, plus its tape.
fn residual(
    field: &VelocityField,
    item: &FlowItem,
) -> Result<(super::mlp::Tape, Vec<f64>), FmError> {
    let a_tau = interpolate(&item.eps, &item.action, item.tau)?;
    let u = target_velocity(&item.eps, &item.action)?;
    let tape = field.forward_tape(&field_input(&a_tau, item.tau, &item.cond));
    let r = field
        .output(&tape)
        .iter()
        .zip(u.as_slice())
        .map(|(v, t)| v - t)
        .collect();
    Ok((tape, r))
}

/// Mean over the batch of the squared Frobenius norm of the residual.
pub fn fm_loss(field: &VelocityField, batch: &[FlowItem]) -> Result<f64, FmError> {
    check(field, batch)?;
    let mut total = 0.0;
    for item in batch {
        let (_, r) = residual(field, item)?;
        total += r.iter().map(|x| x * x).sum::<f64>();
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(FmError::Numerical("loss"));
    }
    Ok(loss)
}

/// Loss and its exact gradient with respect to the parameters.
pub fn fm_loss_and_grad(
    field: &VelocityField,
    batch: &[FlowItem],
) -> Result<(f64, Vec<f64>), FmError> {
    check(field, batch)?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; field.params().len()];
    let mut total = 0.0;
    for item in batch {
        let (tape, r) = residual(field, item)?;
        total += r.iter().map(|x| x * x).sum::<f64>();
        let d_out: Vec<f64> = r.iter().map(|x| 2.0 * x / n).collect();
        field.backward(&tape, &d_out, &mut grad);
    }
    let loss = total / n;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(FmError::Numerical("gradient"));
    }
    Ok((loss, grad))
}

pub fn fm_grad(field: &VelocityField, batch: &[FlowItem]) -> Result<Vec<f64>, FmError> {
    fm_loss_and_grad(field, batch).map(|(_, g)| g)
}

/// Euler integration of the field from `eps` at `τ = 0` to `τ = 1`.
pub fn sample_chunk_from(
    field: &VelocityField,
    cond: &[f64],
    eps: &ActionChunk,
    n_steps: usize,
) -> Result<ActionChunk, FmError> {
    if n_steps == 0 {
        return Err(FmError::Shape("n_steps must be positive".into()));
    }
    if !field.is_finite() {
        return Err(FmError::Numerical("parameters"));
    }
    let h = eps.h();
    if field.input_dim() != 2 * h + 1 + cond.len() || field.output_dim() != 2 * h {
        return Err(FmError::Shape(
            "field does not match chunk and conditioning widths".into(),
        ));
    }
    let dt = 1.0 / n_steps as f64;
    let mut a = eps.as_slice().to_vec();
    for k in 0..n_steps {
        let tau = k as f64 * dt;
        let x = field_input(&ActionChunk::from_vec(h, a.clone())?, tau, cond);
        let v = field.forward(&x);
        a.iter_mut().zip(&v).for_each(|(ai, vi)| *ai += dt * vi);
    }
    let out = ActionChunk::from_vec(h, a)?;
    if !out.is_finite() {
        return Err(FmError::Numerical("sample"));
    }
    Ok(out)
}

pub fn standard_normal_chunk<R: Rng + ?Sized>(h: usize, rng: &mut R) -> ActionChunk {
    let data = (0..2 * h).map(|_| StandardNormal.sample(rng)).collect();
    ActionChunk::from_vec(h, data).expect("2h values")
}

/// Draws `ε ~ N(0, I)` from `rng` and integrates it.
pub fn sample_chunk<R: Rng + ?Sized>(
    field: &VelocityField,
    cond: &[f64],
    h: usize,
    n_steps: usize,
    rng: &mut R,
) -> Result<ActionChunk, FmError> {
    let eps = standard_normal_chunk(h, rng);
    sample_chunk_from(field, cond, &eps, n_steps)
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 16,
            learning_rate: 1e-3,
            hidden: default_hidden(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub field: VelocityField,
    /// Mini-batch loss before each update.
    pub loss_history: Vec<f64>,
}

/// Mini-batch training with Adam at a fixed step size. Each sample draws
/// its demo uniformly, `τ ~ U[0, 1]` and `ε ~ N(0, I)`.
pub fn train(demos: &[(Vec<f64>, ActionChunk)], cfg: &TrainConfig) -> Result<TrainResult, FmError> {
    let (cond0, a0) = demos.first().ok_or(FmError::Empty)?;
    let h = a0.h();
    if demos
        .iter()
        .any(|(c, a)| c.len() != cond0.len() || a.h() != h)
    {
        return Err(FmError::Shape(
            "demos differ in conditioning width or H".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(FmError::Empty);
    }
    let mut rng = EpisodeRng::seed_from_u64(cfg.seed);
    let mut sizes = vec![2 * h + 1 + cond0.len()];
    sizes.extend(&cfg.hidden);
    sizes.push(2 * h);
    let mut field = VelocityField::new(&sizes, &mut rng)?;
    let n = field.params().len();
    let (b1, b2, eps_adam) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch: Vec<FlowItem> = (0..cfg.batch_size)
            .map(|_| {
                let (cond, action) = &demos[rng.random_range(0..demos.len())];
                let tau: f64 = rng.random();
                FlowItem {
                    cond: cond.clone(),
                    action: action.clone(),
                    eps: standard_normal_chunk(h, &mut rng),
                    tau,
                }
            })
            .collect();
        let (loss, grad) = fm_loss_and_grad(&field, &batch)?;
        history.push(loss);
        let c1 = 1.0 - b1_pow(b1, step);
        let c2 = 1.0 - b1_pow(b2, step);
        for (i, p) in field.params_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            *p -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps_adam);
        }
    }
    if !field.is_finite() {
        return Err(FmError::Numerical("parameters"));
    }
    Ok(TrainResult {
        field,
        loss_history: history,
    })
}

fn b1_pow(b: f64, step: usize) -> f64 {
    b.powi(step.min(i32::MAX as usize) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::episode_rng;

    fn random_batch(h: usize, cond: usize, n: usize, seed: u64) -> Vec<FlowItem> {
        let mut rng = episode_rng(seed, 1);
        (0..n)
            .map(|_| FlowItem {
                cond: (0..cond).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: standard_normal_chunk(h, &mut rng),
                eps: standard_normal_chunk(h, &mut rng),
                tau: rng.random(),
            })
            .collect()
    }

    /// A field whose output is zero everywhere.
    fn zero_field(sizes: &[usize]) -> VelocityField {
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        VelocityField::from_params(sizes, vec![0.0; n]).unwrap()
    }

    #[test]
    fn zero_field_with_zero_target_has_zero_loss_and_gradient() {
        let mut batch = random_batch(2, 3, 4, 1);
        for item in &mut batch {
            item.eps = item.action.clone();
        }
        let f = zero_field(&[8, 5, 4]);
        assert_eq!(fm_loss(&f, &batch).unwrap(), 0.0);
        assert!(fm_grad(&f, &batch).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn exact_field_has_zero_loss() {
        // Linear field reading A - ε off its inputs: with A = ε + c the
        // target is the constant c, which a bias alone reproduces.
        let c = [0.5, -0.25, 1.0, 2.0];
        let mut batch = random_batch(2, 3, 4, 2);
        for item in &mut batch {
            let a: Vec<f64> = item
                .eps
                .as_slice()
                .iter()
                .zip(c)
                .map(|(e, ci)| e + ci)
                .collect();
            item.action = ActionChunk::from_vec(2, a).unwrap();
        }
        let sizes = [8, 4];
        let mut params = vec![0.0; 8 * 4 + 4];
        params[32..].copy_from_slice(&c);
        let f = VelocityField::from_params(&sizes, params).unwrap();
        assert!(fm_loss(&f, &batch).unwrap() < 1e-24);
    }

    #[test]
    fn constant_field_euler_telescopes() {
        let c = [0.5, -0.25, 1.0, 2.0];
        let mut params = vec![0.0; 8 * 4 + 4];
        params[32..].copy_from_slice(&c);
        let f = VelocityField::from_params(&[8, 4], params).unwrap();
        let mut rng = episode_rng(3, 0);
        let eps = standard_normal_chunk(2, &mut rng);
        let out = sample_chunk_from(&f, &[0.1, 0.2, 0.3], &eps, 3).unwrap();
        for ((o, e), ci) in out.as_slice().iter().zip(eps.as_slice()).zip(&c) {
            let expected = e + ci;
            assert!((o - expected).abs() <= 4.0 * f64::EPSILON * expected.abs().max(1.0));
        }
        let zero = sample_chunk_from(&zero_field(&[8, 4]), &[0.0; 3], &eps, 3).unwrap();
        assert_eq!(zero, eps);
    }

    #[test]
    fn gradient_is_additive_over_samples() {
        let mut rng = episode_rng(4, 0);
        let f = VelocityField::new(&[8, 6, 4], &mut rng).unwrap();
        let batch = random_batch(2, 3, 6, 4);
        let whole = fm_grad(&f, &batch).unwrap();
        let mut sum = vec![0.0; whole.len()];
        for item in &batch {
            let g = fm_grad(&f, std::slice::from_ref(item)).unwrap();
            sum.iter_mut()
                .zip(g)
                .for_each(|(s, gi)| *s += gi / batch.len() as f64);
        }
        for (a, b) in whole.iter().zip(&sum) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    /// Loss recomputed element by element without the tape.
    fn scalar_loss(f: &VelocityField, batch: &[FlowItem]) -> f64 {
        let mut total = 0.0;
        for item in batch {
            let mut x = Vec::new();
            for i in 0..item.action.as_slice().len() {
                x.push(
                    (1.0 - item.tau) * item.eps.as_slice()[i]
                        + item.tau * item.action.as_slice()[i],
                );
            }
            x.push(item.tau);
            x.extend(&item.cond);
            let v = f.forward(&x);
            for ((vi, a), e) in v
                .iter()
                .zip(item.action.as_slice())
                .zip(item.eps.as_slice())
            {
                let d = vi - (a - e);
                total += d * d;
            }
        }
        total / batch.len() as f64
    }

    #[test]
    fn loss_matches_scalar_recomputation() {
        let mut rng = episode_rng(6, 0);
        let f = VelocityField::new(&[8, 6, 6, 4], &mut rng).unwrap();
        let batch = random_batch(2, 3, 4, 6);
        let a = fm_loss(&f, &batch).unwrap();
        assert!((a - scalar_loss(&f, &batch)).abs() <= 1e-12 * a);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = episode_rng(7, 0);
        let f = VelocityField::new(&[8, 6, 6, 4], &mut rng).unwrap();
        let batch = random_batch(2, 3, 4, 7);
        let g = fm_grad(&f, &batch).unwrap();
        let h = 1e-5;
        for _ in 0..50 {
            let i = rng.random_range(0..g.len());
            let mut hi = f.clone();
            hi.params_mut()[i] += h;
            let mut lo = f.clone();
            lo.params_mut()[i] -= h;
            let fd = (fm_loss(&hi, &batch).unwrap() - fm_loss(&lo, &batch).unwrap()) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
            assert!(rel <= 1e-3, "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn single_demo_is_learned() {
        // The target A - ε grows steep in A_τ as τ nears 1, which puts a
        // floor under the loss proportional to the chunk width. A one-row
        // chunk clears 0.05 with a 20k step budget.
        let demos = vec![(vec![0.3, -0.2, 1.0], ActionChunk::from_rows(&[[0.6, 0.8]]))];
        let cfg = TrainConfig {
            steps: 20_000,
            ..TrainConfig::default()
        };
        let r = train(&demos, &cfg).unwrap();
        let tail = &r.loss_history[r.loss_history.len() - 500..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(mean < 0.05, "tail loss {mean}");
        // Block means of the history decrease.
        let blocks: Vec<f64> = r
            .loss_history
            .chunks(5000)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        assert!(blocks.windows(2).all(|w| w[1] < w[0]), "{blocks:?}");
    }

    #[test]
    fn errors_surface() {
        let f = zero_field(&[8, 4]);
        assert!(matches!(fm_loss(&f, &[]), Err(FmError::Empty)));
        let mut batch = random_batch(2, 3, 1, 5);
        batch[0].tau = f64::NAN;
        assert!(matches!(fm_loss(&f, &batch), Err(FmError::Numerical(_))));
        let mut bad = f.clone();
        bad.params_mut()[0] = f64::INFINITY;
        assert!(matches!(
            fm_loss(&bad, &random_batch(2, 3, 1, 5)),
            Err(FmError::Numerical(_))
        ));
        assert!(matches!(
            fm_loss(&f, &random_batch(3, 3, 1, 5)),
            Err(FmError::Shape(_))
        ));
    }

    #[test]
    fn training_is_deterministic_and_logs_every_step() {
        let demos = vec![(
            vec![0.3, -0.2],
            ActionChunk::from_rows(&[[0.5, 0.5], [0.5, 0.0]]),
        )];
        let cfg = TrainConfig {
            steps: 50,
            hidden: vec![8],
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&demos, &cfg).unwrap();
        let b = train(&demos, &cfg).unwrap();
        assert_eq!(a.field, b.field);
        assert_eq!(a.loss_history.len(), 50);
        assert!(train(&[], &cfg).is_err());
    }
}
