//! Projected gradient descent under L-infinity and L2 budgets.
//!
//! The attack maximizes a surrogate loss over the epsilon-ball around
//! each input, with an optional uniform random start, per-step ball
//! projection and box clamping, and final-iterate semantics: the
//! returned point is the last iterate, not the best one seen.
//!
//! Randomness is derived per sample from the spec seed, so results do
//! not depend on how a batch is partitioned across calls or workers.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::losses::{LossError, SurrogateLoss};
use crate::model::{MlpModel, ModelError};
use crate::numerics::BatchMatrix;
use crate::seeds::derive_seed;

/// Perturbation norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Linf,
    L2,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::Linf => "linf",
            NormKind::L2 => "l2",
        }
    }
}

/// Attack configuration.
#[derive(Debug, Clone)]
pub struct AttackSpec {
    pub norm: NormKind,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
    pub seed: u64,
}

impl AttackSpec {
    /// PGD with the conventional step size `2.5 * eps / steps`.
    ///
    /// With `eps = 0` the ball is a point and any positive step size is
    /// equivalent; 1.0 is used so the positivity invariant holds.
    pub fn pgd(norm: NormKind, epsilon: f64, steps: usize) -> Self {
        let step_size = if epsilon > 0.0 && steps > 0 {
            2.5 * epsilon / steps as f64
        } else {
            1.0
        };
        Self {
            norm,
            epsilon,
            steps,
            step_size,
            random_start: true,
            seed: 0,
        }
    }

    pub fn with_step_size(mut self, step_size: f64) -> Self {
        self.step_size = step_size;
        self
    }

    pub fn with_random_start(mut self, random_start: bool) -> Self {
        self.random_start = random_start;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.epsilon < 0.0 {
            return Err(AttackError::InvalidSpec("epsilon must be >= 0".into()));
        }
        if self.steps > 0 && self.step_size <= 0.0 {
            return Err(AttackError::InvalidSpec(
                "step_size must be > 0 when steps > 0".into(),
            ));
        }
        Ok(())
    }

    /// One-line summary used in reports and logs.
    pub fn summary(&self) -> String {
        format!(
            "{} eps={:.6} steps={} step_size={:.6} random_start={} seed={}",
            self.norm.name(),
            self.epsilon,
            self.steps,
            self.step_size,
            self.random_start,
            self.seed
        )
    }
}

/// Attack failures.
#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack spec: {0}")]
    InvalidSpec(String),
    #[error("inputs must lie in [0,1]")]
    InputOutOfBox,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Expr(#[from] crate::expr::ExprError),
}

/// Outcome of a PGD run on one batch.
#[derive(Debug, Clone)]
pub struct AttackResult {
    /// Final iterates, inside the ball and the `[0,1]` box.
    pub x_adv: BatchMatrix,
    /// Per-sample misclassification flags at the final iterate.
    pub success_mask: Vec<bool>,
    /// Batch loss at the start point and after every step.
    pub loss_trace: Vec<f64>,
    /// Samples frozen at their last valid iterate after a non-finite
    /// gradient.
    pub frozen_mask: Vec<bool>,
}

/// Project perturbations onto the epsilon-ball, rowwise for L2.
///
/// Bitwise idempotent: a row already within the ball (up to one part in
/// 1e12 for L2, absorbing the rescale's own rounding) is returned
/// untouched.
pub fn project(delta: &BatchMatrix, norm: NormKind, epsilon: f64) -> BatchMatrix {
    match norm {
        NormKind::Linf => delta.map(|v| v.clamp(-epsilon, epsilon)),
        NormKind::L2 => {
            let mut out = delta.clone();
            for r in 0..out.rows() {
                let norm_sq: f64 = out.row(r).iter().map(|v| v * v).sum();
                if norm_sq > epsilon * epsilon * (1.0 + 1e-12) {
                    let scale = epsilon / norm_sq.sqrt();
                    for c in 0..out.cols() {
                        out.set(r, c, out.get(r, c) * scale);
                    }
                }
            }
            out
        }
    }
}

fn uniform_ball_row(rng: &mut ChaCha8Rng, dim: usize, norm: NormKind, epsilon: f64) -> Vec<f64> {
    match norm {
        NormKind::Linf => (0..dim).map(|_| rng.gen_range(-epsilon..=epsilon)).collect(),
        NormKind::L2 => {
            // Gaussian direction, radius scaled by U^(1/d).
            let dir: Vec<f64> = (0..dim)
                .map(|_| {
                    // Box-Muller from two uniforms keeps the dependency
                    // surface small and the stream layout obvious.
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    (-2.0 * u1.ln()).sqrt() * u2.cos()
                })
                .collect();
            let norm2: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm2 == 0.0 {
                return vec![0.0; dim];
            }
            let radius = epsilon * rng.gen_range(0.0..=1.0f64).powf(1.0 / dim as f64);
            dir.iter().map(|v| v / norm2 * radius).collect()
        }
    }
}

/// Run PGD on a batch.
///
/// Per step: `x += step_size * sign(g)` under L-infinity or
/// `x += step_size * g / ||g||_2` per sample under L2 (zero-gradient rows
/// stay put), followed by projection onto the ball around the original
/// input and clamping into the box. A sample whose gradient turns
/// non-finite freezes at its last valid iterate and is flagged.
pub fn pgd(
    model: &MlpModel,
    loss: &SurrogateLoss,
    x: &BatchMatrix,
    labels: &[u32],
    spec: &AttackSpec,
) -> Result<AttackResult, AttackError> {
    spec.validate()?;
    if !loss.supports_grad() {
        return Err(LossError::GradientUnsupported(loss.name().to_string()).into());
    }
    if !x.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
        return Err(AttackError::InputOutOfBox);
    }
    let n = x.rows();
    let dim = x.cols();
    assert_eq!(labels.len(), n, "one label per row");

    let mut x_adv = x.clone();
    if spec.random_start && spec.epsilon > 0.0 {
        for r in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, r as u64));
            let delta = uniform_ball_row(&mut rng, dim, spec.norm, spec.epsilon);
            for c in 0..dim {
                x_adv.set(r, c, (x.get(r, c) + delta[c]).clamp(0.0, 1.0));
            }
        }
    }

    let mut frozen = vec![false; n];
    let mut trace = Vec::with_capacity(spec.steps + 1);
    trace.push(batch_loss(model, loss, &x_adv, labels)?);

    for _ in 0..spec.steps {
        let g = model.input_grad(loss, &x_adv, labels)?;
        let mut next = x_adv.clone();
        for r in 0..n {
            if frozen[r] {
                continue;
            }
            let grad_row = g.row(r);
            if grad_row.iter().any(|v| !v.is_finite()) {
                frozen[r] = true;
                continue;
            }
            match spec.norm {
                NormKind::Linf => {
                    for c in 0..dim {
                        let s = if grad_row[c] > 0.0 {
                            1.0
                        } else if grad_row[c] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        next.set(r, c, next.get(r, c) + spec.step_size * s);
                    }
                }
                NormKind::L2 => {
                    let norm2: f64 = grad_row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm2 > 0.0 {
                        for c in 0..dim {
                            next.set(
                                r,
                                c,
                                next.get(r, c) + spec.step_size * grad_row[c] / norm2,
                            );
                        }
                    }
                }
            }
            // Project the row's displacement and clamp into the box.
            let delta_row: Vec<f64> = (0..dim).map(|c| next.get(r, c) - x.get(r, c)).collect();
            let delta = BatchMatrix::new(1, dim, delta_row).unwrap();
            let projected = project(&delta, spec.norm, spec.epsilon);
            for c in 0..dim {
                next.set(r, c, (x.get(r, c) + projected.get(0, c)).clamp(0.0, 1.0));
            }
        }
        x_adv = next;
        trace.push(batch_loss(model, loss, &x_adv, labels)?);
    }

    let logits = model.forward(&x_adv)?;
    let success_mask = (0..n)
        .map(|r| logits.row_argmax(r) != labels[r] as usize)
        .collect();

    Ok(AttackResult {
        x_adv,
        success_mask,
        loss_trace: trace,
        frozen_mask: frozen,
    })
}

fn batch_loss(
    model: &MlpModel,
    loss: &SurrogateLoss,
    x: &BatchMatrix,
    labels: &[u32],
) -> Result<f64, AttackError> {
    let logits = model.forward(x)?;
    let ctx = crate::expr::EvalContext::from_labels(logits, labels)?;
    Ok(loss.value(&ctx)?)
}
