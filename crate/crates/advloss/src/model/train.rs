//! Fixture trainer: minibatch SGD on cross-entropy, optionally with
//! single-step adversarial augmentation (FGSM) where each batch is
//! replaced by `clamp(x + eps * sign(grad_x CE))` before the update.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, LayerParams, MlpModel, ModelError};
use crate::expr::EvalContext;
use crate::losses::{builtin_catalog, zero_one};
use crate::numerics::BatchMatrix;

/// Adversarial-training mode for the fixture trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtMode {
    /// Plain SGD on clean batches.
    None,
    /// One signed-gradient step per batch before the update.
    Fgsm,
}

/// Trainer settings. Plain SGD with a constant learning rate; fixture
/// quality is the goal, not state-of-the-art robustness.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub at_mode: AtMode,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            epochs: 60,
            lr: 0.5,
            batch_size: 32,
            at_mode: AtMode::None,
            epsilon: 0.0,
            seed: 0,
        }
    }
}

/// Per-epoch training curve entry.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Trained model plus its training curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub curve: Vec<EpochStats>,
}

fn glorot_init(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<MlpModel, ModelError> {
    let layers = dims
        .windows(2)
        .map(|w| {
            let (inp, out) = (w[0], w[1]);
            let bound = (6.0 / (inp + out) as f64).sqrt();
            let mut weight = BatchMatrix::zeros(out, inp);
            for i in 0..out * inp {
                weight.data_mut()[i] = rng.gen_range(-bound..bound);
            }
            LayerParams {
                weight,
                bias: vec![0.0; out],
            }
        })
        .collect();
    MlpModel::new(layers)
}

/// Train an MLP on the dataset. Deterministic for a fixed seed.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    if config.epsilon < 0.0 {
        return Err(ModelError::InvalidParameter(
            "epsilon must be non-negative".into(),
        ));
    }
    if config.lr <= 0.0 || config.batch_size == 0 {
        return Err(ModelError::InvalidParameter(
            "learning rate and batch size must be positive".into(),
        ));
    }

    let mut dims = vec![dataset.input_dim()];
    dims.extend_from_slice(&config.hidden);
    dims.push(dataset.num_classes());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = glorot_init(&dims, &mut rng)?;
    let catalog = builtin_catalog();
    let ce = catalog.get("ce").unwrap();

    let n = dataset.n_samples();
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            let batch = dataset.subset(chunk);
            let mut x = batch.features().clone();
            if config.at_mode == AtMode::Fgsm {
                let g = model.input_grad(ce, &x, batch.labels())?;
                for (xv, gv) in x.data_mut().iter_mut().zip(g.data()) {
                    let step = if *gv > 0.0 {
                        config.epsilon
                    } else if *gv < 0.0 {
                        -config.epsilon
                    } else {
                        0.0
                    };
                    *xv = (*xv + step).clamp(0.0, 1.0);
                }
            }
            let trace = model.forward_trace(&x)?;
            let ctx = EvalContext::from_labels(trace.logits().clone(), batch.labels())?;
            let grad_logits = ce.grad_p(&ctx)?;
            let grads = model.backward_params(&trace, grad_logits);
            model.apply_sgd_step(&grads, config.lr);
        }
        if !model.params_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        let logits = model.forward(dataset.features())?;
        let ctx = EvalContext::from_labels(logits, dataset.labels())?;
        curve.push(EpochStats {
            epoch,
            mean_loss: ce.value(&ctx)?,
            accuracy: 1.0 - zero_one(&ctx),
        });
    }

    Ok(TrainOutcome { model, curve })
}

/// Clean accuracy of a model on a dataset.
pub fn clean_accuracy(model: &MlpModel, dataset: &Dataset) -> Result<f64, ModelError> {
    let logits = model.forward(dataset.features())?;
    let ctx = EvalContext::from_labels(logits, dataset.labels())?;
    Ok(1.0 - zero_one(&ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_blobs;

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let data = make_blobs(600, 2, 3, 0.05, 42).unwrap();
        let outcome = train(
            &data,
            &TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let acc = outcome.curve.last().unwrap().accuracy;
        assert!(acc >= 0.95, "clean accuracy {acc}");
        assert_eq!(outcome.curve.len(), 40);
    }

    #[test]
    fn fgsm_with_zero_epsilon_matches_standard_training() {
        let data = make_blobs(200, 2, 2, 0.08, 5).unwrap();
        let base = TrainConfig {
            epochs: 8,
            seed: 31,
            ..TrainConfig::default()
        };
        let plain = train(&data, &base).unwrap();
        let fgsm0 = train(
            &data,
            &TrainConfig {
                at_mode: AtMode::Fgsm,
                epsilon: 0.0,
                ..base
            },
        )
        .unwrap();
        assert_eq!(plain.model, fgsm0.model);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = make_blobs(200, 2, 3, 0.08, 5).unwrap();
        let config = TrainConfig {
            epochs: 6,
            seed: 77,
            at_mode: AtMode::Fgsm,
            epsilon: 0.05,
            ..TrainConfig::default()
        };
        let a = train(&data, &config).unwrap();
        let b = train(&data, &config).unwrap();
        assert_eq!(a.model, b.model);
        for (x, y) in a.curve.iter().zip(&b.curve) {
            assert_eq!(x.mean_loss.to_bits(), y.mean_loss.to_bits());
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let data = make_blobs(50, 2, 2, 0.05, 1).unwrap();
        assert!(train(
            &data,
            &TrainConfig {
                epsilon: -0.1,
                at_mode: AtMode::Fgsm,
                ..TrainConfig::default()
            }
        )
        .is_err());
        assert!(train(
            &data,
            &TrainConfig {
                lr: 0.0,
                ..TrainConfig::default()
            }
        )
        .is_err());
    }
}
