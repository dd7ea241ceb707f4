//! Compact feedforward classifier and its training fixtures.
//!
//! [`MlpModel`] is a plain affine/ReLU stack producing logits; the
//! backward pass is hand-rolled so input gradients (for attacks) and
//! parameter gradients (for the fixture trainer) stay small and
//! auditable. Datasets live in `[0,1]^d` feature boxes, which the attack
//! clamping relies on.

mod dataset;
mod io;
mod train;

pub use dataset::{load_dataset, make_blobs, make_rings, mnist_subset, save_dataset, Dataset};
pub use io::{load_model, save_model};
pub use train::{clean_accuracy, train, AtMode, EpochStats, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::expr::ExprError;
use crate::losses::{LossError, SurrogateLoss};
use crate::numerics::BatchMatrix;

/// Errors from model construction, inference, training and persistence.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {got} columns, model expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("layer dimensions do not chain: {0}")]
    BadArchitecture(String),
    #[error("model parameters must be finite")]
    NonFiniteParameter,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("dataset invariant violated: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One affine layer: weights `(out, in)` row-major plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: BatchMatrix,
    pub bias: Vec<f64>,
}

/// Feedforward classifier: affine layers with ReLU between them and an
/// identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<LayerParams>,
    input_dim: usize,
    num_classes: usize,
}

impl MlpModel {
    /// Assemble a model from layer parameters, validating the dimension
    /// chain and parameter finiteness.
    pub fn new(layers: Vec<LayerParams>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::BadArchitecture("no layers".into()));
        }
        let input_dim = layers[0].weight.cols();
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.rows() {
                return Err(ModelError::BadArchitecture(format!(
                    "layer {i}: bias length {} vs {} output rows",
                    layer.bias.len(),
                    layer.weight.rows()
                )));
            }
            if i > 0 && layer.weight.cols() != layers[i - 1].weight.rows() {
                return Err(ModelError::BadArchitecture(format!(
                    "layer {i}: expects {} inputs, previous layer emits {}",
                    layer.weight.cols(),
                    layers[i - 1].weight.rows()
                )));
            }
            if !layer.weight.all_finite() || layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteParameter);
            }
        }
        let num_classes = layers.last().unwrap().weight.rows();
        if num_classes < 2 {
            return Err(ModelError::BadArchitecture(format!(
                "final layer must emit at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self {
            layers,
            input_dim,
            num_classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Layer output widths from input to logits, e.g. `[2, 16, 16, 3]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.layers.iter().map(|l| l.weight.rows()));
        dims
    }

    /// Logits for a batch of inputs.
    pub fn forward(&self, x: &BatchMatrix) -> Result<BatchMatrix, ModelError> {
        Ok(self.forward_trace(x)?.logits().clone())
    }

    /// Forward pass keeping every pre-activation for the backward pass.
    pub(crate) fn forward_trace(&self, x: &BatchMatrix) -> Result<ForwardTrace, ModelError> {
        if x.cols() != self.input_dim {
            return Err(ModelError::InputWidth {
                expected: self.input_dim,
                got: x.cols(),
            });
        }
        let mut activations = vec![x.clone()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine(activations.last().unwrap(), &layer.weight, &layer.bias);
            let last = i + 1 == self.layers.len();
            let a = if last { z.clone() } else { z.map(|v| v.max(0.0)) };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace {
            activations,
            pre_activations,
        })
    }

    /// Gradient of `loss(f(x), y)` with respect to the input batch.
    pub fn input_grad(
        &self,
        loss: &SurrogateLoss,
        x: &BatchMatrix,
        labels: &[u32],
    ) -> Result<BatchMatrix, ModelError> {
        if !loss.supports_grad() {
            return Err(LossError::GradientUnsupported(loss.name().to_string()).into());
        }
        let trace = self.forward_trace(x)?;
        let ctx = crate::expr::EvalContext::from_labels(trace.logits().clone(), labels)?;
        let grad_logits = loss.grad_p(&ctx)?;
        Ok(self.backward_to_input(&trace, grad_logits))
    }

    /// Backpropagate a logits gradient down to the input.
    pub(crate) fn backward_to_input(
        &self,
        trace: &ForwardTrace,
        grad_logits: BatchMatrix,
    ) -> BatchMatrix {
        let mut g = grad_logits;
        for l in (0..self.layers.len()).rev() {
            // dL/d(input of layer l) = g . W_l
            g = matmul(&g, &self.layers[l].weight);
            if l > 0 {
                relu_mask_inplace(&mut g, &trace.pre_activations[l - 1]);
            }
        }
        g
    }

    /// Parameter gradients for a logits gradient; used by the trainer.
    pub(crate) fn backward_params(
        &self,
        trace: &ForwardTrace,
        grad_logits: BatchMatrix,
    ) -> Vec<(BatchMatrix, Vec<f64>)> {
        let mut grads = vec![None; self.layers.len()];
        let mut g = grad_logits;
        for l in (0..self.layers.len()).rev() {
            let input = &trace.activations[l];
            // dL/dW[o, i] = sum_n g[n, o] * input[n, i]
            let mut dw = BatchMatrix::zeros(self.layers[l].weight.rows(), self.layers[l].weight.cols());
            for n in 0..g.rows() {
                for o in 0..dw.rows() {
                    let gv = g.get(n, o);
                    if gv == 0.0 {
                        continue;
                    }
                    for i in 0..dw.cols() {
                        dw.set(o, i, dw.get(o, i) + gv * input.get(n, i));
                    }
                }
            }
            let db: Vec<f64> = (0..g.cols())
                .map(|o| (0..g.rows()).map(|n| g.get(n, o)).sum())
                .collect();
            grads[l] = Some((dw, db));
            if l > 0 {
                g = matmul(&g, &self.layers[l].weight);
                relu_mask_inplace(&mut g, &trace.pre_activations[l - 1]);
            }
        }
        grads.into_iter().map(Option::unwrap).collect()
    }

    pub(crate) fn apply_sgd_step(&mut self, grads: &[(BatchMatrix, Vec<f64>)], lr: f64) {
        for (layer, (dw, db)) in self.layers.iter_mut().zip(grads) {
            for (w, g) in layer.weight.data_mut().iter_mut().zip(dw.data()) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(db) {
                *b -= lr * g;
            }
        }
    }

    pub(crate) fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.all_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

pub(crate) struct ForwardTrace {
    /// `activations[0]` is the input; `activations[i+1]` the output of
    /// layer `i` (ReLU applied except after the last layer).
    pub activations: Vec<BatchMatrix>,
    pub pre_activations: Vec<BatchMatrix>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &BatchMatrix {
        self.activations.last().unwrap()
    }
}

/// `x (N, in) . W^T (in, out) + b`.
fn affine(x: &BatchMatrix, weight: &BatchMatrix, bias: &[f64]) -> BatchMatrix {
    let n = x.rows();
    let out = weight.rows();
    let mut z = BatchMatrix::zeros(n, out);
    for r in 0..n {
        let xr = x.row(r);
        for o in 0..out {
            let wr = weight.row(o);
            let mut acc = bias[o];
            for (xv, wv) in xr.iter().zip(wr) {
                acc += xv * wv;
            }
            z.set(r, o, acc);
        }
    }
    z
}

/// `g (N, out) . W (out, in)`.
fn matmul(g: &BatchMatrix, weight: &BatchMatrix) -> BatchMatrix {
    let n = g.rows();
    let (out, inp) = weight.shape();
    let mut r = BatchMatrix::zeros(n, inp);
    for row in 0..n {
        for o in 0..out {
            let gv = g.get(row, o);
            if gv == 0.0 {
                continue;
            }
            let wr = weight.row(o);
            for i in 0..inp {
                r.set(row, i, r.get(row, i) + gv * wr[i]);
            }
        }
    }
    r
}

/// Zero gradient entries where the pre-activation was not strictly
/// positive (ReLU subgradient 0 at the kink).
fn relu_mask_inplace(g: &mut BatchMatrix, pre: &BatchMatrix) {
    for (gv, &zv) in g.data_mut().iter_mut().zip(pre.data()) {
        if zv <= 0.0 {
            *gv = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::expr::{parse, EvalContext};
    use crate::losses::{builtin_catalog, SurrogateLoss};
    use crate::numerics::{finite_diff_grad, grad_rel_err};

    fn identity_2x2() -> MlpModel {
        MlpModel::new(vec![LayerParams {
            weight: BatchMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]),
            bias: vec![0.0, 0.0],
        }])
        .unwrap()
    }

    #[test]
    fn identity_network_passes_input_through() {
        let model = identity_2x2();
        let x = BatchMatrix::from_rows(&[&[0.3, 0.7]]);
        let out = model.forward(&x).unwrap();
        assert_eq!(out.row(0), &[0.3, 0.7]);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let model = MlpModel::new(vec![LayerParams {
            weight: BatchMatrix::zeros(3, 2),
            bias: vec![0.5, -1.0, 2.0],
        }])
        .unwrap();
        let x = BatchMatrix::from_rows(&[&[0.1, 0.9], &[0.8, 0.2]]);
        let out = model.forward(&x).unwrap();
        assert_eq!(out.row(0), &[0.5, -1.0, 2.0]);
        assert_eq!(out.row(1), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn relu_gates_negative_preactivations() {
        // Hidden unit 1 always sees a negative pre-activation; its large
        // downstream weight must not leak through.
        let model = MlpModel::new(vec![
            LayerParams {
                weight: BatchMatrix::from_rows(&[&[1.0], &[-1.0]]),
                bias: vec![0.0, -2.0],
            },
            LayerParams {
                weight: BatchMatrix::from_rows(&[&[1.0, 100.0], &[0.0, 100.0]]),
                bias: vec![0.0, 0.0],
            },
        ])
        .unwrap();
        let x = BatchMatrix::from_rows(&[&[0.5]]);
        let out = model.forward(&x).unwrap();
        assert_eq!(out.row(0), &[0.5, 0.0]);
    }

    #[test]
    fn dimension_checks() {
        let model = identity_2x2();
        let bad = BatchMatrix::from_rows(&[&[1.0, 2.0, 3.0]]);
        assert!(matches!(
            model.forward(&bad),
            Err(ModelError::InputWidth { expected: 2, got: 3 })
        ));
        assert!(MlpModel::new(vec![
            LayerParams {
                weight: BatchMatrix::zeros(4, 2),
                bias: vec![0.0; 4],
            },
            LayerParams {
                weight: BatchMatrix::zeros(2, 3),
                bias: vec![0.0; 2],
            },
        ])
        .is_err());
    }

    #[test]
    fn last_layer_is_positively_scale_covariant() {
        let mut rng = StdRng::seed_from_u64(5);
        let model = random_model(&mut rng, &[3, 8, 4]);
        let mut doubled_layers = model.layers().to_vec();
        let last = doubled_layers.last_mut().unwrap();
        last.weight = last.weight.map(|v| 2.0 * v);
        last.bias.iter_mut().for_each(|b| *b *= 2.0);
        let doubled = MlpModel::new(doubled_layers).unwrap();

        let mut x = BatchMatrix::zeros(4, 3);
        for i in 0..12 {
            x.data_mut()[i] = rng.gen_range(0.0..1.0);
        }
        let base = model.forward(&x).unwrap();
        let scaled = doubled.forward(&x).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn input_grad_of_linear_chain_is_constant() {
        let model = identity_2x2();
        let loss = SurrogateLoss::from_tree("sum_p", parse("(sum p)").unwrap());
        let x = BatchMatrix::from_rows(&[&[0.2, 0.4], &[0.6, 0.8]]);
        let g = model.input_grad(&loss, &x, &[0, 1]).unwrap();
        for &v in g.data() {
            assert!((v - 0.5).abs() < 1e-15); // 1/N with N = 2
        }
    }

    #[test]
    fn input_grad_without_p_dependence_is_zero() {
        let mut rng = StdRng::seed_from_u64(9);
        let model = random_model(&mut rng, &[3, 6, 3]);
        let loss = SurrogateLoss::from_tree("only_q", parse("(exp (sum q))").unwrap());
        let x = BatchMatrix::from_rows(&[&[0.1, 0.5, 0.9]]);
        let g = model.input_grad(&loss, &x, &[2]).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_grad_rejects_zero_one() {
        let model = identity_2x2();
        let catalog = builtin_catalog();
        let x = BatchMatrix::from_rows(&[&[0.2, 0.4]]);
        assert!(model
            .input_grad(catalog.get("zero_one").unwrap(), &x, &[0])
            .is_err());
    }

    pub(super) fn random_model(rng: &mut StdRng, dims: &[usize]) -> MlpModel {
        let layers = dims
            .windows(2)
            .map(|w| {
                let (inp, out) = (w[0], w[1]);
                let bound = (6.0 / (inp + out) as f64).sqrt();
                let mut weight = BatchMatrix::zeros(out, inp);
                for i in 0..out * inp {
                    weight.data_mut()[i] = rng.gen_range(-bound..bound);
                }
                let bias = (0..out).map(|_| rng.gen_range(-0.1..0.1)).collect();
                LayerParams { weight, bias }
            })
            .collect();
        MlpModel::new(layers).unwrap()
    }

    #[test]
    fn input_grad_matches_finite_differences_on_random_nets() {
        let mut rng = StdRng::seed_from_u64(2021);
        let catalog = builtin_catalog();
        let ce = catalog.get("ce").unwrap();
        let mut checked = 0;
        while checked < 50 {
            let model = random_model(&mut rng, &[4, 10, 3]);
            let mut x = BatchMatrix::zeros(2, 4);
            for i in 0..8 {
                x.data_mut()[i] = rng.gen_range(0.05..0.95);
            }
            let labels = [rng.gen_range(0..3u32), rng.gen_range(0..3u32)];
            // Stay clear of ReLU kinks so the finite differences see a
            // locally smooth function.
            let trace = model.forward_trace(&x).unwrap();
            let smooth = trace
                .pre_activations
                .iter()
                .all(|z| z.data().iter().all(|v| v.abs() > 1e-3));
            if !smooth {
                continue;
            }
            let analytic = model.input_grad(ce, &x, &labels).unwrap();
            let fd = finite_diff_grad(
                |xp| {
                    let logits = model.forward(xp).unwrap();
                    let ctx = EvalContext::from_labels(logits, &labels).unwrap();
                    ce.value(&ctx).unwrap()
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(grad_rel_err(&analytic, &fd) <= 1e-3);
            checked += 1;
        }
    }
}
