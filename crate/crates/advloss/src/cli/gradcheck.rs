//! The gradcheck command: analytic gradients against central finite
//! differences, at kink-avoiding random points.
//!
//! Three families of checks: every primitive operation's VJP, input
//! gradients of random expression trees, and loss-through-model input
//! gradients on a random two-layer network.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::expr::{
    eval_scalar, grad_wrt_p, kink_free, random_tree, EvalContext, GrowMethod,
};
use crate::losses::builtin_catalog;
use crate::model::{LayerParams, MlpModel};
use crate::numerics::{apply_op, finite_diff_grad, grad_rel_err, vjp, BatchMatrix, OpKind};
use crate::seeds::derive_seed;

/// One line of the pass/fail table.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckRow {
    fn new(name: impl Into<String>, max_rel_err: f64, threshold: f64) -> Self {
        let pass = max_rel_err.is_finite() && max_rel_err <= threshold;
        Self {
            name: name.into(),
            max_rel_err,
            threshold,
            pass,
        }
    }
}

const OP_TOLERANCE: f64 = 1e-4;
const TREE_TOLERANCE: f64 = 1e-3;
const MODEL_TOLERANCE: f64 = 1e-3;

/// Run the full table. Deterministic for a fixed seed.
pub fn run_gradcheck(seed: u64) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    for (i, kind) in OpKind::ALL.iter().enumerate() {
        let err = check_op(*kind, derive_seed(seed, i as u64), 84);
        rows.push(CheckRow::new(format!("op_{}", kind.name()), err, OP_TOLERANCE));
    }
    rows.push(CheckRow::new(
        "random_trees",
        check_trees(derive_seed(seed, 100), 100),
        TREE_TOLERANCE,
    ));
    rows.push(CheckRow::new(
        "model_input_grad",
        check_model(derive_seed(seed, 101), 50),
        MODEL_TOLERANCE,
    ));
    rows
}

/// Entries at least 1e-3 from zero; Max rows with a clear leader.
fn smooth_matrix(kind: OpKind, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> BatchMatrix {
    loop {
        let mut mat = BatchMatrix::zeros(rows, cols);
        for i in 0..rows * cols {
            let mut v: f64 = rng.gen_range(-3.0..3.0);
            if v.abs() < 1e-3 {
                v += 0.5;
            }
            mat.data_mut()[i] = v;
        }
        if kind == OpKind::Max {
            let tie = (0..rows).any(|r| {
                let mut vals: Vec<f64> = mat.row(r).to_vec();
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                vals.len() > 1 && vals[0] - vals[1] < 1e-3
            });
            if tie {
                continue;
            }
        }
        return mat;
    }
}

fn check_op(kind: OpKind, seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..samples {
        let rows = rng.gen_range(1..4);
        let cols = rng.gen_range(1..5);
        let a = smooth_matrix(kind, rows, cols, &mut rng);
        let b = (kind.arity() == 2).then(|| {
            let bc = if trial % 3 == 0 && cols > 1 { 1 } else { cols };
            smooth_matrix(kind, rows, bc, &mut rng)
        });
        let out = apply_op(kind, &a, b.as_ref()).unwrap();
        let mut upstream = BatchMatrix::zeros(out.rows(), out.cols());
        for i in 0..upstream.data().len() {
            upstream.data_mut()[i] = rng.gen_range(-1.0..1.0);
        }
        let objective = |x: &BatchMatrix, y: Option<&BatchMatrix>| {
            apply_op(kind, x, y)
                .unwrap()
                .data()
                .iter()
                .zip(upstream.data())
                .map(|(v, u)| v * u)
                .sum::<f64>()
        };
        let (ga, gb) = vjp(kind, &a, b.as_ref(), &upstream).unwrap();
        let fd_a = finite_diff_grad(|x| objective(x, b.as_ref()), &a, 1e-6).unwrap();
        worst = worst.max(grad_rel_err(&ga, &fd_a));
        if let Some(bm) = &b {
            let fd_b = finite_diff_grad(|y| objective(&a, Some(y)), bm, 1e-6).unwrap();
            worst = worst.max(grad_rel_err(&gb.unwrap(), &fd_b));
        }
    }
    worst
}

fn check_trees(seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < samples {
        let tree = random_tree(&mut rng, 2, 6, GrowMethod::Grow);
        let mut p = BatchMatrix::zeros(2, 3);
        for i in 0..6 {
            p.data_mut()[i] = rng.gen_range(-2.0..2.0);
        }
        let labels = [rng.gen_range(0..3u32), rng.gen_range(0..3u32)];
        let ctx = EvalContext::from_labels(p.clone(), &labels).unwrap();
        if !kink_free(&tree, &ctx, 1e-3) {
            continue;
        }
        let analytic = match grad_wrt_p(&tree, &ctx) {
            Ok(g) if g.all_finite() => g,
            _ => continue,
        };
        let fd = match finite_diff_grad(
            |px| {
                let c = EvalContext::from_labels(px.clone(), &labels).unwrap();
                eval_scalar(&tree, &c).unwrap_or(f64::NAN)
            },
            &p,
            1e-5,
        ) {
            Ok(fd) => fd,
            Err(_) => continue,
        };
        worst = worst.max(grad_rel_err(&analytic, &fd));
        checked += 1;
    }
    worst
}

fn check_model(seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [4usize, 10, 3];
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
                bias: (0..out).map(|_| rng.gen_range(-0.1..0.1)).collect(),
            }
        })
        .collect();
    let net = MlpModel::new(layers).expect("random fixture");
    let catalog = builtin_catalog();
    let ce = catalog.get("ce").unwrap();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < samples {
        let mut x = BatchMatrix::zeros(2, 4);
        for i in 0..8 {
            x.data_mut()[i] = rng.gen_range(0.05..0.95);
        }
        let labels = [rng.gen_range(0..3u32), rng.gen_range(0..3u32)];
        if !pre_activations_clear(&net, &x, 1e-3) {
            continue;
        }
        let analytic = net.input_grad(ce, &x, &labels).unwrap();
        let fd = finite_diff_grad(
            |xp| {
                let logits = net.forward(xp).unwrap();
                let ctx = EvalContext::from_labels(logits, &labels).unwrap();
                ce.value(&ctx).unwrap()
            },
            &x,
            1e-6,
        )
        .unwrap();
        worst = worst.max(grad_rel_err(&analytic, &fd));
        checked += 1;
    }
    worst
}

/// True when every hidden pre-activation is at least `margin` from zero.
fn pre_activations_clear(net: &MlpModel, x: &BatchMatrix, margin: f64) -> bool {
    let mut activation = x.clone();
    let layers = net.layers();
    for (i, layer) in layers.iter().enumerate() {
        let mut z = BatchMatrix::zeros(activation.rows(), layer.weight.rows());
        for r in 0..activation.rows() {
            for o in 0..layer.weight.rows() {
                let mut acc = layer.bias[o];
                for (xv, wv) in activation.row(r).iter().zip(layer.weight.row(o)) {
                    acc += xv * wv;
                }
                z.set(r, o, acc);
            }
        }
        let last = i + 1 == layers.len();
        if !last {
            if z.data().iter().any(|v| v.abs() < margin) {
                return false;
            }
            activation = z.map(|v| v.max(0.0));
        }
    }
    true
}

/// Convenience predicate for tests and examples.
pub fn all_pass(rows: &[CheckRow]) -> bool {
    rows.iter().all(|r| r.pass)
}
