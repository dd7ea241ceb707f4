//! Surrogate losses behind one interface.
//!
//! A [`SurrogateLoss`] is either an analytic builtin (cross-entropy, the
//! Carlini-Wagner margin, its margin-logit alias, the difference-of-logits
//! ratio, or the 0-1 loss itself) or a DSL expression tree. Both expose a
//! scalar `value` and, where defined, the gradient with respect to the
//! logits; attacks and risk evaluation only ever talk to this interface.
//!
//! [`builtin_catalog`] registers the baselines together with the five
//! distilled tree losses `bs1`..`bs5`.

use thiserror::Error;

use crate::expr::{self, EvalContext, ExprError, ExprTree};
use crate::numerics::{BatchMatrix, GAMMA};

/// Errors from loss evaluation or catalog lookup.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("loss `{0}` does not provide gradients")]
    GradientUnsupported(String),
    #[error("loss `{name}` needs at least {min_classes} classes, got {got}")]
    UnsupportedWidth {
        name: String,
        min_classes: usize,
        got: usize,
    },
    #[error("no loss named `{0}` in the catalog")]
    NotFound(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Analytic baseline losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinKind {
    Ce,
    Cw,
    Ml,
    Dlr,
    ZeroOne,
}

#[derive(Debug, Clone, PartialEq)]
enum LossBody {
    BuiltIn(BuiltinKind),
    Tree(ExprTree),
}

/// A named surrogate loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateLoss {
    name: String,
    body: LossBody,
}

impl SurrogateLoss {
    pub fn builtin(name: &str, kind: BuiltinKind) -> Self {
        Self {
            name: name.to_string(),
            body: LossBody::BuiltIn(kind),
        }
    }

    /// Wrap a DSL tree as a loss.
    pub fn from_tree(name: &str, tree: ExprTree) -> Self {
        Self {
            name: name.to_string(),
            body: LossBody::Tree(tree),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The expression behind a tree loss, if it is one.
    pub fn tree(&self) -> Option<&ExprTree> {
        match &self.body {
            LossBody::Tree(t) => Some(t),
            LossBody::BuiltIn(_) => None,
        }
    }

    /// False only for the 0-1 loss, which has no usable gradient.
    pub fn supports_grad(&self) -> bool {
        !matches!(self.body, LossBody::BuiltIn(BuiltinKind::ZeroOne))
    }

    /// Scalar loss value on a context.
    pub fn value(&self, ctx: &EvalContext) -> Result<f64, LossError> {
        match &self.body {
            LossBody::BuiltIn(BuiltinKind::Ce) => Ok(ce(ctx)),
            LossBody::BuiltIn(BuiltinKind::Cw) | LossBody::BuiltIn(BuiltinKind::Ml) => {
                margin_value(ctx, &self.name)
            }
            LossBody::BuiltIn(BuiltinKind::Dlr) => dlr(ctx),
            LossBody::BuiltIn(BuiltinKind::ZeroOne) => Ok(zero_one(ctx)),
            LossBody::Tree(tree) => Ok(expr::eval_scalar(tree, ctx)?),
        }
    }

    /// Gradient of the scalar loss with respect to the logits.
    pub fn grad_p(&self, ctx: &EvalContext) -> Result<BatchMatrix, LossError> {
        match &self.body {
            LossBody::BuiltIn(BuiltinKind::Ce) => Ok(ce_grad(ctx)),
            LossBody::BuiltIn(BuiltinKind::Cw) | LossBody::BuiltIn(BuiltinKind::Ml) => {
                margin_grad(ctx, &self.name)
            }
            LossBody::BuiltIn(BuiltinKind::Dlr) => dlr_grad(ctx),
            LossBody::BuiltIn(BuiltinKind::ZeroOne) => {
                Err(LossError::GradientUnsupported(self.name.clone()))
            }
            LossBody::Tree(tree) => Ok(expr::grad_wrt_p(tree, ctx)?),
        }
    }
}

/// 0-1 loss: mean misclassification with argmax ties broken toward the
/// lowest index.
pub fn zero_one(ctx: &EvalContext) -> f64 {
    let p = ctx.p();
    let errors = (0..p.rows())
        .filter(|&r| p.row_argmax(r) != ctx.label(r))
        .count();
    errors as f64 / p.rows() as f64
}

/// Cross-entropy through a log-sum-exp, safe for large logits.
pub fn ce(ctx: &EvalContext) -> f64 {
    let p = ctx.p();
    let mut total = 0.0;
    for r in 0..p.rows() {
        let row = p.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[ctx.label(r)];
    }
    total / p.rows() as f64
}

/// Gradient of [`ce`]: `(softmax(p) - q) / N`.
pub fn ce_grad(ctx: &EvalContext) -> BatchMatrix {
    let p = ctx.p();
    let n = p.rows() as f64;
    let mut g = BatchMatrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let row = p.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for c in 0..p.cols() {
            let s = (row[c] - m).exp() / denom;
            g.set(r, c, (s - ctx.q().get(r, c)) / n);
        }
    }
    g
}

/// Index of the largest non-true logit, ties toward the lowest index.
fn best_other(row: &[f64], label: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in row.iter().enumerate() {
        if i == label {
            continue;
        }
        if best == usize::MAX || v > row[best] {
            best = i;
        }
    }
    best
}

fn require_width(ctx: &EvalContext, name: &str, min: usize) -> Result<(), LossError> {
    if ctx.p().cols() < min {
        return Err(LossError::UnsupportedWidth {
            name: name.to_string(),
            min_classes: min,
            got: ctx.p().cols(),
        });
    }
    Ok(())
}

/// Margin loss `max_{i != y} p_i - p_y`, the attacker-maximized form used
/// by both the `cw` and `ml` catalog entries.
fn margin_value(ctx: &EvalContext, name: &str) -> Result<f64, LossError> {
    require_width(ctx, name, 2)?;
    let p = ctx.p();
    let mut total = 0.0;
    for r in 0..p.rows() {
        let row = p.row(r);
        let y = ctx.label(r);
        total += row[best_other(row, y)] - row[y];
    }
    Ok(total / p.rows() as f64)
}

fn margin_grad(ctx: &EvalContext, name: &str) -> Result<BatchMatrix, LossError> {
    require_width(ctx, name, 2)?;
    let p = ctx.p();
    let n = p.rows() as f64;
    let mut g = BatchMatrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let y = ctx.label(r);
        let other = best_other(p.row(r), y);
        g.set(r, other, 1.0 / n);
        g.set(r, y, -1.0 / n);
    }
    Ok(g)
}

/// Descending sort positions of a row, ties keeping the lower original
/// index first.
fn descending_order(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
    idx
}

/// Difference-of-logits-ratio loss
/// `-(p_y - max_{i != y} p_i) / (p_{pi1} - p_{pi3} + GAMMA)`.
///
/// Needs at least three classes; the guard constant keeps the
/// denominator away from zero instead of letting the value blow up.
pub fn dlr(ctx: &EvalContext) -> Result<f64, LossError> {
    require_width(ctx, "dlr", 3)?;
    let p = ctx.p();
    let mut total = 0.0;
    for r in 0..p.rows() {
        let row = p.row(r);
        let y = ctx.label(r);
        let pi = descending_order(row);
        let numer = row[y] - row[best_other(row, y)];
        let denom = row[pi[0]] - row[pi[2]] + GAMMA;
        total += -numer / denom;
    }
    Ok(total / p.rows() as f64)
}

/// Gradient of [`dlr`] with the active indices held fixed.
pub fn dlr_grad(ctx: &EvalContext) -> Result<BatchMatrix, LossError> {
    require_width(ctx, "dlr", 3)?;
    let p = ctx.p();
    let n = p.rows() as f64;
    let mut g = BatchMatrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let row = p.row(r);
        let y = ctx.label(r);
        let m = best_other(row, y);
        let pi = descending_order(row);
        let u = row[y] - row[m];
        let v = row[pi[0]] - row[pi[2]] + GAMMA;
        // d(-u/v) = (-du * v + u * dv) / v^2
        let mut add = |c: usize, delta: f64| g.set(r, c, g.get(r, c) + delta / n);
        add(y, -1.0 / v);
        add(m, 1.0 / v);
        add(pi[0], u / (v * v));
        add(pi[2], -u / (v * v));
    }
    Ok(g)
}

/// Grammar transcriptions of the five distilled losses.
pub const BS_EXPRESSIONS: [(&str, &str); 5] = [
    ("bs1", "(exp (div (mul 10 (softmax p)) (max (softmax p))))"),
    (
        "bs2",
        "(exp (neg (max (softmax (add p (mul 2 (softmax (mul 5 p))))))))",
    ),
    (
        "bs3",
        "(mul (softmax (neg (softmax (mul (exp p) (mul 2 p))))) (add (softmax (mul 2 p)) (mul 2 q)))",
    ),
    (
        "bs4",
        "(square (sub (softmax (sub (add (softmax (mul 2 p)) p) q)) q))",
    ),
    (
        "bs5",
        "(exp (neg (max (add (softmax (add (exp (add (softmax (add (exp p) p)) 1)) p)) 1))))",
    ),
];

/// Immutable catalog of the named losses.
#[derive(Debug, Clone)]
pub struct Catalog {
    entries: Vec<SurrogateLoss>,
}

impl Catalog {
    pub fn get(&self, name: &str) -> Result<&SurrogateLoss, LossError> {
        self.entries
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| LossError::NotFound(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SurrogateLoss> {
        self.entries.iter()
    }
}

/// The ten built-in losses: `ce`, `cw`, `ml`, `dlr`, `zero_one` and
/// `bs1`..`bs5`.
pub fn builtin_catalog() -> Catalog {
    let mut entries = vec![
        SurrogateLoss::builtin("ce", BuiltinKind::Ce),
        SurrogateLoss::builtin("cw", BuiltinKind::Cw),
        SurrogateLoss::builtin("ml", BuiltinKind::Ml),
        SurrogateLoss::builtin("dlr", BuiltinKind::Dlr),
        SurrogateLoss::builtin("zero_one", BuiltinKind::ZeroOne),
    ];
    for (name, text) in BS_EXPRESSIONS {
        let tree = expr::parse(text).expect("builtin expression must parse");
        entries.push(SurrogateLoss::from_tree(name, tree));
    }
    Catalog { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::expr::parse;
    use crate::numerics::{finite_diff_grad, grad_rel_err};

    fn ctx(p: &[&[f64]], labels: &[u32]) -> EvalContext {
        EvalContext::from_labels(BatchMatrix::from_rows(p), labels).unwrap()
    }

    #[test]
    fn zero_one_examples() {
        assert_eq!(zero_one(&ctx(&[&[3.0, 1.0]], &[0])), 0.0);
        assert_eq!(zero_one(&ctx(&[&[1.0, 3.0]], &[0])), 1.0);
        assert_eq!(
            zero_one(&ctx(&[&[3.0, 1.0], &[1.0, 3.0]], &[0, 0])),
            0.5
        );
        // Argmax tie goes to the lowest index: prediction 0, label 0.
        assert_eq!(zero_one(&ctx(&[&[2.0, 2.0]], &[0])), 0.0);
        assert_eq!(zero_one(&ctx(&[&[2.0, 2.0]], &[1])), 1.0);
    }

    #[test]
    fn ce_examples() {
        let uniform = ctx(&[&[0.0, 0.0]], &[0]);
        assert!((ce(&uniform) - std::f64::consts::LN_2).abs() < 1e-12);
        let saturated = ctx(&[&[100.0, 0.0]], &[0]);
        assert!(ce(&saturated).abs() < 1e-12);
        let g = ce_grad(&uniform);
        assert!((g.get(0, 0) + 0.5).abs() < 1e-12);
        assert!((g.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ce_is_stable_for_extreme_logits() {
        let c = ctx(&[&[1000.0, -1000.0]], &[1]);
        let v = ce(&c);
        assert!(v.is_finite());
        assert!((v - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn margin_examples() {
        let catalog = builtin_catalog();
        let cw = catalog.get("cw").unwrap();
        let c = ctx(&[&[3.0, 1.0, 0.0]], &[0]);
        assert_eq!(cw.value(&c).unwrap(), -2.0);
        let tied = ctx(&[&[1.0, 1.0]], &[0]);
        assert_eq!(cw.value(&tied).unwrap(), 0.0);
        let g = cw.grad_p(&c).unwrap();
        assert_eq!(g.row(0), &[-1.0, 1.0, 0.0]);
    }

    #[test]
    fn cw_and_ml_are_identical() {
        let catalog = builtin_catalog();
        let cw = catalog.get("cw").unwrap();
        let ml = catalog.get("ml").unwrap();
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..200 {
            let mut p = BatchMatrix::zeros(3, 4);
            for i in 0..12 {
                p.data_mut()[i] = rng.gen_range(-10.0..10.0);
            }
            let labels = [
                rng.gen_range(0..4u32),
                rng.gen_range(0..4u32),
                rng.gen_range(0..4u32),
            ];
            let c = EvalContext::from_labels(p, &labels).unwrap();
            assert_eq!(cw.value(&c).unwrap(), ml.value(&c).unwrap());
            assert_eq!(
                cw.grad_p(&c).unwrap().data(),
                ml.grad_p(&c).unwrap().data()
            );
        }
    }

    #[test]
    fn dlr_examples() {
        let c = ctx(&[&[3.0, 1.0, 0.0]], &[0]);
        let v = dlr(&c).unwrap();
        assert!((v - (-2.0 / (3.0 + GAMMA))).abs() < 1e-12);
        assert!((v + 2.0 / 3.0).abs() < 1e-6);
        let flat = ctx(&[&[0.0, 0.0, 0.0]], &[0]);
        assert!(dlr(&flat).unwrap().abs() < 1e-12);
    }

    #[test]
    fn dlr_requires_three_classes() {
        let c = ctx(&[&[1.0, 0.0]], &[0]);
        assert!(matches!(
            dlr(&c),
            Err(LossError::UnsupportedWidth { min_classes: 3, .. })
        ));
    }

    #[test]
    fn dlr_is_scale_invariant_up_to_gamma() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..300 {
            let mut p = BatchMatrix::zeros(2, 4);
            for i in 0..8 {
                p.data_mut()[i] = rng.gen_range(-5.0..5.0);
            }
            // Keep the denominator comfortably away from the guard.
            let spread = (0..2).all(|r| {
                let mut row = p.row(r).to_vec();
                row.sort_by(|a, b| b.partial_cmp(a).unwrap());
                row[0] - row[2] > 0.3
            });
            if !spread {
                continue;
            }
            let labels = [rng.gen_range(0..4u32), rng.gen_range(0..4u32)];
            let c1 = EvalContext::from_labels(p.clone(), &labels).unwrap();
            let c2 = EvalContext::from_labels(p.map(|v| 2.0 * v), &labels).unwrap();
            let a = dlr(&c1).unwrap();
            let b = dlr(&c2).unwrap();
            assert!(
                (a - b).abs() / a.abs().max(b.abs()).max(1.0) < 1e-4,
                "scale invariance violated: {a} vs {b}"
            );
        }
    }

    #[test]
    fn zero_one_ignores_monotone_reparameterization() {
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..200 {
            let mut p = BatchMatrix::zeros(3, 3);
            for i in 0..9 {
                p.data_mut()[i] = rng.gen_range(-5.0..5.0);
            }
            let labels = [0u32, 1, 2];
            let base = zero_one(&EvalContext::from_labels(p.clone(), &labels).unwrap());
            // Strictly monotone per-row transform preserving the argmax.
            let scaled = p.map(|v| 3.0 * v + 1.0);
            let transformed =
                zero_one(&EvalContext::from_labels(scaled, &labels).unwrap());
            assert_eq!(base, transformed);
        }
    }

    #[test]
    fn catalog_contents_and_lookup() {
        let catalog = builtin_catalog();
        let names = catalog.names();
        assert_eq!(
            names,
            vec!["ce", "cw", "ml", "dlr", "zero_one", "bs1", "bs2", "bs3", "bs4", "bs5"]
        );
        assert!(matches!(
            catalog.get("nonexistent"),
            Err(LossError::NotFound(_))
        ));
        let bs2 = catalog.get("bs2").unwrap();
        assert_eq!(
            bs2.tree().unwrap(),
            &parse("(exp (neg (max (softmax (add p (mul 2 (softmax (mul 5 p))))))))").unwrap()
        );
        let bs4 = catalog.get("bs4").unwrap();
        assert_eq!(
            bs4.tree().unwrap(),
            &parse("(square (sub (softmax (sub (add (softmax (mul 2 p)) p) q)) q))").unwrap()
        );
    }

    #[test]
    fn bs1_saturates_to_exp_ten_on_uniform_logits() {
        let catalog = builtin_catalog();
        let bs1 = catalog.get("bs1").unwrap();
        let c = ctx(&[&[0.0, 0.0]], &[0]);
        let out = expr::eval(bs1.tree().unwrap(), &c).unwrap();
        let e10 = 10f64.exp();
        for &v in out.data() {
            assert!(((v - e10) / e10).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_one_has_no_gradient() {
        let catalog = builtin_catalog();
        let zo = catalog.get("zero_one").unwrap();
        assert!(!zo.supports_grad());
        let c = ctx(&[&[1.0, 0.0]], &[0]);
        assert!(matches!(
            zo.grad_p(&c),
            Err(LossError::GradientUnsupported(_))
        ));
    }

    #[test]
    fn all_catalog_losses_finite_on_bounded_logits() {
        let catalog = builtin_catalog();
        let mut rng = StdRng::seed_from_u64(37);
        for _ in 0..1000 {
            let rows = rng.gen_range(1..4);
            let cols = rng.gen_range(3..6);
            let mut p = BatchMatrix::zeros(rows, cols);
            for i in 0..rows * cols {
                p.data_mut()[i] = rng.gen_range(-20.0..20.0);
            }
            let labels: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..cols as u32)).collect();
            let c = EvalContext::from_labels(p, &labels).unwrap();
            for loss in catalog.iter() {
                let v = loss.value(&c).unwrap();
                assert!(v.is_finite(), "{} value not finite", loss.name());
                if loss.supports_grad() {
                    let g = loss.grad_p(&c).unwrap();
                    assert!(g.all_finite(), "{} gradient not finite", loss.name());
                }
            }
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let catalog = builtin_catalog();
        let mut rng = StdRng::seed_from_u64(41);
        for name in ["ce", "cw", "dlr", "bs1", "bs2", "bs3", "bs4", "bs5"] {
            let loss = catalog.get(name).unwrap();
            let mut checked = 0;
            while checked < 20 {
                let mut p = BatchMatrix::zeros(2, 4);
                for i in 0..8 {
                    p.data_mut()[i] = rng.gen_range(-3.0..3.0);
                }
                let labels = [rng.gen_range(0..4u32), rng.gen_range(0..4u32)];
                let c = EvalContext::from_labels(p.clone(), &labels).unwrap();
                // Margin/sort based losses kink where the top logits tie.
                let gaps_ok = (0..2).all(|r| {
                    let mut row = p.row(r).to_vec();
                    row.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    row.windows(2).all(|w| w[0] - w[1] > 1e-2)
                });
                if !gaps_ok {
                    continue;
                }
                let analytic = loss.grad_p(&c).unwrap();
                let fd = finite_diff_grad(
                    |px| {
                        let cc = EvalContext::from_labels(px.clone(), &labels).unwrap();
                        loss.value(&cc).unwrap()
                    },
                    &p,
                    1e-6,
                )
                .unwrap();
                assert!(
                    grad_rel_err(&analytic, &fd) <= 1e-3,
                    "{name} gradient mismatch"
                );
                checked += 1;
            }
        }
    }
}
