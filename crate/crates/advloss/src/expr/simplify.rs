//! Conservative algebraic simplification of expression trees.
//!
//! The rewriter runs bottom-up to a fixpoint over a small rule set:
//! constant folding with the exact guarded kernel formulas, the additive
//! and multiplicative identities, double negation, and `|-x| -> |x|`.
//! Rules that only hold with the guard constant set to zero (such as
//! `log(exp(x)) -> x`) are deliberately absent, so simplification never
//! changes what a tree evaluates to.

use super::{ExprTree, Leaf};
use crate::numerics::{OpKind, GAMMA};

/// Static column width of a subtree: `(N, 1)` or the full `(N, C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Width {
    One,
    Cat,
}

fn width(tree: &ExprTree) -> Width {
    match tree {
        ExprTree::Leaf(Leaf::Const(_)) => Width::One,
        ExprTree::Leaf(_) => Width::Cat,
        ExprTree::Op { kind, children } => match kind {
            OpKind::Max | OpKind::Sum => Width::One,
            OpKind::Add | OpKind::Mul => {
                if children.iter().any(|c| width(c) == Width::Cat) {
                    Width::Cat
                } else {
                    Width::One
                }
            }
            _ => width(&children[0]),
        },
    }
}

/// True when the subtree cannot produce non-finite values from finite
/// inputs at sane magnitudes (no overflow-capable kernels inside).
fn overflow_free(tree: &ExprTree) -> bool {
    match tree {
        ExprTree::Leaf(_) => true,
        ExprTree::Op { kind, children } => {
            !matches!(kind, OpKind::Exp | OpKind::Square)
                && children.iter().all(overflow_free)
        }
    }
}

fn const_of(tree: &ExprTree) -> Option<f64> {
    match tree {
        ExprTree::Leaf(Leaf::Const(c)) => Some(*c),
        _ => None,
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fold an operation over constant columns with the exact same scalar
/// arithmetic the forward kernels use.
fn fold(kind: OpKind, a: f64, b: Option<f64>) -> f64 {
    match kind {
        OpKind::Add => a + b.unwrap(),
        OpKind::Mul => a * b.unwrap(),
        OpKind::Neg => -a,
        OpKind::Abs => a.abs(),
        OpKind::Inv => sign(a) / (a.abs() + GAMMA),
        OpKind::Sqrt => sign(a) * (a.abs() + GAMMA).sqrt(),
        OpKind::Square => a * a,
        OpKind::Exp => a.exp(),
        OpKind::Log => sign(a) * (a.abs() + GAMMA).ln(),
        // Row max and row sum of a single column are the value itself.
        OpKind::Max | OpKind::Sum => a,
        // Softmax of a one-element row is exactly 1.
        OpKind::Softmax => 1.0,
    }
}

fn rewrite(tree: &ExprTree) -> ExprTree {
    let (kind, children) = match tree {
        ExprTree::Leaf(_) => return tree.clone(),
        ExprTree::Op { kind, children } => (*kind, children),
    };
    let kids: Vec<ExprTree> = children.iter().map(rewrite).collect();

    // Constant folding.
    if let Some(a) = const_of(&kids[0]) {
        match kind.arity() {
            1 => return ExprTree::constant(fold(kind, a, None)),
            2 => {
                if let Some(b) = const_of(&kids[1]) {
                    return ExprTree::constant(fold(kind, a, Some(b)));
                }
            }
            _ => unreachable!(),
        }
    }

    match kind {
        OpKind::Add => {
            if const_of(&kids[0]) == Some(0.0) {
                return kids[1].clone();
            }
            if const_of(&kids[1]) == Some(0.0) {
                return kids[0].clone();
            }
        }
        OpKind::Mul => {
            if const_of(&kids[0]) == Some(1.0) {
                return kids[1].clone();
            }
            if const_of(&kids[1]) == Some(1.0) {
                return kids[0].clone();
            }
            // x * 0 -> 0 only when the zero keeps the subtree's column
            // width and x cannot hide a non-finite (Inf * 0 is NaN).
            for (zero_side, other_side) in [(0, 1), (1, 0)] {
                if const_of(&kids[zero_side]) == Some(0.0)
                    && width(&kids[other_side]) == Width::One
                    && overflow_free(&kids[other_side])
                {
                    return ExprTree::constant(0.0);
                }
            }
        }
        OpKind::Neg => {
            if let ExprTree::Op {
                kind: OpKind::Neg,
                children: inner,
            } = &kids[0]
            {
                return inner[0].clone();
            }
        }
        OpKind::Abs => {
            if let ExprTree::Op {
                kind: OpKind::Neg,
                children: inner,
            } = &kids[0]
            {
                return ExprTree::unary(OpKind::Abs, inner[0].clone());
            }
        }
        _ => {}
    }

    ExprTree::Op {
        kind,
        children: kids,
    }
}

/// Rewrite to a fixpoint. Every rule strictly shrinks the tree, so this
/// terminates; depth never grows.
pub fn simplify(tree: &ExprTree) -> ExprTree {
    let mut current = tree.clone();
    loop {
        let next = rewrite(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::expr::{eval, parse, random_tree, EvalContext, GrowMethod};
    use crate::numerics::BatchMatrix;

    #[test]
    fn additive_identity() {
        let t = parse("(add p 0)").unwrap();
        assert_eq!(simplify(&t), ExprTree::leaf_p());
        let t = parse("(add 0 q)").unwrap();
        assert_eq!(simplify(&t), ExprTree::leaf_q());
    }

    #[test]
    fn double_negation() {
        let t = parse("(neg (neg p))").unwrap();
        assert_eq!(simplify(&t), ExprTree::leaf_p());
    }

    #[test]
    fn constant_folding_recurses() {
        let t = parse("(mul 1 (add 1 1))").unwrap();
        assert_eq!(simplify(&t), ExprTree::constant(2.0));
        let t = parse("(exp 0)").unwrap();
        assert_eq!(simplify(&t), ExprTree::constant(1.0));
        let t = parse("(softmax 3)").unwrap();
        assert_eq!(simplify(&t), ExprTree::constant(1.0));
    }

    #[test]
    fn guarded_folding_keeps_gamma_semantics() {
        let t = parse("(inv 2)").unwrap();
        let folded = simplify(&t);
        match folded {
            ExprTree::Leaf(Leaf::Const(c)) => {
                assert_eq!(c, 1.0 / (2.0 + GAMMA));
            }
            other => panic!("expected constant, got {other}"),
        }
    }

    #[test]
    fn abs_of_neg() {
        let t = parse("(abs (neg p))").unwrap();
        assert_eq!(simplify(&t), parse("(abs p)").unwrap());
    }

    #[test]
    fn mul_one_identity() {
        let t = parse("(mul (softmax p) 1)").unwrap();
        assert_eq!(simplify(&t), parse("(softmax p)").unwrap());
    }

    #[test]
    fn zero_rule_respects_width() {
        // (N,1)-shaped operand collapses...
        let t = parse("(mul (sum p) 0)").unwrap();
        assert_eq!(simplify(&t), ExprTree::constant(0.0));
        // ...but an (N,C)-shaped operand is kept: the zero's width feeds
        // later aggregation (softmax of an (N,C) zero is not softmax of
        // an (N,1) zero).
        let t = parse("(softmax (mul p 0))").unwrap();
        assert_eq!(simplify(&t), t);
        // Overflow-capable subtrees are kept even at width one.
        let t = parse("(mul (exp (sum p)) 0)").unwrap();
        assert_eq!(simplify(&t), t);
    }

    #[test]
    fn simplify_preserves_semantics_on_random_trees() {
        let mut rng = StdRng::seed_from_u64(31);
        let mut compared = 0;
        for _ in 0..2000 {
            let tree = random_tree(&mut rng, 2, 6, GrowMethod::Grow);
            let simplified = simplify(&tree);
            assert!(simplified.depth() <= tree.depth());
            let mut p = BatchMatrix::zeros(3, 4);
            for i in 0..12 {
                p.data_mut()[i] = rng.gen_range(-5.0..5.0);
            }
            let ctx = EvalContext::from_labels(p, &[0, 3, 1]).unwrap();
            let a = eval(&tree, &ctx).unwrap();
            let b = eval(&simplified, &ctx).unwrap();
            if !a.all_finite() {
                continue;
            }
            // Width-changing rules only fire on (N,1) subtrees, so the
            // shapes agree whenever both evals succeed.
            assert_eq!(a.shape(), b.shape(), "shape changed for {tree}");
            for (x, y) in a.data().iter().zip(b.data()) {
                let denom = x.abs().max(y.abs()).max(1.0);
                assert!(
                    ((x - y) / denom).abs() < 1e-9,
                    "value drift for {tree} -> {simplified}: {x} vs {y}"
                );
            }
            compared += 1;
        }
        assert!(compared > 1500, "too few comparable samples: {compared}");
    }
}
