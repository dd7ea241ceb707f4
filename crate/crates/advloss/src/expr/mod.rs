//! The loss DSL: expression trees over `p`, `q` and constants.
//!
//! A surrogate loss candidate is a tree whose leaves are the model logits
//! `p`, the one-hot labels `q`, or a real constant, and whose internal
//! nodes are the primitive operations of [`crate::numerics::OpKind`].
//! Trees evaluate to a `(N, C)` or `(N, 1)` matrix which [`scalarize`]
//! collapses to the scalar loss `(1/N) * sum_{n,c} o[n,c]`.
//!
//! The module provides evaluation, reverse-mode input gradients, random
//! generation for search, a parenthesized-prefix text format
//! ([`parse`] / `Display`), and conservative algebraic simplification
//! ([`simplify`]).

mod parse;
mod simplify;

pub use parse::{parse, ParseError};
pub use simplify::simplify;

use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::numerics::{apply_op, vjp, BatchMatrix, NumericsError, OpKind};

/// Hard cap on tree depth; no stored tree may exceed it.
pub const MAX_TREE_DEPTH: usize = 25;

/// Terminal node of an expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Leaf {
    /// Model logits, shape `(N, C)`.
    P,
    /// One-hot labels, shape `(N, C)`.
    Q,
    /// Constant, evaluated as an `(N, 1)` column and broadcast by the
    /// consuming operation.
    Const(f64),
}

/// A tree-encoded surrogate loss expression.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprTree {
    Leaf(Leaf),
    Op { kind: OpKind, children: Vec<ExprTree> },
}

/// Path from the root to a node, as child indices. Empty means the root.
pub type NodePath = Vec<usize>;

fn path_string(path: &[usize]) -> String {
    if path.is_empty() {
        "root".to_string()
    } else {
        path.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(".")
    }
}

/// Errors from evaluating or differentiating an expression.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("shape error at node {}: {source}", path_string(path))]
    Shape {
        path: NodePath,
        source: NumericsError,
    },
    #[error("p and q must have identical shapes, got {p:?} and {q:?}")]
    ContextShape {
        p: (usize, usize),
        q: (usize, usize),
    },
    #[error("q row {row} is not one-hot")]
    NotOneHot { row: usize },
}

/// Evaluation context: logits and exactly-one-hot labels of equal shape.
#[derive(Debug, Clone)]
pub struct EvalContext {
    p: BatchMatrix,
    q: BatchMatrix,
}

impl EvalContext {
    /// Validate shapes and the one-hot constraint.
    pub fn new(p: BatchMatrix, q: BatchMatrix) -> Result<Self, ExprError> {
        if p.shape() != q.shape() {
            return Err(ExprError::ContextShape {
                p: p.shape(),
                q: q.shape(),
            });
        }
        for r in 0..q.rows() {
            let ones = q.row(r).iter().filter(|&&v| v == 1.0).count();
            let zeros = q.row(r).iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != q.cols() {
                return Err(ExprError::NotOneHot { row: r });
            }
        }
        Ok(Self { p, q })
    }

    /// Build the one-hot `q` from integer labels. Label values must be
    /// below the number of logit columns.
    pub fn from_labels(p: BatchMatrix, labels: &[u32]) -> Result<Self, ExprError> {
        assert_eq!(labels.len(), p.rows(), "one label per row");
        let mut q = BatchMatrix::zeros(p.rows(), p.cols());
        for (r, &y) in labels.iter().enumerate() {
            assert!(
                (y as usize) < p.cols(),
                "label {y} out of range for {} classes",
                p.cols()
            );
            q.set(r, y as usize, 1.0);
        }
        Ok(Self { p, q })
    }

    pub fn p(&self) -> &BatchMatrix {
        &self.p
    }

    pub fn q(&self) -> &BatchMatrix {
        &self.q
    }

    /// Batch size.
    pub fn batch(&self) -> usize {
        self.p.rows()
    }

    /// Integer label of one row (position of the 1 in `q`).
    pub fn label(&self, row: usize) -> usize {
        self.q.row(row).iter().position(|&v| v == 1.0).unwrap()
    }
}

impl ExprTree {
    pub fn leaf_p() -> Self {
        ExprTree::Leaf(Leaf::P)
    }

    pub fn leaf_q() -> Self {
        ExprTree::Leaf(Leaf::Q)
    }

    pub fn constant(c: f64) -> Self {
        ExprTree::Leaf(Leaf::Const(c))
    }

    pub fn unary(kind: OpKind, child: ExprTree) -> Self {
        debug_assert_eq!(kind.arity(), 1);
        ExprTree::Op {
            kind,
            children: vec![child],
        }
    }

    pub fn binary(kind: OpKind, left: ExprTree, right: ExprTree) -> Self {
        debug_assert_eq!(kind.arity(), 2);
        ExprTree::Op {
            kind,
            children: vec![left, right],
        }
    }

    /// Node count.
    pub fn size(&self) -> usize {
        match self {
            ExprTree::Leaf(_) => 1,
            ExprTree::Op { children, .. } => {
                1 + children.iter().map(ExprTree::size).sum::<usize>()
            }
        }
    }

    /// Depth with the convention `depth(leaf) = 1`.
    pub fn depth(&self) -> usize {
        match self {
            ExprTree::Leaf(_) => 1,
            ExprTree::Op { children, .. } => {
                1 + children.iter().map(ExprTree::depth).max().unwrap_or(0)
            }
        }
    }

    /// True if any leaf is `p`.
    pub fn references_p(&self) -> bool {
        match self {
            ExprTree::Leaf(Leaf::P) => true,
            ExprTree::Leaf(_) => false,
            ExprTree::Op { children, .. } => children.iter().any(ExprTree::references_p),
        }
    }

    /// Subtree at a preorder index (0 is the whole tree).
    pub fn subtree_at(&self, index: usize) -> &ExprTree {
        fn walk<'a>(node: &'a ExprTree, target: usize, counter: &mut usize) -> Option<&'a ExprTree> {
            if *counter == target {
                return Some(node);
            }
            *counter += 1;
            if let ExprTree::Op { children, .. } = node {
                for child in children {
                    if let Some(found) = walk(child, target, counter) {
                        return Some(found);
                    }
                }
            }
            None
        }
        let mut counter = 0;
        walk(self, index, &mut counter).expect("preorder index out of range")
    }

    /// Copy of the tree with the subtree at a preorder index replaced.
    pub fn with_replaced(&self, index: usize, replacement: ExprTree) -> ExprTree {
        fn walk(node: &ExprTree, target: usize, counter: &mut usize, replacement: &ExprTree) -> ExprTree {
            if *counter == target {
                // Skip the whole replaced subtree so later siblings keep
                // their preorder indices.
                *counter += node.size();
                return replacement.clone();
            }
            *counter += 1;
            match node {
                ExprTree::Leaf(l) => ExprTree::Leaf(l.clone()),
                ExprTree::Op { kind, children } => ExprTree::Op {
                    kind: *kind,
                    children: children
                        .iter()
                        .map(|c| walk(c, target, counter, replacement))
                        .collect(),
                },
            }
        }
        assert!(index < self.size(), "preorder index out of range");
        let mut counter = 0;
        walk(self, index, &mut counter, &replacement)
    }
}

/// Evaluate a tree on a context. Shape errors carry the path of the
/// offending subtree.
pub fn eval(tree: &ExprTree, ctx: &EvalContext) -> Result<BatchMatrix, ExprError> {
    let mut path = Vec::new();
    eval_at(tree, ctx, &mut path)
}

fn eval_at(
    tree: &ExprTree,
    ctx: &EvalContext,
    path: &mut NodePath,
) -> Result<BatchMatrix, ExprError> {
    match tree {
        ExprTree::Leaf(Leaf::P) => Ok(ctx.p.clone()),
        ExprTree::Leaf(Leaf::Q) => Ok(ctx.q.clone()),
        ExprTree::Leaf(Leaf::Const(c)) => Ok(BatchMatrix::filled(ctx.batch(), 1, *c)),
        ExprTree::Op { kind, children } => {
            let mut vals = Vec::with_capacity(children.len());
            for (i, child) in children.iter().enumerate() {
                path.push(i);
                vals.push(eval_at(child, ctx, path)?);
                path.pop();
            }
            apply_op(*kind, &vals[0], vals.get(1)).map_err(|source| ExprError::Shape {
                path: path.clone(),
                source,
            })
        }
    }
}

/// Fixed aggregation of a tree output to the scalar loss:
/// mean over rows of row-sums.
pub fn scalarize(output: &BatchMatrix) -> f64 {
    output.mean_of_row_sums()
}

/// Gradient of `scalarize(eval(tree, ctx))` with respect to the logits
/// `p`, computed by reverse traversal over a flattened tape.
pub fn grad_wrt_p(tree: &ExprTree, ctx: &EvalContext) -> Result<BatchMatrix, ExprError> {
    // Preorder flattening: parents precede their descendants, so a
    // descending index sweep runs the forward pass and an ascending sweep
    // runs the backward pass.
    struct Flat<'a> {
        nodes: Vec<&'a ExprTree>,
        children: Vec<Vec<usize>>,
    }

    fn flatten<'a>(node: &'a ExprTree, flat: &mut Flat<'a>) -> usize {
        let idx = flat.nodes.len();
        flat.nodes.push(node);
        flat.children.push(Vec::new());
        if let ExprTree::Op { children, .. } = node {
            for child in children {
                let c = flatten(child, flat);
                flat.children[idx].push(c);
            }
        }
        idx
    }

    let mut flat = Flat {
        nodes: Vec::new(),
        children: Vec::new(),
    };
    flatten(tree, &mut flat);
    let n = flat.nodes.len();

    // Forward pass. On failure, rerun the recursive evaluator to report
    // the error with its node path attached.
    let mut values: Vec<Option<BatchMatrix>> = vec![None; n];
    for i in (0..n).rev() {
        let value = match flat.nodes[i] {
            ExprTree::Leaf(Leaf::P) => ctx.p.clone(),
            ExprTree::Leaf(Leaf::Q) => ctx.q.clone(),
            ExprTree::Leaf(Leaf::Const(c)) => BatchMatrix::filled(ctx.batch(), 1, *c),
            ExprTree::Op { kind, .. } => {
                let kids = &flat.children[i];
                let a = values[kids[0]].as_ref().unwrap();
                let b = kids.get(1).map(|&j| values[j].as_ref().unwrap());
                match apply_op(*kind, a, b) {
                    Ok(v) => v,
                    Err(_) => return Err(eval(tree, ctx).unwrap_err()),
                }
            }
        };
        values[i] = Some(value);
    }

    // Backward pass; each node has exactly one parent, so upstream slots
    // are written once.
    let batch = ctx.batch();
    let root_shape = values[0].as_ref().unwrap().shape();
    let mut upstreams: Vec<Option<BatchMatrix>> = vec![None; n];
    upstreams[0] = Some(BatchMatrix::filled(
        root_shape.0,
        root_shape.1,
        1.0 / batch as f64,
    ));

    let mut grad_p = BatchMatrix::zeros(ctx.p.rows(), ctx.p.cols());
    for i in 0..n {
        let upstream = match upstreams[i].take() {
            Some(u) => u,
            None => continue,
        };
        match flat.nodes[i] {
            ExprTree::Leaf(Leaf::P) => {
                for (g, u) in grad_p.data_mut().iter_mut().zip(upstream.data()) {
                    *g += u;
                }
            }
            ExprTree::Leaf(_) => {}
            ExprTree::Op { kind, .. } => {
                let kids = &flat.children[i];
                let a = values[kids[0]].as_ref().unwrap();
                let b = kids.get(1).map(|&j| values[j].as_ref().unwrap());
                let (ga, gb) = vjp(*kind, a, b, &upstream)
                    .expect("forward pass validated shapes");
                upstreams[kids[0]] = Some(ga);
                if let Some(gb) = gb {
                    upstreams[kids[1]] = Some(gb);
                }
            }
        }
    }
    Ok(grad_p)
}

/// Shorthand: scalar loss of a tree on a context.
pub fn eval_scalar(tree: &ExprTree, ctx: &EvalContext) -> Result<f64, ExprError> {
    Ok(scalarize(&eval(tree, ctx)?))
}

/// True when no intermediate value sits within `margin` of a
/// subgradient kink: inputs to Abs/Inv/Sqrt/Log stay away from zero and
/// Max rows keep a top-two gap. Used to pick honest comparison points
/// for finite-difference checks.
pub fn kink_free(tree: &ExprTree, ctx: &EvalContext, margin: f64) -> bool {
    fn walk(tree: &ExprTree, ctx: &EvalContext, margin: f64) -> Option<BatchMatrix> {
        match tree {
            ExprTree::Leaf(Leaf::P) => Some(ctx.p().clone()),
            ExprTree::Leaf(Leaf::Q) => Some(ctx.q().clone()),
            ExprTree::Leaf(Leaf::Const(c)) => Some(BatchMatrix::filled(ctx.batch(), 1, *c)),
            ExprTree::Op { kind, children } => {
                let mut vals = Vec::new();
                for child in children {
                    vals.push(walk(child, ctx, margin)?);
                }
                let a = &vals[0];
                match kind {
                    OpKind::Abs | OpKind::Inv | OpKind::Sqrt | OpKind::Log => {
                        if a.data().iter().any(|v| v.abs() < margin) {
                            return None;
                        }
                    }
                    OpKind::Max => {
                        for r in 0..a.rows() {
                            let mut row: Vec<f64> = a.row(r).to_vec();
                            row.sort_by(|x, y| y.partial_cmp(x).unwrap());
                            if row.len() > 1 && row[0] - row[1] < margin {
                                return None;
                            }
                        }
                    }
                    _ => {}
                }
                apply_op(*kind, a, vals.get(1)).ok()
            }
        }
    }
    walk(tree, ctx, margin).map_or(false, |out| out.all_finite())
}

/// Tree generation style.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowMethod {
    /// Every root-to-leaf path reaches exactly `max_depth`.
    Full,
    /// Paths may stop early once `min_depth` is reached.
    Grow,
}

const GP_LEAVES: [Leaf; 4] = [Leaf::P, Leaf::Q, Leaf::Const(0.0), Leaf::Const(1.0)];

/// Generate a random tree. Leaves are drawn uniformly from
/// `{p, q, 0, 1}`, operators uniformly from the twelve primitives.
pub fn random_tree<R: Rng>(
    rng: &mut R,
    min_depth: usize,
    max_depth: usize,
    method: GrowMethod,
) -> ExprTree {
    assert!(
        1 <= min_depth && min_depth <= max_depth && max_depth <= MAX_TREE_DEPTH,
        "depth bounds must satisfy 1 <= min <= max <= {MAX_TREE_DEPTH}"
    );
    gen_node(rng, 1, min_depth, max_depth, method)
}

fn random_leaf<R: Rng>(rng: &mut R) -> ExprTree {
    ExprTree::Leaf(GP_LEAVES[rng.gen_range(0..GP_LEAVES.len())].clone())
}

fn gen_node<R: Rng>(
    rng: &mut R,
    depth: usize,
    min_depth: usize,
    max_depth: usize,
    method: GrowMethod,
) -> ExprTree {
    let must_stop = depth == max_depth;
    let may_stop = depth >= min_depth;
    let stop = must_stop
        || match method {
            GrowMethod::Full => false,
            // Terminals vs operators weighted by set size, as in classic
            // grow initialization.
            GrowMethod::Grow => {
                may_stop
                    && rng.gen_range(0..OpKind::ALL.len() + GP_LEAVES.len()) >= OpKind::ALL.len()
            }
        };
    if stop {
        return random_leaf(rng);
    }
    let kind = OpKind::ALL[rng.gen_range(0..OpKind::ALL.len())];
    let children = (0..kind.arity())
        .map(|_| gen_node(rng, depth + 1, min_depth, max_depth, method))
        .collect();
    ExprTree::Op { kind, children }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprTree::Leaf(Leaf::P) => write!(f, "p"),
            ExprTree::Leaf(Leaf::Q) => write!(f, "q"),
            ExprTree::Leaf(Leaf::Const(c)) => write!(f, "{c}"),
            ExprTree::Op { kind, children } => {
                write!(f, "({}", kind.name())?;
                for child in children {
                    write!(f, " {child}")?;
                }
                write!(f, ")")
            }
        }
    }
}
