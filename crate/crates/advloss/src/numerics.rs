//! Dense batch-matrix arithmetic and the primitive operation kernels.
//!
//! Everything in the loss DSL is computed over [`BatchMatrix`] values of
//! shape `(N, C)` or `(N, 1)`: `N` rows of samples, `C` columns of
//! categories. The twelve primitive operations come with both a forward
//! kernel ([`apply_op`]) and a vector-Jacobian product ([`vjp`]) so that
//! expression trees can be differentiated in reverse mode, plus a
//! central-difference checker ([`finite_diff_grad`]) used as the
//! independent gradient oracle in tests.
//!
//! All arithmetic is `f64`. Non-finite values are representable and
//! propagate untouched; callers detect them with
//! [`BatchMatrix::all_finite`] (infeasible expressions are scored zero
//! upstream rather than rejected here).

use thiserror::Error;

/// Small positive constant guarding Inv, Sqrt and Log against the
/// singularity at zero. Shared by every guarded kernel.
pub const GAMMA: f64 = 1e-6;

/// Errors from shape or arity violations in matrix kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix dimensions must be at least 1x1, got {rows}x{cols}")]
    InvalidDimensions { rows: usize, cols: usize },
    #[error("data length {got} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, got: usize },
    #[error("shapes {left:?} and {right:?} are neither equal nor column-broadcastable")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{kind:?} expects {expected} operand(s), got {got}")]
    ArityMismatch {
        kind: OpKind,
        expected: usize,
        got: usize,
    },
    #[error("upstream shape {got:?} does not match forward output {expected:?}")]
    UpstreamShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("finite-difference step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("finite-difference evaluation produced a non-finite value")]
    NonFiniteValue,
}

/// Dense row-major matrix of shape `(rows, cols)`.
///
/// The universal value carrier: inputs, logits, one-hot labels,
/// perturbations and gradients are all `BatchMatrix` values. Instances are
/// immutable in spirit; operations return fresh matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl BatchMatrix {
    /// Build a matrix from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if rows == 0 || cols == 0 {
            return Err(NumericsError::InvalidDimensions { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(NumericsError::DataLength {
                rows,
                cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    /// Matrix with every entry set to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Build from a slice of equally sized rows. Panics on ragged input;
    /// intended for literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty(), "need at least one row");
        let cols = rows[0].len();
        assert!(cols > 0, "need at least one column");
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    /// Row-major view of the underlying data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One row as a slice.
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// True when every entry is finite. Queryable validity predicate;
    /// construction never enforces it.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new matrix.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mean over rows of row-sums: `(1/N) * sum_{n,c} a[n,c]`.
    pub fn mean_of_row_sums(&self) -> f64 {
        let total: f64 = self.data.iter().sum();
        total / self.rows as f64
    }

    /// Index of the row maximum, ties broken toward the lowest index.
    pub fn row_argmax(&self, row: usize) -> usize {
        let r = self.row(row);
        let mut best = 0;
        for (i, &v) in r.iter().enumerate().skip(1) {
            if v > r[best] {
                best = i;
            }
        }
        best
    }

    /// Sum each row of an `(N, C)` matrix down to an `(N, 1)` column.
    pub fn row_sums(&self) -> Self {
        let data = (0..self.rows)
            .map(|r| self.row(r).iter().sum())
            .collect();
        Self {
            rows: self.rows,
            cols: 1,
            data,
        }
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

/// The twelve primitive operations.
///
/// Add and Mul are binary; everything else is unary. Max and Sum reduce
/// the column dimension to 1, Softmax preserves it; the remaining
/// operations are elementwise. Inv, Sqrt and Log are sign-guarded with
/// [`GAMMA`]:
///
/// ```text
/// Inv(a)  = sign(a) / (|a| + GAMMA)
/// Sqrt(a) = sign(a) * sqrt(|a| + GAMMA)
/// Log(a)  = sign(a) * ln(|a| + GAMMA)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Mul,
    Neg,
    Abs,
    Inv,
    Sqrt,
    Square,
    Exp,
    Log,
    Max,
    Sum,
    Softmax,
}

impl OpKind {
    /// Number of operands the operation takes.
    pub fn arity(self) -> usize {
        match self {
            OpKind::Add | OpKind::Mul => 2,
            _ => 1,
        }
    }

    /// All operations, in the canonical order used for uniform sampling.
    pub const ALL: [OpKind; 12] = [
        OpKind::Add,
        OpKind::Mul,
        OpKind::Neg,
        OpKind::Abs,
        OpKind::Inv,
        OpKind::Sqrt,
        OpKind::Square,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Max,
        OpKind::Sum,
        OpKind::Softmax,
    ];

    /// Lowercase name used by the expression grammar.
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Neg => "neg",
            OpKind::Abs => "abs",
            OpKind::Inv => "inv",
            OpKind::Sqrt => "sqrt",
            OpKind::Square => "square",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Max => "max",
            OpKind::Sum => "sum",
            OpKind::Softmax => "softmax",
        }
    }
}

/// Shapes are combinable when equal, or when one side has a single column
/// that broadcasts across the other's columns. Returns the output shape.
fn broadcast_shape(
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize), NumericsError> {
    if a.0 != b.0 {
        return Err(NumericsError::ShapeMismatch { left: a, right: b });
    }
    if a.1 == b.1 {
        Ok(a)
    } else if a.1 == 1 {
        Ok(b)
    } else if b.1 == 1 {
        Ok(a)
    } else {
        Err(NumericsError::ShapeMismatch { left: a, right: b })
    }
}

fn binary_elementwise(
    a: &BatchMatrix,
    b: &BatchMatrix,
    f: impl Fn(f64, f64) -> f64,
) -> Result<BatchMatrix, NumericsError> {
    let (rows, cols) = broadcast_shape(a.shape(), b.shape())?;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let av = a.get(r, if a.cols == 1 { 0 } else { c });
            let bv = b.get(r, if b.cols == 1 { 0 } else { c });
            data.push(f(av, bv));
        }
    }
    Ok(BatchMatrix { rows, cols, data })
}

fn check_arity(kind: OpKind, b: Option<&BatchMatrix>) -> Result<(), NumericsError> {
    let got = 1 + usize::from(b.is_some());
    if got != kind.arity() {
        return Err(NumericsError::ArityMismatch {
            kind,
            expected: kind.arity(),
            got,
        });
    }
    Ok(())
}

/// Numerically stable row softmax.
fn softmax_rows(a: &BatchMatrix) -> BatchMatrix {
    let mut out = BatchMatrix::zeros(a.rows, a.cols);
    for r in 0..a.rows {
        let row = a.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (c, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out.set(r, c, e);
            denom += e;
        }
        for c in 0..a.cols {
            out.set(r, c, out.get(r, c) / denom);
        }
    }
    out
}

/// Apply one primitive operation.
///
/// Binary operations broadcast an `(N, 1)` operand across the columns of
/// an `(N, C)` one. Max and Sum reduce each row to a single column
/// (output `(N, 1)`); Softmax returns the full `(N, C)` row distribution.
pub fn apply_op(
    kind: OpKind,
    a: &BatchMatrix,
    b: Option<&BatchMatrix>,
) -> Result<BatchMatrix, NumericsError> {
    check_arity(kind, b)?;
    match kind {
        OpKind::Add => binary_elementwise(a, b.unwrap(), |x, y| x + y),
        OpKind::Mul => binary_elementwise(a, b.unwrap(), |x, y| x * y),
        OpKind::Neg => Ok(a.map(|x| -x)),
        OpKind::Abs => Ok(a.map(f64::abs)),
        OpKind::Inv => Ok(a.map(|x| sign(x) / (x.abs() + GAMMA))),
        OpKind::Sqrt => Ok(a.map(|x| sign(x) * (x.abs() + GAMMA).sqrt())),
        OpKind::Square => Ok(a.map(|x| x * x)),
        OpKind::Exp => Ok(a.map(f64::exp)),
        OpKind::Log => Ok(a.map(|x| sign(x) * (x.abs() + GAMMA).ln())),
        OpKind::Max => {
            let data = (0..a.rows)
                .map(|r| a.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            Ok(BatchMatrix {
                rows: a.rows,
                cols: 1,
                data,
            })
        }
        OpKind::Sum => Ok(a.row_sums()),
        OpKind::Softmax => Ok(softmax_rows(a)),
    }
}

/// Collapse a gradient computed at the broadcast shape back onto an
/// operand: `(N, 1)` operands receive the row-sum of the wide gradient.
fn reduce_to_operand(grad: &BatchMatrix, operand_shape: (usize, usize)) -> BatchMatrix {
    if grad.shape() == operand_shape {
        grad.clone()
    } else {
        debug_assert_eq!(operand_shape.1, 1);
        grad.row_sums()
    }
}

/// Vector-Jacobian products of [`apply_op`].
///
/// Given the upstream gradient of a scalar objective with respect to the
/// operation output, returns the gradient with respect to each input.
/// Subgradient conventions: `sign` is treated as locally constant
/// (so the guarded kernels differentiate with the sign frozen and get
/// slope 0 at the origin), `d|a|/da = 0` at `a = 0`, and Max routes its
/// gradient to the first maximal element of each row.
pub fn vjp(
    kind: OpKind,
    a: &BatchMatrix,
    b: Option<&BatchMatrix>,
    upstream: &BatchMatrix,
) -> Result<(BatchMatrix, Option<BatchMatrix>), NumericsError> {
    check_arity(kind, b)?;
    let out_shape = match kind {
        OpKind::Add | OpKind::Mul => broadcast_shape(a.shape(), b.unwrap().shape())?,
        OpKind::Max | OpKind::Sum => (a.rows, 1),
        _ => a.shape(),
    };
    if upstream.shape() != out_shape {
        return Err(NumericsError::UpstreamShape {
            expected: out_shape,
            got: upstream.shape(),
        });
    }

    // Elementwise local derivative against `a`, evaluated at the broadcast
    // shape and reduced back onto the operand afterwards.
    let unary = |local: &dyn Fn(f64) -> f64| -> BatchMatrix {
        let mut g = BatchMatrix::zeros(a.rows, a.cols);
        for r in 0..a.rows {
            for c in 0..a.cols {
                g.set(r, c, upstream.get(r, c) * local(a.get(r, c)));
            }
        }
        g
    };

    match kind {
        OpKind::Add => {
            let b = b.unwrap();
            let ga = reduce_to_operand(upstream, a.shape());
            let gb = reduce_to_operand(upstream, b.shape());
            Ok((ga, Some(gb)))
        }
        OpKind::Mul => {
            let b = b.unwrap();
            let wide_a = binary_elementwise(upstream, b, |u, y| u * y)?;
            let wide_b = binary_elementwise(upstream, a, |u, x| u * x)?;
            Ok((
                reduce_to_operand(&wide_a, a.shape()),
                Some(reduce_to_operand(&wide_b, b.shape())),
            ))
        }
        OpKind::Neg => Ok((unary(&|_| -1.0), None)),
        OpKind::Abs => Ok((unary(&sign), None)),
        OpKind::Inv => Ok((
            unary(&|x| {
                let s = sign(x);
                let d = x.abs() + GAMMA;
                -s * s / (d * d)
            }),
            None,
        )),
        OpKind::Sqrt => Ok((
            unary(&|x| {
                let s = sign(x);
                s * s / (2.0 * (x.abs() + GAMMA).sqrt())
            }),
            None,
        )),
        OpKind::Square => Ok((unary(&|x| 2.0 * x), None)),
        OpKind::Exp => Ok((unary(&f64::exp), None)),
        OpKind::Log => Ok((
            unary(&|x| {
                let s = sign(x);
                s * s / (x.abs() + GAMMA)
            }),
            None,
        )),
        OpKind::Max => {
            let mut g = BatchMatrix::zeros(a.rows, a.cols);
            for r in 0..a.rows {
                g.set(r, a.row_argmax(r), upstream.get(r, 0));
            }
            Ok((g, None))
        }
        OpKind::Sum => {
            let mut g = BatchMatrix::zeros(a.rows, a.cols);
            for r in 0..a.rows {
                for c in 0..a.cols {
                    g.set(r, c, upstream.get(r, 0));
                }
            }
            Ok((g, None))
        }
        OpKind::Softmax => {
            let s = softmax_rows(a);
            let mut g = BatchMatrix::zeros(a.rows, a.cols);
            for r in 0..a.rows {
                let dot: f64 = (0..a.cols)
                    .map(|c| upstream.get(r, c) * s.get(r, c))
                    .sum();
                for c in 0..a.cols {
                    g.set(r, c, s.get(r, c) * (upstream.get(r, c) - dot));
                }
            }
            Ok((g, None))
        }
    }
}

/// Central-difference gradient of a scalar function of a matrix:
/// `(func(x + h e) - func(x - h e)) / (2 h)` per coordinate.
///
/// The independent oracle used to validate [`vjp`] and every analytic
/// gradient built on top of it. Fails if any probe produces a non-finite
/// estimate.
pub fn finite_diff_grad<F>(
    mut func: F,
    at: &BatchMatrix,
    h: f64,
) -> Result<BatchMatrix, NumericsError>
where
    F: FnMut(&BatchMatrix) -> f64,
{
    if h <= 0.0 {
        return Err(NumericsError::NonPositiveStep(h));
    }
    let mut grad = BatchMatrix::zeros(at.rows(), at.cols());
    let mut probe = at.clone();
    for i in 0..at.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let plus = func(&probe);
        probe.data[i] = orig - h;
        let minus = func(&probe);
        probe.data[i] = orig;
        let d = (plus - minus) / (2.0 * h);
        if !d.is_finite() {
            return Err(NumericsError::NonFiniteValue);
        }
        grad.data[i] = d;
    }
    Ok(grad)
}

/// Matrix-level relative error between two gradients: the largest
/// elementwise deviation divided by the largest magnitude present.
///
/// Gradients whose largest magnitude sits below 1e-8 compare as equal:
/// central differences at the step sizes used here cannot resolve
/// anything finer (a constant expression evaluated in floating point
/// leaves ~1e-11 of pure cancellation noise).
pub fn grad_rel_err(analytic: &BatchMatrix, reference: &BatchMatrix) -> f64 {
    assert_eq!(analytic.shape(), reference.shape(), "gradient shape mismatch");
    let mut max_dev: f64 = 0.0;
    let mut max_mag: f64 = 0.0;
    for (a, r) in analytic.data().iter().zip(reference.data()) {
        max_dev = max_dev.max((a - r).abs());
        max_mag = max_mag.max(a.abs()).max(r.abs());
    }
    if max_mag <= 1e-8 {
        0.0
    } else {
        max_dev / max_mag
    }
}
