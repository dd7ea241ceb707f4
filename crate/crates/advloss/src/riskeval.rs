//! Risk evaluation: attack-approximated risk, a brute-force grid oracle
//! for tiny input spaces, the gap between them, and local loss
//! landscapes.
//!
//! The approximated risk runs PGD per fixed-size block of samples with a
//! block-derived seed, so the result is independent of worker count and
//! of how callers partition the dataset.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::attack::{pgd, AttackError, AttackSpec};
use crate::expr::{EvalContext, ExprError};
use crate::losses::{zero_one, LossError, SurrogateLoss};
use crate::model::{Dataset, MlpModel, ModelError};
use crate::numerics::BatchMatrix;
use crate::seeds::derive_seed;

/// Samples per attack block. Fixed so that partitioning across workers
/// can never change which seed a sample sees.
const BLOCK: usize = 64;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid oracle supports at most 3 input dimensions, got {0}")]
    DimensionTooLarge(usize),
    #[error("anchor shape {got:?} does not match input shape {expected:?}")]
    AnchorShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Outcome of one risk evaluation.
#[derive(Debug, Clone)]
pub struct RiskReport {
    pub loss_name: String,
    pub n_samples: usize,
    pub clean_accuracy: f64,
    /// `1 - r_double_prime`, stored as the exact complement.
    pub adversarial_accuracy: f64,
    pub r_double_prime: f64,
    pub attack_summary: String,
    /// Count of samples frozen by non-finite gradients during the attack.
    pub frozen_samples: usize,
}

impl RiskReport {
    pub fn csv_header() -> &'static str {
        "loss,n_samples,clean_accuracy,adversarial_accuracy,r_double_prime,frozen_samples,attack"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{},{}",
            self.loss_name,
            self.n_samples,
            self.clean_accuracy,
            self.adversarial_accuracy,
            self.r_double_prime,
            self.frozen_samples,
            self.attack_summary
        )
    }
}

/// Attack-approximated risk: run PGD with the surrogate, score the 0-1
/// loss on the final iterates, and average over the dataset.
pub fn approx_risk(
    model: &MlpModel,
    loss: &SurrogateLoss,
    dataset: &Dataset,
    spec: &AttackSpec,
) -> Result<RiskReport, RiskError> {
    spec.validate()?;
    let n = dataset.n_samples();

    let logits = model.forward(dataset.features())?;
    let clean_ctx = EvalContext::from_labels(logits, dataset.labels())?;
    let clean_error = zero_one(&clean_ctx);

    let block_starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    let block_results: Vec<(usize, usize)> = block_starts
        .par_iter()
        .map(|&start| -> Result<(usize, usize), RiskError> {
            let end = (start + BLOCK).min(n);
            let indices: Vec<usize> = (start..end).collect();
            let block = dataset.subset(&indices);
            let block_spec = AttackSpec {
                seed: derive_seed(spec.seed, (start / BLOCK) as u64),
                ..spec.clone()
            };
            let result = pgd(model, loss, block.features(), block.labels(), &block_spec)?;
            let errors = result.success_mask.iter().filter(|&&s| s).count();
            let frozen = result.frozen_mask.iter().filter(|&&f| f).count();
            Ok((errors, frozen))
        })
        .collect::<Result<_, _>>()?;

    let errors: usize = block_results.iter().map(|(e, _)| e).sum();
    let frozen: usize = block_results.iter().map(|(_, f)| f).sum();
    let r_double_prime = errors as f64 / n as f64;

    Ok(RiskReport {
        loss_name: loss.name().to_string(),
        n_samples: n,
        clean_accuracy: 1.0 - clean_error,
        adversarial_accuracy: 1.0 - r_double_prime,
        r_double_prime,
        attack_summary: spec.summary(),
        frozen_samples: frozen,
    })
}

/// Exhaustive lattice lower bound on the true risk for inputs of at most
/// three dimensions.
///
/// Each sample is scored over the `(2*grid_steps+1)^d` L-infinity lattice
/// spanning `[-eps, eps]^d`, keeping only points inside the `[0,1]^d`
/// box; one misclassified lattice point marks the sample as an error.
pub fn grid_oracle_risk(
    model: &MlpModel,
    dataset: &Dataset,
    epsilon: f64,
    grid_steps: usize,
) -> Result<f64, RiskError> {
    let dim = dataset.input_dim();
    if dim > 3 {
        return Err(RiskError::DimensionTooLarge(dim));
    }
    if grid_steps < 3 {
        return Err(RiskError::InvalidParameter(
            "grid_steps must be at least 3".into(),
        ));
    }
    if epsilon < 0.0 {
        return Err(RiskError::InvalidParameter("epsilon must be >= 0".into()));
    }

    let side = 2 * grid_steps + 1;
    let unit = epsilon / grid_steps as f64;
    let offsets: Vec<f64> = (0..side)
        .map(|j| (j as f64 - grid_steps as f64) * unit)
        .collect();

    let errors: usize = (0..dataset.n_samples())
        .into_par_iter()
        .map(|i| -> Result<usize, RiskError> {
            let base = dataset.features().row(i);
            let label = dataset.labels()[i] as usize;
            let mut points = Vec::new();
            let mut idx = vec![0usize; dim];
            'outer: loop {
                let mut candidate = Vec::with_capacity(dim);
                let mut inside = true;
                for d in 0..dim {
                    let v = base[d] + offsets[idx[d]];
                    if !(0.0..=1.0).contains(&v) {
                        inside = false;
                        break;
                    }
                    candidate.push(v);
                }
                if inside {
                    points.extend_from_slice(&candidate);
                }
                // Odometer increment over the lattice.
                for d in 0..dim {
                    idx[d] += 1;
                    if idx[d] < side {
                        continue 'outer;
                    }
                    idx[d] = 0;
                }
                break;
            }
            let count = points.len() / dim;
            let batch = BatchMatrix::new(count, dim, points)
                .expect("clean point is always inside the box");
            let logits = model.forward(&batch)?;
            let misclassified = (0..count).any(|r| logits.row_argmax(r) != label);
            Ok(usize::from(misclassified))
        })
        .collect::<Result<Vec<usize>, _>>()?
        .into_iter()
        .sum();

    Ok(errors as f64 / dataset.n_samples() as f64)
}

/// Signed gap between the oracle risk and the attack-approximated risk.
/// Slightly negative values can only come from grid undercoverage.
pub fn approximation_error(oracle_risk: f64, r_double_prime: f64) -> f64 {
    oracle_risk - r_double_prime
}

/// Loss values over the plane spanned by two adversarial directions.
#[derive(Debug, Clone)]
pub struct LandscapeGrid {
    pub loss_name: String,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `values[i][j]` is the loss at `(alphas[i], betas[j])`.
    pub values: Vec<Vec<f64>>,
}

/// Evaluate each loss at `clamp(x + alpha*(x_hc - x) + beta*(x_bs - x))`
/// over a `resolution x resolution` lattice covering `[0,1]^2`.
pub fn landscape_grid(
    model: &MlpModel,
    losses: &[&SurrogateLoss],
    x: &BatchMatrix,
    labels: &[u32],
    x_adv_hc: &BatchMatrix,
    x_adv_bs: &BatchMatrix,
    resolution: usize,
) -> Result<Vec<LandscapeGrid>, RiskError> {
    if resolution < 2 {
        return Err(RiskError::InvalidParameter(
            "resolution must be at least 2".into(),
        ));
    }
    for anchor in [x_adv_hc, x_adv_bs] {
        if anchor.shape() != x.shape() {
            return Err(RiskError::AnchorShape {
                expected: x.shape(),
                got: anchor.shape(),
            });
        }
    }

    let ticks: Vec<f64> = (0..resolution)
        .map(|i| i as f64 / (resolution - 1) as f64)
        .collect();
    let mut grids: Vec<LandscapeGrid> = losses
        .iter()
        .map(|l| LandscapeGrid {
            loss_name: l.name().to_string(),
            alphas: ticks.clone(),
            betas: ticks.clone(),
            values: vec![vec![0.0; resolution]; resolution],
        })
        .collect();

    for (i, &alpha) in ticks.iter().enumerate() {
        for (j, &beta) in ticks.iter().enumerate() {
            let mut point = x.clone();
            for r in 0..x.rows() {
                for c in 0..x.cols() {
                    let base = x.get(r, c);
                    let v = base
                        + alpha * (x_adv_hc.get(r, c) - base)
                        + beta * (x_adv_bs.get(r, c) - base);
                    point.set(r, c, v.clamp(0.0, 1.0));
                }
            }
            let logits = model.forward(&point)?;
            let ctx = EvalContext::from_labels(logits, labels)?;
            for (grid, loss) in grids.iter_mut().zip(losses) {
                grid.values[i][j] = loss.value(&ctx)?;
            }
        }
    }
    Ok(grids)
}

/// Anchor pair for the landscape: an unsuccessful attack from the
/// handcrafted loss and a successful one from the searched loss.
#[derive(Debug, Clone)]
pub struct LandscapeAnchors {
    pub sample_index: usize,
    pub x: BatchMatrix,
    pub label: u32,
    pub x_adv_hc: BatchMatrix,
    pub x_adv_bs: BatchMatrix,
}

/// Scan the dataset for a correctly classified sample where the
/// handcrafted loss fails to flip the prediction but the searched loss
/// succeeds (`f(x_hc) = y` and `f(x_bs) != y`).
pub fn find_landscape_anchors(
    model: &MlpModel,
    hc_loss: &SurrogateLoss,
    bs_loss: &SurrogateLoss,
    dataset: &Dataset,
    spec: &AttackSpec,
) -> Result<Option<LandscapeAnchors>, RiskError> {
    let logits = model.forward(dataset.features())?;
    for i in 0..dataset.n_samples() {
        let label = dataset.labels()[i];
        if logits.row_argmax(i) != label as usize {
            continue;
        }
        let sample = dataset.subset(&[i]);
        let row_spec = AttackSpec {
            seed: derive_seed(spec.seed, i as u64),
            ..spec.clone()
        };
        let hc = pgd(model, hc_loss, sample.features(), sample.labels(), &row_spec)?;
        if hc.success_mask[0] {
            continue;
        }
        let bs = pgd(model, bs_loss, sample.features(), sample.labels(), &row_spec)?;
        if !bs.success_mask[0] {
            continue;
        }
        return Ok(Some(LandscapeAnchors {
            sample_index: i,
            x: sample.features().clone(),
            label,
            x_adv_hc: hc.x_adv,
            x_adv_bs: bs.x_adv,
        }));
    }
    Ok(None)
}

/// Write one landscape as CSV: the header row carries beta values, the
/// leading column alpha values, all at six decimals.
pub fn write_landscape_csv(grid: &LandscapeGrid, mut out: impl Write) -> std::io::Result<()> {
    write!(out, "alpha_beta")?;
    for beta in &grid.betas {
        write!(out, ",{beta:.6}")?;
    }
    writeln!(out)?;
    for (i, alpha) in grid.alphas.iter().enumerate() {
        write!(out, "{alpha:.6}")?;
        for v in &grid.values[i] {
            write!(out, ",{v:.6}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Convenience wrapper writing `landscape_<loss>.csv` files into a
/// directory; returns the created paths.
pub fn write_landscape_files(
    grids: &[LandscapeGrid],
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>, RiskError> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for grid in grids {
        let path = dir.join(format!("landscape_{}.csv", grid.loss_name));
        let file = std::fs::File::create(&path)?;
        write_landscape_csv(grid, std::io::BufWriter::new(file))?;
        paths.push(path);
    }
    Ok(paths)
}
