//! Experiment drivers that reproduce the published figures as data tables:
//! the pairwise-average heatmap, interpolation path sweeps, prediction
//! disagreement, the candidate/coefficient ablations, and the output-ensemble
//! comparison.

use rayon::prelude::*;

use crate::baselines::{ensemble_members, output_ensemble};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::imp::ImpRun;
use crate::model::{evaluate, predictions};
use crate::pools::{pool_interpolate, CoefficientPool, PruneMode};
use crate::pruning::prune_to_count;
use crate::store::Checkpoint;
use crate::tensor::lerp;

/// Pairwise-average accuracies over a checkpoint pool. `accuracy[i][j]` is
/// the test accuracy of the two subnetworks' average pruned to the sparser
/// parent's density; the diagonal holds plain checkpoint accuracies.
#[derive(Debug, Clone)]
pub struct Heatmap {
    /// Density of each checkpoint (index = IMP iteration).
    pub densities: Vec<f64>,
    /// Density each cell was evaluated at: min of the parents' densities.
    pub cell_density: Vec<Vec<f64>>,
    pub accuracy: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn size(&self) -> usize {
        self.densities.len()
    }
}

pub fn pairwise_heatmap(run: &ImpRun, test_set: &Dataset) -> Result<Heatmap> {
    let n = run.checkpoints.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let cells: Vec<(usize, usize, f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<(usize, usize, f64, f64)> {
            let ci = &run.checkpoints[i];
            let cj = &run.checkpoints[j];
            if i == j {
                let report = evaluate(&ci.params, None, test_set)?;
                return Ok((i, j, ci.mask.density(), report.accuracy));
            }
            let target_kept = ci.mask.kept_count().min(cj.mask.kept_count());
            let merged = lerp(&ci.params, &cj.params, 0.5)?;
            let (pruned, mask) = prune_to_count(&merged, target_kept)?;
            let report = evaluate(&pruned, None, test_set)?;
            Ok((i, j, mask.density(), report.accuracy))
        })
        .collect::<Result<_>>()?;

    let mut cell_density = vec![vec![0.0; n]; n];
    let mut accuracy = vec![vec![0.0; n]; n];
    for (i, j, d, a) in cells {
        cell_density[i][j] = d;
        cell_density[j][i] = d;
        accuracy[i][j] = a;
        accuracy[j][i] = a;
    }
    Ok(Heatmap {
        densities: run.checkpoints.iter().map(|c| c.mask.density()).collect(),
        cell_density,
        accuracy,
    })
}

/// Mean accuracy over the |i - j| = 1 cells, the statistic behind the
/// rewinding-vs-no-rewinding contrast.
pub fn adjacent_pair_mean(h: &Heatmap) -> f64 {
    let n = h.size();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n.saturating_sub(1) {
        sum += h.accuracy[i][i + 1];
        count += 1;
    }
    sum / count as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub alpha: f64,
    pub test_loss: f64,
    pub test_error: f64,
}

/// Loss/error along the linear path between two checkpoints, alpha in
/// {0.0, 0.1, ..., 1.0}. Alpha weights the first checkpoint, so the alpha = 1
/// row is `a` evaluated as-is and alpha = 0 is `b`; the 9 interior points are
/// pruned to the sparser endpoint's density before evaluation.
pub fn interpolation_path(
    a: &Checkpoint,
    b: &Checkpoint,
    test_set: &Dataset,
) -> Result<Vec<PathPoint>> {
    a.params.ensure_aligned(&b.params)?;
    let target_kept = a.mask.kept_count().min(b.mask.kept_count());
    let steps: Vec<u32> = (0..=10).collect();
    steps
        .par_iter()
        .map(|&k| -> Result<PathPoint> {
            let alpha = f64::from(k as f32 / 10.0);
            let report = if k == 0 {
                evaluate(&b.params, None, test_set)?
            } else if k == 10 {
                evaluate(&a.params, None, test_set)?
            } else {
                let merged = lerp(&a.params, &b.params, alpha)?;
                let (pruned, _) = prune_to_count(&merged, target_kept)?;
                evaluate(&pruned, None, test_set)?
            };
            Ok(PathPoint {
                alpha,
                test_loss: report.mean_loss,
                test_error: 1.0 - report.accuracy,
            })
        })
        .collect()
}

/// `matrix[i][j]` = fraction of test samples where checkpoints i and j
/// predict different classes; zero diagonal, symmetric.
pub fn disagreement_matrix(run: &ImpRun, test_set: &Dataset) -> Result<Vec<Vec<f64>>> {
    let preds: Vec<Vec<usize>> = run
        .checkpoints
        .par_iter()
        .map(|c| predictions(&c.params, None, test_set))
        .collect::<Result<_>>()?;
    let n = preds.len();
    let samples = test_set.len() as f64;
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let differing = preds[i]
                .iter()
                .zip(&preds[j])
                .filter(|(a, b)| a != b)
                .count();
            let frac = differing as f64 / samples;
            matrix[i][j] = frac;
            matrix[j][i] = frac;
        }
    }
    Ok(matrix)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    CandidateCount,
    CoeffCount,
}

impl AblationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AblationMode::CandidateCount => "candidate_count",
            AblationMode::CoeffCount => "coeff_count",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "candidate_count" => Ok(AblationMode::CandidateCount),
            "coeff_count" => Ok(AblationMode::CoeffCount),
            other => Err(Error::Config(format!(
                "unknown ablation mode {other:?} (expected candidate_count or coeff_count)"
            ))),
        }
    }
}

/// Coefficient pool for a coeff-count ablation arm (1, 3, or 7 values).
pub fn coeff_pool_for_arm(arm: usize) -> Result<CoefficientPool> {
    let values: Vec<f64> = match arm {
        1 => vec![0.5],
        3 => vec![0.05, 0.5, 0.95],
        7 => vec![0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95],
        other => {
            return Err(Error::Domain(format!(
                "unknown coefficient-count arm {other} (expected 1, 3, or 7)"
            )))
        }
    };
    CoefficientPool::new(values)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub arm: usize,
    pub t: usize,
    pub density: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Reruns the interpolation recipe across every sparsity level for each arm:
/// candidate-count arms truncate the candidate pool, coefficient-count arms
/// swap the coefficient pool.
pub fn ablate(
    run: &ImpRun,
    mode: AblationMode,
    arms: &[usize],
    val_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<AblationRow>> {
    if arms.is_empty() {
        return Err(Error::Domain("ablation needs at least one arm".into()));
    }
    let mut rows = Vec::new();
    for &arm in arms {
        let (coeffs, limit) = match mode {
            AblationMode::CandidateCount => {
                if arm == 0 || arm > run.t_max() {
                    return Err(Error::Domain(format!(
                        "candidate-count arm {arm} out of range 1..={}",
                        run.t_max()
                    )));
                }
                (CoefficientPool::default_eleven(), Some(arm))
            }
            AblationMode::CoeffCount => (coeff_pool_for_arm(arm)?, None),
        };
        for t in 0..=run.t_max() {
            let res = pool_interpolate(run, t, &coeffs, val_set, PruneMode::During, limit)?;
            let test = evaluate(&res.checkpoint.params, None, test_set)?;
            rows.push(AblationRow {
                mode,
                arm,
                t,
                density: res.checkpoint.mask.density(),
                val_acc: res.val_accuracy,
                test_acc: test.accuracy,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct EnsembleComparisonRow {
    pub t: usize,
    pub density: f64,
    pub pool_test_acc: f64,
    /// Inference cost of the pooled subnetwork: one forward pass.
    pub pool_forward_passes: usize,
    pub ensemble_test_acc: f64,
    /// Inference cost of the output ensemble: one pass per member.
    pub ensemble_forward_passes: usize,
}

/// The ensemble comparison protocol: for every t, pool with the `k - 1` most
/// adjacent checkpoints and ensemble the same members' logits, recording test
/// accuracy and per-sample forward-pass cost for both.
pub fn ensemble_comparison(
    run: &ImpRun,
    val_set: &Dataset,
    test_set: &Dataset,
    k: usize,
) -> Result<Vec<EnsembleComparisonRow>> {
    if k < 2 {
        return Err(Error::Domain("comparison needs at least 2 members".into()));
    }
    let coeffs = CoefficientPool::default_eleven();
    let mut rows = Vec::with_capacity(run.checkpoints.len());
    for t in 0..=run.t_max() {
        let pooled = pool_interpolate(run, t, &coeffs, val_set, PruneMode::During, Some(k - 1))?;
        let pool_test = evaluate(&pooled.checkpoint.params, None, test_set)?;
        let members = ensemble_members(run, t, k)?;
        let member_refs: Vec<&Checkpoint> = members.iter().map(|&i| &run.checkpoints[i]).collect();
        let ens = output_ensemble(&member_refs, test_set)?;
        rows.push(EnsembleComparisonRow {
            t,
            density: run.checkpoints[t].mask.density(),
            pool_test_acc: pool_test.accuracy,
            pool_forward_passes: 1,
            ensemble_test_acc: ens.accuracy,
            ensemble_forward_passes: ens.forward_passes_per_sample,
        });
    }
    Ok(rows)
}
