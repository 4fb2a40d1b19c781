//! Greedy sparsity-preserving weight interpolation over an IMP checkpoint
//! pool, plus the fixed-0.5 averaging variant and dense strengthening.
//!
//! For a target checkpoint t the candidates are all other checkpoints sorted
//! by adjacency |i - t| (lower index first on ties, so t-1 precedes t+1). For
//! each candidate the best coefficient is searched over a fixed pool; the
//! interpolated network is pruned back to the target density ("prune during",
//! the default) and kept only if its validation accuracy does not decrease.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::imp::ImpRun;
use crate::model::evaluate;
use crate::pruning::{prune_to_count, Mask};
use crate::store::{Checkpoint, CheckpointMeta};
use crate::tensor::{lerp, ParamSet};

/// The 11 coefficients used by the main experiments.
pub const DEFAULT_COEFFS: [f64; 11] = [
    0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95,
];

/// Ordered interpolation coefficients, all in (0, 1), no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPool {
    values: Vec<f64>,
}

impl CoefficientPool {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("coefficient pool is empty".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Domain(format!(
                    "coefficient {v} must lie in (0, 1)"
                )));
            }
            if values[..i].contains(&v) {
                return Err(Error::Domain(format!("duplicate coefficient {v}")));
            }
        }
        Ok(Self { values })
    }

    pub fn default_eleven() -> Self {
        Self {
            values: DEFAULT_COEFFS.to_vec(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Candidate checkpoint indices in adjacency order around the target.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    indices: Vec<usize>,
}

impl CandidatePool {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// All checkpoints except `t`, sorted ascending by |i - t| with lower index
/// first on ties, truncated to `limit` when given.
pub fn order_candidates(run: &ImpRun, t: usize, limit: Option<usize>) -> Result<CandidatePool> {
    let t_max = run.t_max();
    if t > t_max {
        return Err(Error::Domain(format!(
            "target iteration {t} out of range for run with T = {t_max}"
        )));
    }
    let mut indices: Vec<usize> = (0..=t_max).filter(|&i| i != t).collect();
    indices.sort_by_key(|&i| (i.abs_diff(t), i));
    if let Some(l) = limit {
        if l > indices.len() {
            return Err(Error::Domain(format!(
                "candidate limit {l} exceeds pool size {}",
                indices.len()
            )));
        }
        indices.truncate(l);
    }
    Ok(CandidatePool { indices })
}

/// Whether pruning back to the target density happens inside each greedy step
/// or once at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneMode {
    During,
    After,
}

impl PruneMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PruneMode::During => "during",
            PruneMode::After => "after",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "during" => Ok(PruneMode::During),
            "after" => Ok(PruneMode::After),
            other => Err(Error::Config(format!(
                "unknown prune mode {other:?} (expected during or after)"
            ))),
        }
    }
}

/// One greedy step, logged per candidate.
#[derive(Debug, Clone, Serialize)]
pub struct SearchStep {
    pub candidate: usize,
    pub alpha: f64,
    pub val_acc_before: f64,
    pub val_acc_after: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct GreedyOutcome {
    pub params: ParamSet,
    pub mask: Mask,
    /// Score of the returned network under the search's scoring function.
    pub score: f64,
    pub log: Vec<SearchStep>,
}

/// The greedy search engine, generic over the scoring function so tests can
/// drive it with synthetic oracles.
///
/// For each candidate in order: pick the coefficient maximizing
/// `score(prune(lerp(best, candidate, alpha)))` (ties go to the earlier
/// coefficient), then accept the interpolated network iff its score is >= the
/// incumbent's. Coefficient evaluations are independent and run in parallel;
/// the argmax is taken over the collected scores in pool order, so the result
/// does not depend on completion order.
pub fn greedy_pool_search<S>(
    start_params: &ParamSet,
    start_mask: &Mask,
    candidates: &[(usize, &ParamSet)],
    coeffs: &CoefficientPool,
    mode: PruneMode,
    score: &S,
) -> Result<GreedyOutcome>
where
    S: Fn(&ParamSet) -> Result<f64> + Sync,
{
    start_mask.ensure_aligned_with(start_params)?;
    let target_kept = start_mask.kept_count();
    let mut best_params = start_params.clone();
    let mut best_mask = start_mask.clone();
    let mut best_score = score(&best_params)?;
    let mut log = Vec::with_capacity(candidates.len());

    for &(index, candidate) in candidates {
        let alpha_scores: Vec<f64> = coeffs
            .values()
            .par_iter()
            .map(|&alpha| -> Result<f64> {
                let merged = lerp(&best_params, candidate, alpha)?;
                match mode {
                    PruneMode::During => score(&prune_to_count(&merged, target_kept)?.0),
                    PruneMode::After => score(&merged),
                }
            })
            .collect::<Result<_>>()?;

        let mut best_alpha_idx = 0;
        for (i, &s) in alpha_scores.iter().enumerate() {
            if s > alpha_scores[best_alpha_idx] {
                best_alpha_idx = i;
            }
        }
        let alpha = coeffs.values()[best_alpha_idx];
        let cand_score = alpha_scores[best_alpha_idx];

        let accepted = cand_score >= best_score;
        log.push(SearchStep {
            candidate: index,
            alpha,
            val_acc_before: best_score,
            val_acc_after: cand_score,
            accepted,
        });
        if accepted {
            let merged = lerp(&best_params, candidate, alpha)?;
            match mode {
                PruneMode::During => {
                    let (pruned, mask) = prune_to_count(&merged, target_kept)?;
                    best_params = pruned;
                    best_mask = mask;
                }
                PruneMode::After => best_params = merged,
            }
            best_score = cand_score;
        }
    }

    if mode == PruneMode::After {
        let (pruned, mask) = prune_to_count(&best_params, target_kept)?;
        best_params = pruned;
        best_mask = mask;
        best_score = score(&best_params)?;
    }

    Ok(GreedyOutcome {
        params: best_params,
        mask: best_mask,
        score: best_score,
        log,
    })
}

/// A pooled checkpoint plus the search trace that produced it.
#[derive(Debug, Clone)]
pub struct PoolResult {
    pub checkpoint: Checkpoint,
    /// Validation accuracy of the returned checkpoint.
    pub val_accuracy: f64,
    pub log: Vec<SearchStep>,
}

fn pooled_checkpoint(base_meta: &CheckpointMeta, outcome: GreedyOutcome) -> PoolResult {
    let meta = CheckpointMeta {
        density: outcome.mask.density(),
        ..base_meta.clone()
    };
    PoolResult {
        checkpoint: Checkpoint {
            params: outcome.params,
            mask: outcome.mask,
            meta,
        },
        val_accuracy: outcome.score,
        log: outcome.log,
    }
}

/// The interpolation recipe: greedy search over candidates and coefficients,
/// accepting on validation accuracy, preserving the target's density.
pub fn pool_interpolate(
    run: &ImpRun,
    t: usize,
    coeffs: &CoefficientPool,
    val_set: &Dataset,
    mode: PruneMode,
    limit: Option<usize>,
) -> Result<PoolResult> {
    let pool = order_candidates(run, t, limit)?;
    let target = run.checkpoint(t)?;
    let candidates: Vec<(usize, &ParamSet)> = pool
        .indices()
        .iter()
        .map(|&i| (i, &run.checkpoints[i].params))
        .collect();
    let score = |p: &ParamSet| evaluate(p, None, val_set).map(|r| r.accuracy);
    let outcome = greedy_pool_search(
        &target.params,
        &target.mask,
        &candidates,
        coeffs,
        mode,
        &score,
    )?;
    Ok(pooled_checkpoint(&target.meta, outcome))
}

/// The averaging recipe: the same greedy loop with the single coefficient 0.5.
pub fn pool_average(run: &ImpRun, t: usize, val_set: &Dataset) -> Result<PoolResult> {
    let half = CoefficientPool::new(vec![0.5])?;
    pool_interpolate(run, t, &half, val_set, PruneMode::During, None)
}

/// Strengthens the trained dense network (t = 0, density 1, so the pruning
/// step is the identity).
pub fn strengthen_dense(
    run: &ImpRun,
    coeffs: &CoefficientPool,
    val_set: &Dataset,
) -> Result<PoolResult> {
    let dense = run.checkpoint(0)?;
    if dense.mask.density() < 1.0 {
        return Err(Error::Domain(format!(
            "checkpoint 0 has density {}, expected the dense network",
            dense.mask.density()
        )));
    }
    pool_interpolate(run, 0, coeffs, val_set, PruneMode::During, None)
}
