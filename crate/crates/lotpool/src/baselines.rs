//! Weight-averaging baselines (sparsity-adapted SWA and EMA) and the output
//! (logit) ensemble.
//!
//! Both averaging baselines traverse candidates in the same adjacency order
//! as the pooling recipes and absorb unconditionally — no validation-accuracy
//! acceptance test — which is exactly what separates them from the greedy
//! search.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::imp::ImpRun;
use crate::model::{dataset_logits, evaluate};
use crate::pools::order_candidates;
use crate::pruning::prune_to_count;
use crate::store::{Checkpoint, CheckpointMeta};
use crate::tensor::{scale_add, ParamSet};

/// Running arithmetic mean with the 1/(n+1) update rule.
#[derive(Debug, Clone)]
pub struct SwaState {
    running_mean: ParamSet,
    n: usize,
}

impl SwaState {
    /// Starts the average with one absorbed model.
    pub fn new(initial: ParamSet) -> Self {
        Self {
            running_mean: initial,
            n: 1,
        }
    }

    /// `mean <- n/(n+1) * mean + 1/(n+1) * x`.
    pub fn absorb(&mut self, x: &ParamSet) -> Result<()> {
        let n = self.n as f64;
        self.running_mean = scale_add(&self.running_mean, x, n / (n + 1.0), 1.0 / (n + 1.0))?;
        self.n += 1;
        Ok(())
    }

    pub fn mean(&self) -> &ParamSet {
        &self.running_mean
    }

    /// Number of models absorbed so far.
    pub fn count(&self) -> usize {
        self.n
    }
}

/// Exponentially decayed shadow weights with a fixed decay factor.
#[derive(Debug, Clone)]
pub struct EmaState {
    shadow: ParamSet,
    decay: f64,
}

impl EmaState {
    pub fn new(initial: ParamSet, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Domain(format!(
                "EMA decay must lie in (0, 1), got {decay}"
            )));
        }
        Ok(Self {
            shadow: initial,
            decay,
        })
    }

    /// `shadow <- decay * shadow + (1 - decay) * x`.
    pub fn update(&mut self, x: &ParamSet) -> Result<()> {
        self.shadow = scale_add(&self.shadow, x, self.decay, 1.0 - self.decay)?;
        Ok(())
    }

    pub fn shadow(&self) -> &ParamSet {
        &self.shadow
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }
}

/// One unconditional absorption, logged per candidate.
#[derive(Debug, Clone, Serialize)]
pub struct AbsorbStep {
    pub candidate: usize,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub checkpoint: Checkpoint,
    pub val_accuracy: f64,
    pub log: Vec<AbsorbStep>,
}

fn absorb_loop<F>(
    run: &ImpRun,
    t: usize,
    val_set: &Dataset,
    mut combine: F,
) -> Result<BaselineResult>
where
    F: FnMut(&ParamSet, &ParamSet) -> Result<ParamSet>,
{
    let target = run.checkpoint(t)?;
    let target_kept = target.mask.kept_count();
    let pool = order_candidates(run, t, None)?;
    let mut current = target.params.clone();
    let mut mask = target.mask.clone();
    let mut log = Vec::with_capacity(pool.len());
    for &i in pool.indices() {
        let absorbed = combine(&current, &run.checkpoints[i].params)?;
        let (pruned, new_mask) = prune_to_count(&absorbed, target_kept)?;
        current = pruned;
        mask = new_mask;
        let report = evaluate(&current, None, val_set)?;
        log.push(AbsorbStep {
            candidate: i,
            val_accuracy: report.accuracy,
        });
    }
    let val_accuracy = match log.last() {
        Some(step) => step.val_accuracy,
        None => evaluate(&current, None, val_set)?.accuracy,
    };
    let meta = CheckpointMeta {
        density: mask.density(),
        ..target.meta.clone()
    };
    Ok(BaselineResult {
        checkpoint: Checkpoint {
            params: current,
            mask,
            meta,
        },
        val_accuracy,
        log,
    })
}

/// Sparsity-adapted SWA: absorb every candidate in adjacency order with the
/// 1/(n+1) coefficient, pruning back to the target density after each
/// absorption.
pub fn swa_pool(run: &ImpRun, t: usize, val_set: &Dataset) -> Result<BaselineResult> {
    let mut n = 1.0f64;
    absorb_loop(run, t, val_set, move |mean, x| {
        let out = scale_add(mean, x, n / (n + 1.0), 1.0 / (n + 1.0))?;
        n += 1.0;
        Ok(out)
    })
}

/// Sparsity-adapted EMA: `shadow <- decay * shadow + (1 - decay) * candidate`,
/// pruned back to the target density each step.
pub fn ema_pool(run: &ImpRun, t: usize, decay: f64, val_set: &Dataset) -> Result<BaselineResult> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::Domain(format!(
            "EMA decay must lie in (0, 1), got {decay}"
        )));
    }
    absorb_loop(run, t, val_set, move |shadow, x| {
        scale_add(shadow, x, decay, 1.0 - decay)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleReport {
    pub accuracy: f64,
    pub members: usize,
    /// Forward passes needed per sample at inference: one per member.
    pub forward_passes_per_sample: usize,
}

/// Member indices for the ensemble protocol: the target plus the `k - 1`
/// nearest checkpoints by iteration adjacency.
pub fn ensemble_members(run: &ImpRun, t: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Domain("ensemble needs at least one member".into()));
    }
    if k > run.checkpoints.len() {
        return Err(Error::Domain(format!(
            "ensemble of {k} members exceeds pool of {}",
            run.checkpoints.len()
        )));
    }
    let mut members = vec![t];
    if k > 1 {
        let pool = order_candidates(run, t, Some(k - 1))?;
        members.extend_from_slice(pool.indices());
    }
    Ok(members)
}

/// Averages raw member logits per sample and classifies by argmax (ties to
/// the lowest class index). Costs one forward pass per member per sample.
pub fn output_ensemble(members: &[&Checkpoint], ds: &Dataset) -> Result<EnsembleReport> {
    if members.is_empty() {
        return Err(Error::Domain("ensemble member list is empty".into()));
    }
    for m in &members[1..] {
        members[0].params.ensure_aligned(&m.params)?;
    }
    let n = ds.len();
    let first = dataset_logits(&members[0].params, None, ds)?;
    let c = first.shape()[1];
    let mut sums: Vec<f64> = first.data().iter().map(|&v| f64::from(v)).collect();
    for m in &members[1..] {
        let logits = dataset_logits(&m.params, None, ds)?;
        for (s, &v) in sums.iter_mut().zip(logits.data()) {
            *s += f64::from(v);
        }
    }
    // Argmax of the mean equals argmax of the sum.
    let mut correct = 0usize;
    for (r, &y) in ds.labels().iter().enumerate() {
        let row = &sums[r * c..(r + 1) * c];
        let mut best = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = i;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(EnsembleReport {
        accuracy: correct as f64 / n as f64,
        members: members.len(),
        forward_passes_per_sample: members.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn pset(values: &[f32]) -> ParamSet {
        ParamSet::new(vec![(
            "w1".into(),
            Tensor::new(vec![1, values.len()], values.to_vec()).unwrap(),
        )])
        .unwrap()
    }

    #[test]
    fn swa_incremental_mean_of_two() {
        let mut state = SwaState::new(pset(&[1.0]));
        state.absorb(&pset(&[3.0])).unwrap();
        assert_eq!(state.mean().get("w1").unwrap().data(), &[2.0]);
        assert_eq!(state.count(), 2);
    }

    #[test]
    fn swa_mean_of_identical_models_is_fixed() {
        let x = pset(&[0.4, -1.5, 2.25]);
        let mut state = SwaState::new(x.clone());
        for _ in 0..6 {
            state.absorb(&x).unwrap();
        }
        for ((_, a), (_, b)) in state.mean().entries().iter().zip(x.entries()) {
            for (&u, &v) in a.data().iter().zip(b.data()) {
                let rel = ((f64::from(u) - f64::from(v)) / f64::from(v).abs().max(1e-12)).abs();
                assert!(rel < 1e-6, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn swa_incremental_matches_batch_mean() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let sets: Vec<ParamSet> = (0..5)
            .map(|_| pset(&(0..12).map(|_| rng.gen_range(-3.0f32..3.0)).collect::<Vec<_>>()))
            .collect();
        let mut state = SwaState::new(sets[0].clone());
        for s in &sets[1..] {
            state.absorb(s).unwrap();
        }
        let n = sets.len() as f64;
        for i in 0..12 {
            let batch: f64 = sets
                .iter()
                .map(|s| f64::from(s.get("w1").unwrap().data()[i]))
                .sum::<f64>()
                / n;
            let inc = f64::from(state.mean().get("w1").unwrap().data()[i]);
            assert!((inc - batch).abs() < 1e-5, "{inc} vs {batch}");
        }
    }

    #[test]
    fn ema_single_step_from_zero() {
        let mut state = EmaState::new(pset(&[0.0]), 0.95).unwrap();
        state.update(&pset(&[1.0])).unwrap();
        assert_eq!(state.shadow().get("w1").unwrap().data(), &[0.05]);
    }

    #[test]
    fn ema_decay_near_one_barely_moves() {
        let mut state = EmaState::new(pset(&[2.0]), 1.0 - 1e-6).unwrap();
        state.update(&pset(&[100.0])).unwrap();
        let v = state.shadow().get("w1").unwrap().data()[0];
        assert!((v - 2.0).abs() < 2e-4, "shadow moved to {v}");
    }

    #[test]
    fn ema_three_steps_match_closed_form() {
        let (x0, x1, x2) = (0.7f64, -0.3f64, 1.1f64);
        let d = 0.95f64;
        let mut state = EmaState::new(pset(&[x0 as f32]), d).unwrap();
        state.update(&pset(&[x1 as f32])).unwrap();
        state.update(&pset(&[x2 as f32])).unwrap();
        let expect = d * d * x0 + d * (1.0 - d) * x1 + (1.0 - d) * x2;
        let got = f64::from(state.shadow().get("w1").unwrap().data()[0]);
        assert!((got - expect).abs() < 1e-7, "{got} vs {expect}");
    }

    #[test]
    fn ema_rejects_bad_decay() {
        assert!(EmaState::new(pset(&[0.0]), 0.0).is_err());
        assert!(EmaState::new(pset(&[0.0]), 1.0).is_err());
    }

    fn constant_net(bias: &[f32]) -> Checkpoint {
        // Zero weights: logits equal the output bias on any input.
        let c = bias.len();
        let params = ParamSet::new(vec![
            ("w1".into(), Tensor::zeros(vec![2, c])),
            ("b1".into(), Tensor::new(vec![c], bias.to_vec()).unwrap()),
        ])
        .unwrap();
        let mask = crate::pruning::Mask::full_for(&params).unwrap();
        Checkpoint {
            meta: CheckpointMeta {
                imp_iteration: 0,
                density: 1.0,
                rewind_epoch: 0,
                prune_fraction: 0.2,
                layer_sizes: vec![2, c],
                init_seed: 0,
                shuffle_seed: 0,
            },
            params,
            mask,
        }
    }

    fn two_sample_ds() -> Dataset {
        Dataset::new(
            Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            vec![0, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn ensemble_of_identical_members_matches_single() {
        let ds = two_sample_ds();
        let m = constant_net(&[2.0, -1.0]);
        let single = evaluate(&m.params, None, &ds).unwrap().accuracy;
        let report = output_ensemble(&[&m, &m, &m], &ds).unwrap();
        assert_eq!(report.accuracy, single);
        assert_eq!(report.forward_passes_per_sample, 3);
    }

    #[test]
    fn ensemble_tie_breaks_to_class_zero() {
        // Members with logits [1, 0] and [0, 1]: mean is [0.5, 0.5].
        let ds = Dataset::new(
            Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap(),
            vec![0],
            2,
        )
        .unwrap();
        let a = constant_net(&[1.0, 0.0]);
        let b = constant_net(&[0.0, 1.0]);
        let report = output_ensemble(&[&a, &b], &ds).unwrap();
        assert_eq!(report.accuracy, 1.0); // predicted class 0, label 0
    }

    #[test]
    fn ensemble_matches_stored_logit_recomputation() {
        let ds = two_sample_ds();
        let members = [
            constant_net(&[0.2, 0.1]),
            constant_net(&[-0.4, 0.8]),
            constant_net(&[0.3, 0.25]),
        ];
        let refs: Vec<&Checkpoint> = members.iter().collect();
        let report = output_ensemble(&refs, &ds).unwrap();

        // Oracle: recompute per-member logits, average, classify.
        let mut correct = 0;
        for (r, &y) in ds.labels().iter().enumerate() {
            let mut mean = vec![0.0f64; 2];
            for m in &members {
                let logits = dataset_logits(&m.params, None, &ds).unwrap();
                for c in 0..2 {
                    mean[c] += f64::from(logits.data()[r * 2 + c]) / 3.0;
                }
            }
            let pred = if mean[1] > mean[0] { 1 } else { 0 };
            if pred == y {
                correct += 1;
            }
        }
        assert_eq!(report.accuracy, correct as f64 / 2.0);
    }

    #[test]
    fn ensemble_rejects_empty_member_list() {
        let ds = two_sample_ds();
        assert!(output_ensemble(&[], &ds).is_err());
    }
}
