//! The iterative magnitude pruning pipeline: train dense with a rewind
//! snapshot, then repeat prune-and-retrain, emitting one checkpoint per
//! iteration (t = 0 is the trained dense network).

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{init_params, MlpConfig};
use crate::pruning::{apply_mask, prune_to_kept_count, Mask};
use crate::store::{Checkpoint, CheckpointMeta};
use crate::tensor::ParamSet;
use crate::training::{train, TrainConfig};

/// Where surviving weights are reset before each retraining round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewindMode {
    /// Rewind to the epoch-j snapshot captured during dense training.
    ToEpoch,
    /// Rewind to the random initialization (the "w/o rewinding" arm).
    ToInit,
}

impl RewindMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RewindMode::ToEpoch => "rewind_to_j",
            RewindMode::ToInit => "rewind_to_init",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rewind_to_j" => Ok(RewindMode::ToEpoch),
            "rewind_to_init" => Ok(RewindMode::ToInit),
            other => Err(Error::Config(format!(
                "unknown rewind_mode {other:?} (expected rewind_to_j or rewind_to_init)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpConfig {
    pub model: MlpConfig,
    pub train: TrainConfig,
    /// Number of prune-and-retrain rounds T.
    pub iterations: usize,
    pub prune_fraction: f64,
    pub rewind_mode: RewindMode,
}

impl ImpConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.iterations == 0 {
            return Err(Error::Domain("iterations must be >= 1".into()));
        }
        if !(self.prune_fraction > 0.0 && self.prune_fraction < 1.0) {
            return Err(Error::Domain(format!(
                "prune_fraction must lie in (0, 1), got {}",
                self.prune_fraction
            )));
        }
        Ok(())
    }
}

/// The checkpoint pool produced by one IMP run, indexed t = 0..=T.
#[derive(Debug, Clone)]
pub struct ImpRun {
    pub checkpoints: Vec<Checkpoint>,
    pub rewind_params: ParamSet,
    pub config: ImpConfig,
}

impl ImpRun {
    /// Largest iteration index T.
    pub fn t_max(&self) -> usize {
        self.checkpoints.len() - 1
    }

    pub fn checkpoint(&self, t: usize) -> Result<&Checkpoint> {
        self.checkpoints.get(t).ok_or_else(|| {
            Error::Domain(format!(
                "iteration {t} out of range for run with T = {}",
                self.t_max()
            ))
        })
    }
}

/// Shuffle seed for retraining round `t`, decorrelating the data order across
/// rounds while keeping the whole run deterministic in the base seed.
fn round_shuffle_seed(base: u64, t: usize) -> u64 {
    base.wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs the full pipeline.
///
/// Round t prunes the previous round's final weights down to
/// `round((1-p)^t * total)` kept weights within the previous support, resets
/// survivors to the rewind snapshot, and retrains on the full schedule. Using
/// the closed-form kept count per round keeps every checkpoint's density
/// within one weight of the (1-p)^t schedule instead of compounding per-round
/// rounding error.
pub fn run_imp(config: &ImpConfig, train_set: &Dataset, val_set: &Dataset) -> Result<ImpRun> {
    run_imp_observed(config, train_set, val_set, |_| {})
}

/// [`run_imp`] with a callback invoked as each checkpoint completes, for
/// progress reporting.
pub fn run_imp_observed(
    config: &ImpConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_checkpoint: impl FnMut(&Checkpoint),
) -> Result<ImpRun> {
    config.validate()?;
    let init = init_params(&config.model)?;

    let mut round_cfg = config.train.clone();
    round_cfg.shuffle_seed = round_shuffle_seed(config.train.shuffle_seed, 0);
    let dense = train(&init, None, train_set, val_set, &round_cfg)?;

    let rewind = match config.rewind_mode {
        RewindMode::ToEpoch => dense.rewind_params,
        RewindMode::ToInit => init,
    };

    let full_mask = Mask::full_for(&dense.final_params)?;
    let total = full_mask.total_count();
    let keep_rate = 1.0 - config.prune_fraction;

    let meta_for = |t: usize, mask: &Mask| CheckpointMeta {
        imp_iteration: t,
        density: mask.density(),
        rewind_epoch: config.train.rewind_epoch,
        prune_fraction: config.prune_fraction,
        layer_sizes: config.model.layer_sizes.clone(),
        init_seed: config.model.init_seed,
        shuffle_seed: config.train.shuffle_seed,
    };

    let mut checkpoints = Vec::with_capacity(config.iterations + 1);
    checkpoints.push(Checkpoint {
        meta: meta_for(0, &full_mask),
        params: dense.final_params,
        mask: full_mask,
    });
    on_checkpoint(checkpoints.last().unwrap());

    for t in 1..=config.iterations {
        let prev = checkpoints.last().unwrap();
        let target_kept = (keep_rate.powi(t as i32) * total as f64 + 0.5).floor() as usize;
        if target_kept == 0 {
            return Err(Error::DegenerateMask(format!(
                "round {t} at prune fraction {} would empty the mask; reduce iterations",
                config.prune_fraction
            )));
        }
        let mask = prune_to_kept_count(&prev.params, &prev.mask, target_kept)?;
        let start = apply_mask(&rewind, &mask)?;

        let mut round_cfg = config.train.clone();
        round_cfg.shuffle_seed = round_shuffle_seed(config.train.shuffle_seed, t);
        let result = train(&start, Some(&mask), train_set, val_set, &round_cfg)?;

        checkpoints.push(Checkpoint {
            meta: meta_for(t, &mask),
            params: result.final_params,
            mask,
        });
        on_checkpoint(checkpoints.last().unwrap());
    }

    Ok(ImpRun {
        checkpoints,
        rewind_params: rewind,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussians;

    pub(crate) fn tiny_config(iterations: usize, seed: u64) -> ImpConfig {
        ImpConfig {
            model: MlpConfig {
                // 10x50 + 50x10 = 1000 weights, so (0.8)^t counts are exact.
                layer_sizes: vec![10, 50, 10],
                init_seed: seed,
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 20,
                base_lr: 0.1,
                lr_drop_factor: 10.0,
                lr_drop_epochs: vec![],
                warmup_epochs: 0,
                momentum: 0.9,
                weight_decay: 0.0,
                rewind_epoch: 1,
                shuffle_seed: seed.wrapping_add(100),
            },
            iterations,
            prune_fraction: 0.2,
            rewind_mode: RewindMode::ToEpoch,
        }
    }

    fn tiny_data(seed: u64) -> (Dataset, Dataset) {
        let ds = synth_gaussians(10, 10, 12, 0.4, seed).unwrap();
        crate::data::split(&ds, 0.25, seed).unwrap()
    }

    #[test]
    fn densities_follow_geometric_schedule() {
        let (train_set, val_set) = tiny_data(0);
        let run = run_imp(&tiny_config(3, 0), &train_set, &val_set).unwrap();
        let densities: Vec<f64> = run.checkpoints.iter().map(|c| c.mask.density()).collect();
        assert_eq!(densities, vec![1.0, 0.8, 0.64, 0.512]);
    }

    #[test]
    fn deep_run_reaches_paper_scale_sparsity() {
        let (train_set, val_set) = tiny_data(1);
        let mut cfg = tiny_config(19, 1);
        cfg.train.epochs = 1;
        cfg.train.rewind_epoch = 0;
        let run = run_imp(&cfg, &train_set, &val_set).unwrap();
        let total = run.checkpoints[0].mask.total_count() as f64;
        for (t, ckpt) in run.checkpoints.iter().enumerate() {
            let expect = 0.8f64.powi(t as i32);
            assert!(
                (ckpt.mask.density() - expect).abs() <= 1.0 / total,
                "t={t}: density {} vs scheduled {expect}",
                ckpt.mask.density()
            );
        }
        let last = run.checkpoints.last().unwrap().mask.density();
        assert!((last - 0.0144).abs() < 1.5e-3, "final density {last}");
    }

    #[test]
    fn supports_are_nested() {
        let (train_set, val_set) = tiny_data(2);
        let run = run_imp(&tiny_config(4, 2), &train_set, &val_set).unwrap();
        for pair in run.checkpoints.windows(2) {
            assert!(pair[1].mask.is_subset_of(&pair[0].mask));
        }
    }

    #[test]
    fn rewind_to_init_starts_rounds_from_masked_initialization() {
        let (train_set, val_set) = tiny_data(3);
        let mut cfg = tiny_config(1, 3);
        cfg.rewind_mode = RewindMode::ToInit;
        cfg.train.base_lr = 0.0; // freeze the optimizer so round starts are observable
        cfg.train.rewind_epoch = 0;
        let run = run_imp(&cfg, &train_set, &val_set).unwrap();
        let init = init_params(&cfg.model).unwrap();
        assert_eq!(run.rewind_params, init);
        let expect = apply_mask(&init, &run.checkpoints[1].mask).unwrap();
        assert_eq!(run.checkpoints[1].params, expect);
    }

    #[test]
    fn run_is_deterministic() {
        let (train_set, val_set) = tiny_data(4);
        let a = run_imp(&tiny_config(2, 4), &train_set, &val_set).unwrap();
        let b = run_imp(&tiny_config(2, 4), &train_set, &val_set).unwrap();
        for (ca, cb) in a.checkpoints.iter().zip(&b.checkpoints) {
            assert_eq!(ca.params, cb.params);
            assert_eq!(ca.mask, cb.mask);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config(1, 0);
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(1, 0);
        cfg.prune_fraction = 1.0;
        assert!(cfg.validate().is_err());
    }
}
