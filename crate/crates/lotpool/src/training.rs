//! Minibatch SGD with momentum, step LR schedule, warmup, masked gradients,
//! and rewind-point capture.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{evaluate, loss_and_grads, Batch};
use crate::pruning::{apply_mask, Mask};
use crate::tensor::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Divisor applied at each drop epoch (10 means "divide by 10").
    pub lr_drop_factor: f64,
    pub lr_drop_epochs: Vec<usize>,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epoch j whose end-of-epoch weights are captured for rewinding
    /// (0 means the initialization itself).
    pub rewind_epoch: usize,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Domain("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be >= 1".into()));
        }
        if self.rewind_epoch >= self.epochs {
            return Err(Error::Domain(format!(
                "rewind_epoch {} must be < epochs {}",
                self.rewind_epoch, self.epochs
            )));
        }
        if !self.lr_drop_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Domain(format!(
                "lr_drop_epochs must be strictly increasing, got {:?}",
                self.lr_drop_epochs
            )));
        }
        if self.lr_drop_epochs.iter().any(|&e| e >= self.epochs) {
            return Err(Error::Domain(format!(
                "lr_drop_epochs {:?} must all be < epochs {}",
                self.lr_drop_epochs, self.epochs
            )));
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return Err(Error::Domain(format!("bad base_lr {}", self.base_lr)));
        }
        if !(self.lr_drop_factor.is_finite() && self.lr_drop_factor > 0.0) {
            return Err(Error::Domain(format!(
                "bad lr_drop_factor {}",
                self.lr_drop_factor
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain(format!("bad momentum {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Domain(format!(
                "bad weight_decay {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub final_params: ParamSet,
    /// Snapshot at the end of epoch `rewind_epoch` (the initialization when
    /// that is 0), captured exactly once.
    pub rewind_params: ParamSet,
    pub history: Vec<EpochStats>,
}

/// Learning rate for a given step.
///
/// During warmup the rate ramps linearly from `base_lr / warmup_steps` up to
/// `base_lr` across all warmup steps; afterwards it is
/// `base_lr / drop_factor^(number of drop epochs <= epoch)`.
pub fn lr_at(
    config: &TrainConfig,
    epoch: usize,
    step_in_epoch: usize,
    steps_per_epoch: usize,
) -> f64 {
    if epoch < config.warmup_epochs {
        let total = (config.warmup_epochs * steps_per_epoch) as f64;
        let step = (epoch * steps_per_epoch + step_in_epoch + 1) as f64;
        return config.base_lr * step / total;
    }
    let drops = config
        .lr_drop_epochs
        .iter()
        .filter(|&&e| e <= epoch)
        .count() as i32;
    config.base_lr / config.lr_drop_factor.powi(drops)
}

/// Trains with minibatch SGD. Deterministic given `shuffle_seed`: each
/// epoch's shuffle is derived from `shuffle_seed + epoch`, and incomplete
/// final batches are dropped for a fixed step count.
pub fn train(
    params: &ParamSet,
    mask: Option<&Mask>,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    let steps_per_epoch = train_set.len() / config.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::Domain(format!(
            "batch_size {} exceeds training set size {}",
            config.batch_size,
            train_set.len()
        )));
    }

    // Masked weights must be exactly zero from the start; gradients at masked
    // positions are zeroed each step so they stay that way.
    let mut current = match mask {
        Some(m) => apply_mask(params, m)?,
        None => params.clone(),
    };
    let mut rewind = if config.rewind_epoch == 0 {
        Some(current.clone())
    } else {
        None
    };

    // One momentum buffer per scalar, zero-initialized (fresh per call).
    let mut velocity: Vec<Vec<f32>> = current
        .entries()
        .iter()
        .map(|(_, t)| vec![0.0f32; t.len()])
        .collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed.wrapping_add(epoch as u64));
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        for step in 0..steps_per_epoch {
            let batch_idx = &indices[step * config.batch_size..(step + 1) * config.batch_size];
            let batch = Batch::from_dataset(train_set, batch_idx)?;
            let (loss, grads) = loss_and_grads(&current, mask, &batch)?;
            loss_sum += loss;

            let lr = lr_at(config, epoch, step, steps_per_epoch);
            let mut new_entries = Vec::with_capacity(current.len());
            for (ei, ((name, t), (_, g))) in current
                .entries()
                .iter()
                .zip(grads.entries())
                .enumerate()
            {
                let v = &mut velocity[ei];
                let mut data = Vec::with_capacity(t.len());
                for ((&w, &gv), vi) in t.data().iter().zip(g.data()).zip(v.iter_mut()) {
                    // Weight decay rides on the gradient; at masked positions
                    // both w and g are exactly zero, so the buffer stays zero
                    // and the weight never moves.
                    let g_eff = f64::from(gv) + config.weight_decay * f64::from(w);
                    let vel = config.momentum * f64::from(*vi) + g_eff;
                    *vi = vel as f32;
                    data.push((f64::from(w) - lr * vel) as f32);
                }
                new_entries.push((
                    name.clone(),
                    crate::tensor::Tensor::new(t.shape().to_vec(), data)?,
                ));
            }
            current = ParamSet::new(new_entries)?;
        }

        if rewind.is_none() && epoch + 1 == config.rewind_epoch {
            rewind = Some(current.clone());
        }

        let val = evaluate(&current, mask, val_set)?;
        history.push(EpochStats {
            train_loss: loss_sum / steps_per_epoch as f64,
            val_accuracy: val.accuracy,
        });
    }

    Ok(TrainResult {
        final_params: current,
        rewind_params: rewind.expect("rewind epoch validated against epoch count"),
        history,
    })
}
