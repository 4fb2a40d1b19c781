//! A multilayer perceptron classifier with closed-form backprop.
//!
//! Layers are ReLU-activated except the last, which emits raw logits. The
//! parameter layout is `w1 [d0, d1], b1 [d1], w2 [d1, d2], b2 [d2], ...` and
//! every operation infers the architecture from that layout, so models,
//! masks, and checkpoints stay plain ParamSets.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pruning::{apply_mask, Mask};
use crate::tensor::{ParamSet, Tensor};

/// Evaluation batches are processed in chunks of this many rows.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// `[d_in, h_1, ..., h_k, n_classes]`, at least two entries.
    pub layer_sizes: Vec<usize>,
    pub init_seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Domain(format!(
                "layer_sizes needs at least [d_in, n_classes], got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.iter().any(|&d| d == 0) {
            return Err(Error::Domain(format!(
                "layer sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

/// A minibatch of inputs plus class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    inputs: Tensor, // [B, d_in]
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.rank() != 2 {
            return Err(Error::Domain(format!(
                "batch inputs must be [B, d_in], got {:?}",
                inputs.shape()
            )));
        }
        if inputs.shape()[0] == 0 || inputs.shape()[0] != labels.len() {
            return Err(Error::Domain(format!(
                "batch has {} rows but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn from_dataset(ds: &Dataset, indices: &[usize]) -> Result<Self> {
        let sub = ds.gather(indices)?;
        Batch::new(sub.features().clone(), sub.labels().to_vec())
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Glorot-style uniform initialization: weights in
/// `+- sqrt(6 / (fan_in + fan_out))`, biases zero. Deterministic in
/// `init_seed`.
pub fn init_params(config: &MlpConfig) -> Result<ParamSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut entries = Vec::new();
    for (l, pair) in config.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let w: Vec<f32> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        entries.push((
            format!("w{}", l + 1),
            Tensor::new(vec![fan_in, fan_out], w)?,
        ));
        entries.push((format!("b{}", l + 1), Tensor::zeros(vec![fan_out])));
    }
    ParamSet::new(entries)
}

/// Layer views parsed out of a ParamSet; validates the w/b layout.
struct MlpView<'a> {
    layers: Vec<(&'a Tensor, &'a Tensor)>,
}

impl<'a> MlpView<'a> {
    fn parse(params: &'a ParamSet) -> Result<Self> {
        let entries = params.entries();
        if entries.is_empty() || entries.len() % 2 != 0 {
            return Err(Error::Misaligned(format!(
                "expected alternating weight/bias entries, got {} entries",
                entries.len()
            )));
        }
        let mut layers = Vec::with_capacity(entries.len() / 2);
        let mut prev_out: Option<usize> = None;
        for pair in entries.chunks(2) {
            let (wn, w) = (&pair[0].0, &pair[0].1);
            let (bn, b) = (&pair[1].0, &pair[1].1);
            if w.rank() != 2 || b.rank() != 1 || w.shape()[1] != b.shape()[0] {
                return Err(Error::Misaligned(format!(
                    "entries {wn:?}/{bn:?} do not form a layer: shapes {:?} / {:?}",
                    w.shape(),
                    b.shape()
                )));
            }
            if let Some(prev) = prev_out {
                if w.shape()[0] != prev {
                    return Err(Error::Misaligned(format!(
                        "layer {wn:?} expects {} inputs but previous layer emits {prev}",
                        w.shape()[0]
                    )));
                }
            }
            prev_out = Some(w.shape()[1]);
            layers.push((w, b));
        }
        Ok(Self { layers })
    }

    fn d_in(&self) -> usize {
        self.layers[0].0.shape()[0]
    }

    fn n_classes(&self) -> usize {
        self.layers.last().unwrap().0.shape()[1]
    }
}

/// `[rows, inner] x [inner, cols] + bias`, accumulated in f64.
fn affine(x: &[f32], rows: usize, inner: usize, w: &Tensor, b: &Tensor) -> Vec<f32> {
    let cols = w.shape()[1];
    let wd = w.data();
    let bd = b.data();
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let or = &mut out[r * cols..(r + 1) * cols];
        let mut acc = vec![0.0f64; cols];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let xv = f64::from(xv);
            let wr = &wd[k * cols..(k + 1) * cols];
            for (j, &wv) in wr.iter().enumerate() {
                acc[j] += xv * f64::from(wv);
            }
        }
        for (j, o) in or.iter_mut().enumerate() {
            *o = (acc[j] + f64::from(bd[j])) as f32;
        }
    }
    out
}

fn relu_inplace(v: &mut [f32]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn effective_params<'a>(params: &'a ParamSet, mask: Option<&Mask>) -> Result<Cow<'a, ParamSet>> {
    match mask {
        Some(m) => Ok(Cow::Owned(apply_mask(params, m)?)),
        None => Ok(Cow::Borrowed(params)),
    }
}

fn forward_view(view: &MlpView, inputs: &Tensor) -> Result<Tensor> {
    if inputs.rank() != 2 || inputs.shape()[1] != view.d_in() {
        return Err(Error::Misaligned(format!(
            "inputs of shape {:?} do not match model d_in {}",
            inputs.shape(),
            view.d_in()
        )));
    }
    let rows = inputs.shape()[0];
    let mut h = inputs.data().to_vec();
    let mut width = view.d_in();
    for (l, (w, b)) in view.layers.iter().enumerate() {
        let mut z = affine(&h, rows, width, w, b);
        if l + 1 < view.layers.len() {
            relu_inplace(&mut z);
        }
        width = w.shape()[1];
        h = z;
    }
    Tensor::new(vec![rows, view.n_classes()], h)
}

/// Logits `[B, n_classes]` of the (optionally masked) network. Masked weights
/// behave exactly as zeros.
pub fn forward(params: &ParamSet, mask: Option<&Mask>, batch: &Batch) -> Result<Tensor> {
    let eff = effective_params(params, mask)?;
    let view = MlpView::parse(&eff)?;
    forward_view(&view, batch.inputs())
}

/// `log(sum(exp(row)))` in f64, stabilized by the row max.
fn log_sum_exp(row: &[f32]) -> f64 {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let m = f64::from(m);
    let s: f64 = row.iter().map(|&z| (f64::from(z) - m).exp()).sum();
    m + s.ln()
}

fn log_sum_exp64(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|&z| (z - m).exp()).sum();
    m + s.ln()
}

/// f64 variant of [`affine`] for the training path, which keeps all
/// intermediates in 64-bit until gradients are stored.
fn affine64(x: &[f64], rows: usize, inner: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let cols = w.shape()[1];
    let wd = w.data();
    let bd = b.data();
    let mut out = vec![0.0f64; rows * cols];
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let or = &mut out[r * cols..(r + 1) * cols];
        for (j, o) in or.iter_mut().enumerate() {
            *o = f64::from(bd[j]);
        }
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &wd[k * cols..(k + 1) * cols];
            for (j, &wv) in wr.iter().enumerate() {
                or[j] += xv * f64::from(wv);
            }
        }
    }
    out
}

/// Mean softmax cross-entropy and its gradient.
///
/// Gradients are aligned entry-for-entry with `params`; entries at masked-out
/// positions are exactly zero so masked weights never move.
pub fn loss_and_grads(
    params: &ParamSet,
    mask: Option<&Mask>,
    batch: &Batch,
) -> Result<(f64, ParamSet)> {
    let eff = effective_params(params, mask)?;
    let view = MlpView::parse(&eff)?;
    let rows = batch.size();
    if batch.inputs().shape()[1] != view.d_in() {
        return Err(Error::Misaligned(format!(
            "inputs of shape {:?} do not match model d_in {}",
            batch.inputs().shape(),
            view.d_in()
        )));
    }
    let n_classes = view.n_classes();
    if let Some(&bad) = batch.labels().iter().find(|&&l| l >= n_classes) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }

    // Forward in f64, keeping pre-activations for the ReLU derivative and
    // activations for the weight gradients.
    let num_layers = view.layers.len();
    let inputs64: Vec<f64> = batch.inputs().data().iter().map(|&v| f64::from(v)).collect();
    let mut activations: Vec<Vec<f64>> = vec![inputs64];
    let mut pre_acts: Vec<Vec<f64>> = Vec::with_capacity(num_layers);
    let mut width = view.d_in();
    for (l, (w, b)) in view.layers.iter().enumerate() {
        let z = affine64(activations.last().unwrap(), rows, width, w, b);
        width = w.shape()[1];
        pre_acts.push(z.clone());
        if l + 1 < num_layers {
            let mut a = z;
            for v in a.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            activations.push(a);
        }
    }
    let logits = pre_acts.last().unwrap();

    // Loss and dlogits.
    let mut loss_sum = 0.0f64;
    let mut dz = vec![0.0f64; rows * n_classes];
    let inv_b = 1.0 / rows as f64;
    for r in 0..rows {
        let zr = &logits[r * n_classes..(r + 1) * n_classes];
        let lse = log_sum_exp64(zr);
        let y = batch.labels()[r];
        loss_sum += lse - zr[y];
        for c in 0..n_classes {
            let p = (zr[c] - lse).exp();
            dz[r * n_classes + c] = (p - f64::from(u8::from(c == y))) * inv_b;
        }
    }
    let loss = loss_sum / rows as f64;

    // Backward; gradients round to f32 only when stored.
    let mut grad_entries: Vec<(String, Tensor)> = Vec::with_capacity(params.len());
    let mut dz_cur = dz;
    for l in (0..num_layers).rev() {
        let (w, _) = view.layers[l];
        let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
        let a_prev = &activations[l];

        let mut dw = vec![0.0f32; fan_in * fan_out];
        for k in 0..fan_in {
            for j in 0..fan_out {
                let mut acc = 0.0f64;
                for r in 0..rows {
                    acc += a_prev[r * fan_in + k] * dz_cur[r * fan_out + j];
                }
                dw[k * fan_out + j] = acc as f32;
            }
        }
        let mut db = vec![0.0f32; fan_out];
        for (j, dbj) in db.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for r in 0..rows {
                acc += dz_cur[r * fan_out + j];
            }
            *dbj = acc as f32;
        }

        if l > 0 {
            let wd = w.data();
            let z_prev = &pre_acts[l - 1];
            let mut dz_prev = vec![0.0f64; rows * fan_in];
            for r in 0..rows {
                for k in 0..fan_in {
                    if z_prev[r * fan_in + k] <= 0.0 {
                        continue; // ReLU gate closed
                    }
                    let mut acc = 0.0f64;
                    for j in 0..fan_out {
                        acc += dz_cur[r * fan_out + j] * f64::from(wd[k * fan_out + j]);
                    }
                    dz_prev[r * fan_in + k] = acc;
                }
            }
            dz_cur = dz_prev;
        }

        grad_entries.push((format!("b{}", l + 1), Tensor::new(vec![fan_out], db)?));
        grad_entries.push((
            format!("w{}", l + 1),
            Tensor::new(vec![fan_in, fan_out], dw)?,
        ));
    }
    grad_entries.reverse();

    // Rename to match the incoming entry names (arbitrary layouts keep their
    // own names) and zero gradients at masked positions.
    let named: Vec<(String, Tensor)> = params
        .entries()
        .iter()
        .zip(grad_entries)
        .map(|((name, _), (_, g))| (name.clone(), g))
        .collect();
    let mut grads = ParamSet::new(named)?;
    if let Some(m) = mask {
        grads = apply_mask(&grads, m)?;
    }
    Ok((loss, grads))
}

/// Per-sample logits over a whole dataset, computed in fixed-size chunks.
pub fn dataset_logits(params: &ParamSet, mask: Option<&Mask>, ds: &Dataset) -> Result<Tensor> {
    if ds.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty dataset".into()));
    }
    let eff = effective_params(params, mask)?;
    let view = MlpView::parse(&eff)?;
    let n = ds.len();
    let c = view.n_classes();
    let d = ds.dim();
    let mut out = Vec::with_capacity(n * c);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let rows = end - start;
        let chunk = Tensor::new(
            vec![rows, d],
            ds.features().data()[start * d..end * d].to_vec(),
        )?;
        let logits = forward_view(&view, &chunk)?;
        out.extend_from_slice(logits.data());
        start = end;
    }
    Tensor::new(vec![n, c], out)
}

/// Argmax predictions over a dataset.
pub fn predictions(params: &ParamSet, mask: Option<&Mask>, ds: &Dataset) -> Result<Vec<usize>> {
    let logits = dataset_logits(params, mask, ds)?;
    let c = logits.shape()[1];
    Ok((0..ds.len())
        .map(|r| argmax(&logits.data()[r * c..(r + 1) * c]))
        .collect())
}

/// Accuracy (argmax, ties to the lowest class) and mean cross-entropy loss.
pub fn evaluate(params: &ParamSet, mask: Option<&Mask>, ds: &Dataset) -> Result<EvalReport> {
    let logits = dataset_logits(params, mask, ds)?;
    let c = logits.shape()[1];
    if let Some(&bad) = ds.labels().iter().find(|&&l| l >= c) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {c} model classes"
        )));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    for (r, &y) in ds.labels().iter().enumerate() {
        let row = &logits.data()[r * c..(r + 1) * c];
        if argmax(row) == y {
            correct += 1;
        }
        loss_sum += log_sum_exp(row) - f64::from(row[y]);
    }
    Ok(EvalReport {
        accuracy: correct as f64 / ds.len() as f64,
        mean_loss: loss_sum / ds.len() as f64,
    })
}
